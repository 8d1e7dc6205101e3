"""On-disk cached series: a tensor container of flow maps plus a JSON sidecar.

The sidecar records the grid, timing, the indices of unobserved
intervals, the raw external records and descriptive statistics.  Both
files are written deterministically so identical inputs give identical
bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import container
from ..errors import DataError
from .grid import GridSpec
from .series import ExternalRecord, FlowSeries

FORMAT = "atfm-series/1"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _record(rec: ExternalRecord | None):
    if rec is None:
        return None
    return [rec.weather, rec.holiday, rec.temperature, rec.wind]


def series_metadata(series: FlowSeries) -> dict:
    flows = series.flows[series.present]
    meta = {
        "format": FORMAT,
        "grid": None if series.grid is None else series.grid.to_dict(),
        "shape": [len(series), 2, *series.shape],
        "epoch": series.epoch,
        "interval_seconds": series.interval_seconds,
        "gaps": [int(g) for g in np.flatnonzero(~series.present)],
        "flow_stats": {
            "min": float(flows.min()) if flows.size else None,
            "max": float(flows.max()) if flows.size else None,
            "total_inflow": float(flows[:, 0].sum()),
            "total_outflow": float(flows[:, 1].sum()),
        },
        "externals": None,
        "vocabulary": None,
    }
    if series.externals is not None:
        recs = [r for r in series.externals if r is not None]
        meta["externals"] = [_record(r) for r in series.externals]
        meta["vocabulary"] = {
            "weather": sorted({r.weather for r in recs if r.weather}),
            "holidays": sorted({r.holiday for r in recs if r.holiday}),
        }
    return meta


def save_series(path, series: FlowSeries) -> None:
    path = Path(path)
    container.save(path, {"flows": series.flows})
    text = json.dumps(series_metadata(series), indent=2, sort_keys=True) + "\n"
    sidecar_path(path).write_text(text, encoding="utf-8")


def load_metadata(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        raise DataError(f"missing series sidecar {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    if meta.get("format") != FORMAT:
        raise DataError(f"{side}: not a cached series sidecar")
    return meta


def load_series(path) -> FlowSeries:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no cached series at {path}")
    meta = load_metadata(path)
    entries = container.load(path)
    if "flows" not in entries:
        raise DataError(f"{path}: container lacks a 'flows' entry")
    flows = entries["flows"]
    if list(flows.shape) != meta["shape"]:
        raise DataError(f"{path}: flows {flows.shape} disagree with sidecar shape {meta['shape']}")
    present = np.ones(len(flows), dtype=bool)
    present[meta["gaps"]] = False
    externals = None
    if meta["externals"] is not None:
        externals = [None if r is None else ExternalRecord(*r) for r in meta["externals"]]
    grid = None if meta["grid"] is None else GridSpec.from_dict(meta["grid"])
    return FlowSeries(flows, present, meta["epoch"], meta["interval_seconds"], externals, grid)
