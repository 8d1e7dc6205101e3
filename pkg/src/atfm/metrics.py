"""Error metrics in flow units, evaluation slices and the historical-average baseline."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NumericError, ShapeError, StateError

TOP_P = tuple(range(10, 101, 10))
SLICES = ("weekday", "weekend", "day", "night")
DAY_START_HOUR, DAY_END_HOUR = 6, 18
BIKE_NYC_RATIO = 1.58


def rmse_mae(preds, targets, mask=None) -> tuple[float, float]:
    """RMSE and MAE over every element, restricted to ``mask`` cells when given.

    ``mask`` is a boolean ``[h, w]`` grid applied to every sample and channel.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ShapeError(f"prediction {preds.shape} vs target {targets.shape}")
    err = preds - targets
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != preds.shape[-2:]:
            raise ShapeError(f"mask {mask.shape} vs grid {preds.shape[-2:]}")
        if not mask.any():
            raise ValueError("region mask selects no cells")
        err = err[..., mask]
    if err.size == 0:
        raise ValueError("no elements to evaluate")
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def inverse_scale_predictions(preds_scaled, scaler):
    """Undo min-max scaling and floor at zero (flows are counts)."""
    if scaler is None:
        raise StateError("no fitted scaler to invert predictions with")
    return np.maximum(scaler.invert(preds_scaled), 0.0)


def top_p_mask(train_flows, p: float) -> np.ndarray:
    """Cells ranked by mean inflow+outflow over ``train_flows`` ``[T, 2, h, w]``.

    Keeps the ``ceil(p*h*w/100)`` highest cells; ties go to the lower
    row-major index.
    """
    if not 0 < p <= 100:
        raise ValueError(f"p must lie in (0, 100], got {p}")
    flows = np.asarray(train_flows, dtype=np.float64)
    if flows.ndim != 4 or flows.shape[0] == 0:
        raise StateError("top-p ranking needs a non-empty training series")
    h, w = flows.shape[-2:]
    mean = flows.sum(axis=1).mean(axis=0).reshape(-1)
    keep = math.ceil(p * h * w / 100)
    order = np.lexsort((np.arange(h * w), -mean))
    mask = np.zeros(h * w, dtype=bool)
    mask[order[:keep]] = True
    return mask.reshape(h, w)


def slice_of(stamp: datetime) -> tuple[str, str]:
    week = "weekday" if stamp.weekday() < 5 else "weekend"
    day = "day" if DAY_START_HOUR <= stamp.hour < DAY_END_HOUR else "night"
    return week, day


def slice_metrics(preds, targets, timestamps: Sequence[datetime]) -> dict[str, tuple[float, float] | None]:
    """Per-slice (RMSE, MAE); slices without samples map to ``None``.

    ``preds``/``targets`` have one leading entry per timestamp.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(timestamps) != preds.shape[0]:
        raise ShapeError("need one timestamp per sample")
    labels = [slice_of(t) for t in timestamps]
    out: dict[str, tuple[float, float] | None] = {}
    for name in SLICES:
        idx = [i for i, lab in enumerate(labels) if name in lab]
        out[name] = rmse_mae(preds[idx], targets[idx]) if idx else None
    return out


def apply_error_ratio(rmse: float, mae: float, ratio: float) -> tuple[float, float]:
    if not ratio > 0:
        raise ValueError("error ratio must be positive")
    return rmse * ratio, mae * ratio


def ha_history(series, g: int) -> list[int]:
    """Earlier observed intervals on the same weekday and time of day."""
    week = 7 * series.intervals_per_day
    return [h for h in range(g - week, -1, -week) if series.present[h]]


def ha_predict(series, g: int) -> np.ndarray | None:
    """Historical average of same-weekday, same-interval maps; ``None`` without history."""
    hist = ha_history(series, g)
    if not hist:
        return None
    return series.flows[sorted(hist)].mean(axis=0)


def ha_baseline(series, targets: Sequence[int]) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """HA predictions for ``targets``; returns (preds, truths, skipped indices)."""
    preds, truths, skipped = [], [], []
    for g in targets:
        p = ha_predict(series, g)
        if p is None:
            skipped.append(g)
            continue
        preds.append(p)
        truths.append(series.flows[g])
    shape = (0,) + series.flows.shape[1:]
    if not preds:
        return np.zeros(shape), np.zeros(shape), skipped
    return np.stack(preds), np.stack(truths), skipped


@dataclass
class EvalReport:
    rmse: float
    mae: float
    z: int
    slices: dict[str, tuple[float, float] | None] = field(default_factory=dict)
    top_p: dict[int, tuple[float, float]] = field(default_factory=dict)
    horizon_rmse: list[float] = field(default_factory=list)
    ratio: float | None = None

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if self.z <= 0:
            raise NumericError("report covers no samples")
        pairs = [("overall", (self.rmse, self.mae))]
        pairs += [(k, v) for k, v in self.slices.items() if v is not None]
        pairs += [(f"top{k}", v) for k, v in self.top_p.items()]
        for name, (rmse, mae) in pairs:
            if not (math.isfinite(rmse) and math.isfinite(mae)):
                raise NumericError(f"{name}: non-finite error")
            if mae > rmse * (1 + 1e-12) + 1e-12:
                raise NumericError(f"{name}: MAE {mae} exceeds RMSE {rmse}")

    def rescaled(self, ratio: float) -> "EvalReport":
        """Copy with every error multiplied by ``ratio`` (BikeNYC reporting convention)."""
        scale = lambda pair: None if pair is None else apply_error_ratio(pair[0], pair[1], ratio)
        rmse, mae = apply_error_ratio(self.rmse, self.mae, ratio)
        return EvalReport(
            rmse, mae, self.z,
            {k: scale(v) for k, v in self.slices.items()},
            {k: scale(v) for k, v in self.top_p.items()},
            [r * ratio for r in self.horizon_rmse],
            ratio,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio_applied"] = self.ratio is not None
        d["top_p"] = {str(k): v for k, v in self.top_p.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [("overall", (self.rmse, self.mae))]
        rows += [(k, v) for k, v in self.slices.items()]
        rows += [(f"top {k}%", v) for k, v in sorted(self.top_p.items())]
        lines = [f"{'slice':<10} {'RMSE':>10} {'MAE':>10}"]
        for name, pair in rows:
            if pair is None:
                lines.append(f"{name:<10} {'absent':>10} {'absent':>10}")
            else:
                lines.append(f"{name:<10} {pair[0]:>10.4f} {pair[1]:>10.4f}")
        for i, r in enumerate(self.horizon_rmse, start=1):
            lines.append(f"{'step ' + str(i):<10} {r:>10.4f}")
        lines.append(f"samples z = {self.z}")
        lines.append(f"error ratio: {self.ratio if self.ratio is not None else 'not applied'}")
        return "\n".join(lines)


def evaluate(preds, targets, timestamps: Sequence[datetime], train_flows, ratio: float | None = None) -> EvalReport:
    """Full report for predictions ``[S, horizon, 2, h, w]`` in flow units.

    Slices and top-p masks use the first horizon step; ``horizon_rmse``
    covers every step.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 5:
        raise ShapeError(f"expected matching [S, horizon, 2, h, w] arrays, got {preds.shape} / {targets.shape}")
    rmse, mae = rmse_mae(preds, targets)
    first_p, first_t = preds[:, 0], targets[:, 0]
    report = EvalReport(
        rmse, mae, preds.shape[0],
        slice_metrics(first_p, first_t, timestamps),
        {p: rmse_mae(first_p, first_t, top_p_mask(train_flows, p)) for p in TOP_P},
        [rmse_mae(preds[:, s], targets[:, s])[0] for s in range(preds.shape[1])],
    )
    return report.rescaled(ratio) if ratio is not None else report


def write_interval_errors(path, series, targets: Sequence[int], preds) -> None:
    """Per-target CSV with model error plus the Pre-Hour / Pre-Day reference errors.

    Pre-Hour compares each map with the previous interval's map, Pre-Day
    with the same interval one day earlier; empty when unavailable.
    """
    per_day = series.intervals_per_day
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "timestamp", "rmse", "mae", "pre_hour_rmse", "pre_day_rmse"])
        for g, p in zip(targets, preds):
            truth = series.flows[g]
            rmse, mae = rmse_mae(p, truth)
            ref = []
            for back in (1, per_day):
                h = g - back
                ref.append(repr(rmse_mae(series.flows[h], truth)[0]) if h >= 0 and series.present[h] else "")
            writer.writerow([g, series.timestamp(g).isoformat(), repr(rmse), repr(mae)] + ref)
