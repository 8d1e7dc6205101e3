"""Trip records to inflow/outflow counts on a grid.

A trip adds one unit of outflow at its pickup cell and interval and one
unit of inflow at its dropoff cell and interval.  Endpoints outside the
bounding box or the series time span contribute nothing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DataError
from .grid import GridSpec, locate_cells
from .series import FlowSeries
from .timeparse import parse_time

TRIP_HEADER = ("pickup_time", "pickup_lat", "pickup_lon", "dropoff_time", "dropoff_lat", "dropoff_lon")

INFLOW, OUTFLOW = 0, 1


@dataclass(frozen=True)
class TripRecord:
    pickup_time: float
    pickup_lat: float
    pickup_lon: float
    dropoff_time: float
    dropoff_lat: float
    dropoff_lon: float

    def malformed(self) -> str | None:
        values = (self.pickup_time, self.pickup_lat, self.pickup_lon,
                  self.dropoff_time, self.dropoff_lat, self.dropoff_lon)
        if not all(math.isfinite(v) for v in values):
            return "non-finite field"
        if self.dropoff_time < self.pickup_time:
            return "dropoff before pickup"
        return None


@dataclass
class IngestSummary:
    trips: int = 0
    kept: int = 0
    malformed: int = 0
    pickups_outside: int = 0
    dropoffs_outside: int = 0
    gaps: int = 0
    parse_errors: list[tuple[int, str]] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [
            f"trips read        {self.trips}",
            f"trips kept        {self.kept}",
            f"trips skipped     {self.malformed + len(self.parse_errors)}",
            f"pickups outside   {self.pickups_outside}",
            f"dropoffs outside  {self.dropoffs_outside}",
            f"gap intervals     {self.gaps}",
        ]


def _span(trips: Sequence[TripRecord], grid: GridSpec) -> int:
    if grid.num_intervals is not None:
        return grid.num_intervals
    latest = max((t.dropoff_time for t in trips), default=grid.epoch)
    per_day = grid.intervals_per_day
    used = max(int((latest - grid.epoch) // grid.interval_seconds) + 1, 1)
    return -(-used // per_day) * per_day


def ingest_trips(trips: Sequence[TripRecord], grid: GridSpec) -> tuple[FlowSeries, IngestSummary]:
    summary = IngestSummary(trips=len(trips))
    good = []
    for t in trips:
        if t.malformed():
            summary.malformed += 1
        else:
            good.append(t)
    count = _span(good, grid)
    flows = np.zeros((count, 2, grid.rows, grid.cols))
    if good:
        arr = np.array([[t.pickup_time, t.pickup_lat, t.pickup_lon, t.dropoff_time, t.dropoff_lat, t.dropoff_lon]
                        for t in good], dtype=np.float64)
        for channel, (tc, la, lo) in ((OUTFLOW, (0, 1, 2)), (INFLOW, (3, 4, 5))):
            g = np.floor((arr[:, tc] - grid.epoch) / grid.interval_seconds).astype(np.int64)
            rows, cols = locate_cells(arr[:, la], arr[:, lo], grid)
            ok = (rows >= 0) & (g >= 0) & (g < count)
            np.add.at(flows, (g[ok], channel, rows[ok], cols[ok]), 1.0)
            if channel == OUTFLOW:
                summary.pickups_outside = int((~ok).sum())
            else:
                summary.dropoffs_outside = int((~ok).sum())
    summary.kept = len(good)
    series = FlowSeries(flows, np.ones(count, dtype=bool), grid.epoch, grid.interval_seconds, None, grid)
    return series, summary


def build_flow_series(trips: Sequence[TripRecord], grid: GridSpec) -> FlowSeries:
    return ingest_trips(trips, grid)[0]


def read_trips_csv(path) -> tuple[list[TripRecord], list[tuple[int, str]], int]:
    """Parse a trip CSV; returns records, ``(line, reason)`` rejects and row count."""
    trips: list[TripRecord] = []
    errors: list[tuple[int, str]] = []
    rows = 0
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return trips, errors, rows
        if tuple(h.strip() for h in header) != TRIP_HEADER:
            raise DataError(f"{path}: expected header {','.join(TRIP_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            rows += 1
            try:
                if len(row) != len(TRIP_HEADER):
                    raise ValueError(f"expected {len(TRIP_HEADER)} fields, got {len(row)}")
                rec = TripRecord(
                    float(parse_time(row[0])), float(row[1]), float(row[2]),
                    float(parse_time(row[3])), float(row[4]), float(row[5]),
                )
            except ValueError as exc:
                errors.append((line, str(exc)))
                continue
            why = rec.malformed()
            if why:
                errors.append((line, why))
            else:
                trips.append(rec)
    return trips, errors, rows
