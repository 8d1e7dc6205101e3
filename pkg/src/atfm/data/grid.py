"""Region partition of a bounding box into an ``h x w`` grid."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

DAY_SECONDS = 86400


@dataclass(frozen=True)
class GridSpec:
    lat_min: float
    lon_min: float
    lat_max: float
    lon_max: float
    rows: int
    cols: int
    interval_seconds: int = 1800
    epoch: int = 0
    num_intervals: int | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise ValueError("bounding box must have lat_max > lat_min and lon_max > lon_min")
        if self.interval_seconds <= 0:
            raise ValueError("interval length must be positive")
        if DAY_SECONDS % self.interval_seconds:
            raise ValueError("interval length must divide one day")

    @property
    def intervals_per_day(self) -> int:
        return DAY_SECONDS // self.interval_seconds

    def lat_edges(self) -> np.ndarray:
        return np.linspace(self.lat_min, self.lat_max, self.rows + 1)

    def lon_edges(self) -> np.ndarray:
        return np.linspace(self.lon_min, self.lon_max, self.cols + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)


def _bin(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Half-open ``[e_k, e_k+1)`` bins; the upper edge joins the last bin; -1 outside."""
    idx = np.searchsorted(edges, values, side="right") - 1
    idx = np.where(values == edges[-1], len(edges) - 2, idx)
    inside = (values >= edges[0]) & (values <= edges[-1])
    return np.where(inside, idx, -1)


def locate_cells(lat, lon, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`locate_cell`; rows/cols are -1 for points outside the box."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    rows = _bin(lat, grid.lat_edges())
    cols = _bin(lon, grid.lon_edges())
    outside = (rows < 0) | (cols < 0)
    return np.where(outside, -1, rows), np.where(outside, -1, cols)


def locate_cell(lat: float, lon: float, grid: GridSpec) -> tuple[int, int] | None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        return None
    r, c = locate_cells([lat], [lon], grid)
    if r[0] < 0:
        return None
    return int(r[0]), int(c[0])
