"""Interval-indexed flow-map series."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .grid import DAY_SECONDS, GridSpec


@dataclass(frozen=True)
class ExternalRecord:
    """Raw external factors of one interval; ``None`` fields are unrecorded."""

    weather: str | None = None
    holiday: str | None = None
    temperature: float | None = None
    wind: float | None = None


@dataclass
class FlowSeries:
    """Inflow/outflow counts per interval.

    ``flows`` is ``[T, 2, h, w]`` with channel 0 inflow and channel 1
    outflow.  ``present`` marks intervals whose map was observed;
    ``externals`` (when not ``None``) holds one optional record per interval.
    Global index ``g`` maps to day ``g // intervals_per_day`` and
    within-day interval ``g % intervals_per_day``, counted from ``epoch``.
    """

    flows: np.ndarray
    present: np.ndarray
    epoch: int
    interval_seconds: int
    externals: list[ExternalRecord | None] | None = None
    grid: GridSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        self.flows = np.asarray(self.flows, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if self.flows.ndim != 4 or self.flows.shape[1] != 2:
            raise ValueError(f"flows must be [T, 2, h, w], got {self.flows.shape}")
        if self.present.shape != (self.flows.shape[0],):
            raise ValueError("present mask must have one entry per interval")
        if self.externals is not None and len(self.externals) != len(self):
            raise ValueError("externals must have one entry per interval")
        if DAY_SECONDS % self.interval_seconds:
            raise ValueError("interval length must divide one day")

    def __len__(self) -> int:
        return self.flows.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.flows.shape[2], self.flows.shape[3]

    @property
    def intervals_per_day(self) -> int:
        return DAY_SECONDS // self.interval_seconds

    @property
    def num_days(self) -> int:
        return -(-len(self) // self.intervals_per_day)

    def day_interval(self, g: int) -> tuple[int, int]:
        return divmod(int(g), self.intervals_per_day)

    def index(self, day: int, interval: int) -> int:
        if not 0 <= interval < self.intervals_per_day:
            raise IndexError(f"interval {interval} outside a day of {self.intervals_per_day}")
        return day * self.intervals_per_day + interval

    def start_time(self, g: int) -> int:
        return self.epoch + int(g) * self.interval_seconds

    def timestamp(self, g: int) -> datetime:
        return datetime.fromtimestamp(self.start_time(g), tz=timezone.utc)

    def has_externals(self) -> bool:
        return self.externals is not None and any(e is not None for e in self.externals)

    def external_present(self) -> np.ndarray:
        if self.externals is None:
            return np.zeros(len(self), dtype=bool)
        return np.array([e is not None for e in self.externals], dtype=bool)

    def usable(self, require_external: bool = True) -> np.ndarray:
        """Intervals with an observed map (and external record when required)."""
        ok = self.present.copy()
        if require_external:
            ok &= self.external_present()
        return ok
