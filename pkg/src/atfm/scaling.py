"""Min-max linear normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScalerError


@dataclass(frozen=True)
class Scaler:
    min: float
    max: float
    low: float = -1.0
    high: float = 1.0

    @classmethod
    def fit(cls, values, low: float = -1.0, high: float = 1.0) -> "Scaler":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise DegenerateScalerError("cannot fit a scaler on no values")
        lo, hi = float(arr.min()), float(arr.max())
        if not hi > lo:
            raise DegenerateScalerError(f"cannot fit a scaler on constant data ({lo})")
        if not high > low:
            raise ValueError(f"target range [{low}, {high}] is empty")
        return cls(lo, hi, float(low), float(high))

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - self.min) / (self.max - self.min) * (self.high - self.low) + self.low

    def invert(self, y):
        y = np.asarray(y, dtype=np.float64)
        return (y - self.low) / (self.high - self.low) * (self.max - self.min) + self.min

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(float(d["min"]), float(d["max"]), float(d.get("low", -1.0)), float(d.get("high", 1.0)))


def scaler_fit(values, low: float = -1.0, high: float = 1.0) -> Scaler:
    return Scaler.fit(values, low, high)


def scaler_apply(s: Scaler, x):
    return s.apply(x)


def scaler_invert(s: Scaler, y):
    return s.invert(y)
