"""Seeded synthetic flow series for desk-scale experiments.

Per cell and channel::

    flow = base * (1 + amplitude * sin(2π t / T + phase)) * weekend * weather
           + ar_term + noise

rounded and floored at zero.  ``ar_term`` is a per-cell AR(1) process
with coefficient ``ar`` and innovation scale ``ar_scale``; ``ar = 0``
disables it.  The weekend and weather multipliers default to 1, so with
``ar = 0`` and ``noise = 0`` the series repeats every day.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import datetime, timezone

import numpy as np

from .grid import DAY_SECONDS
from .series import ExternalRecord, FlowSeries

WEATHER_CYCLE = ("sunny", "cloudy", "rainy")


@dataclass(frozen=True)
class SynthConfig:
    h: int = 8
    w: int = 8
    days: int = 30
    intervals_per_day: int = 48
    base: float = 30.0
    amplitude: float = 0.6
    ar: float = 0.8
    ar_scale: float = 4.0
    noise: float = 1.0
    weekend_factor: float = 1.0
    rain_factor: float = 1.0
    start: str = "2024-01-01"  # a Monday

    def __post_init__(self):
        if min(self.h, self.w, self.days, self.intervals_per_day) < 1:
            raise ValueError("synthetic series dimensions must be positive")
        if DAY_SECONDS % self.intervals_per_day:
            raise ValueError("intervals_per_day must divide 86400 seconds")
        if not 0.0 <= self.ar < 1.0:
            raise ValueError("AR coefficient must lie in [0, 1)")
        if self.noise < 0 or self.ar_scale < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def epoch(self) -> int:
        start = datetime.fromisoformat(self.start).replace(tzinfo=timezone.utc)
        return int(start.timestamp())

    def to_dict(self) -> dict:
        return asdict(self)


def synth_generate(cfg: SynthConfig, seed: int) -> FlowSeries:
    rng = np.random.default_rng(seed)
    per_day, days = cfg.intervals_per_day, cfg.days
    total = per_day * days
    shape = (2, cfg.h, cfg.w)

    base = cfg.base * rng.uniform(0.5, 1.5, shape)
    phase = rng.uniform(0.0, 2.0 * np.pi, shape)
    tod = np.arange(total) % per_day
    daily = 1.0 + cfg.amplitude * np.sin(2.0 * np.pi * tod[:, None, None, None] / per_day + phase)

    day_idx = np.arange(total) // per_day
    weekday = (datetime.fromtimestamp(cfg.epoch, tz=timezone.utc).weekday() + day_idx) % 7
    weekend = np.where(weekday >= 5, cfg.weekend_factor, 1.0)
    weather = [WEATHER_CYCLE[d % len(WEATHER_CYCLE)] for d in range(days)]
    rain = np.array([cfg.rain_factor if weather[d] == "rainy" else 1.0 for d in range(days)])[day_idx]
    flows = base * daily * (weekend * rain)[:, None, None, None]

    if cfg.ar > 0:
        innov = rng.normal(0.0, cfg.ar_scale, (total,) + shape)
        ar_term = np.empty_like(innov)
        ar_term[0] = innov[0] / np.sqrt(1.0 - cfg.ar ** 2)
        for g in range(1, total):
            ar_term[g] = cfg.ar * ar_term[g - 1] + innov[g]
        flows = flows + ar_term
    if cfg.noise > 0:
        flows = flows + rng.normal(0.0, cfg.noise, flows.shape)
    flows = np.maximum(np.rint(flows), 0.0)

    temp = 10.0 + 8.0 * np.sin(2.0 * np.pi * (tod - per_day / 4) / per_day) + rng.normal(0.0, 1.0, total)
    wind = rng.uniform(0.0, 20.0, total)
    externals = [
        ExternalRecord(weather[day_idx[g]], "weekend" if weekday[g] >= 5 else None, float(temp[g]), float(wind[g]))
        for g in range(total)
    ]
    return FlowSeries(flows, np.ones(total, dtype=bool), cfg.epoch, DAY_SECONDS // per_day, externals)
