"""Xavier (Glorot) uniform initialization."""

from __future__ import annotations

import numpy as np

from .params import WEIGHT, ParamStore


def fans(shape: tuple[int, ...]) -> tuple[int, int]:
    """``(fan_in, fan_out)`` for dense ``[out, in]`` or conv ``[out, in, kh, kw]`` weights."""
    if len(shape) == 2:
        return shape[1], shape[0]
    if len(shape) == 4:
        field = shape[2] * shape[3]
        return shape[1] * field, shape[0] * field
    raise ValueError(f"no fan convention for shape {shape}")


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(store: ParamStore, seed: int) -> ParamStore:
    """Uniform ``±sqrt(6/(fan_in+fan_out))`` weights; biases and peepholes zero.

    Draws happen in declaration order from one seeded generator.
    """
    rng = np.random.default_rng(seed)
    for name, t in store.items():
        if store.role(name) == WEIGHT:
            bound = xavier_bound(*fans(t.shape))
            t.data = rng.uniform(-bound, bound, t.shape)
        else:
            t.data = np.zeros(t.shape)
    return store
