"""Central finite-difference checks of analytic gradients.

A central difference is only meaningful when the loss is smooth over the
whole stencil.  Entries whose ``±step`` perturbation flips the active set
of any ReLU are treated as straddling a kink and replaced by another
draw; the number of such redraws is reported per group.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .init import xavier_init
from .models import ModelInputs, SpnConfig, declare_spn, forward
from .params import WEIGHT, ParamStore
from .tensor import Tensor, backward, mean_all, no_grad, record_kinks, square, stack

STEP = 1e-4
TOLERANCE = 1e-4
FLOOR = 1e-6


@dataclass
class GroupResult:
    name: str
    checked: int
    max_rel_error: float
    max_abs_error: float
    kinks_skipped: int = 0
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error <= self.tolerance


def relative_error(analytic, numeric, floor: float = FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, index, step: float = STEP) -> float:
    orig = arr[index]
    arr[index] = orig + step
    up = f()
    arr[index] = orig - step
    down = f()
    arr[index] = orig
    return (up - down) / (2.0 * step)


def _same_active_set(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    store: ParamStore,
    entries_per_param: int | None = 8,
    step: float = STEP,
    floor: float = FLOOR,
    tolerance: float = TOLERANCE,
    seed: int = 0,
    names: Iterable[str] | None = None,
) -> list[GroupResult]:
    """Compare backprop against central differences, one group per parameter.

    ``entries_per_param`` entries are sampled per tensor (all of them when
    ``None`` or when the tensor is smaller).
    """
    store.zero_grad()
    with record_kinks() as base_active:
        loss = loss_fn()
    backward(loss, store)
    rng = np.random.default_rng(seed)

    def evaluate(active: list) -> float:
        with no_grad(), record_kinks() as log:
            value = loss_fn().item()
        active.append(log)
        return value

    results = []
    for name in names if names is not None else list(store):
        t = store[name]
        analytic = t.grad.copy()
        order = np.arange(t.data.size) if entries_per_param is None else rng.permutation(t.data.size)
        want = t.data.size if entries_per_param is None else min(entries_per_param, t.data.size)
        ana, num, skipped = [], [], 0
        for flat in order:
            if len(num) == want:
                break
            idx = np.unravel_index(int(flat), t.shape)
            active: list = []
            g = numerical_gradient(lambda: evaluate(active), t.data, idx, step)
            if not all(_same_active_set(base_active, a) for a in active):
                skipped += 1
                continue
            ana.append(analytic[idx])
            num.append(g)
        if num:
            rel = relative_error(ana, num, floor)
            err = np.abs(np.subtract(ana, num))
            results.append(GroupResult(name, len(num), float(rel.max()), float(err.max()), skipped, tolerance))
        else:
            results.append(GroupResult(name, 0, float("inf"), float("inf"), skipped, tolerance))
    return results


def format_table(results: list[GroupResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'group':<{width}}  {'n':>4}  {'kinks':>5}  {'max rel err':>12}  {'max abs err':>12}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(
            f"{r.name:<{width}}  {r.checked:>4}  {r.kinks_skipped:>5}  {r.max_rel_error:>12.3e}  {r.max_abs_error:>12.3e}  {status}"
        )
    return "\n".join(lines)


def model_gradcheck(cfg: SpnConfig, seed: int = 0, batch: int = 2, entries_per_param: int | None = 8,
                    step: float = STEP, tolerance: float = TOLERANCE) -> list[GroupResult]:
    """Check every parameter group of an SPN/SPN-LONG on random inputs.

    Weights get Xavier values; biases and peepholes, which start at zero in
    training, get small random values so that every path carries gradient.
    """
    rng = np.random.default_rng(seed)
    store = xavier_init(declare_spn(cfg), seed)
    for name, t in store.items():
        if store.role(name) != WEIGHT:
            t.data = rng.normal(0.0, 0.1, t.shape)
    grid = (cfg.flow_channels, cfg.h, cfg.w)
    inputs = ModelInputs(
        rng.uniform(-1, 1, (cfg.n, batch) + grid),
        rng.uniform(0, 1, (cfg.n, batch, cfg.d_ext)),
        rng.uniform(-1, 1, (cfg.horizon, cfg.m, batch) + grid),
        rng.uniform(0, 1, (cfg.horizon, cfg.m, batch, cfg.d_ext)),
    )
    target = Tensor(rng.uniform(-1, 1, (cfg.horizon, batch) + grid))

    def loss() -> Tensor:
        return mean_all(square(stack(forward(inputs, store, cfg).maps) - target))

    return check_gradients(loss, store, entries_per_param, step, tolerance=tolerance, seed=seed)
