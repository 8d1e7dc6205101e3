"""Named parameter tensors with paired gradient buffers."""

from __future__ import annotations

from collections.abc import Iterator, Mapping

import numpy as np

from .errors import MetadataMismatchError, ShapeError, StateError
from .tensor import Tensor

WEIGHT = "weight"
BIAS = "bias"
PEEPHOLE = "peephole"


class ParamStore:
    """Ordered mapping from parameter name to a leaf :class:`Tensor`.

    ``role`` tags drive initialization: ``weight`` tensors are Xavier
    initialized, ``bias`` and ``peephole`` tensors start at zero.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._roles: dict[str, str] = {}

    def add(self, name: str, shape, role: str = WEIGHT) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(tuple(shape)), requires_grad=True, name=name)
        self._params[name] = t
        self._roles[name] = role
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def role(self, name: str) -> str:
        return self._roles[name]

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    @property
    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def ensure_grads(self) -> None:
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros(t.shape)

    def zero_grad(self) -> None:
        """Clear gradient buffers; the next backward pass starts from zero."""
        for t in self._params.values():
            t.grad = None

    def grads_populated(self) -> bool:
        return all(t.grad is not None for t in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Copies of every parameter value, keyed by name."""
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, values: Mapping[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = sorted(set(self._params) - set(values))
            extra = sorted(set(values) - set(self._params))
            if missing or extra:
                raise MetadataMismatchError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, arr in values.items():
            if name not in self._params:
                continue
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} != declared {t.shape}")
            t.data = arr.copy()

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, t in self._params.items():
            other.add(name, t.shape, self._roles[name]).data = t.data.copy()
        return other

    def grad_norm(self) -> float:
        if not self.grads_populated():
            raise StateError("gradients are not populated")
        return float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in self._params.values())))


class Scope:
    """Prefix view of a store: ``scope["wxi"]`` reads ``"<prefix>/wxi"``."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix.rstrip("/")

    def name(self, key: str) -> str:
        return f"{self.prefix}/{key}" if self.prefix else key

    def __getitem__(self, key: str) -> Tensor:
        return self.store[self.name(key)]

    def __contains__(self, key: str) -> bool:
        return self.name(key) in self.store

    def add(self, key: str, shape, role: str = WEIGHT) -> Tensor:
        return self.store.add(self.name(key), shape, role)

    def scope(self, sub: str) -> "Scope":
        return Scope(self.store, self.name(sub))
