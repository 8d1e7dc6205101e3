"""ConvLSTM cell, residual unit and the normal-feature-extraction branches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .params import BIAS, PEEPHOLE, Scope
from .tensor import (
    Tensor,
    concat,
    conv2d,
    fully_connected,
    relu,
    reshape,
    sigmoid,
    split_channels,
    tanh,
)

GATES = ("i", "f", "c", "o")
PEEPHOLES = ("i", "f", "o")

SCALED_SLACK = 1e-9


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def declare_convlstm(scope: Scope, cin: int, chid: int, h: int, w: int, kernel: int = 3) -> None:
    for g in GATES:
        scope.add(f"wx{g}", (chid, cin, kernel, kernel))
        scope.add(f"wh{g}", (chid, chid, kernel, kernel))
    for g in GATES:
        scope.add(f"b{g}", (chid,), BIAS)
    for g in PEEPHOLES:
        scope.add(f"wc{g}", (chid, h, w), PEEPHOLE)


@dataclass
class ConvLstmGates:
    """Gate kernels stacked as ``[i, f, c, o]`` so each path is one convolution."""

    wx: Tensor
    wh: Tensor
    b: Tensor
    wci: Tensor
    wcf: Tensor
    wco: Tensor

    @property
    def cin(self) -> int:
        return self.wx.shape[1]

    @property
    def chid(self) -> int:
        return self.wh.shape[1]

    @property
    def pad(self) -> int:
        return self.wx.shape[-1] // 2


def prepare_convlstm(params: Scope | ConvLstmGates) -> ConvLstmGates:
    if isinstance(params, ConvLstmGates):
        return params
    return ConvLstmGates(
        wx=concat([params[f"wx{g}"] for g in GATES], axis=0),
        wh=concat([params[f"wh{g}"] for g in GATES], axis=0),
        b=concat([params[f"b{g}"] for g in GATES], axis=0),
        wci=params["wci"],
        wcf=params["wcf"],
        wco=params["wco"],
    )


def convlstm_gates(x: Tensor, state: LstmState | None, params) -> tuple[LstmState, dict[str, Tensor]]:
    """One peephole ConvLSTM update; also returns the ``i``, ``f``, ``o`` gates.

    ``state=None`` stands for the all-zero initial state.
    """
    p = prepare_convlstm(params)
    if x.ndim < 3 or x.shape[-3] != p.cin:
        raise ShapeError(f"convlstm: input {x.shape} but cell expects {p.cin} channels")
    grid = p.wci.shape
    if x.shape[-2:] != grid[-2:]:
        raise ShapeError(f"convlstm: input grid {x.shape[-2:]} vs peephole grid {grid[-2:]}")
    if state is not None:
        expect = x.shape[:-3] + grid
        if state.h.shape != expect or state.c.shape != expect:
            raise ShapeError(f"convlstm: state {state.h.shape}/{state.c.shape}, expected {expect}")

    chid = p.chid
    z = conv2d(x, p.wx, p.b, pad=p.pad)
    if state is not None:
        z = z + conv2d(state.h, p.wh, None, pad=p.pad)
    zi, rest = split_channels(z, chid)
    zf, rest = split_channels(rest, chid)
    zc, zo = split_channels(rest, chid)
    if state is not None:
        zi = zi + p.wci * state.c
        zf = zf + p.wcf * state.c
    i = sigmoid(zi)
    f = sigmoid(zf)
    cand = i * tanh(zc)
    # zero initial cell: f * c vanishes identically
    c = cand if state is None else f * state.c + cand
    o = sigmoid(zo + p.wco * c)
    h = o * tanh(c)
    return LstmState(h, c), {"i": i, "f": f, "o": o}


def convlstm_step(x: Tensor, state: LstmState | None, params) -> LstmState:
    return convlstm_gates(x, state, params)[0]


def zero_state(batch_shape: tuple[int, ...], chid: int, h: int, w: int) -> LstmState:
    shape = tuple(batch_shape) + (chid, h, w)
    return LstmState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def declare_residual_unit(scope: Scope, width: int = 16, kernel: int = 3) -> None:
    for conv in ("conv1", "conv2"):
        scope.add(f"{conv}/k", (width, width, kernel, kernel))
        scope.add(f"{conv}/b", (width,), BIAS)


def residual_unit(x: Tensor, params: Scope) -> Tensor:
    k1, k2 = params["conv1/k"], params["conv2/k"]
    if x.ndim < 3 or x.shape[-3] != k1.shape[1]:
        raise ShapeError(f"residual unit expects {k1.shape[1]} channels, got {x.shape}")
    pad = k1.shape[-1] // 2
    y = conv2d(relu(x), k1, params["conv1/b"], pad=pad)
    y = conv2d(relu(y), k2, params["conv2/b"], pad=pad)
    return x + y


def declare_nfe(
    scope: Scope,
    d_ext: int,
    h: int,
    w: int,
    residual_units: int,
    flow_channels: int = 2,
    width: int = 16,
    ext_hidden: int = 40,
    kernel: int = 3,
) -> None:
    if residual_units < 1:
        raise ValueError("NFE needs at least one residual unit")
    scope.add("stem/k", (width, flow_channels, kernel, kernel))
    scope.add("stem/b", (width,), BIAS)
    for j in range(residual_units):
        declare_residual_unit(scope.scope(f"res{j}"), width, kernel)
    scope.add("ext/fc1/w", (ext_hidden, d_ext))
    scope.add("ext/fc1/b", (ext_hidden,), BIAS)
    scope.add("ext/fc2/w", (width * h * w, ext_hidden))
    scope.add("ext/fc2/b", (width * h * w,), BIAS)


def residual_unit_count(params: Scope) -> int:
    n = 0
    while f"res{n}/conv1/k" in params:
        n += 1
    return n


def nfe_flow(m_scaled: Tensor, params: Scope) -> Tensor:
    """Stem convolution followed by the residual stack."""
    peak = float(np.max(np.abs(m_scaled.data))) if m_scaled.data.size else 0.0
    if peak > 1.0 + SCALED_SLACK:
        raise ContractError(f"flow map must be scaled to [-1, 1]; found magnitude {peak:g}")
    k = params["stem/k"]
    y = conv2d(m_scaled, k, params["stem/b"], pad=k.shape[-1] // 2)
    for j in range(residual_unit_count(params)):
        y = residual_unit(y, params.scope(f"res{j}"))
    return y


def nfe_external(e: Tensor, params: Scope, h: int, w: int) -> Tensor:
    w1 = params["ext/fc1/w"]
    if e.shape[-1] != w1.shape[1]:
        raise ShapeError(f"external vector has {e.shape[-1]} features, encoder expects {w1.shape[1]}")
    w2 = params["ext/fc2/w"]
    if w2.shape[0] % (h * w):
        raise ShapeError(f"external encoder output {w2.shape[0]} does not tile a {h}x{w} grid")
    y = relu(fully_connected(e, w1, params["ext/fc1/b"]))
    y = fully_connected(y, w2, params["ext/fc2/b"])
    return reshape(y, e.shape[:-1] + (w2.shape[0] // (h * w), h, w))
