"""Attentive Traffic Flow Machine: two ConvLSTMs bridged by a spatial attention map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ShapeError
from .layers import ConvLstmGates, LstmState, convlstm_step, declare_convlstm, prepare_convlstm
from .params import BIAS, Scope
from .tensor import Tensor, broadcast_mul_channelwise, concat_channels, conv2d


@dataclass
class AtfmState:
    s1: LstmState
    s2: LstmState


@dataclass
class PreparedAtfm:
    lstm1: ConvLstmGates
    lstm2: ConvLstmGates
    attn_k: Tensor
    attn_b: Tensor


def declare_atfm(scope: Scope, cin: int, chid: int, h: int, w: int, kernel: int = 3) -> None:
    declare_convlstm(scope.scope("lstm1"), cin, chid, h, w, kernel)
    scope.add("attn/k", (1, chid + cin, 1, 1))
    scope.add("attn/b", (1,), BIAS)
    declare_convlstm(scope.scope("lstm2"), cin, chid, h, w, kernel)


def prepare_atfm(params) -> PreparedAtfm:
    if isinstance(params, PreparedAtfm):
        return params
    return PreparedAtfm(
        prepare_convlstm(params.scope("lstm1")),
        prepare_convlstm(params.scope("lstm2")),
        params["attn/k"],
        params["attn/b"],
    )


def attention_map(h1: Tensor, x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Linear 1x1 convolution over ``h1 ⊕ x``; no output nonlinearity."""
    return conv2d(concat_channels(h1, x), kernel, bias)


def atfm_step(x: Tensor, state: AtfmState | None, params) -> tuple[AtfmState, Tensor]:
    p = prepare_atfm(params)
    if p.attn_k.shape[1] != p.lstm1.chid + x.shape[-3]:
        raise ShapeError(f"attention kernel {p.attn_k.shape} does not match hidden+input channels")
    s1 = convlstm_step(x, None if state is None else state.s1, p.lstm1)
    attn = attention_map(s1.h, x, p.attn_k, p.attn_b)
    s2 = convlstm_step(broadcast_mul_channelwise(x, attn), None if state is None else state.s2, p.lstm2)
    return AtfmState(s1, s2), attn


def atfm_encode(seq: Sequence[Tensor], params) -> tuple[Tensor, list[Tensor]]:
    """Fold :func:`atfm_step` over ``seq`` from the zero state.

    Returns the last second-unit hidden state and one attention map per step.
    """
    if not seq:
        raise ValueError("atfm_encode needs a non-empty sequence")
    shape = seq[0].shape
    if any(x.shape != shape for x in seq):
        raise ShapeError("atfm_encode: sequence elements differ in shape")
    p = prepare_atfm(params)
    state = None
    trace = []
    for x in seq:
        state, attn = atfm_step(x, state, p)
        trace.append(attn)
    return state.s2.h, trace
