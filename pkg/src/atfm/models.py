"""SPN (one-step) and SPN-LONG (four-step) forecasters built on the ATFM.

Inputs are plain arrays bundled in :class:`ModelInputs`; they may carry a
batch axis after the interval axis or not.  Every interval of a sample is
embedded by one shared NFE in a single pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError
from .layers import convlstm_step, declare_convlstm, declare_nfe, nfe_external, nfe_flow
from .machine import atfm_encode, declare_atfm
from .params import BIAS, ParamStore, Scope
from .tensor import (
    Tensor,
    concat_channels,
    conv2d,
    flatten_features,
    fully_connected,
    relu,
    reshape,
    sigmoid,
    sum_axis,
    take,
    tanh,
)

LONG_STEPS = 4


@dataclass(frozen=True)
class SpnConfig:
    h: int
    w: int
    d_ext: int
    n: int = 4
    m: int = 2
    residual_units: int = 12
    horizon: int = 1
    flow_channels: int = 2
    feature_channels: int = 16
    ext_hidden: int = 40
    hidden: int = 32
    tvf_hidden: int = 32
    kernel: int = 3

    def __post_init__(self):
        if self.horizon not in (1, LONG_STEPS):
            raise ValueError(f"horizon must be 1 or {LONG_STEPS}, got {self.horizon}")
        if min(self.h, self.w, self.n, self.m, self.residual_units) < 1:
            raise ValueError("grid extents, n, m and residual_units must be positive")
        if self.hidden != 2 * self.feature_channels:
            raise ValueError("ATFM hidden width must equal the embedded feature width (flow + external)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpnConfig":
        return cls(**{k: int(v) for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ModelInputs:
    """Scaled maps and encoded externals for one sample or a batch.

    ``seq_maps`` is ``[n, *B, 2, h, w]`` and ``seq_ext`` ``[n, *B, dE]``;
    ``per_maps`` / ``per_ext`` add a leading step axis of extent
    ``horizon`` (1 for SPN).
    """

    seq_maps: np.ndarray
    seq_ext: np.ndarray
    per_maps: np.ndarray
    per_ext: np.ndarray

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.seq_maps.shape[1:-3]


@dataclass
class Forecast:
    maps: list[Tensor]
    r: list[Tensor]
    attention: dict[str, list[Tensor]] = field(default_factory=dict)

    def arrays(self) -> np.ndarray:
        """Predicted maps stacked on a leading horizon axis."""
        return np.stack([m.data for m in self.maps])

    def fusion_weights(self) -> np.ndarray:
        return np.stack([r.data.reshape(r.shape[:-1]) for r in self.r])


def declare_tvf(scope: Scope, feature_channels: int, h: int, w: int, hidden: int) -> None:
    scope.add("fc1/w", (hidden, 3 * feature_channels * h * w))
    scope.add("fc1/b", (hidden,), BIAS)
    scope.add("fc2/w", (1, hidden))
    scope.add("fc2/b", (1,), BIAS)


def declare_spn(cfg: SpnConfig) -> ParamStore:
    """Zero-valued parameter store for SPN (horizon 1) or SPN-LONG (horizon 4)."""
    store = ParamStore()
    root = store.scope("")
    f, hid = cfg.feature_channels, cfg.hidden
    declare_nfe(root.scope("nfe"), cfg.d_ext, cfg.h, cfg.w, cfg.residual_units,
                cfg.flow_channels, f, cfg.ext_hidden, cfg.kernel)
    for branch in ("srl", "prl"):
        sc = root.scope(branch)
        declare_atfm(sc, hid, hid, cfg.h, cfg.w, cfg.kernel)
        sc.add("reduce/k", (f, hid, 1, 1))
        sc.add("reduce/b", (f,), BIAS)
    if cfg.horizon == 1:
        declare_tvf(root.scope("tvf"), f, cfg.h, cfg.w, cfg.tvf_hidden)
        root.add("head/wp", (cfg.flow_channels, 2 * f, 1, 1))
    else:
        for i in range(1, LONG_STEPS + 1):
            cin = f if i == 1 else 2 * f
            declare_convlstm(root.scope(f"long/lstm{i}"), cin, f, cfg.h, cfg.w, cfg.kernel)
            declare_tvf(root.scope(f"tvf{i}"), f, cfg.h, cfg.w, cfg.tvf_hidden)
            root.add(f"head{i}/wp", (cfg.flow_channels, 2 * f, 1, 1))
    return store


def embed_intervals(maps: Tensor, ext: Tensor, nfe: Scope, h: int, w: int) -> tuple[Tensor, Tensor]:
    """Embedded features ``F(M) ⊕ F(E)`` plus the external half ``F(E)``."""
    fe = nfe_external(ext, nfe, h, w)
    return concat_channels(nfe_flow(maps, nfe), fe), fe


def embed_interval(m: Tensor, e: Tensor, params: ParamStore | Scope) -> Tensor:
    nfe = _scope(params, "nfe")
    h, w = m.shape[-2:]
    return embed_intervals(m, e, nfe, h, w)[0]


def reduce_representation(hidden: Tensor, params: Scope) -> Tensor:
    return conv2d(hidden, params["reduce/k"], params["reduce/b"])


def tvf_fuse(s_f: Tensor, p_f: Tensor, e_f: Tensor, params: Scope, force_r: float | None = None) -> tuple[Tensor, Tensor]:
    """Fusion weight ``r`` from ``S_f ⊕ P_f ⊕ E_f`` and ``SP_f = r·S_f ⊕ (1-r)·P_f``.

    ``r`` has shape ``[*B, 1]``.  ``force_r`` overrides the learned weight
    (used to probe the fusion mechanism).
    """
    if not (s_f.shape == p_f.shape == e_f.shape):
        raise ShapeError(f"tvf_fuse: shapes differ {s_f.shape}, {p_f.shape}, {e_f.shape}")
    z = flatten_features(concat_channels(concat_channels(s_f, p_f), e_f))
    z = relu(fully_connected(z, params["fc1/w"], params["fc1/b"]))
    r = sigmoid(fully_connected(z, params["fc2/w"], params["fc2/b"]))
    if force_r is not None:
        r = Tensor(np.full(r.shape, float(force_r)))
    r4 = reshape(r, r.shape[:-1] + (1, 1, 1))
    return concat_channels(r4 * s_f, (1.0 - r4) * p_f), r


def predict_head(sp_f: Tensor, wp: Tensor) -> Tensor:
    return tanh(conv2d(sp_f, wp))


def _scope(params, prefix: str) -> Scope:
    return params.scope(prefix) if isinstance(params, (ParamStore, Scope)) else params


def _embed_all(inputs: ModelInputs, params: ParamStore, cfg: SpnConfig):
    """Embed the sequential and every periodic interval with the shared NFE."""
    n = inputs.seq_maps.shape[0]
    lead = inputs.batch_shape
    if inputs.seq_maps.shape[-3:] != (cfg.flow_channels, cfg.h, cfg.w):
        raise ShapeError(f"flow maps {inputs.seq_maps.shape[-3:]} do not match config grid")
    maps = np.concatenate([inputs.seq_maps, inputs.per_maps.reshape((-1,) + inputs.per_maps.shape[2:])])
    ext = np.concatenate([inputs.seq_ext, inputs.per_ext.reshape((-1,) + inputs.per_ext.shape[2:])])
    count = maps.shape[0]
    flat = int(np.prod(lead)) if lead else 1
    maps_t = Tensor(maps.reshape((count * flat,) + maps.shape[-3:]))
    ext_t = Tensor(ext.reshape(count * flat, ext.shape[-1]))
    feat, fe = embed_intervals(maps_t, ext_t, params.scope("nfe"), cfg.h, cfg.w)
    feat = reshape(feat, (count,) + lead + feat.shape[1:])
    fe = reshape(fe, (count,) + lead + fe.shape[1:])
    return n, feat, fe


def spn_forward_inputs(inputs: ModelInputs, params: ParamStore, cfg: SpnConfig, force_r: float | None = None) -> Forecast:
    """SPN one-step forecast ``tanh(SP_f * w_p)`` from assembled inputs."""
    if cfg.horizon != 1:
        raise ValueError("spn_forward_inputs needs a horizon-1 configuration")
    n, feat, fe = _embed_all(inputs, params, cfg)
    m = inputs.per_maps.shape[1]
    seq = [take(feat, k) for k in range(n)]
    per = [take(feat, n + k) for k in range(m)]
    h_s, trace_s = atfm_encode(seq, params.scope("srl"))
    h_p, trace_p = atfm_encode(per, params.scope("prl"))
    s_f = reduce_representation(h_s, params.scope("srl"))
    p_f = reduce_representation(h_p, params.scope("prl"))
    e_f = sum_axis(fe, 0)
    sp_f, r = tvf_fuse(s_f, p_f, e_f, params.scope("tvf"), force_r)
    pred = predict_head(sp_f, params["head/wp"])
    return Forecast([pred], [r], {"srl": trace_s, "prl": trace_p})


def spn_long_forward_inputs(inputs: ModelInputs, params: ParamStore, cfg: SpnConfig) -> Forecast:
    """Four-step forecast: SRL output drives a chain of prediction ConvLSTMs.

    Step 1 consumes ``S_f``; step ``i > 1`` consumes the previous fused
    ``SP_f``.  Hidden and cell states carry across steps.
    """
    if cfg.horizon != LONG_STEPS:
        raise ValueError("spn_long_forward_inputs needs a horizon-4 configuration")
    steps, m = inputs.per_maps.shape[:2]
    if steps != LONG_STEPS:
        raise ShapeError(f"SPN-LONG needs {LONG_STEPS} periodic groups, got {steps}")
    n, feat, fe = _embed_all(inputs, params, cfg)
    seq = [take(feat, k) for k in range(n)]
    h_s, trace_s = atfm_encode(seq, params.scope("srl"))
    s_f = reduce_representation(h_s, params.scope("srl"))
    e_seq = sum_axis(take(fe, slice(0, n)), 0)

    maps, rs = [], []
    attention = {"srl": trace_s}
    state = None
    step_input = s_f
    for i in range(1, LONG_STEPS + 1):
        lo = n + (i - 1) * m
        per = [take(feat, lo + k) for k in range(m)]
        h_p, trace_p = atfm_encode(per, params.scope("prl"))
        attention[f"prl{i}"] = trace_p
        p_f = reduce_representation(h_p, params.scope("prl"))
        e_f = e_seq + sum_axis(take(fe, slice(lo, lo + m)), 0)
        state = convlstm_step(step_input, state, params.scope(f"long/lstm{i}"))
        sp_f, r = tvf_fuse(state.h, p_f, e_f, params.scope(f"tvf{i}"))
        maps.append(predict_head(sp_f, params[f"head{i}/wp"]))
        rs.append(r)
        step_input = sp_f
    return Forecast(maps, rs, attention)


def forward(inputs: ModelInputs, params: ParamStore, cfg: SpnConfig) -> Forecast:
    if cfg.horizon == 1:
        return spn_forward_inputs(inputs, params, cfg)
    return spn_long_forward_inputs(inputs, params, cfg)


def spn_forward(sample, data, params: ParamStore, cfg: SpnConfig) -> Forecast:
    """Forecast one sample of a prepared series (see ``PreparedSeries.gather_one``)."""
    inputs, _ = data.gather_one(sample)
    return forward(inputs, params, cfg)


def spn_long_forward(sample, data, params: ParamStore, cfg: SpnConfig) -> Forecast:
    if cfg.horizon != LONG_STEPS:
        raise ValueError("spn_long_forward needs a horizon-4 configuration")
    return spn_forward(sample, data, params, cfg)
