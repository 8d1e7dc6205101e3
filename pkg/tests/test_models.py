import numpy as np
import pytest

from atfm.errors import ShapeError
from atfm.init import fans, xavier_bound, xavier_init
from atfm.models import (
    LONG_STEPS,
    ModelInputs,
    SpnConfig,
    declare_spn,
    declare_tvf,
    forward,
    spn_forward_inputs,
    tvf_fuse,
)
from atfm.params import BIAS, PEEPHOLE, WEIGHT, ParamStore
from atfm.tensor import Tensor

import oracles


def tiny(horizon=1, **kw):
    base = dict(h=4, w=3, d_ext=5, residual_units=1, horizon=horizon)
    base.update(kw)
    return SpnConfig(**base)


def random_inputs(cfg, rng, batch=None):
    lead = () if batch is None else (batch,)
    grid = (2, cfg.h, cfg.w)
    return ModelInputs(
        rng.uniform(-1, 1, (cfg.n,) + lead + grid),
        rng.uniform(0, 1, (cfg.n,) + lead + (cfg.d_ext,)),
        rng.uniform(-1, 1, (cfg.horizon, cfg.m) + lead + grid),
        rng.uniform(0, 1, (cfg.horizon, cfg.m) + lead + (cfg.d_ext,)),
    )


def init_store(cfg, seed=0):
    store = xavier_init(declare_spn(cfg), seed)
    rng = np.random.default_rng(seed + 1)
    for name, t in store.items():
        if store.role(name) != WEIGHT:
            t.data = rng.normal(0, 0.1, t.shape)
    return store


@pytest.mark.parametrize("seed", range(20))
def test_tvf_fuse_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    f, h, w = rng.integers(1, 4, 3)
    hidden = int(rng.integers(2, 6))
    store = ParamStore()
    declare_tvf(store.scope(""), f, h, w, hidden)
    for _, t in store.items():
        t.data = rng.normal(0, 0.3, t.shape)
    s, p, e = rng.normal(size=(3, f, h, w))
    sp, r = tvf_fuse(Tensor(s), Tensor(p), Tensor(e), store.scope(""))
    want_sp, want_r = oracles.tvf_fuse(s, p, e, *(store[k].data for k in ("fc1/w", "fc1/b", "fc2/w", "fc2/b")))
    assert r.shape == (1,)
    assert abs(r.data[0] - want_r) <= 1e-12
    np.testing.assert_allclose(sp.data, want_sp, rtol=0, atol=1e-12)


def test_tvf_zero_weights_give_half_and_forcing_zeroes_halves():
    rng = np.random.default_rng(0)
    store = ParamStore()
    declare_tvf(store.scope(""), 2, 3, 3, 4)
    s, p, e = (Tensor(rng.normal(size=(2, 3, 3))) for _ in range(3))
    sp, r = tvf_fuse(s, p, e, store.scope(""))
    assert r.data[0] == 0.5
    np.testing.assert_array_equal(sp.data[:2], 0.5 * s.data)
    sp1, _ = tvf_fuse(s, p, e, store.scope(""), force_r=1.0)
    assert np.all(sp1.data[2:] == 0) and np.array_equal(sp1.data[:2], s.data)
    sp0, _ = tvf_fuse(s, p, e, store.scope(""), force_r=0.0)
    assert np.all(sp0.data[:2] == 0) and np.array_equal(sp0.data[2:], p.data)
    with pytest.raises(ShapeError):
        tvf_fuse(s, Tensor(np.zeros((2, 3, 2))), e, store.scope(""))


def test_canonical_parameter_names():
    names = set(declare_spn(tiny()))
    for expected in ("nfe/stem/k", "nfe/res0/conv1/k", "nfe/ext/fc2/b", "srl/lstm1/wxi", "srl/lstm2/wcf",
                     "srl/attn/k", "prl/reduce/k", "tvf/fc1/w", "head/wp"):
        assert expected in names
    long_names = set(declare_spn(tiny(LONG_STEPS)))
    for i in range(1, LONG_STEPS + 1):
        assert {f"long/lstm{i}/wxi", f"tvf{i}/fc2/w", f"head{i}/wp"} <= long_names
    assert "tvf/fc1/w" not in long_names


def test_declared_shapes():
    cfg = tiny()
    store = declare_spn(cfg)
    assert store["tvf/fc1/w"].shape == (32, 3 * 16 * cfg.h * cfg.w)
    assert store["tvf/fc2/w"].shape == (1, 32)
    assert store["srl/lstm1/wxi"].shape == (32, 32, 3, 3)
    assert store["srl/lstm1/wci"].shape == (32, cfg.h, cfg.w)
    assert store["srl/attn/k"].shape == (1, 64, 1, 1)
    assert store["prl/reduce/k"].shape == (16, 32, 1, 1)
    assert store["head/wp"].shape == (2, 32, 1, 1)
    assert "head/b" not in store
    long = declare_spn(tiny(LONG_STEPS))
    assert long["long/lstm1/wxi"].shape == (16, 16, 3, 3)
    assert long["long/lstm2/wxi"].shape == (16, 32, 3, 3)


def test_xavier_init_bounds_and_zero_roles():
    store = xavier_init(declare_spn(tiny()), 3)
    for name, t in store.items():
        role = store.role(name)
        if role == WEIGHT:
            bound = xavier_bound(*fans(t.shape))
            assert np.all(np.abs(t.data) <= bound)
            assert t.data.std() > 0
        else:
            assert role in (BIAS, PEEPHOLE) and np.all(t.data == 0)
    again = xavier_init(declare_spn(tiny()), 3)
    assert all(np.array_equal(t.data, again[n].data) for n, t in store.items())


def test_fans():
    assert fans((16, 2, 3, 3)) == (18, 144)
    assert fans((32, 10)) == (10, 32)
    assert xavier_bound(10, 32) == pytest.approx(np.sqrt(6 / 42))


def test_spn_output_shape_and_range():
    cfg = tiny()
    store = init_store(cfg)
    fc = forward(random_inputs(cfg, np.random.default_rng(1)), store, cfg)
    assert len(fc.maps) == 1 and fc.maps[0].shape == (2, cfg.h, cfg.w)
    assert np.all(np.abs(fc.maps[0].data) < 1)
    assert 0 < fc.r[0].data[0] < 1
    assert len(fc.attention["srl"]) == cfg.n and len(fc.attention["prl"]) == cfg.m


def test_spn_long_emits_four_maps_in_open_interval():
    cfg = tiny(LONG_STEPS)
    store = init_store(cfg)
    fc = forward(random_inputs(cfg, np.random.default_rng(2), batch=3), store, cfg)
    assert len(fc.maps) == LONG_STEPS
    arr = fc.arrays()
    assert arr.shape == (LONG_STEPS, 3, 2, cfg.h, cfg.w)
    assert np.all((arr > -1) & (arr < 1))
    assert fc.fusion_weights().shape == (LONG_STEPS, 3)


def test_batched_forward_equals_per_sample():
    for horizon in (1, LONG_STEPS):
        cfg = tiny(horizon)
        store = init_store(cfg)
        inputs = random_inputs(cfg, np.random.default_rng(3), batch=2)
        batched = forward(inputs, store, cfg).arrays()
        for b in range(2):
            single = ModelInputs(inputs.seq_maps[:, b], inputs.seq_ext[:, b], inputs.per_maps[:, :, b], inputs.per_ext[:, :, b])
            np.testing.assert_allclose(forward(single, store, cfg).arrays(), batched[:, b], atol=1e-12)


def test_spn_composition_oracle():
    """SPN output rebuilt from the layer oracles for one sample."""
    cfg = tiny(residual_units=1, n=2, m=1)
    store = init_store(cfg, 5)
    inputs = random_inputs(cfg, np.random.default_rng(4))
    got = forward(inputs, store, cfg).maps[0].data
    p = {k: t.data for k, t in store.items()}

    def embed(mp, e):
        y = oracles.conv2d(mp, p["nfe/stem/k"], p["nfe/stem/b"], 1, 1)
        a = oracles.conv2d(np.maximum(y, 0), p["nfe/res0/conv1/k"], p["nfe/res0/conv1/b"], 1, 1)
        y = y + oracles.conv2d(np.maximum(a, 0), p["nfe/res0/conv2/k"], p["nfe/res0/conv2/b"], 1, 1)
        hid = np.maximum(oracles.fully_connected(e, p["nfe/ext/fc1/w"], p["nfe/ext/fc1/b"]), 0)
        fe = oracles.fully_connected(hid, p["nfe/ext/fc2/w"], p["nfe/ext/fc2/b"]).reshape(16, cfg.h, cfg.w)
        return np.concatenate([y, fe]), fe

    def branch(name, seq):
        pre = name + "/"
        p1 = {k[len(pre) + 6:]: v for k, v in p.items() if k.startswith(pre + "lstm1/")}
        p2 = {k[len(pre) + 6:]: v for k, v in p.items() if k.startswith(pre + "lstm2/")}
        state = None
        for x in seq:
            state, _ = oracles.atfm_step(x, state, p1, p2, p[pre + "attn/k"], p[pre + "attn/b"])
        return oracles.conv2d(state[2], p[pre + "reduce/k"], p[pre + "reduce/b"])

    seq = [embed(inputs.seq_maps[k], inputs.seq_ext[k]) for k in range(cfg.n)]
    per = [embed(inputs.per_maps[0, k], inputs.per_ext[0, k]) for k in range(cfg.m)]
    s_f = branch("srl", [x for x, _ in seq])
    p_f = branch("prl", [x for x, _ in per])
    e_f = sum(fe for _, fe in seq + per)
    sp, _ = oracles.tvf_fuse(s_f, p_f, e_f, p["tvf/fc1/w"], p["tvf/fc1/b"], p["tvf/fc2/w"], p["tvf/fc2/b"])
    want = np.tanh(oracles.conv2d(sp, p["head/wp"]))
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_force_r_reaches_the_head():
    cfg = tiny()
    store = init_store(cfg)
    inputs = random_inputs(cfg, np.random.default_rng(6))
    a = spn_forward_inputs(inputs, store, cfg, force_r=1.0)
    b = spn_forward_inputs(inputs, store, cfg, force_r=0.0)
    assert a.r[0].data[0] == 1.0 and b.r[0].data[0] == 0.0
    assert not np.allclose(a.maps[0].data, b.maps[0].data)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        tiny(horizon=2)
    with pytest.raises(ValueError):
        tiny(residual_units=0)
    cfg = tiny(LONG_STEPS)
    assert SpnConfig.from_dict(cfg.to_dict()) == cfg


def test_wrong_grid_rejected():
    cfg = tiny()
    store = init_store(cfg)
    bad = random_inputs(tiny(h=5), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(bad, store, cfg)
