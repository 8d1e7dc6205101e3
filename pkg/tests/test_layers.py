import numpy as np
import pytest

from atfm.errors import ContractError, ShapeError
from atfm.layers import (
    LstmState,
    convlstm_gates,
    convlstm_step,
    declare_convlstm,
    declare_nfe,
    declare_residual_unit,
    nfe_external,
    nfe_flow,
    residual_unit,
    zero_state,
)
from atfm.machine import atfm_encode, atfm_step, declare_atfm
from atfm.params import ParamStore
from atfm.tensor import Tensor, backward, mean_all, square

import oracles


def randomize(store, rng, scale=0.5):
    for _, t in store.items():
        t.data = rng.normal(0.0, scale, t.shape)
    return store


def lstm_arrays(scope_store, prefix=""):
    return {k[len(prefix):]: t.data for k, t in scope_store.items() if k.startswith(prefix)}


@pytest.mark.parametrize("seed", range(20))
def test_convlstm_step_matches_scalar_transcription(seed):
    rng = np.random.default_rng(seed)
    cin, chid = rng.integers(1, 4, 2)
    h, w = rng.integers(2, 5, 2)
    store = ParamStore()
    declare_convlstm(store.scope(""), cin, chid, h, w)
    randomize(store, rng)
    p = lstm_arrays(store)
    x = rng.normal(size=(cin, h, w))
    if seed % 2:
        h0, c0 = rng.normal(size=(2, chid, h, w))
        state = LstmState(Tensor(h0), Tensor(c0))
    else:
        h0 = c0 = state = None
    got = convlstm_step(Tensor(x), state, store.scope(""))
    want_h, want_c = oracles.convlstm_step(x, h0, c0, p)
    np.testing.assert_allclose(got.h.data, want_h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got.c.data, want_c, rtol=0, atol=1e-12)


def test_convlstm_none_state_equals_explicit_zeros():
    rng = np.random.default_rng(0)
    store = ParamStore()
    declare_convlstm(store.scope(""), 2, 3, 4, 4)
    randomize(store, rng)
    x = Tensor(rng.normal(size=(2, 4, 4)))
    a = convlstm_step(x, None, store.scope(""))
    b = convlstm_step(x, zero_state((), 3, 4, 4), store.scope(""))
    np.testing.assert_allclose(a.h.data, b.h.data, atol=1e-15)
    np.testing.assert_allclose(a.c.data, b.c.data, atol=1e-15)


def test_convlstm_zero_input_zero_state_with_zero_bias():
    store = ParamStore()
    declare_convlstm(store.scope(""), 2, 3, 4, 4)
    randomize(store, np.random.default_rng(1))
    for g in "ifco":
        store[f"b{g}"].data[:] = 0.0
    s = convlstm_step(Tensor(np.zeros((2, 4, 4))), None, store.scope(""))
    assert np.all(s.c.data == 0) and np.all(s.h.data == 0)


def test_convlstm_gates_in_unit_interval_and_shape_errors():
    rng = np.random.default_rng(2)
    store = ParamStore()
    declare_convlstm(store.scope(""), 2, 3, 4, 4)
    randomize(store, rng, 3.0)
    _, gates = convlstm_gates(Tensor(rng.normal(size=(5, 2, 4, 4))), None, store.scope(""))
    for g in gates.values():
        assert g.shape == (5, 3, 4, 4)
        assert np.all((g.data >= 0) & (g.data <= 1))
    with pytest.raises(ShapeError):
        convlstm_step(Tensor(np.zeros((3, 4, 4))), None, store.scope(""))
    with pytest.raises(ShapeError):
        convlstm_step(Tensor(np.zeros((2, 5, 4))), None, store.scope(""))


def test_convlstm_batched_equals_per_sample():
    rng = np.random.default_rng(3)
    store = ParamStore()
    declare_convlstm(store.scope(""), 2, 3, 3, 4)
    randomize(store, rng)
    x = rng.normal(size=(4, 2, 3, 4))
    h0, c0 = rng.normal(size=(2, 4, 3, 3, 4))
    batched = convlstm_step(Tensor(x), LstmState(Tensor(h0), Tensor(c0)), store.scope(""))
    for b in range(4):
        single = convlstm_step(Tensor(x[b]), LstmState(Tensor(h0[b]), Tensor(c0[b])), store.scope(""))
        np.testing.assert_allclose(batched.h.data[b], single.h.data, atol=1e-13)


def test_residual_unit_composition():
    rng = np.random.default_rng(4)
    store = ParamStore()
    declare_residual_unit(store.scope(""), width=3)
    randomize(store, rng)
    x = rng.normal(size=(3, 4, 4))
    got = residual_unit(Tensor(x), store.scope("")).data
    a = oracles.conv2d(np.maximum(x, 0), store["conv1/k"].data, store["conv1/b"].data, 1, 1)
    want = x + oracles.conv2d(np.maximum(a, 0), store["conv2/k"].data, store["conv2/b"].data, 1, 1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_nfe_shapes_and_contract():
    rng = np.random.default_rng(5)
    store = ParamStore()
    declare_nfe(store.scope("nfe"), d_ext=7, h=4, w=3, residual_units=2)
    randomize(store, rng, 0.1)
    m = Tensor(rng.uniform(-1, 1, (5, 2, 4, 3)))
    assert nfe_flow(m, store.scope("nfe")).shape == (5, 16, 4, 3)
    assert nfe_external(Tensor(rng.uniform(size=(5, 7))), store.scope("nfe"), 4, 3).shape == (5, 16, 4, 3)
    with pytest.raises(ContractError):
        nfe_flow(Tensor(np.full((2, 4, 3), 1.5)), store.scope("nfe"))
    with pytest.raises(ShapeError):
        nfe_external(Tensor(np.zeros(6)), store.scope("nfe"), 4, 3)


def test_nfe_external_matches_mlp_oracle():
    rng = np.random.default_rng(6)
    store = ParamStore()
    declare_nfe(store.scope(""), d_ext=4, h=2, w=2, residual_units=1, width=3, ext_hidden=5)
    randomize(store, rng)
    e = rng.uniform(size=4)
    hidden = np.maximum(oracles.fully_connected(e, store["ext/fc1/w"].data, store["ext/fc1/b"].data), 0)
    want = oracles.fully_connected(hidden, store["ext/fc2/w"].data, store["ext/fc2/b"].data).reshape(3, 2, 2)
    np.testing.assert_allclose(nfe_external(Tensor(e), store.scope(""), 2, 2).data, want, atol=1e-12)


def _atfm_arrays(store):
    p1 = {k[6:]: t.data for k, t in store.items() if k.startswith("lstm1/")}
    p2 = {k[6:]: t.data for k, t in store.items() if k.startswith("lstm2/")}
    return p1, p2, store["attn/k"].data, store["attn/b"].data


@pytest.mark.parametrize("seed", range(20))
def test_atfm_step_matches_composition_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    cin, chid = rng.integers(1, 4, 2)
    h, w = rng.integers(2, 5, 2)
    store = ParamStore()
    declare_atfm(store.scope(""), cin, chid, h, w)
    randomize(store, rng)
    p1, p2, ak, ab = _atfm_arrays(store)
    xs = rng.normal(size=(3, cin, h, w))
    state = ostate = None
    for x in xs:
        state, attn = atfm_step(Tensor(x), state, store.scope(""))
        ostate, oattn = oracles.atfm_step(x, ostate, p1, p2, ak, ab)
        np.testing.assert_allclose(attn.data, oattn, rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.s2.h.data, ostate[2], rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.s1.c.data, ostate[1], rtol=0, atol=1e-12)


def test_atfm_encode_returns_last_hidden_and_trace():
    rng = np.random.default_rng(7)
    store = ParamStore()
    declare_atfm(store.scope(""), 2, 2, 3, 3)
    randomize(store, rng)
    seq = [Tensor(rng.normal(size=(2, 3, 3))) for _ in range(4)]
    last, trace = atfm_encode(seq, store.scope(""))
    assert len(trace) == 4 and all(a.shape == (1, 3, 3) for a in trace)
    state = None
    for x in seq:
        state, _ = atfm_step(x, state, store.scope(""))
    np.testing.assert_array_equal(last.data, state.s2.h.data)
    with pytest.raises(ValueError):
        atfm_encode([], store.scope(""))


def test_atfm_attention_is_unbounded_linear_map():
    store = ParamStore()
    declare_atfm(store.scope(""), 1, 1, 2, 2)
    store["attn/b"].data[:] = 5.0
    _, attn = atfm_step(Tensor(np.zeros((1, 2, 2))), None, store.scope(""))
    np.testing.assert_array_equal(attn.data, np.full((1, 2, 2), 5.0))


def test_atfm_gradient_reaches_every_parameter():
    rng = np.random.default_rng(8)
    store = ParamStore()
    declare_atfm(store.scope(""), 2, 2, 3, 3)
    randomize(store, rng)
    seq = [Tensor(rng.normal(size=(2, 3, 3))) for _ in range(3)]
    last, _ = atfm_encode(seq, store.scope(""))
    backward(mean_all(square(last)), store)
    assert all(np.any(t.grad != 0) for _, t in store.items())
