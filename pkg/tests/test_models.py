from dataclasses import replace

import numpy as np
import pytest

from optensor import autodiff as ad, market_data as md
from optensor.autodiff import Tensor
from optensor.errors import DimensionError, UsageError
from optensor.models import (
    TRAINABLE, ConvLstm1dCell, ModelConfig, _ParamBuilder, bs_baseline_predict, build_model,
)

from oracles import check_grads

SMALL = dict(hidden_channels=3, conv_channels=3, gru_hidden=(2, 3, 2), regression_hidden=3, lstm_hidden=4)


@pytest.fixture(autouse=True)
def clean_tape():
    ad.get_tape().clear()
    yield
    ad.get_tape().clear()


def frame(n, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (10, 3, n, 5))


def cell(in_ch=2, hidden=3, width=5, k=3, seed=0):
    params = {}
    c = ConvLstm1dCell(_ParamBuilder(np.random.default_rng(seed), params), in_ch, hidden, width, k)
    return c, params


# Conv-LSTM cell ----------------------------------------------------------------

def test_zero_parameter_fixed_point():
    c, params = cell()
    for p in params.values():
        p.data[...] = 0
    zeros = Tensor(np.zeros((4, 3, 5)))
    h, cs = c.step(Tensor(np.random.default_rng(1).normal(size=(4, 2, 5))), zeros, zeros)
    assert not h.data.any() and not cs.data.any()


def test_saturated_gates_retain_memory():
    c, params = cell()
    for name, p in params.items():
        p.data[...] = 0
    c.b_f.data[...] = 50.0
    c.b_i.data[...] = -50.0
    rng = np.random.default_rng(2)
    c_prev = Tensor(rng.normal(size=(4, 3, 5)))
    _, c_new = c.step(Tensor(rng.normal(size=(4, 2, 5))), Tensor(rng.normal(size=(4, 3, 5))), c_prev)
    assert np.allclose(c_new.data, c_prev.data, atol=1e-8)


def test_cell_gradients():
    c, params = cell()
    rng = np.random.default_rng(3)
    x, h0, c0 = (Tensor(rng.uniform(-1, 1, s), True) for s in [(2, 2, 5), (2, 3, 5), (2, 3, 5)])
    tensors = list(params.values()) + [x, h0, c0]
    assert check_grads(lambda: ad.sum_all(c.step(x, h0, c0)[0]), tensors) < 1e-4


def test_cell_shape_errors():
    c, _ = cell()
    with pytest.raises(DimensionError):
        c.step(Tensor(np.zeros((2, 3, 5))))
    with pytest.raises(DimensionError):
        c.step(Tensor(np.zeros((2, 2, 5))), Tensor(np.zeros((2, 3, 4))))


def test_gate_boundedness_and_finite_states():
    c, _ = cell(seed=4)
    rng = np.random.default_rng(4)
    h = cs = None
    for _ in range(10):
        x = Tensor(rng.uniform(-10, 10, (6, 2, 5)))
        wx, wh, b = c.fused()
        pre = ad.conv1d(x, wx, b, padding="same")
        if h is not None:
            pre = ad.add(pre, ad.conv1d(h, wh, None, padding="same"))
        gates = ad.sigmoid(pre).data
        assert np.all((gates > 0) & (gates < 1))
        h, cs = c.step(x, h, cs)
    assert np.all(np.isfinite(cs.data)) and np.all(np.abs(h.data) < 1)


# full models -------------------------------------------------------------------

@pytest.mark.parametrize("kind", TRAINABLE)
@pytest.mark.parametrize("n", [1, 7, 64])
def test_output_shape(kind, n):
    m = build_model(ModelConfig(kind))
    assert m.predict(frame(n)).shape == (n, 1)


@pytest.mark.parametrize("kind", TRAINABLE)
def test_permutation_and_per_sample_independence(kind):
    m = build_model(ModelConfig(kind), seed=1)
    f = frame(6, seed=2)
    out = m.predict(f)
    perm = np.array([3, 0, 5, 1, 4, 2])
    assert np.allclose(m.predict(f[:, :, perm]), out[perm], rtol=0, atol=1e-13)
    g = f.copy()
    g[:, :, 4] += 1.0
    moved = m.predict(g)
    keep = [0, 1, 2, 3, 5]
    assert np.allclose(moved[keep], out[keep], rtol=0, atol=1e-13) and moved[4] != out[4]


@pytest.mark.parametrize("kind", TRAINABLE)
def test_identical_samples_give_identical_rows(kind):
    m = build_model(ModelConfig(kind), seed=3)
    f = np.repeat(frame(1, seed=4), 5, axis=2)
    out = m.predict(f)
    assert np.all(out == out[0])


@pytest.mark.parametrize("kind", TRAINABLE)
def test_wrong_frame_shape(kind):
    m = build_model(ModelConfig(kind))
    with pytest.raises(DimensionError):
        m.predict(np.zeros((10, 1, 4, 15)))
    with pytest.raises(DimensionError):
        m.forward(Tensor(np.zeros((10, 4, 2, 2))))


def test_single_channel_layout_and_param_counts():
    m3 = build_model(ModelConfig("conv_lstm_3c"))
    m1 = build_model(ModelConfig("conv_lstm_1c"))
    f = frame(2)
    x1 = m1.prepare(f)
    assert x1.shape == (10, 2, 1, 15)
    assert np.array_equal(x1[4, 1, 0], f[4, :, 1, :].reshape(-1))

    def count(in_ch, width, hc=16, k=3):
        return 4 * hc * in_ch * k + 4 * hc * hc * k + 3 * hc * width + 4 * hc + hc * width + 1
    assert m3.n_params() == count(3, 5) and m1.n_params() == count(1, 15)
    assert m3.n_params() != m1.n_params()
    assert f"{m1.n_params()} parameters" in m1.summary()


def test_cnn_rnn_layout():
    m = build_model(ModelConfig("cnn_rnn"))
    shapes = {n: p.shape for n, p in m.params.items()}
    for d in (1, 2, 4):
        assert shapes[f"spatial.conv_d{d}.weight"] == (16, 15, 3)
    assert shapes["spatial.merge.weight"] == (16, 48, 1)
    assert shapes["temporal.gru0.fwd.W_z"] == (16, 8)
    assert shapes["temporal.gru1.bwd.W_n"] == (16, 16)
    assert shapes["temporal.gru2.fwd.W_r"] == (32, 16)
    assert shapes["regression.gru.W_z"] == (32, 16)
    assert shapes["regression.linear.weight"] == (16, 1)


def test_lstm_zero_parameter_fixed_point():
    m = build_model(ModelConfig("lstm"))
    for p in m.params.values():
        p.data[...] = 0
    m.head_w.data[...] = 1.0
    assert not m.predict(frame(3)).any()


def test_params_deterministic_and_sorted():
    for kind in TRAINABLE:
        a, b = build_model(ModelConfig(kind), 9), build_model(ModelConfig(kind), 9)
        assert list(a.params) == sorted(a.params) == list(b.params)
        assert all(np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)


def test_bs_model_has_nothing_to_train():
    with pytest.raises(UsageError, match="no trainable parameters"):
        build_model(ModelConfig("bs"))


@pytest.mark.parametrize("kind", TRAINABLE)
def test_full_model_gradients(kind):
    m = build_model(ModelConfig(kind, **SMALL), seed=5)
    x = Tensor(m.prepare(frame(2, seed=6)))
    y = Tensor(np.array([[0.3], [-0.2]]))
    tol = 1e-3 if kind == "cnn_rnn" else 1e-4
    assert check_grads(lambda: ad.mse_loss(m.forward(x), y), list(m.params.values())) < tol


@pytest.mark.parametrize("kind", TRAINABLE)
def test_sanity_descent(kind):
    recs = md.generate_synthetic(md.SyntheticConfig(n_options=2, days_per_option=14, seed=2))
    ds = md.build_windows(recs, md.fit_normalization(recs))
    f, y = ds.inputs.data[:, :, :8], Tensor(ds.targets.data[:8])
    passed = 0
    for seed in range(20):
        m = build_model(ModelConfig(kind), seed=seed)
        opt, x = ad.Adam(m.params), Tensor(m.prepare(f))
        losses = []
        for _ in range(21):
            loss = ad.mse_loss(m.forward(x), y)
            losses.append(loss.item())
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
        passed += all(b < a for a, b in zip(losses, losses[1:]))
    assert passed >= 19


# B-S baseline ------------------------------------------------------------------

def test_bs_baseline_noise_free_matches_settle():
    recs = md.generate_synthetic(md.SyntheticConfig(n_options=3, days_per_option=12, noise_std=0.0, seed=1))
    pred = bs_baseline_predict(recs, 0.03)
    assert pred.shape == (len(recs), 1)
    assert np.allclose(pred.data[:, 0], [r.settle for r in recs], rtol=0, atol=1e-8)


def test_bs_baseline_expired_is_intrinsic():
    rec = md.generate_synthetic(md.SyntheticConfig(n_options=1, days_per_option=1, seed=0))[0]
    expired = replace(rec, days_to_expire=0.0)
    intrinsic = max(rec.spot - rec.strike, 0) if rec.call_put == "call" else max(rec.strike - rec.spot, 0)
    assert bs_baseline_predict([expired]).data[0, 0] == intrinsic
