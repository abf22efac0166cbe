import math

import numpy as np
import pytest

from kat import neural as nn
from kat import training as tr
from kat.dataset import Dataset, merge
from kat.errors import DimensionMismatch, EmptyPool


def hybrid(n_hist=20, n_syn=30, d=3, t=1, seed=0):
    rng = np.random.default_rng(seed)
    hd = Dataset(rng.standard_normal((n_hist, d)), rng.standard_normal((n_hist, t)), n_hist)
    sd = Dataset(rng.standard_normal((n_syn, d)), rng.standard_normal((n_syn, t)), 0)
    return merge(hd, sd)


# ---------------------------------------------------------------------------
# eta schedule
# ---------------------------------------------------------------------------

def kat_cfg(**kw):
    defaults = dict(batch_size=32, eta_min=0.5, eta_max=0.95, schedule_updates=600, iterations=10)
    defaults.update(kw)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return tr.TrainConfig(**defaults)


def test_eta_single_update():
    cfg = kat_cfg()
    state = tr.eta_update(tr.SamplerState(0.5, 0), cfg)
    assert state.eta == pytest.approx(0.50075, abs=1e-12)
    assert state.updates_applied == 1


def test_eta_reaches_max_after_T_updates():
    cfg = kat_cfg()
    state = tr.SamplerState(0.5, 0)
    etas = []
    for _ in range(700):
        state = tr.eta_update(state, cfg)
        etas.append(state.eta)
    assert abs(etas[599] - 0.95) < 1e-9
    assert all(b >= a for a, b in zip(etas, etas[1:]))  # nondecreasing
    assert etas[-1] == pytest.approx(0.95, abs=1e-12)   # clamped thereafter


def test_eta_closed_form_after_k_updates():
    cfg = kat_cfg()
    state = tr.SamplerState(0.5, 0)
    for k in range(1, 1001):
        state = tr.eta_update(state, cfg)
        expected = 0.5 + 0.45 * min(k, 600) / 600
        assert abs(state.eta - expected) < 1e-9


def test_eta_max_warning():
    with pytest.warns(UserWarning):
        tr.TrainConfig(eta_min=0.5, eta_max=0.95)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tr.TrainConfig(eta_min=0.5, eta_max=0.9)  # no warning at the ceiling


def test_default_eta_min_floor_rule():
    data = hybrid(n_hist=546, n_syn=1500)
    m = 32
    expected = math.floor(m * 546 / 2046) / m
    assert tr.default_eta_min(data, m) == expected
    cfg = kat_cfg(eta_min=None)
    assert tr.resolve_eta_min(cfg, data) == expected


# ---------------------------------------------------------------------------
# minibatch composition
# ---------------------------------------------------------------------------

def test_floor_arithmetic_compositions():
    data = hybrid(n_hist=50, n_syn=50)
    rng = np.random.default_rng(0)
    for (m, eta, want) in [(20, 0.6, (12, 8)), (32, 0.95, (30, 2)), (10, 1.0, (10, 0))]:
        batch = tr.draw_minibatch(data, eta, m, rng)
        assert (batch.m1, batch.m2) == want
        assert batch.m == m


def test_minibatch_counts_match_origins():
    data = hybrid(n_hist=7, n_syn=5)
    rng = np.random.default_rng(1)
    batch = tr.draw_minibatch(data, 0.5, 8, rng)
    assert batch.m1 == 4 and batch.m2 == 4
    # with-replacement only when the pool is short: synthetic pool of 5 >= 4 ok
    batch = tr.draw_minibatch(data, 0.0, 8, rng)  # needs 8 synthetic from 5
    assert batch.m2 == 8


def test_minibatch_empty_pool():
    data = Dataset(np.ones((4, 2)), np.ones((4, 1)), 4)  # no synthetic
    with pytest.raises(EmptyPool):
        tr.draw_minibatch(data, 0.5, 8, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def linear_task(n=64, d=4, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.standard_normal((d, 1))
    Y = X @ w + noise * rng.standard_normal((n, 1))
    return Dataset(X, Y, n)


def small_net(d=4):
    return nn.NetworkSpec(d, [nn.Dense(d, 8, nn.Activation.TANH), nn.Dense(8, 1, nn.Activation.IDENTITY)])


def test_train_noiseless_linear_converges():
    data = linear_task()
    spec = small_net()
    cfg = tr.TrainConfig(batch_size=32, step_size=1e-2, iterations=4000, seed=1)
    trace = tr.train(spec, data, cfg)
    preds = nn.forward(spec, trace.params, data.features)
    final = nn.loss(nn.MSE(), preds, data.targets)
    assert final < 1e-3
    assert len(trace) == 4000


def test_train_deterministic():
    data = hybrid()
    spec = small_net(3)
    cfg = kat_cfg(iterations=60, batch_size=8)
    t1 = tr.train(spec, data, cfg)
    t2 = tr.train(spec, data, cfg)
    assert np.array_equal(t1.params.theta, t2.params.theta)
    assert np.array_equal(t1.loss, t2.loss)


def test_train_eta_trace_and_forced_composition():
    data = hybrid(n_hist=200, n_syn=400)
    spec = small_net(3)
    cfg = kat_cfg(iterations=700, batch_size=20, schedule_updates=600)
    trace = tr.train(spec, data, cfg)
    assert all(b >= a - 1e-15 for a, b in zip(trace.eta, trace.eta[1:]))
    assert abs(trace.eta[599] - 0.95) < 1e-9
    # composition is forced, not probabilistic
    for k in range(len(trace)):
        assert trace.m1[k] == math.floor(20 * trace.eta[k])


def test_train_uniform_fallback_without_synthetic():
    data = linear_task(n=40)
    spec = small_net()
    cfg = kat_cfg(iterations=30, batch_size=10)
    trace = tr.train(spec, data, cfg)  # eta bounds set, but no synthetic rows
    assert (trace.m1 == 10).all()  # every draw purely historical


def test_train_input_dim_guard():
    data = linear_task(d=3)
    with pytest.raises(DimensionMismatch):
        tr.train(small_net(4), data, tr.TrainConfig(iterations=2))


def test_disjoint_cover_gradients_average_to_full_gradient():
    data = hybrid(n_hist=24, n_syn=40, seed=3)
    spec = small_net(3)
    params = nn.init_params(spec, 5)
    _, g_full = nn.loss_and_grad(spec, params, data.features, data.targets)
    acc = np.zeros_like(g_full)
    chunk = 8
    for start in range(0, len(data), chunk):
        X = data.features[start : start + chunk]
        Y = data.targets[start : start + chunk]
        _, g = nn.loss_and_grad(spec, params, X, Y)
        acc += g * len(X)
    acc /= len(data)
    rel = np.abs(acc - g_full).max() / max(np.abs(g_full).max(), 1e-12)
    assert rel < 1e-10


def test_trace_csv(tmp_path):
    data = hybrid()
    spec = small_net(3)
    trace = tr.train(spec, data, kat_cfg(iterations=12, batch_size=6),
                     tr.DiagnosticsFlags(grad_noise=True, full_loss_every=5))
    p = tmp_path / "trace.csv"
    trace.save_csv(p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "iter,loss,eta,grad_noise_norm"
    assert len(lines) == 13
    assert not np.isnan(trace.grad_noise_norm).any()
    assert set(trace.full_loss) == {5, 10}


def test_grad_noise_trace_off_by_default():
    data = hybrid()
    trace = tr.train(small_net(3), data, kat_cfg(iterations=5, batch_size=4))
    assert np.isnan(trace.grad_noise_norm).all()
