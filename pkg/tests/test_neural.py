import numpy as np
import pytest

from kat import neural as nn
from kat.errors import DimensionMismatch, EmptyInput, ParamsFormatError

RELU = nn.Activation.RELU
TANH = nn.Activation.TANH
SIG = nn.Activation.SIGMOID
ID = nn.Activation.IDENTITY


def dense_spec(widths, acts=None, loss=nn.MSE()):
    acts = acts or [RELU] * (len(widths) - 2) + [ID]
    layers = [nn.Dense(widths[i], widths[i + 1], acts[i]) for i in range(len(widths) - 1)]
    return nn.NetworkSpec(widths[0], layers, loss)


# ---------------------------------------------------------------------------
# parameter counting / initialization
# ---------------------------------------------------------------------------

def count_oracle(spec):
    """Independent arithmetic: dense in*out+out, recurrent in*u + u*u + u."""
    total = 0
    width = spec.input_dim
    for layer in spec.layers:
        if isinstance(layer, nn.Dense):
            total += layer.in_dim * layer.out_dim + layer.out_dim
            width = layer.out_dim
        elif isinstance(layer, nn.Recurrent):
            total += width * layer.units + layer.units * layer.units + layer.units
            width = layer.units
    return total


def test_param_count_large_dense_model():
    spec = dense_spec([24, 48, 24])
    # 24*48+48 + 48*24+24
    assert count_oracle(spec) == 2376
    assert spec.param_count() == 2376


def test_param_count_random_specs():
    rng = np.random.default_rng(0)
    for _ in range(25):
        widths = [int(rng.integers(1, 7)) for _ in range(int(rng.integers(2, 5)))]
        if rng.random() < 0.5:
            spec = dense_spec(widths + [int(rng.integers(1, 5))])
        else:
            units = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(1, 3)))]
            layers = [nn.Recurrent(u, TANH, unroll=3) for u in units]
            layers.append(nn.Dense(units[-1], 2, ID))
            spec = nn.NetworkSpec(widths[0], layers)
        params = nn.init_params(spec, 1)
        assert params.dim == count_oracle(spec) == spec.param_count()


def test_init_deterministic_and_seed_sensitive():
    spec = dense_spec([4, 5, 2])
    a = nn.init_params(spec, 9).theta
    b = nn.init_params(spec, 9).theta
    assert np.array_equal(a, b)
    diff_seeds = 0
    for s in range(10):
        c = nn.init_params(spec, 100 + s).theta
        if not np.array_equal(a, c):
            diff_seeds += 1
    assert diff_seeds == 10


def test_init_biases_zero_weights_bounded():
    spec = dense_spec([6, 3])
    theta = nn.init_params(spec, 0).theta
    views = nn.param_views(spec, theta)
    assert np.array_equal(views["l0.b"], np.zeros(3))
    bound = np.sqrt(6.0 / (6 + 3))
    assert np.abs(views["l0.w"]).max() <= bound


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_forward_zero_weights_returns_bias():
    spec = dense_spec([3, 2], acts=[ID])
    theta = np.zeros(spec.param_count())
    views = nn.param_views(spec, theta)
    views["l0.b"][:] = [1.5, -2.0]
    params = nn.NetworkParams(theta)
    for x in (np.zeros(3), np.ones(3), np.array([3.0, -1.0, 7.0])):
        assert np.allclose(nn.forward(spec, params, x), [1.5, -2.0])


def test_forward_single_relu_unit():
    spec = nn.NetworkSpec(1, [nn.Dense(1, 1, RELU)])
    theta = np.array([2.0, -1.0])  # w=2, b=-1
    params = nn.NetworkParams(theta)
    assert np.allclose(nn.forward(spec, params, np.array([1.0])), [1.0])
    assert np.allclose(nn.forward(spec, params, np.array([0.0])), [0.0])


def test_eval_dropout_is_identity():
    base = dense_spec([4, 6, 2])
    with_do = nn.NetworkSpec(4, [base.layers[0], nn.Dropout(0.5), base.layers[1]])
    params = nn.init_params(base, 3)
    x = np.random.default_rng(1).standard_normal(4)
    assert np.allclose(nn.forward(base, params, x), nn.forward(with_do, params, x))


def test_eval_forward_pure():
    spec = dense_spec([3, 4, 2])
    params = nn.init_params(spec, 5)
    x = np.array([0.3, -1.2, 0.7])
    out1 = nn.forward(spec, params, x)
    out2 = nn.forward(spec, params, x)
    assert np.array_equal(out1, out2)


def test_train_dropout_scales_and_is_seeded():
    spec = nn.NetworkSpec(4, [nn.Dense(4, 4, ID), nn.Dropout(0.5)])
    theta = np.zeros(spec.param_count())
    views = nn.param_views(spec, theta)
    views["l0.w"][:] = np.eye(4)
    params = nn.NetworkParams(theta)
    x = np.ones(4)
    out1 = nn.forward(spec, params, x, nn.Train(np.random.default_rng(0)))
    out2 = nn.forward(spec, params, x, nn.Train(np.random.default_rng(0)))
    assert np.array_equal(out1, out2)
    assert set(np.round(np.unique(out1), 6)) <= {0.0, 2.0}  # inverted dropout: kept units scaled by 1/keep


def test_forward_dimension_mismatch():
    spec = dense_spec([3, 2])
    params = nn.init_params(spec, 0)
    with pytest.raises(DimensionMismatch):
        nn.forward(spec, params, np.ones(4))


def test_recurrent_forward_matches_manual_unroll():
    spec = nn.NetworkSpec(2, [nn.Recurrent(3, TANH, unroll=3), nn.Dense(3, 1, ID)])
    params = nn.init_params(spec, 7)
    views = nn.param_views(spec, params.theta)
    x = np.random.default_rng(2).standard_normal((3, 2))
    h = np.zeros(3)
    for t in range(3):
        h = np.tanh(x[t] @ views["l0.wx"] + h @ views["l0.wh"] + views["l0.b"])
    expected = h @ views["l1.w"] + views["l1.b"]
    assert np.allclose(nn.forward(spec, params, x), expected)
    # flat window input accepted too
    assert np.allclose(nn.forward(spec, params, x.ravel()), expected)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def test_losses_zero_residual():
    ys = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert nn.loss(nn.MSE(), ys, ys) == 0.0
    assert nn.loss(nn.Pinball(0.3), ys, ys) == 0.0


def test_pinball_hand_arithmetic():
    # q=0.75, y=10, yhat=8: 0.75 * (10-8) = 1.5
    assert nn.loss(nn.Pinball(0.75), [[8.0]], [[10.0]]) == pytest.approx(1.5, abs=1e-15)


def test_pinball_median_is_half_mae():
    rng = np.random.default_rng(4)
    preds = rng.standard_normal((5, 3))
    ys = rng.standard_normal((5, 3))
    mae = np.abs(preds - ys).mean()
    assert nn.loss(nn.Pinball(0.5), preds, ys) == pytest.approx(0.5 * mae, rel=1e-12)


def test_mse_nonnegative_zero_iff_equal():
    rng = np.random.default_rng(8)
    preds = rng.standard_normal((4, 2))
    ys = preds.copy()
    assert nn.loss(nn.MSE(), preds, ys) == 0.0
    ys[0, 0] += 1e-3
    assert nn.loss(nn.MSE(), preds, ys) > 0.0


def test_loss_empty_input():
    with pytest.raises((EmptyInput, DimensionMismatch)):
        nn.loss(nn.MSE(), np.zeros((0, 1)), np.zeros((0, 1)))


# ---------------------------------------------------------------------------
# backward: closed forms and the finite-difference oracle
# ---------------------------------------------------------------------------

def fd_gradient(spec, params, X, Y, kind, h=1e-5):
    """Central finite differences of the batch-mean loss (the oracle)."""
    theta = params.theta.copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        for sign in (+1.0, -1.0):
            theta[i] += sign * h
            p = nn.NetworkParams(theta.copy())
            val = nn.loss(kind, np.atleast_2d(nn.forward(spec, p, X)), np.atleast_2d(Y))
            if sign > 0:
                up = val
            else:
                down = val
            theta[i] -= sign * h
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8)


def test_backward_single_linear_unit_closed_form():
    spec = nn.NetworkSpec(1, [nn.Dense(1, 1, ID)])
    params = nn.NetworkParams(np.array([0.5, 0.1]))  # w, b
    x, y = np.array([[2.0]]), np.array([[3.0]])
    pred = 0.5 * 2.0 + 0.1
    grad = nn.backward(spec, params, (x, y))
    # d/dw = 2(pred-y)*x, d/db = 2(pred-y)
    assert grad == pytest.approx([2 * (pred - 3.0) * 2.0, 2 * (pred - 3.0)], rel=1e-12)


def test_pinball_gradient_sign_on_scalar_net():
    spec = nn.NetworkSpec(1, [nn.Dense(1, 1, ID)], loss=nn.Pinball(0.25))
    params = nn.NetworkParams(np.array([1.0, 0.0]))
    # prediction 2.0; target above -> residual y - pred > 0 -> dL/dpred = -q
    g_under = nn.backward(spec, params, (np.array([[2.0]]), np.array([[5.0]])))
    assert g_under == pytest.approx([-0.25 * 2.0, -0.25])
    # target below -> dL/dpred = 1-q
    g_over = nn.backward(spec, params, (np.array([[2.0]]), np.array([[1.0]])))
    assert g_over == pytest.approx([0.75 * 2.0, 0.75])


def random_spec(rng, with_dropout=False):
    """Small random dense/recurrent/mixed architectures."""
    kind = rng.integers(0, 3)
    loss = nn.MSE() if rng.random() < 0.6 else nn.Pinball(float(rng.uniform(0.2, 0.8)))
    acts = [RELU, TANH, SIG]
    if kind == 0:  # dense
        widths = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(2, 5)))]
        layers = []
        for i in range(len(widths) - 1):
            layers.append(nn.Dense(widths[i], widths[i + 1], acts[int(rng.integers(0, 3))]))
            if with_dropout and rng.random() < 0.3:
                layers.append(nn.Dropout(0.5))
        return nn.NetworkSpec(widths[0], layers, loss)
    unroll = int(rng.integers(1, 4))
    d_in = int(rng.integers(1, 4))
    layers = []
    units = d_in
    for _ in range(int(rng.integers(1, 3))):
        units = int(rng.integers(1, 5))
        layers.append(nn.Recurrent(units, acts[int(rng.integers(0, 3))], unroll=unroll))
    if kind == 2:  # mixed: dense head
        out = int(rng.integers(1, 4))
        layers.append(nn.Dense(units, out, acts[int(rng.integers(0, 3))]))
    return nn.NetworkSpec(d_in, layers, loss)


def test_gradient_check_random_networks():
    rng = np.random.default_rng(20240601)
    for trial in range(20):
        spec = random_spec(rng)
        params = nn.init_params(spec, int(rng.integers(0, 10_000)))
        # perturb so pre-activations sit at generic points (zero biases would
        # park dead-ReLU chains exactly on the kink, where FD is undefined)
        params = nn.NetworkParams(params.theta + 0.05 * rng.standard_normal(params.dim))
        B = int(rng.integers(1, 4))
        if spec.is_recurrent:
            X = rng.standard_normal((B, spec.unroll, spec.input_dim))
        else:
            X = rng.standard_normal((B, spec.input_dim))
        Y = rng.standard_normal((B, spec.output_dim))
        _, grad = nn.loss_and_grad(spec, params, X, Y)
        fd = fd_gradient(spec, params, X, Y, spec.loss)
        assert rel_err(grad, fd) < 1e-4, f"trial {trial}: {rel_err(grad, fd)}"


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    params = nn.NetworkParams(np.array([1.0, -2.0]))
    state = nn.AdamState.fresh(2)
    new, new_state = nn.adam_step(params, np.zeros(2), state, 1e-3)
    assert np.array_equal(new.theta, params.theta)
    assert new_state.step_count == 1


def test_adam_first_step_closed_form():
    params = nn.NetworkParams(np.array([0.0]))
    state = nn.AdamState.fresh(1)
    new, _ = nn.adam_step(params, np.array([1.0]), state, 1e-3)
    expected = -1e-3 / (1.0 + 1e-8)
    assert abs(new.theta[0] - expected) < 1e-12
    assert abs(new.theta[0] - (-9.99999990e-4)) < 1e-12


def test_adam_constant_positive_gradient_decreases_param():
    params = nn.NetworkParams(np.array([0.7]))
    state = nn.AdamState.fresh(1)
    values = [params.theta[0]]
    for _ in range(5):
        params, state = nn.adam_step(params, np.array([2.5]), state, 1e-2)
        values.append(params.theta[0])
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_dim_mismatch():
    params = nn.NetworkParams(np.zeros(3))
    with pytest.raises(DimensionMismatch):
        nn.adam_step(params, np.zeros(2), nn.AdamState.fresh(3), 1e-3)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_params_round_trip(tmp_path):
    spec = dense_spec([3, 4, 2])
    params = nn.init_params(spec, 42)
    p = tmp_path / "net.katp"
    nn.save_params(p, spec, params)
    back = nn.load_params(p, spec)
    assert np.array_equal(back.theta, params.theta)


def test_params_wrong_spec_rejected(tmp_path):
    spec = dense_spec([3, 4, 2])
    other = dense_spec([3, 5, 2])
    p = tmp_path / "net.katp"
    nn.save_params(p, spec, nn.init_params(spec, 0))
    with pytest.raises(ParamsFormatError):
        nn.load_params(p, other)


def test_params_bad_magic(tmp_path):
    p = tmp_path / "junk.katp"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ParamsFormatError):
        nn.load_params(p, dense_spec([2, 1]))
