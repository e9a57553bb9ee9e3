"""Core predictor family: forward ops, exact gradients, SGD step."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transferlab import nets
from transferlab.errors import ContractViolation


def finite_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        hi = f()
        x[idx] = orig - h
        lo = f()
        x[idx] = orig
        g[idx] = (hi - lo) / (2 * h)
        it.iternext()
    return g


# -- features / predict -------------------------------------------------------

def test_features_identity_weights_unit_input():
    x = np.array([1.0, 0.0, 0.0])
    out = nets.features(x, np.eye(3), nets.QUADRATIC)
    assert np.array_equal(out, [1.0, 0.0, 0.0])


def test_features_relu_definition():
    out = nets.features(np.array([1.0, -1.0]), np.eye(2), nets.RELU)
    assert np.array_equal(out, [1.0, 0.0])


def test_features_single_neuron_hand_value():
    phi = np.array([[1.0], [1.0]])
    out = nets.features(np.array([2.0, 1.0]), phi, nets.QUADRATIC)
    assert out.shape == (1,)
    assert out[0] == pytest.approx(9.0)  # (2 + 1)^2


def test_features_dimension_mismatch_raises():
    with pytest.raises(ContractViolation):
        nets.features(np.ones(3), np.eye(2), nets.RELU)
    with pytest.raises(ContractViolation):
        nets.activate(np.ones(2), "softplus")


def test_predict_zero_head_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.normal(size=4)
        phi = rng.normal(size=(4, 3))
        assert nets.predict(x, np.zeros(3), phi, nets.QUADRATIC) == 0.0


def test_predict_single_coordinate_square():
    phi = np.array([[1.0], [0.0]])
    got = nets.predict(np.array([-1.0, 5.0]), np.array([1.0]), phi, nets.QUADRATIC)
    assert got == pytest.approx(1.0)


def test_predict_two_neuron_hand_value():
    phi = np.array([[1.0, 0.0], [0.0, 1.0]])
    got = nets.predict(np.array([1.0, 2.0]), np.array([1.0, 2.0]), phi,
                       nets.QUADRATIC)
    assert got == pytest.approx(9.0)  # 1*1 + 2*4


# -- batch_loss ----------------------------------------------------------------

def test_batch_loss_zero_for_perfect_predictor():
    phi = np.array([[1.0], [0.0], [0.0]])
    X = np.array([[1.0, 0.5, 2.0], [-1.0, 1.0, 0.0], [0.0, 3.0, 1.0]])
    y = X[:, 0] ** 2
    assert nets.batch_loss((X, y), np.array([1.0]), phi, nets.QUADRATIC,
                           nets.SQUARED) == pytest.approx(0.0, abs=1e-15)


def test_batch_loss_zero_phi_squared_equals_label_mean():
    rng = np.random.default_rng(3)
    y = (rng.random(400) < 2 / 3).astype(float)
    X = rng.normal(size=(400, 5))
    loss = nets.batch_loss((X, y), np.zeros(2), np.zeros((5, 2)),
                           nets.QUADRATIC, nets.SQUARED)
    assert loss == pytest.approx(float(np.mean(y)))


def test_batch_loss_cross_entropy_uniform_logits():
    X = np.zeros((1, 2))
    y = np.array([0])
    loss = nets.batch_loss((X, y), np.zeros((3, 2)), np.zeros((2, 3)),
                           nets.IDENTITY, nets.CROSS_ENTROPY)
    assert loss == pytest.approx(np.log(2.0))


def test_batch_loss_empty_set_raises():
    with pytest.raises(ContractViolation):
        nets.batch_loss((np.zeros((0, 2)), np.zeros(0)), np.zeros(2),
                        np.eye(2), nets.RELU, nets.SQUARED)


# -- gradients -----------------------------------------------------------------

def test_grads_zero_at_global_minimum():
    phi = np.array([[1.0], [0.0]])
    X = np.array([[1.0, 2.0], [-2.0, 0.5]])
    y = X[:, 0] ** 2
    params = nets.Params(phi, None, np.array([1.0]))
    g = nets.grads((X, y), params, nets.QUADRATIC, nets.SQUARED)
    assert np.allclose(g.d_theta_t, 0.0, atol=1e-14)
    assert np.allclose(g.d_phi, 0.0, atol=1e-14)


def test_grads_match_hand_chain_rule_single_neuron():
    # d=1, m=1, scalar head t, weight w, one example (x, y):
    # dL/dw = 2 (t w^2 x^2 - y) * t * 2 w x^2
    w, t, x, y = 0.7, -1.3, 1.9, 0.4
    X = np.array([[x]])
    expected = 2 * (t * w ** 2 * x ** 2 - y) * t * 2 * w * x ** 2
    _, d_theta, d_phi = nets.loss_and_grads(X, np.array([y]), np.array([t]),
                                            np.array([[w]]), nets.QUADRATIC,
                                            nets.SQUARED)
    assert d_phi[0, 0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("act,loss", [
    (nets.QUADRATIC, nets.SQUARED),
    (nets.RELU, nets.SQUARED),
    (nets.IDENTITY, nets.CROSS_ENTROPY),
    (nets.RELU, nets.CROSS_ENTROPY),
])
def test_grads_match_finite_differences(act, loss):
    rng = np.random.default_rng(hash((act, loss)) % 2 ** 31)
    for trial in range(5):
        d, m = rng.integers(2, 6), rng.integers(1, 4)
        n = 8
        C = int(rng.integers(2, 4))
        phi = rng.uniform(-1, 1, size=(d, m))
        X = rng.uniform(-1, 1, size=(n, d))
        if act == nets.RELU:  # keep pre-activations away from the kink
            while np.min(np.abs(X @ phi)) < 1e-3:
                X = rng.uniform(-1, 1, size=(n, d))
        if loss == nets.SQUARED:
            theta = rng.uniform(-1, 1, size=m)
            y = rng.uniform(-1, 1, size=n)
        else:
            theta = rng.uniform(-1, 1, size=(m, C))
            y = rng.integers(0, C, size=n)
        _, d_theta, d_phi = nets.loss_and_grads(X, y, theta, phi, act, loss)
        fd_phi = finite_difference(
            lambda: nets.batch_loss((X, y), theta, phi, act, loss), phi)
        fd_theta = finite_difference(
            lambda: nets.batch_loss((X, y), theta, phi, act, loss), theta)
        for got, want in ((d_phi, fd_phi), (d_theta, fd_theta)):
            denom = np.maximum(np.abs(want), 1e-2)
            assert np.max(np.abs(got - want) / denom) < 1e-6


# -- sgd_step ------------------------------------------------------------------

def _params_and_grads(g_scale=1.0):
    params = nets.Params(np.ones((2, 2)), None, np.ones(2))
    grads = nets.Grads(d_phi=np.full((2, 2), g_scale), d_theta_t=np.full(2, g_scale))
    return params, grads


def test_sgd_step_zero_gradient_is_identity():
    params, _ = _params_and_grads()
    zero = nets.Grads(d_phi=np.zeros((2, 2)), d_theta_t=np.zeros(2))
    new, _ = nets.sgd_step(params, zero, lr=0.5, momentum=0.0, weight_decay=0.0)
    assert np.array_equal(new.phi, params.phi)
    assert np.array_equal(new.theta_t, params.theta_t)


def test_sgd_step_plain_gradient_descent():
    params, grads = _params_and_grads(0.25)
    new, _ = nets.sgd_step(params, grads, lr=1.0, momentum=0.0, weight_decay=0.0)
    assert np.allclose(new.phi, params.phi - 0.25)


def test_sgd_step_momentum_two_step_displacement():
    # v <- 0.9 v + g with constant g: displacements g then 1.9 g, total 2.9 g
    params, grads = _params_and_grads(1.0)
    state = None
    current = params
    for _ in range(2):
        current, state = nets.sgd_step(current, grads, state, lr=1.0,
                                       momentum=0.9, weight_decay=0.0)
    assert np.allclose(params.phi - current.phi, 2.9)
    assert np.allclose(params.theta_t - current.theta_t, 2.9)


def test_sgd_step_rejects_bad_lr_and_shapes():
    params, grads = _params_and_grads()
    with pytest.raises(ContractViolation):
        nets.sgd_step(params, grads, lr=0.0)
    bad = nets.Grads(d_phi=np.zeros((3, 2)))
    with pytest.raises(ContractViolation):
        nets.sgd_step(params, bad)


# -- invariants ----------------------------------------------------------------

@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_losses_are_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d, m, n, C = 3, 2, 5, 3
    phi = rng.uniform(-1, 1, size=(d, m))
    X = rng.uniform(-1, 1, size=(n, d))
    theta = rng.uniform(-1, 1, size=m)
    y = rng.uniform(-1, 1, size=n)
    assert nets.batch_loss((X, y), theta, phi, nets.QUADRATIC, nets.SQUARED) >= 0.0
    theta_c = rng.uniform(-1, 1, size=(m, C))
    y_c = rng.integers(0, C, size=n)
    assert nets.batch_loss((X, y_c), theta_c, phi, nets.RELU,
                           nets.CROSS_ENTROPY) >= 0.0


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_prediction_linear_in_head(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=4)
    phi = rng.uniform(-1, 1, size=(4, 3))
    t1, t2 = rng.uniform(-1, 1, size=3), rng.uniform(-1, 1, size=3)
    a, b = rng.uniform(-2, 2, size=2)
    lhs = nets.predict(x, a * t1 + b * t2, phi, nets.QUADRATIC)
    rhs = (a * nets.predict(x, t1, phi, nets.QUADRATIC)
           + b * nets.predict(x, t2, phi, nets.QUADRATIC))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_quadratic_features_invariant_to_column_sign(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=4)
    phi = rng.uniform(-1, 1, size=(4, 3))
    flipped = phi.copy()
    col = int(rng.integers(0, 3))
    flipped[:, col] *= -1.0
    assert np.array_equal(nets.features(x, phi, nets.QUADRATIC),
                          nets.features(x, flipped, nets.QUADRATIC))


def test_params_reject_nonfinite_and_shape_mismatch():
    with pytest.raises(ContractViolation):
        nets.Params(np.array([[np.nan]]), None, None)
    with pytest.raises(ContractViolation):
        nets.Params(np.ones((3, 2)), np.ones(3), None)
