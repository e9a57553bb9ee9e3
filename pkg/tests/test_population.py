"""Exact population oracles, analytic minimizers, and bound helpers."""
import numpy as np
import pytest

from transferlab import nets
from transferlab.errors import ContractViolation
from transferlab.population import (KAPPA_JOINT, KAPPA_SOURCE, PopulationSource,
                                    SourceDist, TargetDist,
                                    enumerate_source_minimizers,
                                    joint_construction_value, joint_lower_bound,
                                    mc_population_loss, min_norm_interpolator,
                                    minimizer_params, mu_star, population_grads,
                                    population_loss, quadratic_form_matrix,
                                    quadratic_form_variance, sample_dist)

TEN_27 = 10.0 / 27.0


def _axis_net(d, j, gamma=1.0):
    phi = np.zeros((d, 1))
    phi[j, 0] = 1.0
    return np.array([gamma]), phi


# -- closed-form anchors ---------------------------------------------------------

def test_zero_predictor_target_loss_is_two_thirds():
    loss = population_loss(np.zeros(2), np.zeros((4, 2)), TargetDist(4))
    assert loss == pytest.approx(2.0 / 3.0, abs=1e-15)


def test_off_axis_target_loss_formula_and_minimum():
    d = 5
    for gamma in (0.0, 0.4, 2.0 / 3.0, 1.0, 1.7):
        theta, phi = _axis_net(d, j=2, gamma=gamma)
        loss = population_loss(theta, phi, TargetDist(d))
        expected = (2.0 / 3.0) * gamma ** 2 - (8.0 / 9.0) * gamma + 2.0 / 3.0
        assert loss == pytest.approx(expected, abs=1e-14)
    theta, phi = _axis_net(d, j=2, gamma=2.0 / 3.0)
    assert population_loss(theta, phi, TargetDist(d)) == pytest.approx(TEN_27, abs=1e-15)


def test_on_axis_source_loss_is_zero_for_all_predictive_coordinates():
    dist = SourceDist(3, 6)
    for j in range(3):
        theta, phi = _axis_net(6, j)
        assert population_loss(theta, phi, dist) == pytest.approx(0.0, abs=1e-15)


def test_population_loss_requires_quadratic_activation():
    with pytest.raises(ContractViolation):
        population_loss(np.zeros(1), np.zeros((3, 1)), TargetDist(3), act=nets.RELU)


# -- Monte Carlo agreement --------------------------------------------------------

def test_monte_carlo_matches_exact_loss():
    rng = np.random.default_rng(0)
    for trial in range(4):
        d, k, m = 5, 2, 3
        theta = rng.normal(scale=0.5, size=m)
        phi = rng.normal(scale=0.5, size=(d, m))
        dist = SourceDist(k, d)
        exact = population_loss(theta, phi, dist)
        est, se = mc_population_loss(theta, phi, dist, n=200_000, seed=trial)
        assert abs(est - exact) < 3 * se


def test_monte_carlo_zero_variance_for_exact_predictor():
    theta, phi = _axis_net(4, j=0, gamma=1.0)
    est, se = mc_population_loss(theta, phi, TargetDist(4), n=10_000, seed=1)
    assert est == 0.0 and se == 0.0


def test_sample_dist_moments():
    rng = np.random.default_rng(2)
    X, y = sample_dist(SourceDist(2, 4), 60_000, rng)
    assert set(np.unique(X)) <= {-1.0, 0.0, 1.0}
    # tail coordinates: P(zero) = 1/3 regardless of branch
    frac_zero = np.mean(X[:, 3] == 0.0)
    assert abs(frac_zero - 1.0 / 3.0) < 0.01


# -- gradients ---------------------------------------------------------------------

def test_population_grads_match_finite_differences():
    rng = np.random.default_rng(3)
    d, k, m = 6, 3, 2
    theta = rng.normal(scale=0.6, size=m)
    phi = rng.normal(scale=0.6, size=(d, m))
    dist = SourceDist(k, d)
    value, d_theta, d_phi = population_grads(theta, phi, dist)
    assert value == pytest.approx(population_loss(theta, phi, dist))
    h = 1e-6
    for i in range(m):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (population_loss(tp, phi, dist) - population_loss(tm, phi, dist)) / (2 * h)
        assert d_theta[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)
    for i in range(d):
        for j in range(m):
            pp, pm = phi.copy(), phi.copy()
            pp[i, j] += h
            pm[i, j] -= h
            fd = (population_loss(theta, pp, dist)
                  - population_loss(theta, pm, dist)) / (2 * h)
            assert d_phi[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_population_source_adapter_matches_functions():
    rng = np.random.default_rng(4)
    theta = rng.normal(size=2)
    phi = rng.normal(size=(5, 2))
    src = PopulationSource(SourceDist(2, 5))
    v1, g1, g2 = src.loss_and_grads(theta, phi)
    v2, h1, h2 = population_grads(theta, phi, SourceDist(2, 5))
    assert v1 == v2 and np.array_equal(g1, h1) and np.array_equal(g2, h2)


# -- mu_star and minimizers ----------------------------------------------------------

def test_mu_star_lambda_zero_and_penalty_dominance():
    assert mu_star(0.0) == (1.0, 0.0)
    mu, value = mu_star(1e6)
    assert mu == 0.0 and value == pytest.approx(2.0 / 3.0)
    mu, value = mu_star(1e6, weight=0.4, kappa=KAPPA_JOINT)
    assert mu == 0.0 and value == pytest.approx(0.4)


def test_mu_star_matches_dense_grid_search():
    lam, w, kappa = 0.05, 2.0 / 3.0, KAPPA_SOURCE
    mu, value = mu_star(lam, w, kappa)
    grid = np.linspace(0.0, 1.5, 1_000_001)
    f = kappa * lam * grid ** (2.0 / 3.0) + w * (grid - 1.0) ** 2
    idx = int(np.argmin(f))
    assert 0.0 < mu < 1.0
    assert value <= f[idx] + 1e-12
    assert abs(mu - grid[idx]) < 2e-6
    # interior optimum beats both the zero solution and the unregularized one
    assert value < w  # f(0)
    assert value < kappa * lam  # f(1)


def test_minimizers_are_single_neuron_below_lambda_threshold():
    for lam in (0.01, 0.05, 0.099):
        desc = enumerate_source_minimizers(k=4, d=10, lam=lam)
        assert desc.case == "single_neuron"
        assert desc.head == pytest.approx((desc.mu / 2.0) ** (1.0 / 3.0))
        assert desc.weight_norm_sq == pytest.approx(2.0 * desc.head ** 2)
        assert desc.free_coordinates == 4
    assert enumerate_source_minimizers(k=4, d=10, lam=5.0).case == "zero"


def test_minimizer_params_achieve_the_analytic_value():
    lam = 0.02
    desc = enumerate_source_minimizers(k=3, d=8, lam=lam)
    for j in range(3):
        theta, phi = minimizer_params(desc, d=8, m=3, j=j)
        obj = population_loss(theta, phi, SourceDist(3, 8)) \
            + lam * (theta @ theta + np.sum(phi * phi))
        assert obj == pytest.approx(desc.value, abs=1e-12)


# -- no-variance property --------------------------------------------------------------

def test_quadratic_form_variance_zero_iff_diagonal():
    rng = np.random.default_rng(5)
    for k in (2, 5, 8):
        diag = np.diag(rng.normal(size=k))
        assert quadratic_form_variance(diag) == 0.0
        M = diag.copy()
        i, j = 0, k - 1
        M[i, j] = M[j, i] = 0.3
        assert quadratic_form_variance(M) > 0.0


# -- joint-training bound helpers --------------------------------------------------------

def test_min_norm_interpolator_satisfies_constraints():
    rng = np.random.default_rng(6)
    X = rng.integers(-1, 2, size=(6, 20)).astype(float)
    v = min_norm_interpolator(X, X[:, 0])
    assert np.allclose(X @ v, X[:, 0], atol=1e-10)
    # any other interpolator has at least this norm
    w = v + np.linalg.svd(X, full_matrices=True)[2][-1]
    assert np.linalg.norm(v) <= np.linalg.norm(w) + 1e-12


def test_joint_bounds_orientation():
    rng = np.random.default_rng(7)
    X = rng.integers(-1, 2, size=(8, 80)).astype(float)
    lam, alpha = 1e-2, 0.5
    lower_good = joint_lower_bound(lam, alpha, eps=1e-3)
    construction = joint_construction_value(lam, alpha, X)
    # the overfitting construction undercuts the cost any target-accurate
    # solution must pay, which is the content of the failure theorem
    assert construction < lower_good
    assert joint_lower_bound(lam, alpha, eps=0.3) <= lower_good
    with pytest.raises(ContractViolation):
        joint_lower_bound(lam, alpha, eps=0.7)


def test_quadratic_form_matrix_shape_checks():
    with pytest.raises(ContractViolation):
        quadratic_form_matrix(np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ContractViolation):
        quadratic_form_matrix(np.ones(3), np.ones((3, 2)))
