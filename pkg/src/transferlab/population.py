"""Exact population losses for quadratic nets on the ternary-feature tasks.

With elementwise-quadratic activation the predictor is the quadratic form
p(x) = x^T A x with A = sum_i theta_i w_i w_i^T, so population squared error
reduces to entry moments of x. Both label branches have independent entries
with E[x]=E[x^3]=0; Rademacher entries have E[x^2]=E[x^4]=1, ternary
{-1,0,+1} entries have E[x^2]=E[x^4]=2/3. Everything here is closed form and
is cross-checked against Monte Carlo in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .errors import ContractViolation

KAPPA_SOURCE = 3.0 / 2.0 ** (2.0 / 3.0)   # weights |mu|^(2/3) in the pretraining bound
KAPPA_JOINT = 3.0 / 2.0 ** (4.0 / 3.0)    # the joint-training lower-bound variant


@dataclass(frozen=True)
class SourceDist:
    """Population source distribution with k redundant predictive coordinates."""
    k: int
    d: int

    def __post_init__(self):
        if not (1 <= self.k <= self.d):
            raise ContractViolation("SourceDist requires 1 <= k <= d")


def TargetDist(d):
    """The target distribution is the k = 1 source distribution."""
    return SourceDist(1, d)


def _branch_moments(dist, branch):
    """(E[x^2], E[x^4]) per coordinate for the given label branch."""
    m2 = np.full(dist.d, 2.0 / 3.0)
    m4 = np.full(dist.d, 2.0 / 3.0)
    if branch == 1:
        m2[:dist.k] = 1.0
        m4[:dist.k] = 1.0
    else:
        m2[:dist.k] = 0.0
        m4[:dist.k] = 0.0
    return m2, m4


def _e_quad(A, m2):
    return float(np.diag(A) @ m2)


def _e_quad_sq(A, m2, m4):
    dA = np.diag(A)
    t = dA @ m2
    off = np.sum(A * A * np.outer(m2, m2)) - np.sum(dA ** 2 * m2 ** 2)
    return float(np.sum(dA ** 2 * m4) + t * t - np.sum(dA ** 2 * m2 ** 2) + 2.0 * off)


def quadratic_form_matrix(theta, phi):
    """A = sum_i theta_i w_i w_i^T for a scalar head theta over phi's columns."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if theta.ndim != 1 or phi.ndim != 2 or theta.shape[0] != phi.shape[1]:
        raise ContractViolation("quadratic_form_matrix: theta must be an m-vector "
                                "matching phi's column count")
    return (phi * theta) @ phi.T


def population_loss_matrix(A, dist):
    """E[(x^T A x - y)^2] under the given distribution."""
    A = np.asarray(A, dtype=float)
    if A.shape != (dist.d, dist.d):
        raise ContractViolation(f"population_loss_matrix: A must be {dist.d}x{dist.d}")
    total = 0.0
    for branch, weight, y in ((0, 1.0 / 3.0, 0.0), (1, 2.0 / 3.0, 1.0)):
        m2, m4 = _branch_moments(dist, branch)
        total += weight * (_e_quad_sq(A, m2, m4) - 2.0 * y * _e_quad(A, m2) + y * y)
    return total


def population_grad_matrix(A, dist):
    """d/dA of population_loss_matrix, treating all entries as independent."""
    A = np.asarray(A, dtype=float)
    G = np.zeros_like(A)
    for branch, weight, y in ((0, 1.0 / 3.0, 0.0), (1, 2.0 / 3.0, 1.0)):
        m2, m4 = _branch_moments(dist, branch)
        dA = np.diag(A)
        t = dA @ m2
        Gb = 4.0 * A * np.outer(m2, m2)
        np.fill_diagonal(Gb, 2.0 * dA * m4 + 2.0 * t * m2 - 2.0 * dA * m2 ** 2
                         - 2.0 * y * m2)
        G += weight * Gb
    return G


def population_loss(theta, phi, dist, act=nets.QUADRATIC):
    """Exact population squared error of the quadratic net (theta, phi)."""
    if act != nets.QUADRATIC:
        raise ContractViolation("population_loss is exact only for the quadratic activation")
    return population_loss_matrix(quadratic_form_matrix(theta, phi), dist)


def population_grads(theta, phi, dist):
    """(value, d_theta, d_phi) of the exact population loss."""
    A = quadratic_form_matrix(theta, phi)
    value = population_loss_matrix(A, dist)
    G = population_grad_matrix(A, dist)
    d_theta = np.einsum("ij,im,jm->m", G, phi, phi)
    d_phi = (G + G.T) @ phi * theta
    return value, d_theta, d_phi


def sample_dist(dist, n, rng):
    """Draw n rows (X, y) from the population distribution."""
    y = (rng.random(n) < 2.0 / 3.0).astype(float)
    X = rng.integers(-1, 2, size=(n, dist.d)).astype(float)
    signs = np.where(rng.random((n, dist.k)) < 0.5, -1.0, 1.0)
    X[:, :dist.k] = np.where(y[:, None] == 1.0, signs, 0.0)
    return X, y


def mc_population_loss(theta, phi, dist, n=1_000_000, seed=0):
    """Monte Carlo estimate of the population loss with its standard error."""
    if n < 1:
        raise ContractViolation("need n >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 404]))
    X, y = sample_dist(dist, n, rng)
    p = nets.predict_batch(X, theta, phi, nets.QUADRATIC)
    sq = (p - y) ** 2
    est = float(np.mean(sq))
    se = float(np.std(sq, ddof=1) / np.sqrt(n))
    return est, se


# -- analytic minimizers of the regularized source objective -----------------

def mu_star(lam, weight=2.0 / 3.0, kappa=KAPPA_SOURCE):
    """Global minimizer of f(mu) = kappa*lam*|mu|^(2/3) + weight*(mu-1)^2.

    The candidates are mu = 0 and the positive roots of f' = 0, which after
    substituting mu = t^3 become roots of t^4 - t + kappa*lam/(3*weight) = 0.
    Negative mu is never optimal for weight > 0.
    """
    if lam < 0:
        raise ContractViolation("mu_star: lam must be >= 0")
    if lam == 0.0:
        return 1.0, 0.0

    def f(mu):
        return kappa * lam * abs(mu) ** (2.0 / 3.0) + weight * (mu - 1.0) ** 2

    candidates = [0.0]
    roots = np.roots([1.0, 0.0, 0.0, -1.0, kappa * lam / (3.0 * weight)])
    for r in roots:
        if abs(r.imag) < 1e-10 and r.real > 0:
            candidates.append(float(r.real) ** 3)
    values = [f(c) for c in candidates]
    best = int(np.argmin(values))
    return candidates[best], values[best]


@dataclass(frozen=True)
class MinimizerDescriptor:
    """Structure of the regularized source-objective minimizers.

    case "zero": theta_s = 0, phi = 0.
    case "single_neuron": one neuron active with head value (mu/2)^(1/3) and
    weight +-sqrt(2 * head) * e_j for a free coordinate j in 1..k; all other
    neurons exactly zero.
    """
    case: str
    mu: float
    value: float
    head: float = 0.0
    weight_norm_sq: float = 0.0
    free_coordinates: int = 0


def enumerate_source_minimizers(k, d, lam):
    """Analytic minimizers of E-source loss + lam * (||theta||^2 + ||phi||_F^2)."""
    if lam <= 0:
        raise ContractViolation("enumerate_source_minimizers: lam must be > 0")
    if not (1 <= k <= d):
        raise ContractViolation("enumerate_source_minimizers: need 1 <= k <= d")
    mu, value = mu_star(lam, 2.0 / 3.0, KAPPA_SOURCE)
    if mu == 0.0:
        return MinimizerDescriptor("zero", 0.0, value)
    head = (mu / 2.0) ** (1.0 / 3.0)
    return MinimizerDescriptor("single_neuron", mu, value,
                               head=head, weight_norm_sq=2.0 * head ** 2,
                               free_coordinates=k)


def minimizer_params(desc: MinimizerDescriptor, d, m, j=0, sign=1.0):
    """Materialize a minimizer as explicit (theta_s, phi) arrays."""
    phi = np.zeros((d, m))
    theta = np.zeros(m)
    if desc.case == "single_neuron":
        theta[0] = desc.head
        phi[j, 0] = sign * np.sqrt(desc.weight_norm_sq)
    return theta, phi


# -- joint-training bound helpers --------------------------------------------

def min_norm_interpolator(X, values):
    """Minimum-norm vector v with <v, x_i> = values_i for every row x_i."""
    X = np.asarray(X, dtype=float)
    gram = X @ X.T
    try:
        coef = np.linalg.solve(gram, values)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation("min_norm_interpolator: target rows are "
                                "linearly dependent") from exc
    return X.T @ coef


def joint_lower_bound(lam, alpha, eps):
    """Lower bound on the regularized joint objective over all solutions whose
    population target loss is at most eps (valid for 0 <= eps <= 2/3)."""
    if not (0.0 <= eps <= 2.0 / 3.0):
        raise ContractViolation("joint_lower_bound: eps must lie in [0, 2/3]")
    _, head_term = mu_star(lam, (2.0 / 3.0) * (1.0 - alpha), KAPPA_JOINT)
    margin = (1.0 - np.sqrt(1.5 * eps)) ** (2.0 / 3.0)
    return head_term + KAPPA_JOINT * lam * margin


def joint_construction_value(lam, alpha, target_X):
    """Objective value of the explicit overfitting construction: one neuron
    solves the source analytically, a second interpolates the target sample
    through the minimum-norm direction recovering x_1 on the sample."""
    phi_t = min_norm_interpolator(target_X, np.asarray(target_X)[:, 0])
    norm = float(np.linalg.norm(phi_t))
    _, head_term = mu_star(lam, (2.0 / 3.0) * (1.0 - alpha), KAPPA_SOURCE)
    return head_term + KAPPA_SOURCE * lam * norm ** (4.0 / 3.0)


# -- exhaustive quadratic-form variance (no-variance lemma) ------------------

def quadratic_form_variance(M):
    """Exact Var[x^T M x] over all sign vectors x in {-1,+1}^k (k <= 14).

    Computed with elementwise products and a fixed per-row reduction order
    (no BLAS), so for diagonal M every pattern yields the bit-identical value
    and the variance is exactly zero.
    """
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    if M.shape != (k, k):
        raise ContractViolation("quadratic_form_variance: M must be square")
    if k > 14:
        raise ContractViolation("quadratic_form_variance: exhaustive check limited to k <= 14")
    patterns = (((np.arange(2 ** k)[:, None] >> np.arange(k)) & 1) * 2 - 1).astype(float)
    terms = patterns[:, :, None] * M[None, :, :] * patterns[:, None, :]
    vals = terms.reshape(2 ** k, -1).sum(axis=1)
    # shift by the first value so identical values give a variance of exactly
    # zero (summing n identical floats is not exact in general)
    shifted = vals - vals[0]
    return float(np.mean((shifted - shifted.mean()) ** 2))


class PopulationSource:
    """Infinite-source stand-in for a LabeledSet: exact loss and gradients."""

    def __init__(self, dist: SourceDist):
        self.dist = dist

    def loss(self, theta_s, phi):
        return population_loss(theta_s, phi, self.dist)

    def loss_and_grads(self, theta_s, phi):
        return population_grads(theta_s, phi, self.dist)
