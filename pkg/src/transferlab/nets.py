"""Two-layer predictor family f(x) = theta^T sigma(phi^T x) with exact gradients.

All numerics are float64. ``phi`` is a (d, m) matrix whose columns are neuron
weights; a head is either an (m,) vector (scalar output) or an (m, C) matrix.
Gradients are computed analytically (closed-form backward pass), never by a
generic autodiff graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

QUADRATIC = "quadratic"
RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (QUADRATIC, RELU, IDENTITY)

SQUARED = "squared"
CROSS_ENTROPY = "cross_entropy"
LOSSES = (SQUARED, CROSS_ENTROPY)


def _check_activation(act):
    if act not in ACTIVATIONS:
        raise ContractViolation(f"unknown activation {act!r}; expected one of {ACTIVATIONS}")


def _check_loss(loss):
    if loss not in LOSSES:
        raise ContractViolation(f"unknown loss {loss!r}; expected one of {LOSSES}")


def _as_xy(data):
    """Accept a LabeledSet-like object (.X/.y) or an (X, y) pair."""
    if hasattr(data, "X"):
        return data.X, data.y
    X, y = data
    return np.asarray(X, dtype=float), np.asarray(y)


def activate(Z, act):
    _check_activation(act)
    if act == QUADRATIC:
        return Z * Z
    if act == RELU:
        return np.maximum(Z, 0.0)
    return Z


def activate_grad(Z, act):
    """Elementwise derivative of the activation at pre-activations Z."""
    _check_activation(act)
    if act == QUADRATIC:
        return 2.0 * Z
    if act == RELU:
        return (Z > 0.0).astype(float)
    return np.ones_like(Z)


def features(x, phi, act):
    """sigma(phi^T x) for a single d-vector; returns an m-vector."""
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if x.ndim != 1 or phi.ndim != 2 or x.shape[0] != phi.shape[0]:
        raise ContractViolation(
            f"features: x has shape {x.shape}, phi has shape {phi.shape}")
    return activate(phi.T @ x, act)


def features_batch(X, phi, act):
    """Row-wise features for an (n, d) batch; returns (n, m)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != phi.shape[0]:
        raise ContractViolation(
            f"features_batch: X has shape {X.shape}, phi has shape {phi.shape}")
    return activate(X @ phi, act)


def predict(x, theta, phi, act):
    """theta^T sigma(phi^T x); scalar for an (m,) head, C-vector for (m, C)."""
    h = features(x, phi, act)
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != h.shape[0]:
        raise ContractViolation(
            f"predict: head has shape {theta.shape}, features have {h.shape[0]} entries")
    return h @ theta


def predict_batch(X, theta, phi, act):
    H = features_batch(X, phi, act)
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != H.shape[1]:
        raise ContractViolation(
            f"predict_batch: head has shape {theta.shape}, features are {H.shape[1]}-dim")
    return H @ theta


def _loss_and_dP(P, y, loss):
    """Mean per-example loss and its gradient w.r.t. the raw outputs P."""
    n = P.shape[0]
    if loss == SQUARED:
        y = np.asarray(y, dtype=float)
        if y.shape != P.shape:
            raise ContractViolation(
                f"squared loss: outputs have shape {P.shape}, targets {y.shape}")
        R = P - y
        if R.ndim == 1:
            return float(np.mean(R * R)), (2.0 / n) * R
        return float(np.mean(np.sum(R * R, axis=1))), (2.0 / n) * R
    # softmax cross entropy, labels are class indices
    if P.ndim != 2 or P.shape[1] < 2:
        raise ContractViolation("cross_entropy needs an (n, C) output matrix with C >= 2")
    y = np.asarray(y)
    if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
        raise ContractViolation("cross_entropy needs integer class labels of shape (n,)")
    if y.min() < 0 or y.max() >= P.shape[1]:
        raise ContractViolation("cross_entropy: label out of range")
    shifted = P - P.max(axis=1, keepdims=True)
    logZ = np.log(np.sum(np.exp(shifted), axis=1))
    loss_val = float(np.mean(logZ - shifted[np.arange(n), y]))
    sm = np.exp(shifted - logZ[:, None])
    dP = sm
    dP[np.arange(n), y] -= 1.0
    return loss_val, dP / n


def batch_loss(data, theta, phi, act, loss):
    """Mean per-example loss of the predictor over a dataset."""
    _check_loss(loss)
    X, y = _as_xy(data)
    if X.shape[0] == 0:
        raise ContractViolation("batch_loss: empty dataset")
    P = predict_batch(X, theta, phi, act)
    value, _ = _loss_and_dP(P, y, loss)
    if not np.isfinite(value):
        raise ContractViolation("batch_loss: non-finite loss value")
    return value


def loss_and_grads(X, y, theta, phi, act, loss, want_theta=True, want_phi=True):
    """Loss plus exact analytic gradients w.r.t. the head and/or phi.

    Returns (value, d_theta, d_phi); entries not requested are None.
    """
    _check_loss(loss)
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ContractViolation("loss_and_grads: empty dataset")
    Z = X @ phi
    H = activate(Z, act)
    P = H @ theta
    value, dP = _loss_and_dP(P, y, loss)
    d_theta = d_phi = None
    if want_theta:
        d_theta = H.T @ dP
    if want_phi:
        dH = np.outer(dP, theta) if P.ndim == 1 else dP @ theta.T
        d_phi = X.T @ (dH * activate_grad(Z, act))
    return value, d_theta, d_phi


@dataclass
class Params:
    """Feature extractor plus optional source/target heads."""
    phi: np.ndarray
    theta_s: np.ndarray | None = None
    theta_t: np.ndarray | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        for name in ("theta_s", "theta_t"):
            head = getattr(self, name)
            if head is None:
                continue
            head = np.asarray(head, dtype=float)
            if head.shape[0] != self.phi.shape[1]:
                raise ContractViolation(
                    f"{name} has {head.shape[0]} rows but phi has {self.phi.shape[1]} columns")
            setattr(self, name, head)
        for block in self.blocks().values():
            if not np.isfinite(block).all():
                raise ContractViolation("Params entries must be finite")

    def blocks(self):
        out = {"phi": self.phi}
        if self.theta_s is not None:
            out["theta_s"] = self.theta_s
        if self.theta_t is not None:
            out["theta_t"] = self.theta_t
        return out

    def copy(self):
        return Params(
            self.phi.copy(),
            None if self.theta_s is None else self.theta_s.copy(),
            None if self.theta_t is None else self.theta_t.copy(),
        )


@dataclass
class Grads:
    """Gradient blocks, shape-congruent with the Params they differentiate."""
    d_phi: np.ndarray | None = None
    d_theta_s: np.ndarray | None = None
    d_theta_t: np.ndarray | None = None

    def blocks(self):
        out = {}
        if self.d_phi is not None:
            out["phi"] = self.d_phi
        if self.d_theta_s is not None:
            out["theta_s"] = self.d_theta_s
        if self.d_theta_t is not None:
            out["theta_t"] = self.d_theta_t
        return out


def init_params(d, m, source_outputs=None, target_outputs=None, rng=None):
    """Random phi (i.i.d. normal, std 1/sqrt(d)), zero heads.

    ``source_outputs``/``target_outputs``: None for no head, 0 for a scalar
    head, C >= 1 for an (m, C) head.
    """
    rng = np.random.default_rng(rng)
    phi = rng.normal(0.0, 1.0, size=(d, m)) / np.sqrt(d)

    def head(spec):
        if spec is None:
            return None
        return np.zeros(m) if spec == 0 else np.zeros((m, spec))

    return Params(phi, head(source_outputs), head(target_outputs))


def grads(data, params, act, loss, which=("theta_t", "phi"), head="theta_t"):
    """Exact gradient of batch_loss w.r.t. the requested parameter blocks.

    ``head`` names the head used by the predictor; ``which`` selects the
    blocks to differentiate (any subset of {"phi", "theta_s", "theta_t"};
    only the active head can be differentiated among the heads).
    """
    X, y = _as_xy(data)
    theta = getattr(params, head)
    if theta is None:
        raise ContractViolation(f"grads: params has no {head}")
    want_theta = head in which
    want_phi = "phi" in which
    for name in which:
        if name not in ("phi", "theta_s", "theta_t"):
            raise ContractViolation(f"grads: unknown block {name!r}")
        if name not in ("phi", head):
            raise ContractViolation(f"grads: block {name!r} does not feed this prediction")
    _, d_theta, d_phi = loss_and_grads(X, y, theta, params.phi, act, loss,
                                       want_theta=want_theta, want_phi=want_phi)
    out = Grads(d_phi=d_phi)
    if head == "theta_s":
        out.d_theta_s = d_theta
    else:
        out.d_theta_t = d_theta
    return out


@dataclass
class SGDState:
    """Momentum buffers, one per parameter block."""
    velocity: dict = field(default_factory=dict)


def sgd_step(params, grads_, state=None, lr=0.1, momentum=0.0, weight_decay=0.0):
    """One momentum-SGD step with decoupled L2 weight decay.

    v <- momentum * v + g;  p <- p - lr * (v + weight_decay * p).
    Returns (new_params, state); ``params`` itself is not mutated.
    """
    if lr <= 0:
        raise ContractViolation("sgd_step: lr must be positive")
    if state is None:
        state = SGDState()
    new = params.copy()
    blocks = new.blocks()
    for name, g in grads_.blocks().items():
        p = blocks[name]
        if g.shape != p.shape:
            raise ContractViolation(f"sgd_step: gradient for {name} has shape "
                                    f"{g.shape}, parameter has {p.shape}")
        v = state.velocity.get(name)
        v = g.copy() if v is None or momentum == 0.0 else momentum * v + g
        state.velocity[name] = v
        p -= lr * (v + weight_decay * p)
    return new, state


def grad_norm(grads_):
    return float(np.sqrt(sum(np.sum(g * g) for g in grads_.blocks().values())))
