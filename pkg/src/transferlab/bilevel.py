"""Bi-level representation trainer.

Outer objective: source loss + rho * held-out target loss of a head fit on a
target train split (optionally plus an L2 term on theta_s and phi). The head
fit is the inner problem; its solution is differentiated exactly, either by
reversing through each unrolled gradient step or through the closed-form
ridge solution. Inner fits always use squared error (classification targets
enter through a +0.9/-0.1 one-vs-rest encoding), so the ridge solution
exists in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .datasets import split
from .errors import ContractViolation, NumericsError
from .optim import SGDConfig, clip_gradients

UNROLLED_GD = "unrolled_gd"
CLOSED_FORM_RIDGE = "closed_form_ridge"
INNER_SOLVERS = (UNROLLED_GD, CLOSED_FORM_RIDGE)

SCALAR = "scalar"
MULTICLASS = "multiclass"

_SPLIT_STREAM = 505


@dataclass
class MerlinConfig:
    """Bi-level trainer settings.

    lam is both the inner ridge strength and, when ``regularized`` is on, the
    outer L2 strength on (theta_s, phi) as in the theory objective. The
    inner-GD solver matches the lam-ridge at convergence when its weight
    decay is 2*lam/n_train.
    """
    rho: float = 2.0
    lam: float = 1e-2
    inner_steps: int = 10
    inner_lr: float = 0.05
    split_fraction: float = 0.5
    outer_iters: int = 3000
    inner_solver: str = CLOSED_FORM_RIDGE
    encoding: str = SCALAR
    inner_weight_decay: float = 0.0
    regularized: bool = False
    warm_start: bool = False
    grad_clip: float = 50.0

    def __post_init__(self):
        if self.rho < 0:
            raise ContractViolation("MerlinConfig: rho must be >= 0")
        if not (0.0 < self.split_fraction < 1.0):
            raise ContractViolation("MerlinConfig: split_fraction must be in (0, 1)")
        if self.inner_solver not in INNER_SOLVERS:
            raise ContractViolation(f"MerlinConfig: unknown inner solver {self.inner_solver!r}")
        if self.encoding not in (SCALAR, MULTICLASS):
            raise ContractViolation(f"MerlinConfig: unknown encoding {self.encoding!r}")
        if self.inner_solver == UNROLLED_GD and self.inner_steps < 1:
            raise ContractViolation("MerlinConfig: unrolled GD needs inner_steps >= 1")


@dataclass
class InnerSolution:
    theta: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def encode_labels(y, n_classes):
    """One-vs-rest regression encoding: -0.1 everywhere, +0.9 at the label."""
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        raise ContractViolation("encode_labels: labels must be integers")
    if y.min() < 0 or y.max() >= n_classes:
        raise ContractViolation("encode_labels: label out of range")
    Y = np.full((y.shape[0], n_classes), -0.1)
    Y[np.arange(y.shape[0]), y] = 0.9
    return Y


def _targets(dataset, encoding):
    if encoding == MULTICLASS:
        if dataset.n_classes is None:
            raise ContractViolation("multiclass encoding needs a classification set")
        return encode_labels(dataset.y, dataset.n_classes)
    return np.asarray(dataset.y, dtype=float)


def _lift(Y):
    """View targets as a matrix; remember whether they were a vector."""
    Y = np.asarray(Y, dtype=float)
    return (Y[:, None], True) if Y.ndim == 1 else (Y, False)


def inner_fit_ridge(phi, train, lam, encoding=SCALAR, act=nets.QUADRATIC, form="primal"):
    """Ridge head on frozen features: theta = (H^T H + lam I)^(-1) H^T Y,
    equal to the dual form H^T (H H^T + lam I)^(-1) Y for every lam > 0."""
    if lam < 0:
        raise ContractViolation("inner_fit_ridge: lam must be >= 0")
    H = nets.features_batch(train.X, phi, act)
    Y, was_vec = _lift(_targets(train, encoding))
    n, m = H.shape
    try:
        if form == "dual":
            K = H @ H.T + lam * np.eye(n)
            cond = float(np.linalg.cond(K))
            theta = H.T @ np.linalg.solve(K, Y)
        else:
            M = H.T @ H + lam * np.eye(m)
            cond = float(np.linalg.cond(M))
            theta = np.linalg.solve(M, H.T @ Y)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation("inner_fit_ridge: singular system (lam = 0 "
                                "requires an invertible Gram matrix)") from exc
    if not np.isfinite(theta).all() or (lam == 0.0 and cond > 1e14):
        raise ContractViolation("inner_fit_ridge: singular or numerically "
                                "unusable system at lam = 0")
    diagnostics = {"condition_number": cond, "solver": CLOSED_FORM_RIDGE, "form": form}
    return InnerSolution(theta[:, 0] if was_vec else theta, diagnostics)


def inner_fit_gd(phi, train, n_steps, lr, encoding=SCALAR, act=nets.QUADRATIC,
                 weight_decay=0.0, theta_init=None):
    """n plain gradient steps on the mean squared error of the head, phi
    frozen; the head starts at zero unless an explicit init is given."""
    if n_steps < 1:
        raise ContractViolation("inner_fit_gd: need n_steps >= 1")
    if lr <= 0:
        raise ContractViolation("inner_fit_gd: lr must be > 0")
    H = nets.features_batch(train.X, phi, act)
    Y, was_vec = _lift(_targets(train, encoding))
    n = H.shape[0]
    theta = np.zeros((H.shape[1], Y.shape[1])) if theta_init is None \
        else np.asarray(theta_init, dtype=float).reshape(H.shape[1], Y.shape[1]).copy()
    trajectory = []
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_steps):
            R = H @ theta - Y
            trajectory.append(float(np.mean(np.sum(R * R, axis=1))))
            grad = (2.0 / n) * (H.T @ R) + weight_decay * theta
            theta = theta - lr * grad
            if not np.isfinite(theta).all():
                raise NumericsError("inner_fit_gd diverged; use a smaller inner_lr")
        R = H @ theta - Y
        trajectory.append(float(np.mean(np.sum(R * R, axis=1))))
    diagnostics = {"loss_trajectory": trajectory, "solver": UNROLLED_GD}
    return InnerSolution(theta[:, 0] if was_vec else theta, diagnostics)


def _inner_forward(cfg, phi, Xtr, Ytr, act, theta_init=None):
    """Inner solve on raw arrays (targets already lifted to a matrix)."""
    n, m = Xtr.shape[0], phi.shape[1]
    Ztr = Xtr @ phi
    Htr = nets.activate(Ztr, act)
    if cfg.inner_solver == CLOSED_FORM_RIDGE:
        M = Htr.T @ Htr + cfg.lam * np.eye(m)
        try:
            chol = np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise ContractViolation("inner ridge system not positive definite") from exc
        theta = _chol_solve(chol, Htr.T @ Ytr)
        eig = np.linalg.eigvalsh(M)
        cond = float(eig[-1] / max(eig[0], 1e-300))
        return theta, {"Ztr": Ztr, "Htr": Htr, "chol": chol, "cond": cond}
    theta0 = np.zeros((m, Ytr.shape[1])) if theta_init is None else theta_init
    thetas = [theta0]
    c = 2.0 / n
    for _ in range(cfg.inner_steps):
        th = thetas[-1]
        grad = c * (Htr.T @ (Htr @ th - Ytr)) + cfg.inner_weight_decay * th
        thetas.append(th - cfg.inner_lr * grad)
        if not np.isfinite(thetas[-1]).all():
            raise NumericsError("inner GD diverged; use a smaller inner_lr")
    return thetas[-1], {"Ztr": Ztr, "Htr": Htr, "thetas": thetas, "cond": None}


def _chol_solve(chol, B):
    return np.linalg.solve(chol.T, np.linalg.solve(chol, B))


def _inner_backward(cfg, Xtr, Ytr, act, theta, cache, d_theta):
    """Backpropagate d(outer)/d(theta_hat) through the inner solve to phi."""
    Ztr, Htr = cache["Ztr"], cache["Htr"]
    n = Xtr.shape[0]
    if cfg.inner_solver == CLOSED_FORM_RIDGE:
        S = _chol_solve(cache["chol"], d_theta)
        Rtr = Htr @ theta - Ytr
        dH = -Rtr @ S.T - Htr @ (S @ theta.T)
    else:
        thetas = cache["thetas"]
        G = d_theta
        dH = np.zeros_like(Htr)
        c = 2.0 * cfg.inner_lr / n
        for k in range(cfg.inner_steps - 1, -1, -1):
            th = thetas[k]
            Rk = Htr @ th - Ytr
            dH += -c * (Rk @ G.T + Htr @ (G @ th.T))
            G = G - c * (Htr.T @ (Htr @ G)) - cfg.inner_lr * cfg.inner_weight_decay * G
    return Xtr.T @ (dH * nets.activate_grad(Ztr, act))


def meta_split(target, cfg, seed, outer_iter=0):
    """The split used at a given outer iteration; seed-derived and fresh."""
    return split(target, cfg.split_fraction,
                 np.random.SeedSequence([int(seed), _SPLIT_STREAM, int(outer_iter)])
                 .generate_state(1)[0])


def _meta_value_and_grads(cfg, phi, train, val, act, want_grad=True, theta_init=None):
    Xtr = train.X
    Ytr, was_vec = _lift(_targets(train, cfg.encoding))
    Xval = val.X
    Yval, _ = _lift(_targets(val, cfg.encoding))
    if theta_init is not None:
        theta_init = np.asarray(theta_init, dtype=float).reshape(phi.shape[1], Ytr.shape[1])
    theta, cache = _inner_forward(cfg, phi, Xtr, Ytr, act, theta_init)
    Zv = Xval @ phi
    Hv = nets.activate(Zv, act)
    Rv = Hv @ theta - Yval
    value = float(np.mean(np.sum(Rv * Rv, axis=1)))
    theta_out = theta[:, 0] if was_vec else theta
    diag = {"condition_number": cache["cond"]}
    if not want_grad:
        return value, None, theta_out, diag
    dP = (2.0 / Xval.shape[0]) * Rv
    d_theta = Hv.T @ dP
    d_phi = Xval.T @ ((dP @ theta.T) * nets.activate_grad(Zv, act))
    d_phi += _inner_backward(cfg, Xtr, Ytr, act, theta, cache, d_theta)
    return value, d_phi, theta_out, diag


def meta_target_loss(phi, target, cfg, seed, act=nets.QUADRATIC, outer_iter=0,
                     parts=None):
    """Held-out loss of the inner head: split, fit on the train part, return
    the mean per-example squared error on the validation part."""
    if parts is None:
        parts = meta_split(target, cfg, seed, outer_iter)
    value, _, theta, diag = _meta_value_and_grads(cfg, phi, parts[0], parts[1],
                                                  act, want_grad=False)
    return value, InnerSolution(theta, diag)


def source_loss_kind(source):
    if hasattr(source, "loss_and_grads"):
        return nets.SQUARED
    return nets.CROSS_ENTROPY if source.n_classes is not None else nets.SQUARED


def _source_terms(source, theta_s, phi, act, batch=None):
    """Loss and gradients of the source term; source may be a LabeledSet or a
    population object exposing loss_and_grads(theta_s, phi)."""
    if hasattr(source, "loss_and_grads"):
        return source.loss_and_grads(theta_s, phi)
    X, y = source.X, source.y
    if batch is not None:
        X, y = X[batch], y[batch]
    return nets.loss_and_grads(X, y, theta_s, phi, act, source_loss_kind(source))


def outer_objective(phi, theta_s, source, target, cfg, seed, act=nets.QUADRATIC,
                    outer_iter=0, parts=None):
    """source loss + rho * meta loss (+ lam * (||theta_s||^2 + ||phi||_F^2))."""
    if hasattr(source, "loss"):
        src = source.loss(theta_s, phi)
    else:
        src = nets.batch_loss(source, theta_s, phi, act, source_loss_kind(source))
    meta, _ = meta_target_loss(phi, target, cfg, seed, act, outer_iter, parts)
    value = src + cfg.rho * meta
    if cfg.regularized:
        value += cfg.lam * (float(np.sum(theta_s * theta_s)) + float(np.sum(phi * phi)))
    return value


def outer_gradients(phi, theta_s, source, target, cfg, seed, act=nets.QUADRATIC,
                    outer_iter=0, parts=None, source_batch=None, theta_init=None):
    """Analytic gradient of the outer objective w.r.t. (phi, theta_s).

    The hypergradient flows through the inner solution: through all unrolled
    steps for the GD solver, through the closed-form solve for ridge. The
    split and the inner initialization are those fixed by (seed, outer_iter)
    or by explicit ``parts``/``theta_init``.
    """
    if parts is None:
        parts = meta_split(target, cfg, seed, outer_iter)
    src_value, d_theta_s, d_phi_src = _source_terms(source, theta_s, phi, act,
                                                    source_batch)
    meta_value, d_phi_meta, inner_theta, diag = _meta_value_and_grads(
        cfg, phi, parts[0], parts[1], act, theta_init=theta_init)
    value = src_value + cfg.rho * meta_value
    d_phi = d_phi_src + cfg.rho * d_phi_meta
    d_theta_s = np.asarray(d_theta_s, dtype=float)
    if cfg.regularized:
        value += cfg.lam * (float(np.sum(theta_s * theta_s)) + float(np.sum(phi * phi)))
        d_theta_s = d_theta_s + 2.0 * cfg.lam * theta_s
        d_phi = d_phi + 2.0 * cfg.lam * phi
    diag.update({"source_loss": src_value, "meta_loss": meta_value, "objective": value})
    return value, d_phi, d_theta_s, inner_theta, diag


def fit_target_head(phi, target, cfg, act=nets.QUADRATIC):
    """Deployment head: inner solver applied to the full target set."""
    if cfg.inner_solver == CLOSED_FORM_RIDGE:
        return inner_fit_ridge(phi, target, cfg.lam, cfg.encoding, act)
    return inner_fit_gd(phi, target, cfg.inner_steps, cfg.inner_lr, cfg.encoding,
                        act, cfg.inner_weight_decay)


def train_merlin(source, target, arch, cfg: MerlinConfig, sgd: SGDConfig, seed,
                 diagnostics_every=0):
    """Bi-level training loop.

    Each outer iteration draws a fresh seed-derived target split, fits a
    fresh inner head (zero init unless warm_start), and takes one
    momentum-SGD step on the outer objective w.r.t. (phi, theta_s). Gradients
    are globally clipped at cfg.grad_clip. The lr schedule of ``sgd`` is
    interpreted over outer iterations. Returns (Params with a deployment
    target head fit on the full target set, diagnostics rows).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 606]))
    params = nets.init_params(arch.d, arch.m, arch.source_outputs,
                              arch.target_outputs, rng)
    phi, theta_s = params.phi, params.theta_s
    act = arch.activation
    v_phi = np.zeros_like(phi)
    v_theta = np.zeros_like(theta_s)
    empirical = not hasattr(source, "loss_and_grads")
    n_source = source.n if empirical else None
    rows = []
    warm = None
    for it in range(cfg.outer_iters):
        lr = sgd.lr_at(it)
        batch = None
        if empirical and 0 < sgd.batch_size < n_source:
            batch = rng.integers(0, n_source, sgd.batch_size)
        init = warm if cfg.warm_start else None
        value, d_phi, d_theta_s, warm, diag = outer_gradients(
            phi, theta_s, source, target, cfg, seed, act, it,
            source_batch=batch, theta_init=init)
        grads, gnorm = clip_gradients([d_phi, d_theta_s], cfg.grad_clip)
        v_phi = sgd.momentum * v_phi + grads[0]
        v_theta = sgd.momentum * v_theta + grads[1]
        phi = phi - lr * (v_phi + sgd.weight_decay * phi)
        theta_s = theta_s - lr * (v_theta + sgd.weight_decay * theta_s)
        if not (np.isfinite(phi).all() and np.isfinite(theta_s).all()):
            raise NumericsError("outer loop diverged; reduce the outer lr")
        if diagnostics_every and (it % diagnostics_every == 0 or it == cfg.outer_iters - 1):
            cond = diag.get("condition_number")
            if cond is not None and cond > 1e12:
                diag["warning"] = "ill-conditioned inner ridge system"
            rows.append({"iter": it, "objective": diag["objective"],
                         "source_loss": diag["source_loss"],
                         "meta_loss": diag["meta_loss"],
                         "grad_norm": gnorm,
                         "condition_number": cond})
    head = fit_target_head(phi, target, cfg, act)
    out = nets.Params(phi, theta_s, np.asarray(head.theta, dtype=float))
    return out, rows
