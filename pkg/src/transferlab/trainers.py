"""Transfer-learning baselines: target-only, pre-training, fine-tuning,
joint training, and anchor-penalized (L2-sp) fine-tuning.

All trainers share one momentum-SGD engine and draw their randomness from
fixed seed streams, so degenerate settings collapse exactly: joint training
at alpha=1 with full batches reproduces the target-only trajectory, and
L2-sp at strength 0 reproduces plain fine-tuning.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .datasets import split
from .errors import ContractViolation, NumericsError
from .optim import SGDConfig, batch_indices

_INIT_STREAM = 711
_TARGET_BATCH_STREAM = 708
_SOURCE_BATCH_STREAM = 709

FINETUNE_LR_SCALE = 0.1  # fine-tuning runs at a tenth of the scratch lr


@dataclass(frozen=True)
class Arch:
    """Two-layer architecture: input dim, width, activation, head shapes.

    Head specs: None = absent, 0 = scalar regression head, C >= 2 = C-way
    classification/regression-encoded head.
    """
    d: int
    m: int
    activation: str = nets.RELU
    source_outputs: int | None = None
    target_outputs: int | None = 0

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ContractViolation("Arch: d and m must be positive")
        if self.activation not in nets.ACTIVATIONS:
            raise ContractViolation(f"Arch: unknown activation {self.activation!r}")


@dataclass
class JointConfig:
    """Mixing weight and (theory) L2 strength of the joint objective."""
    alpha: float = 0.5
    lam: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ContractViolation("JointConfig: alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ContractViolation("JointConfig: lam must be >= 0")


@dataclass
class L2SPConfig:
    """Anchor penalty strength and the pre-trained feature snapshot."""
    strength: float
    anchor_phi: np.ndarray

    def __post_init__(self):
        if self.strength < 0:
            raise ContractViolation("L2SPConfig: strength must be >= 0")
        self.anchor_phi = np.asarray(self.anchor_phi, dtype=float)


def loss_kind_for(dataset):
    return nets.CROSS_ENTROPY if dataset.n_classes is not None else nets.SQUARED


def _init_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([int(seed), _INIT_STREAM]))


def _batch_rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _finite_or_raise(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericsError("training diverged; reduce the learning rate")


def _head_spec(dataset):
    return dataset.n_classes if dataset.n_classes is not None else 0


def _fit_on_set(dataset, phi, theta, act, cfg, seed, lr_scale=1.0, train_phi=True,
                head_l2=0.0, anchor_phi=None, anchor_strength=0.0):
    """Momentum-SGD on one dataset; shared by all target-side trainers."""
    loss = loss_kind_for(dataset)
    rng = _batch_rng(seed, _TARGET_BATCH_STREAM)
    phi = phi.copy()
    theta = theta.copy()
    v_phi = np.zeros_like(phi)
    v_theta = np.zeros_like(theta)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch) * lr_scale
        for idx in batch_indices(dataset.n, cfg.batch_size, rng):
            _, d_theta, d_phi = nets.loss_and_grads(
                dataset.X[idx], dataset.y[idx], theta, phi, act, loss,
                want_phi=train_phi)
            if head_l2:
                d_theta = d_theta + 2.0 * head_l2 * theta
            v_theta = cfg.momentum * v_theta + d_theta
            theta -= lr * (v_theta + cfg.weight_decay * theta)
            if train_phi:
                if anchor_strength and anchor_phi is not None:
                    d_phi = d_phi + 2.0 * anchor_strength * (phi - anchor_phi)
                v_phi = cfg.momentum * v_phi + d_phi
                phi -= lr * (v_phi + cfg.weight_decay * phi)
        _finite_or_raise(phi, theta)
    return phi, theta


def train_target_only(target, arch: Arch, cfg: SGDConfig, seed):
    """Train (theta_t, phi) from random init on the target set alone."""
    init = nets.init_params(arch.d, arch.m, None, _head_spec(target), _init_rng(seed))
    phi, theta = _fit_on_set(target, init.phi, init.theta_t, arch.activation, cfg, seed)
    return nets.Params(phi, None, theta)


def pretrain(source, arch: Arch, cfg: SGDConfig, seed):
    """Train (theta_s, phi) on the source set; returns (Params, phi snapshot)."""
    init = nets.init_params(arch.d, arch.m, _head_spec(source), None, _init_rng(seed))
    loss = loss_kind_for(source)
    rng = _batch_rng(seed, _SOURCE_BATCH_STREAM)
    phi = init.phi.copy()
    theta = init.theta_s.copy()
    v_phi = np.zeros_like(phi)
    v_theta = np.zeros_like(theta)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        for idx in batch_indices(source.n, cfg.batch_size, rng):
            _, d_theta, d_phi = nets.loss_and_grads(
                source.X[idx], source.y[idx], theta, phi, arch.activation, loss)
            v_theta = cfg.momentum * v_theta + d_theta
            theta -= lr * (v_theta + cfg.weight_decay * theta)
            v_phi = cfg.momentum * v_phi + d_phi
            phi -= lr * (v_phi + cfg.weight_decay * phi)
        _finite_or_raise(phi, theta)
    params = nets.Params(phi, theta, None)
    return params, phi.copy()


def finetune(target, phi_pre, mode, arch: Arch, cfg: SGDConfig, seed, lam=0.0):
    """Fine-tune from a pre-trained feature extractor.

    mode "all_layers": update (theta_t, phi) by SGD at FINETUNE_LR_SCALE times
    the scratch lr, head initialized to zero.
    mode "head_only": phi frozen; the head minimizes the target loss plus
    lam * ||theta_t||^2. For squared loss this is the closed-form ridge head
    theta = (H^T H + lam I)^(-1) H^T Y (lam applied to the summed squared
    error, matching the bi-level inner solver); otherwise SGD on the head.
    """
    phi_pre = np.asarray(phi_pre, dtype=float)
    if phi_pre.shape != (arch.d, arch.m):
        raise ContractViolation(f"finetune: phi_pre has shape {phi_pre.shape}, "
                                f"expected {(arch.d, arch.m)}")
    spec = _head_spec(target)
    theta0 = np.zeros(arch.m) if spec == 0 else np.zeros((arch.m, spec))
    if mode == "all_layers":
        phi, theta = _fit_on_set(target, phi_pre, theta0, arch.activation, cfg,
                                 seed, lr_scale=FINETUNE_LR_SCALE)
        return nets.Params(phi, None, theta)
    if mode != "head_only":
        raise ContractViolation(f"finetune: unknown mode {mode!r}")
    if loss_kind_for(target) == nets.SQUARED:
        H = nets.features_batch(target.X, phi_pre, arch.activation)
        Y = np.asarray(target.y, dtype=float)
        M = H.T @ H + lam * np.eye(arch.m)
        try:
            theta = np.linalg.solve(M, H.T @ Y)
        except np.linalg.LinAlgError as exc:
            raise ContractViolation("finetune head_only: singular system; "
                                    "use lam > 0") from exc
        return nets.Params(phi_pre.copy(), None, theta)
    phi, theta = _fit_on_set(target, phi_pre, theta0, arch.activation, cfg, seed,
                             train_phi=False, head_l2=lam)
    return nets.Params(phi, None, theta)


def joint_train(source, target, arch: Arch, jcfg: JointConfig, cfg: SGDConfig, seed):
    """Minimize (1-alpha) * source loss + alpha * target loss over
    (theta_s, theta_t, phi) from random init.

    Each step draws one source batch and one target batch (four times the
    source batch size, truncated to the full target set; full batches when
    cfg.batch_size is 0). jcfg.lam adds the explicit L2 term of the theory
    objective on all three blocks.
    """
    src_loss = loss_kind_for(source)
    tgt_loss = loss_kind_for(target)
    init = nets.init_params(arch.d, arch.m, _head_spec(source), _head_spec(target),
                            _init_rng(seed))
    phi = init.phi.copy()
    theta_s = init.theta_s.copy()
    theta_t = init.theta_t.copy()
    v_phi = np.zeros_like(phi)
    v_s = np.zeros_like(theta_s)
    v_t = np.zeros_like(theta_t)
    tgt_rng = _batch_rng(seed, _TARGET_BATCH_STREAM)
    src_rng = _batch_rng(seed, _SOURCE_BATCH_STREAM)
    alpha, lam = jcfg.alpha, jcfg.lam
    target_batch = 0 if cfg.batch_size <= 0 else min(4 * cfg.batch_size, target.n)
    steps_per_epoch = max(1, int(np.ceil(source.n / cfg.batch_size))) \
        if cfg.batch_size > 0 else 1
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        for _ in range(steps_per_epoch):
            sidx = (np.arange(source.n) if cfg.batch_size <= 0
                    else src_rng.integers(0, source.n, cfg.batch_size))
            tidx = (np.arange(target.n) if target_batch == 0 or target_batch >= target.n
                    else tgt_rng.integers(0, target.n, target_batch))
            _, ds, dps = nets.loss_and_grads(source.X[sidx], source.y[sidx],
                                             theta_s, phi, arch.activation, src_loss)
            _, dt, dpt = nets.loss_and_grads(target.X[tidx], target.y[tidx],
                                             theta_t, phi, arch.activation, tgt_loss)
            d_s = (1.0 - alpha) * ds + 2.0 * lam * theta_s
            d_t = alpha * dt + 2.0 * lam * theta_t
            d_phi = (1.0 - alpha) * dps + alpha * dpt + 2.0 * lam * phi
            v_s = cfg.momentum * v_s + d_s
            theta_s -= lr * (v_s + cfg.weight_decay * theta_s)
            v_t = cfg.momentum * v_t + d_t
            theta_t -= lr * (v_t + cfg.weight_decay * theta_t)
            v_phi = cfg.momentum * v_phi + d_phi
            phi -= lr * (v_phi + cfg.weight_decay * phi)
        _finite_or_raise(phi, theta_s, theta_t)
    return nets.Params(phi, theta_s, theta_t)


def joint_objective(source, target, params, jcfg: JointConfig, act):
    """(1-alpha) L_s + alpha L_t + lam (||theta_s||^2 + ||theta_t||^2 + ||phi||_F^2)."""
    ls = nets.batch_loss(source, params.theta_s, params.phi, act, loss_kind_for(source))
    lt = nets.batch_loss(target, params.theta_t, params.phi, act, loss_kind_for(target))
    reg = jcfg.lam * (float(np.sum(params.theta_s ** 2)) +
                      float(np.sum(params.theta_t ** 2)) +
                      float(np.sum(params.phi ** 2)))
    return (1.0 - jcfg.alpha) * ls + jcfg.alpha * lt + reg


def l2sp_finetune(target, l2sp: L2SPConfig, arch: Arch, cfg: SGDConfig, seed):
    """Fine-tune all layers with a quadratic pull toward the pre-trained phi:
    minimizes target loss + strength * ||phi - phi_pre||_F^2."""
    if l2sp.anchor_phi.shape != (arch.d, arch.m):
        raise ContractViolation("l2sp_finetune: anchor shape mismatch")
    spec = _head_spec(target)
    theta0 = np.zeros(arch.m) if spec == 0 else np.zeros((arch.m, spec))
    phi, theta = _fit_on_set(target, l2sp.anchor_phi, theta0, arch.activation, cfg,
                             seed, lr_scale=FINETUNE_LR_SCALE,
                             anchor_phi=l2sp.anchor_phi, anchor_strength=l2sp.strength)
    return nets.Params(phi, None, theta)


def cross_validate_alpha(source, target, arch: Arch, cfg: SGDConfig, seed,
                         grid=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                         lam=0.0, metric="accuracy"):
    """Pick the joint mixing weight on a held-out half of the target set.

    Trains a joint model on (source, target-train-half) for each alpha in
    the grid, scores it on the held-out half, and returns the best alpha
    together with the per-alpha scores.
    """
    train_half, val_half = split(target, 0.5, seed)
    scores = {}
    for alpha in grid:
        params = joint_train(source, train_half, arch,
                             JointConfig(alpha=alpha, lam=lam), cfg, seed)
        if metric == "accuracy" and target.n_classes is not None:
            pred = nets.predict_batch(val_half.X, params.theta_t, params.phi,
                                      arch.activation)
            scores[alpha] = float(np.mean(pred.argmax(axis=1) == val_half.y))
        else:
            scores[alpha] = -nets.batch_loss(val_half, params.theta_t, params.phi,
                                             arch.activation, loss_kind_for(target))
    best = max(scores, key=lambda a: (scores[a], -a))
    return best, scores
