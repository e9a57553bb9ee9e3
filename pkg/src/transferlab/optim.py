"""Optimization drivers: deterministic line-searched GD and SGD scheduling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class SGDConfig:
    """Momentum-SGD settings for the empirical trainers.

    batch_size 0 means full batch. lr_schedule is a list of (epoch, factor)
    pairs; the factors of all pairs whose epoch has been reached multiply the
    base lr.
    """
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 100
    batch_size: int = 0
    lr_schedule: tuple = ()

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractViolation("SGDConfig: lr must be > 0")
        for _, factor in self.lr_schedule:
            if not (0.0 < factor <= 1.0):
                raise ContractViolation("SGDConfig: schedule factors must be in (0, 1]")

    def lr_at(self, epoch):
        lr = self.lr
        for at, factor in self.lr_schedule:
            if epoch >= at:
                lr *= factor
        return lr


def batch_indices(n, batch_size, rng):
    """One epoch worth of batch index arrays (a single full batch if 0)."""
    if batch_size <= 0 or batch_size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class GDResult:
    params: list
    value: float
    grad_norm: float
    steps: int
    converged: bool
    trace: list = field(default_factory=list)


def gd_minimize(value_and_grad, params0, lr0=0.2, max_steps=100_000,
                grad_tol=1e-8, stall_tol=1e-15, stall_patience=30,
                lr_growth=1.1, keep_trace=False):
    """Full-batch gradient descent with backtracking step halving.

    The step is halved whenever it would increase the objective, and grown
    by ``lr_growth`` after each accepted step, so descent is monotone. Stops
    at gradient norm <= grad_tol, after ``max_steps`` accepted steps, or once
    relative per-step improvement stays below ``stall_tol`` for
    ``stall_patience`` consecutive steps (objective converged to rounding).
    """
    params = [np.asarray(p, dtype=float).copy() for p in params0]
    value, grads = value_and_grad(params)
    if not np.isfinite(value):
        raise ContractViolation("gd_minimize: objective not finite at the start")
    lr = lr0
    stalled = 0
    trace = []
    steps = 0
    converged = False
    while steps < max_steps:
        gnorm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
        if keep_trace:
            trace.append((steps, value, gnorm))
        if gnorm <= grad_tol:
            converged = True
            break
        accepted = False
        while lr >= 1e-18:
            candidate = [p - lr * g for p, g in zip(params, grads)]
            cand_value, cand_grads = value_and_grad(candidate)
            if np.isfinite(cand_value) and cand_value <= value:
                improvement = value - cand_value
                params, grads = candidate, cand_grads
                value = cand_value
                lr = min(lr * lr_growth, 1e3)
                accepted = True
                stalled = stalled + 1 if improvement <= stall_tol * max(1.0, abs(value)) else 0
                break
            lr *= 0.5
        steps += 1
        if not accepted or stalled >= stall_patience:
            break
    gnorm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    return GDResult(params, float(value), gnorm, steps, converged or gnorm <= grad_tol,
                    trace)


def clip_gradients(grads, max_norm):
    """Globally rescale a list of gradient arrays to the given norm cap."""
    total = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if max_norm is not None and total > max_norm > 0:
        scale = max_norm / total
        return [g * scale for g in grads], total
    return grads, total
