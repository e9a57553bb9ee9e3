"""End-to-end semi-synthetic comparison on the two-block composite task.

Protocol: every algorithm gets the same parameter-update budget and the
schedule family from the training recipe (momentum 0.9, step lr decay,
decoupled weight decay); scratch training runs at the base lr, fine-tuning
at a tenth of it. The joint mixing weight and the bi-level ridge strength
are chosen by one cross-validation pass on the first seed, then held fixed
for all seeds.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from . import bilevel, metrics, nets
from .datasets import CompositeSpec, generate_composite, split
from .optim import SGDConfig
from .trainers import (Arch, JointConfig, L2SPConfig, cross_validate_alpha,
                       finetune, joint_train, l2sp_finetune, pretrain,
                       train_target_only)

DEFAULT_STEPS = 3000
DEFAULT_MERLIN_STEPS = 4500
DEFAULT_M = 96
DEFAULT_N_SOURCE = 10_000
DEFAULT_N_TARGET = 500
DEFAULT_N_EVAL = 2000
RIDGE_GRID = (10.0, 100.0, 300.0)


def _schedules(steps, source_n, batch, merlin_steps=None, merlin_wd=0.05):
    """Per-method SGD configs. The plain trainers share one update budget;
    the bi-level trainer converges more slowly (its target gradient passes
    through the shrunk ridge head) and gets its own, longer budget."""
    merlin_steps = merlin_steps or steps
    steps_per_epoch = max(1, int(np.ceil(source_n / batch)))
    epochs_batched = max(1, round(steps / steps_per_epoch))
    drop_batched = ((int(0.6 * epochs_batched), 0.1),)
    drop_full = ((int(0.6 * steps), 0.1),)
    drop_merlin = ((int(0.6 * merlin_steps), 0.1),)
    return {
        "pretrain": SGDConfig(lr=0.1, momentum=0.9, weight_decay=5e-3,
                              epochs=epochs_batched, batch_size=batch,
                              lr_schedule=drop_batched),
        "target_only": SGDConfig(lr=0.02, momentum=0.9, weight_decay=5e-3,
                                 epochs=steps, batch_size=0, lr_schedule=drop_full),
        "finetune": SGDConfig(lr=0.1, momentum=0.9, weight_decay=5e-3,
                              epochs=steps, batch_size=0, lr_schedule=drop_full),
        "joint": SGDConfig(lr=0.1, momentum=0.9, weight_decay=5e-3,
                           epochs=epochs_batched, batch_size=batch,
                           lr_schedule=drop_batched),
        "merlin": SGDConfig(lr=0.05, momentum=0.9, weight_decay=merlin_wd,
                            epochs=1, batch_size=batch, lr_schedule=drop_merlin),
        "joint_cv": SGDConfig(lr=0.1, momentum=0.9, weight_decay=5e-3,
                              epochs=max(1, epochs_batched // 3), batch_size=batch,
                              lr_schedule=()),
    }


def _merlin_config(lam, steps, rho=1.0):
    return bilevel.MerlinConfig(rho=rho, lam=lam, outer_iters=steps,
                                inner_solver=bilevel.CLOSED_FORM_RIDGE,
                                encoding=bilevel.MULTICLASS, grad_clip=50.0)


def cross_validate_ridge(source, target, arch, sgd, steps, seed,
                         grid=RIDGE_GRID, rho=1.0):
    """Pick the bi-level ridge strength by holding out half the target set."""
    train_half, val_half = split(target, 0.5, seed)
    scores = {}
    for lam in grid:
        cfg = _merlin_config(lam, max(500, steps // 2), rho)
        params, _ = bilevel.train_merlin(source, train_half, arch, cfg, sgd, seed)
        scores[lam] = metrics.accuracy(val_half, params.theta_t, params.phi,
                                       arch.activation)
    best = max(scores, key=lambda l: (scores[l], l))
    return best, scores


ALGORITHMS = ("pretrain", "target_only", "finetune", "joint", "l2sp", "merlin")


def run_semisynthetic(spec=None, seeds=(0, 1, 2), n_source=DEFAULT_N_SOURCE,
                      n_target=DEFAULT_N_TARGET, n_eval=DEFAULT_N_EVAL,
                      m=DEFAULT_M, steps=DEFAULT_STEPS, batch=128,
                      alpha=None, ridge_lam=None, include_l2sp=True, jobs=1,
                      algorithms=None, rho=1.0, merlin_steps=DEFAULT_MERLIN_STEPS,
                      merlin_wd=0.05):
    """Train the selected algorithms (default: all) on the composite task.

    Returns {"rows": per-seed-and-algorithm records, "summary": seed means,
    margins of the bi-level trainer over each baseline, and the masked
    accuracies of the pre-trained model}.
    """
    spec = spec or CompositeSpec()
    seeds = [int(s) for s in seeds]
    algorithms = tuple(algorithms) if algorithms else ALGORITHMS
    if not include_l2sp:
        algorithms = tuple(a for a in algorithms if a != "l2sp")
    cfgs = _schedules(steps, n_source, batch, merlin_steps, merlin_wd)
    arch = Arch(spec.d, m, nets.RELU, source_outputs=spec.classes,
                target_outputs=spec.classes)

    seed0 = seeds[0]
    if alpha is None and "joint" in algorithms:
        source0 = generate_composite(spec, n_source, seed0, "AB")
        target0 = generate_composite(spec, n_target, seed0, "Target")
        alpha, _ = cross_validate_alpha(source0, target0, arch,
                                        cfgs["joint_cv"], seed0,
                                        grid=(0.1, 0.3, 0.5, 0.7, 0.9))
    if ridge_lam is None and "merlin" in algorithms:
        source0 = generate_composite(spec, n_source, seed0, "AB")
        target0 = generate_composite(spec, n_target, seed0, "Target")
        ridge_lam, _ = cross_validate_ridge(source0, target0, arch,
                                            cfgs["merlin"], merlin_steps, seed0,
                                            rho=rho)

    args = [(s, asdict(spec), n_source, n_target, n_eval, m, steps, batch,
             alpha, ridge_lam, algorithms, rho, merlin_steps, merlin_wd)
            for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_semisynthetic_seed, args))
    else:
        per_seed = [_semisynthetic_seed(a) for a in args]

    rows = [row for chunk in per_seed for row in chunk]
    summary = summarize_semisynthetic(rows)
    summary["params"] = {"spec": asdict(spec), "n_source": n_source,
                         "n_target": n_target, "n_eval": n_eval, "m": m,
                         "steps": steps, "batch": batch, "alpha": alpha,
                         "ridge_lam": ridge_lam, "seeds": seeds}
    return {"rows": rows, "summary": summary}


def summarize_semisynthetic(rows):
    algs = sorted({r["algorithm"] for r in rows})
    mean = {}
    for alg in algs:
        sub = [r for r in rows if r["algorithm"] == alg]
        mean[alg] = {key: float(np.mean([r[key] for r in sub]))
                     for key in sub[0] if isinstance(sub[0][key], (int, float))
                     and key != "seed"}
    margins = {}
    if "merlin" in mean:
        for alg in ("target_only", "finetune", "joint"):
            if alg in mean:
                margins[alg] = mean["merlin"]["test_accuracy"] - mean[alg]["test_accuracy"]
    return {"experiment": "semisynthetic", "seed_mean": mean, "merlin_margins": margins}


def _semisynthetic_seed(args):
    (seed, spec_dict, n_source, n_target, n_eval, m, steps, batch,
     alpha, ridge_lam, algorithms, rho, merlin_steps, merlin_wd) = args
    spec = CompositeSpec(**spec_dict)
    cfgs = _schedules(steps, n_source, batch, merlin_steps, merlin_wd)
    arch = Arch(spec.d, m, nets.RELU, source_outputs=spec.classes,
                target_outputs=spec.classes)
    needs_pretrain = bool({"pretrain", "finetune", "l2sp"} & set(algorithms))
    source = generate_composite(spec, n_source, seed, "AB")
    target = generate_composite(spec, n_target, seed, "Target")
    test = generate_composite(spec, n_eval, seed, "Target", purpose="eval")

    rows = []

    def evaluate(name, theta, phi, extra=None):
        H_test = nets.features_batch(test.X, phi, arch.activation)
        H_train = nets.features_batch(target.X, phi, arch.activation)
        enc_test = bilevel.encode_labels(test.y, spec.classes)
        enc_train = bilevel.encode_labels(target.y, spec.classes)
        row = {
            "experiment": "semisynthetic", "algorithm": name, "seed": seed,
            "train_accuracy": metrics.accuracy(target, theta, phi, arch.activation),
            "test_accuracy": metrics.accuracy(test, theta, phi, arch.activation),
            "aonly_accuracy": metrics.masked_eval(theta, phi, arch.activation,
                                                  spec, "AOnly", n_eval, seed),
            "bonly_accuracy": metrics.masked_eval(theta, phi, arch.activation,
                                                  spec, "BOnly", n_eval, seed),
            "variance_ratio_test": metrics.variance_ratio(H_test, test.y),
            "variance_ratio_train": metrics.variance_ratio(H_train, target.y),
            "label_correlation_test": metrics.feature_label_correlation(H_test, enc_test),
            "label_correlation_train": metrics.feature_label_correlation(H_train, enc_train),
        }
        row.update(extra or {})
        rows.append(row)
        return row

    phi_pre = None
    if needs_pretrain:
        pre_params, phi_pre = pretrain(source, arch, cfgs["pretrain"], seed)
        if "pretrain" in algorithms:
            evaluate("pretrain", pre_params.theta_s, pre_params.phi,
                     {"source_accuracy": metrics.accuracy(
                         source, pre_params.theta_s, pre_params.phi,
                         arch.activation)})

    if "target_only" in algorithms:
        to = train_target_only(target, arch, cfgs["target_only"], seed)
        evaluate("target_only", to.theta_t, to.phi)

    if "finetune" in algorithms:
        ft = finetune(target, phi_pre, "all_layers", arch, cfgs["finetune"], seed)
        evaluate("finetune", ft.theta_t, ft.phi)

    if "joint" in algorithms:
        jt = joint_train(source, target, arch, JointConfig(alpha=alpha),
                         cfgs["joint"], seed)
        evaluate("joint", jt.theta_t, jt.phi, {"alpha": alpha})

    if "l2sp" in algorithms:
        sp = l2sp_finetune(target, L2SPConfig(1e-3, phi_pre), arch,
                           cfgs["finetune"], seed)
        evaluate("l2sp", sp.theta_t, sp.phi, {"strength": 1e-3})

    if "merlin" in algorithms:
        me, _ = bilevel.train_merlin(source, target, arch,
                                     _merlin_config(ridge_lam, merlin_steps, rho),
                                     cfgs["merlin"], seed)
        evaluate("merlin", me.theta_t, me.phi, {"ridge_lam": ridge_lam, "rho": rho})
    return rows
