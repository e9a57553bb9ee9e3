"""Sensitivity sweeps over the meta-loss weight rho and ridge strength lambda."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import bilevel, metrics, nets
from .datasets import CompositeSpec, generate_composite
from .semisynthetic import _merlin_config, _schedules
from .theorems import _theorem2_seed
from .trainers import Arch

DEFAULT_RHO_GRID = (0.5, 1.0, 2.0, 4.0)
DEFAULT_LAM_GRID = (1e-3, 1e-2, 1e-1, 1.0)


def run_sweep(base="theorem2", rho_grid=DEFAULT_RHO_GRID,
              lam_grid=DEFAULT_LAM_GRID, seeds=(0, 1, 2), params=None, jobs=1):
    """One row per (rho, lambda, seed) cell of the grid.

    base "theorem2": cells record the population target loss of the bi-level
    run (sweep_metric, lower is better). base "semisynthetic": cells record
    the target test accuracy (sweep_metric, higher is better).
    """
    params = dict(params or {})
    rows = []
    if base == "theorem2":
        d = params.get("d", 30)
        k = params.get("k", 5)
        n_t = params.get("n_t", 60)
        m = params.get("m", 3)
        restarts = params.get("restarts", 3)
        iters = params.get("outer_iters", 2000)
        for rho in rho_grid:
            for lam in lam_grid:
                for seed in seeds:
                    row = _theorem2_seed((int(seed), d, k, n_t, lam, m, restarts,
                                          rho, iters, 0.05, 5.0))
                    row.update({"experiment": "sweep", "rho": rho, "lam": lam,
                                "sweep_metric": row["population_target_loss"]})
                    rows.append(row)
    elif base == "semisynthetic":
        spec = CompositeSpec(**params.get("spec", {}))
        n_source = params.get("n_source", 10_000)
        n_target = params.get("n_target", 500)
        n_eval = params.get("n_eval", 2000)
        m = params.get("m", 96)
        steps = params.get("steps", 1500)
        cfgs = _schedules(steps, n_source, params.get("batch", 128))
        arch = Arch(spec.d, m, nets.RELU, spec.classes, spec.classes)
        for seed in seeds:
            source = generate_composite(spec, n_source, int(seed), "AB")
            target = generate_composite(spec, n_target, int(seed), "Target")
            test = generate_composite(spec, n_eval, int(seed), "Target", purpose="eval")
            for rho in rho_grid:
                for lam in lam_grid:
                    cfg = _merlin_config(lam, steps)
                    cfg.rho = rho
                    model, _ = bilevel.train_merlin(source, target, arch, cfg,
                                                    cfgs["merlin"], int(seed))
                    acc = metrics.accuracy(test, model.theta_t, model.phi,
                                           arch.activation)
                    rows.append({"experiment": "sweep", "algorithm": "merlin",
                                 "seed": int(seed), "rho": rho, "lam": lam,
                                 "test_accuracy": acc, "sweep_metric": acc})
    else:
        raise ValueError(f"unknown sweep base {base!r}")
    cells = sorted({(r["rho"], r["lam"]) for r in rows})
    summary = {"experiment": "sweep", "base": base,
               "cells": [{"rho": rho, "lam": lam,
                          "metric_mean": float(np.mean(
                              [r["sweep_metric"] for r in rows
                               if r["rho"] == rho and r["lam"] == lam]))}
                         for rho, lam in cells],
               "params": params}
    return {"rows": rows, "summary": summary}
