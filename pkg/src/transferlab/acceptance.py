"""Pass/fail checks for the reproduce experiments.

Each checker takes a runner result ({"rows": ..., "summary": ...}) and
returns a list of (name, passed, detail) triples, so the CLI and the test
suite apply identical criteria.
"""
from __future__ import annotations

import numpy as np

TEN_27 = 10.0 / 27.0


def check_theorem2(result, min_fraction=0.8):
    s = result["summary"]
    checks = [(
        "theorem2 success fraction",
        s["success_fraction"] >= min_fraction,
        f"{s['successes']}/{s['seeds']} seeds reached population target loss <= "
        f"{s['params']['loss_tol']:g} with dominant-column cosine >= "
        f"{s['params']['cosine_tol']:g}",
    )]
    return checks


def check_theorem1(result, fraction_tolerance=0.15, loss_slack=0.02,
                   joint_pop_floor=0.1, joint_train_ceiling=1e-3,
                   min_joint_fraction=0.9):
    s = result["summary"]
    k = s["params"]["finetune"]["k"]
    expected = (k - 1) / k
    frac = s["fraction_off_axis"]
    checks = [(
        "theorem1 off-axis fraction",
        abs(frac - expected) <= fraction_tolerance,
        f"fraction of pre-trainings picking a non-transferable coordinate = "
        f"{frac:.3f}, expected {expected:.3f} ± {fraction_tolerance}",
    )]
    floor = TEN_27 - loss_slack
    min_loss = s["min_off_axis_population_loss"]
    checks.append((
        "theorem1 off-axis head-only loss",
        min_loss is not None and min_loss >= floor,
        f"min population target loss over off-axis seeds = {min_loss:.4f}, "
        f"floor {floor:.4f}",
    ))
    per_seed = s["joint_per_seed"]
    good = sum(1 for rec in per_seed.values()
               if rec["best_population_loss"] >= joint_pop_floor
               and rec["best_train_loss"] <= joint_train_ceiling)
    checks.append((
        "theorem1 joint overfitting",
        good >= min_joint_fraction * len(per_seed),
        f"{good}/{len(per_seed)} seeds have best-over-lambda population loss >= "
        f"{joint_pop_floor} while best train loss <= {joint_train_ceiling:g}",
    ))
    return checks


def check_semisynthetic(result, margin=0.05, bonly_floor=0.9, aonly_slack=0.15):
    s = result["summary"]
    mean = s["seed_mean"]
    classes = result["rows"][0].get("n_classes") or \
        s.get("params", {}).get("spec", {}).get("classes", 10)
    chance = 1.0 / classes
    checks = []
    pre = mean.get("pretrain", {})
    checks.append((
        "semisynthetic pretraining uses the signature block",
        pre.get("bonly_accuracy", 0.0) >= bonly_floor,
        f"pre-trained BOnly accuracy (seed mean) = {pre.get('bonly_accuracy', 0.0):.3f},"
        f" floor {bonly_floor}",
    ))
    checks.append((
        "semisynthetic pretraining ignores the transferable block",
        pre.get("aonly_accuracy", 1.0) <= chance + aonly_slack,
        f"pre-trained AOnly accuracy (seed mean) = {pre.get('aonly_accuracy', 1.0):.3f},"
        f" ceiling {chance + aonly_slack:.3f}",
    ))
    margins = s["merlin_margins"]
    for alg in ("finetune", "joint", "target_only"):
        checks.append((
            f"semisynthetic margin over {alg}",
            margins.get(alg, -1.0) >= margin,
            f"seed-mean test-accuracy margin = {margins.get(alg, float('nan')):.3f},"
            f" required {margin}",
        ))
    vr_me = mean.get("merlin", {}).get("variance_ratio_test", np.inf)
    for alg in ("finetune", "joint"):
        vr_other = mean.get(alg, {}).get("variance_ratio_test", -np.inf)
        checks.append((
            f"semisynthetic variance ratio below {alg}",
            vr_me < vr_other,
            f"merlin {vr_me:.3f} vs {alg} {vr_other:.3f} (seed means)",
        ))
    return checks


def format_checks(checks):
    lines = []
    for name, ok, detail in checks:
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return "\n".join(lines)
