"""Command-line experiment harness.

Subcommands:
    gen-data    materialize datasets (+ JSON sidecars) from a config
    run         execute a configured experiment, write rows.csv + summary.json
    report      aggregate run directories into a table, CSV, and PNG figures
    reproduce   run a shipped named experiment and assert its expected outcome

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 assertion failure in reproduce mode.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import acceptance
from .configs import (apply_seed_offset, default_config, load_config,
                      NAMED_CONFIGS)
from .datasets import (CompositeSpec, TheorySourceSpec, TheoryTargetSpec,
                       generate_composite, sample_theory_source,
                       sample_theory_target, save_labeled_set)
from .errors import ContractViolation, NumericsError
from .reports import (Report, aggregate_rows, format_table, read_rows_csv,
                      render_report_figures, write_rows_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ASSERTION = 4


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(
        prog="transferlab",
        description="Transfer-learning workbench: synthetic data, baselines, "
                    "bi-level representation learning, and theory checks.")
    sub = parser.add_subparsers(required=True)

    p_gen = sub.add_parser("gen-data", help="materialize datasets with sidecars")
    _common_flags(p_gen)
    p_gen.set_defaults(func=cmd_gen_data)

    p_run = sub.add_parser("run", help="run a configured experiment")
    _common_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="aggregate run outputs")
    p_rep.add_argument("directory", help="directory containing rows.csv files")
    p_rep.add_argument("--out", default=None, help="output directory "
                       "(default: the input directory)")
    p_rep.set_defaults(func=cmd_report)

    p_repro = sub.add_parser("reproduce", help="run a named experiment and "
                             "assert its expected outcome")
    p_repro.add_argument("name", choices=NAMED_CONFIGS)
    _common_flags(p_repro, config_required=False)
    p_repro.set_defaults(func=cmd_reproduce)
    return parser


def _common_flags(p, config_required=True):
    p.add_argument("--config", required=config_required, default=None,
                   help="path to a JSON experiment config")
    p.add_argument("--seed-offset", type=int, default=0,
                   help="shift every configured seed by N")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for per-seed parallelism")
    p.add_argument("--out", default=None, help="override the output directory")


def _load(args, fallback_name=None):
    if args.config:
        config = load_config(args.config)
    elif fallback_name is not None:
        config = default_config(fallback_name)
    else:
        raise ContractViolation("--config is required")
    return apply_seed_offset(config, args.seed_offset)


def cmd_gen_data(args):
    config = _load(args)
    if config.get("experiment") != "gen-data":
        raise ContractViolation("gen-data needs a config with experiment "
                                "'gen-data' and a 'datasets' list")
    outdir = Path(args.out or config.get("out", "data"))
    outdir.mkdir(parents=True, exist_ok=True)
    for entry in config["datasets"]:
        dataset = _generate_entry(entry, args.seed_offset)
        npz, sidecar = save_labeled_set(dataset, outdir / entry["name"])
        print(f"wrote {npz} and {sidecar} ({dataset.n} rows)")
    return EXIT_OK


def _generate_entry(entry, seed_offset=0):
    gen = entry["generator"]
    seed = int(entry.get("seed", 0)) + seed_offset
    n = int(entry["n"])
    if gen == "theory_source":
        return sample_theory_source(TheorySourceSpec(entry["k"], entry["d"]), n, seed)
    if gen == "theory_target":
        return sample_theory_target(TheoryTargetSpec(entry["d"]), n, seed)
    if gen == "composite":
        spec = CompositeSpec(**entry.get("spec", {}))
        return generate_composite(spec, n, seed, entry.get("variant", "AB"),
                                  entry.get("purpose", "train"))
    raise ContractViolation(f"unknown generator {gen!r}")


def run_experiment(config, jobs=1):
    """Dispatch a validated config to its runner; returns the result dict."""
    kind = config["experiment"]
    seeds = config.get("seeds", [0])
    params = dict(config.get("params", {}))
    if kind == "theorem2":
        from .theorems import run_theorem2
        return run_theorem2(seeds=seeds, jobs=jobs, **params)
    if kind == "theorem1":
        from .theorems import run_theorem1
        ft = dict(params.get("finetune", {}))
        jt = dict(params.get("joint", {}))
        seeds_ft = ft.pop("seeds", len(seeds))
        seeds_jt = jt.pop("seeds", seeds)
        if isinstance(seeds_ft, int):
            seeds_ft = range(seeds_ft)
        if isinstance(seeds_jt, int):
            seeds_jt = range(seeds_jt)
        return run_theorem1(finetune_params=ft, joint_params=jt,
                            seeds_finetune=seeds_ft, seeds_joint=seeds_jt,
                            jobs=jobs)
    if kind == "semisynthetic":
        from .semisynthetic import run_semisynthetic
        spec = CompositeSpec(**params.pop("spec", {}))
        return run_semisynthetic(spec=spec, seeds=seeds, jobs=jobs, **params)
    if kind == "custom":
        from .semisynthetic import run_semisynthetic
        spec = CompositeSpec(**params.pop("spec", {}))
        return run_semisynthetic(spec=spec, seeds=seeds, jobs=jobs, **params)
    if kind == "sweep":
        from .sweeps import run_sweep
        base = params.pop("base", "theorem2")
        rho_grid = params.pop("rho_grid", None)
        lam_grid = params.pop("lam_grid", None)
        kwargs = {"params": params, "seeds": seeds, "jobs": jobs, "base": base}
        if rho_grid:
            kwargs["rho_grid"] = tuple(rho_grid)
        if lam_grid:
            kwargs["lam_grid"] = tuple(lam_grid)
        return run_sweep(**kwargs)
    raise ContractViolation(f"experiment kind {kind!r} has no runner")


def cmd_run(args):
    config = _load(args)
    result = run_experiment(config, jobs=args.jobs)
    outdir = Path(args.out or config.get("out", "runs/latest"))
    report = Report(result["rows"], result["summary"]).with_config(config)
    paths = report.save(outdir)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args):
    directory = Path(args.directory)
    if not directory.exists():
        raise ContractViolation(f"no such directory: {directory}")
    rows = []
    skipped = []
    for csv_path in sorted(directory.rglob("rows.csv")):
        try:
            rows.extend(read_rows_csv(csv_path))
        except Exception as exc:  # corrupt rows reported, not fatal
            skipped.append((csv_path, str(exc)))
    for path, reason in skipped:
        print(f"skipping {path}: {reason}", file=sys.stderr)
    if not rows:
        raise ContractViolation(f"no readable rows.csv under {directory}")
    table = aggregate_rows(rows)
    print(format_table(table))
    outdir = Path(args.out or directory)
    agg_path = write_rows_csv(table, outdir / "aggregate.csv")
    print(f"wrote {agg_path}")
    for path in render_report_figures(rows, outdir):
        print(f"wrote {path}")
    return EXIT_OK


_CHECKERS = {
    "theorem1": acceptance.check_theorem1,
    "theorem2": acceptance.check_theorem2,
    "semisynthetic": acceptance.check_semisynthetic,
}


def cmd_reproduce(args):
    config = _load(args, fallback_name=args.name)
    result = run_experiment(config, jobs=args.jobs)
    outdir = Path(args.out or config.get("out", f"runs/{args.name}"))
    Report(result["rows"], result["summary"]).with_config(config).save(
        outdir, figures=True)
    checker = _CHECKERS.get(args.name)
    if checker is None:
        print(json.dumps(result["summary"], indent=2, default=str))
        return EXIT_OK
    checks = checker(result)
    print(acceptance.format_checks(checks))
    if not all(ok for _, ok, _ in checks):
        return EXIT_ASSERTION
    print(f"reproduce {args.name}: all checks passed; outputs in {outdir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
