"""Run records: CSV rows, JSON summaries, aggregation, and report figures.

CSV files are written with the stdlib csv module (RFC-4180 quoting). Figures
are rendered headlessly to PNG next to the delimited output.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_FRONT_COLUMNS = ("experiment", "algorithm", "branch", "seed", "config_hash")


def config_hash(config):
    """Short stable digest of a JSON-serializable configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _columns(rows):
    keys = set()
    for row in rows:
        keys.update(row)
    front = [k for k in _FRONT_COLUMNS if k in keys]
    rest = sorted(keys - set(front))
    return front + rest


def write_rows_csv(rows, path):
    """One CSV row per record; deterministic column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = _columns(rows)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row.get(k)) for k in cols})
    return path


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, (dict, list, tuple)):
        return json.dumps(value, sort_keys=True)
    return value


def _parse_cell(text):
    if text == "":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_rows_csv(path):
    with Path(path).open(newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def write_summary_json(summary, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class Report:
    """Per-seed rows plus an experiment-level summary."""
    rows: list
    summary: dict = field(default_factory=dict)

    def with_config(self, config):
        digest = config_hash(_jsonable(config))
        for row in self.rows:
            row.setdefault("config_hash", digest)
        self.summary.setdefault("config_hash", digest)
        return self

    def save(self, outdir, figures=False):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [write_rows_csv(self.rows, outdir / "rows.csv"),
                 write_summary_json(self.summary, outdir / "summary.json")]
        if figures:
            paths.extend(render_report_figures(self.rows, outdir))
        return paths


def aggregate_rows(rows, group_keys=("experiment", "algorithm"), value_keys=None):
    """Mean and standard deviation of numeric columns per group."""
    groups = {}
    for row in rows:
        key = tuple(row.get(k) for k in group_keys)
        groups.setdefault(key, []).append(row)
    if value_keys is None:
        value_keys = sorted({
            k for row in rows for k, v in row.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
            and k not in group_keys and k != "seed"})
    table = []
    for key in sorted(groups, key=lambda t: tuple(str(x) for x in t)):
        entry = dict(zip(group_keys, key))
        entry["runs"] = len(groups[key])
        for vk in value_keys:
            vals = [row[vk] for row in groups[key]
                    if isinstance(row.get(vk), (int, float))]
            if vals:
                entry[f"{vk}_mean"] = float(np.mean(vals))
                entry[f"{vk}_std"] = float(np.std(vals))
        table.append(entry)
    return table


def format_table(table, group_keys=("experiment", "algorithm")):
    """Aligned text rendering of an aggregate table (mean +- std)."""
    if not table:
        return "(no rows)"
    metric_names = sorted({k[:-5] for row in table for k in row if k.endswith("_mean")})
    headers = list(group_keys) + ["runs"] + metric_names
    lines = []
    for entry in table:
        cells = [str(entry.get(k, "")) for k in group_keys]
        cells.append(str(entry.get("runs", "")))
        for name in metric_names:
            mean = entry.get(f"{name}_mean")
            std = entry.get(f"{name}_std")
            cells.append("" if mean is None else f"{mean:.4f}±{std:.4f}")
        lines.append(cells)
    widths = [max(len(h), *(len(row[i]) for row in lines)) for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(headers), fmt(["-" * w for w in widths])] +
                     [fmt(row) for row in lines])


def render_report_figures(rows, outdir, metrics=None):
    """Bar charts of per-algorithm seed means (with std error bars), one PNG
    per metric, plus a rho/lambda heatmap when sweep columns are present."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    by_alg = {}
    for row in rows:
        alg = row.get("algorithm")
        if alg is not None:
            by_alg.setdefault(alg, []).append(row)
    if metrics is None:
        metrics = sorted({
            k for row in rows for k, v in row.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
            and k.endswith(("accuracy", "loss", "variance_ratio_test"))})
    for metric in metrics:
        algs = [a for a in sorted(by_alg)
                if any(isinstance(r.get(metric), (int, float)) for r in by_alg[a])]
        if len(algs) < 2:
            continue
        means = [np.mean([r[metric] for r in by_alg[a]
                          if isinstance(r.get(metric), (int, float))]) for a in algs]
        stds = [np.std([r[metric] for r in by_alg[a]
                        if isinstance(r.get(metric), (int, float))]) for a in algs]
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(algs), 3.2))
        ax.bar(range(len(algs)), means, yerr=stds, capsize=4, color="#4878cf")
        ax.set_xticks(range(len(algs)))
        ax.set_xticklabels(algs, rotation=20, ha="right")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} (mean ± std over seeds)")
        fig.tight_layout()
        path = outdir / f"report_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    paths.extend(_sweep_heatmap(rows, outdir))
    return paths


def _sweep_heatmap(rows, outdir):
    sweep_rows = [r for r in rows
                  if isinstance(r.get("rho"), (int, float))
                  and isinstance(r.get("lam"), (int, float))
                  and isinstance(r.get("sweep_metric"), (int, float))]
    if not sweep_rows:
        return []
    rhos = sorted({r["rho"] for r in sweep_rows})
    lams = sorted({r["lam"] for r in sweep_rows})
    grid = np.full((len(rhos), len(lams)), np.nan)
    for i, rho in enumerate(rhos):
        for j, lam in enumerate(lams):
            vals = [r["sweep_metric"] for r in sweep_rows
                    if r["rho"] == rho and r["lam"] == lam]
            if vals:
                grid[i, j] = np.mean(vals)
    fig, ax = plt.subplots(figsize=(1.5 + 0.9 * len(lams), 1.5 + 0.7 * len(rhos)))
    im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xticks(range(len(lams)))
    ax.set_xticklabels([f"{l:g}" for l in lams])
    ax.set_yticks(range(len(rhos)))
    ax.set_yticklabels([f"{r:g}" for r in rhos])
    ax.set_xlabel("lambda")
    ax.set_ylabel("rho")
    ax.set_title("sweep metric (seed mean)")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    path = Path(outdir) / "report_sweep_heatmap.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
