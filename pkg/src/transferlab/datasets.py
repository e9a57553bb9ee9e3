"""Synthetic dataset generators, splitting, and (de)serialization.

Randomness: every generator draws from ``numpy.random.Generator`` backed by
PCG64, seeded through ``numpy.random.SeedSequence`` with fixed integer keys.
PCG64 and SeedSequence are precisely specified and stable across platforms
and numpy versions, so identical (spec, n, seed, variant) inputs regenerate
bit-identical datasets.

The two-block composite generator keys its substreams so that
  * AB / AOnly / BOnly share label and block draws for a given seed (masking
    a block never changes the other block),
  * the Target variant shares the class prototypes but uses fresh draw
    streams,
  * ``purpose="eval"`` yields held-out samples from the same task (same
    prototypes) that never overlap the ``purpose="train"`` streams.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ContractViolation

VARIANTS = ("AB", "AOnly", "BOnly", "Target")

_THEORY_TAG = 101
_COMPOSITE_TAG = 202
_SPLIT_TAG = 303
_PURPOSES = {"train": 0, "eval": 1}


@dataclass
class LabeledSet:
    """Feature rows X (n, d) with labels y; classification if n_classes set."""
    X: np.ndarray
    y: np.ndarray
    n_classes: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] == 0:
            raise ContractViolation("LabeledSet: X must be a nonempty (n, d) matrix")
        if not np.isfinite(self.X).all():
            raise ContractViolation("LabeledSet: X entries must be finite")
        if self.n_classes is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.X.shape[0],):
                raise ContractViolation("LabeledSet: y must have one label per row")
            if self.y.min() < 0 or self.y.max() >= self.n_classes:
                raise ContractViolation("LabeledSet: class label out of range")
        else:
            self.y = np.asarray(self.y, dtype=float)
            if self.y.shape != (self.X.shape[0],):
                raise ContractViolation("LabeledSet: y must have one target per row")
            if not np.isfinite(self.y).all():
                raise ContractViolation("LabeledSet: y entries must be finite")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx, tag=None):
        meta = dict(self.meta)
        if tag:
            meta["subset"] = tag
        return LabeledSet(self.X[idx], self.y[idx], self.n_classes, meta)


@dataclass(frozen=True)
class TheorySourceSpec:
    """Ternary-feature source task: coordinates 1..k all predict the label."""
    k: int
    d: int

    def __post_init__(self):
        if not (2 <= self.k <= self.d):
            raise ContractViolation("TheorySourceSpec requires 2 <= k <= d")


@dataclass(frozen=True)
class TheoryTargetSpec:
    """k = 1 version of the source task: y = x_1^2 exactly."""
    d: int

    def __post_init__(self):
        if self.d < 2:
            raise ContractViolation("TheoryTargetSpec requires d >= 2")


def _sample_theory(k, d, n, seed):
    if n < 1:
        raise ContractViolation("need n >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _THEORY_TAG, k, d]))
    y = (rng.random(n) < 2.0 / 3.0).astype(float)
    X = rng.integers(-1, 2, size=(n, d)).astype(float)
    signs = np.where(rng.random((n, k)) < 0.5, -1.0, 1.0)
    X[:, :k] = np.where(y[:, None] == 1.0, signs, 0.0)
    return X, y


def sample_theory_source(spec: TheorySourceSpec, n, seed):
    """y=0 w.p. 1/3 (first k coords zero), y=1 w.p. 2/3 (first k coords +-1);
    coordinates beyond k are uniform on {-1, 0, +1} in both branches."""
    X, y = _sample_theory(spec.k, spec.d, n, seed)
    return LabeledSet(X, y, None, {
        "generator": "theory_source", "k": spec.k, "d": spec.d, "n": n, "seed": int(seed)})


def sample_theory_target(spec: TheoryTargetSpec, n, seed):
    """Target task: y = x_1^2 holds exactly on every row."""
    X, y = _sample_theory(1, spec.d, n, seed)
    return LabeledSet(X, y, None, {
        "generator": "theory_target", "d": spec.d, "n": n, "seed": int(seed)})


@dataclass(frozen=True)
class CompositeSpec:
    """Two-block inputs: a transferable block A (class prototypes + noise +
    distractor dims) and a source-specific signature block B whose per-pixel
    mean encodes the class.

    Defaults are tuned so that, at n_t = 500, training on block A alone
    overfits badly while the signature block stays trivially separable.
    Each class occupies ``modes_per_class`` prototype clusters; with one mode
    the block-A task is too easy for the overfitting regime.
    """
    classes: int = 10
    d_a: int = 128
    d_b: int = 256
    a_noise: float = 0.25
    a_distractors: int = 112
    sig_std: float = 0.05
    modes_per_class: int = 4

    def __post_init__(self):
        if self.classes < 2:
            raise ContractViolation("CompositeSpec: classes >= 2 required")
        if self.d_a < self.classes:
            raise ContractViolation("CompositeSpec: d_a >= classes required")
        if not (0 <= self.a_distractors < self.d_a):
            raise ContractViolation("CompositeSpec: 0 <= a_distractors < d_a required")
        if self.sig_std <= 0:
            raise ContractViolation("CompositeSpec: sig_std > 0 required")
        if self.modes_per_class < 1:
            raise ContractViolation("CompositeSpec: modes_per_class >= 1 required")

    @property
    def informative(self):
        return self.d_a - self.a_distractors

    @property
    def d(self):
        return self.d_a + self.d_b

    def key(self):
        return [self.classes, self.d_a, self.d_b, self.a_distractors,
                self.modes_per_class,
                int(round(self.a_noise * 1_000_000)),
                int(round(self.sig_std * 1_000_000))]


def clamped_normal_mean(mu, sigma):
    """E[min(max(Z, 0), 1)] for Z ~ N(mu, sigma^2); vectorized in mu."""
    mu = np.asarray(mu, dtype=float)
    a = (0.0 - mu) / sigma
    b = (1.0 - mu) / sigma
    return (norm.sf(b) + mu * (norm.cdf(b) - norm.cdf(a))
            - sigma * (norm.pdf(b) - norm.pdf(a)))


def composite_prototypes(spec: CompositeSpec, seed):
    """Per-(class, mode) prototypes on the informative dims, fixed per seed."""
    ss = np.random.SeedSequence([int(seed), _COMPOSITE_TAG, 1] + spec.key())
    rng = np.random.default_rng(ss)
    return rng.random((spec.classes, spec.modes_per_class, spec.informative))


def composite_neutral_fill(spec: CompositeSpec, seed):
    """Per-dimension mean of the generating distribution (the mask value)."""
    protos = composite_prototypes(spec, seed)
    fill = np.empty(spec.d)
    fill[:spec.informative] = clamped_normal_mean(protos, spec.a_noise).mean(axis=(0, 1))
    fill[spec.informative:spec.d_a] = 0.5
    fill[spec.d_a:] = clamped_normal_mean(
        np.arange(spec.classes) / spec.classes, spec.sig_std).mean()
    return fill


def _composite_rng(spec, seed, purpose, target_side, channel):
    if purpose not in _PURPOSES:
        raise ContractViolation(f"unknown purpose {purpose!r}")
    ss = np.random.SeedSequence(
        [int(seed), _COMPOSITE_TAG, 2, _PURPOSES[purpose], int(target_side), channel]
        + spec.key())
    return np.random.default_rng(ss)


def generate_composite(spec: CompositeSpec, n, seed, variant, purpose="train"):
    """Generate a composite-task sample.

    variant: "AB" (both blocks), "AOnly"/"BOnly" (other block replaced by its
    neutral fill), "Target" (fresh block-A draws, block B neutral).
    AB/AOnly/BOnly with the same (seed, purpose) share their draws, so the
    masked variants agree with AB on the unmasked block row by row.
    """
    if n < 1:
        raise ContractViolation("need n >= 1")
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    protos = composite_prototypes(spec, seed)
    fill = composite_neutral_fill(spec, seed)
    target_side = variant == "Target"
    rng_y = _composite_rng(spec, seed, purpose, target_side, 0)
    rng_a = _composite_rng(spec, seed, purpose, target_side, 1)
    rng_b = _composite_rng(spec, seed, purpose, target_side, 2)

    y = rng_y.integers(0, spec.classes, size=n)
    X = np.empty((n, spec.d))
    if variant in ("AB", "AOnly", "Target"):
        modes = rng_a.integers(0, spec.modes_per_class, size=n)
        A = protos[y, modes] + rng_a.normal(0.0, spec.a_noise, size=(n, spec.informative))
        X[:, :spec.informative] = np.clip(A, 0.0, 1.0)
        X[:, spec.informative:spec.d_a] = rng_a.random((n, spec.a_distractors))
    else:
        X[:, :spec.d_a] = fill[:spec.d_a]
    if variant in ("AB", "BOnly"):
        B = rng_b.normal(0.0, spec.sig_std, size=(n, spec.d_b)) + y[:, None] / spec.classes
        X[:, spec.d_a:] = np.clip(B, 0.0, 1.0)
    else:
        X[:, spec.d_a:] = fill[spec.d_a:]
    return LabeledSet(X, y, spec.classes, {
        "generator": "composite", "spec": asdict(spec), "n": n,
        "seed": int(seed), "variant": variant, "purpose": purpose})


def split(dataset: LabeledSet, fraction, seed):
    """Disjoint (train, val) partition with |train| = ceil(fraction * n)."""
    if not (0.0 < fraction < 1.0):
        raise ContractViolation("split: fraction must lie strictly between 0 and 1")
    n = dataset.n
    n_train = int(np.ceil(fraction * n))
    if n_train == 0 or n_train == n:
        raise ContractViolation(f"split: degenerate sizes ({n_train}, {n - n_train})")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SPLIT_TAG]))
    perm = rng.permutation(n)
    return (dataset.subset(perm[:n_train], "train"),
            dataset.subset(perm[n_train:], "val"))


# -- serialization ----------------------------------------------------------

def save_labeled_set(dataset: LabeledSet, path):
    """Write X/y as a flat .npz plus a JSON sidecar for exact regeneration."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path.with_suffix(".npz"), X=dataset.X, y=dataset.y)
    sidecar = dict(dataset.meta)
    sidecar["n_classes"] = dataset.n_classes
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path.with_suffix(".npz"), path.with_suffix(".json")


def load_labeled_set(path):
    path = Path(path)
    with np.load(path.with_suffix(".npz")) as data:
        X, y = data["X"], data["y"]
    meta = json.loads(path.with_suffix(".json").read_text())
    n_classes = meta.pop("n_classes", None)
    return LabeledSet(X, y, n_classes, meta)


def regenerate_from_sidecar(sidecar_path):
    """Rebuild a dataset purely from its JSON sidecar."""
    meta = json.loads(Path(sidecar_path).read_text())
    gen = meta.get("generator")
    if gen == "theory_source":
        return sample_theory_source(TheorySourceSpec(meta["k"], meta["d"]),
                                    meta["n"], meta["seed"])
    if gen == "theory_target":
        return sample_theory_target(TheoryTargetSpec(meta["d"]), meta["n"], meta["seed"])
    if gen == "composite":
        return generate_composite(CompositeSpec(**meta["spec"]), meta["n"],
                                  meta["seed"], meta["variant"], meta["purpose"])
    raise ContractViolation(f"sidecar names unknown generator {gen!r}")
