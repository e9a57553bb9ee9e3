"""Representation diagnostics and masked-variant evaluation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nets
from .datasets import generate_composite
from .errors import ContractViolation


@dataclass
class FeatureBatch:
    """Feature rows (one per example) with integer class labels."""
    H: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.labels = np.asarray(self.labels)
        if self.H.ndim != 2 or self.H.shape[0] != self.labels.shape[0]:
            raise ContractViolation("FeatureBatch: H must be (n, m) with one label per row")
        if not np.isfinite(self.H).all():
            raise ContractViolation("FeatureBatch: features must be finite")


def _as_feature_batch(H, labels=None):
    if isinstance(H, FeatureBatch):
        return H
    return FeatureBatch(H, labels)


def variance_ratio(H, labels=None):
    """Intra-class to inter-class variance ratio of a feature batch:
    (C/N) * sum_ij ||h_ij - mu_i||^2 / sum_i ||mu_i - mu||^2, where mu is the
    mean of the class means. Low values mean well-separated classes."""
    batch = _as_feature_batch(H, labels)
    classes = np.unique(batch.labels)
    if len(classes) < 2:
        raise ContractViolation("variance_ratio needs at least two classes")
    means = []
    intra = 0.0
    for c in classes:
        Hc = batch.H[batch.labels == c]
        mu_c = Hc.mean(axis=0)
        means.append(mu_c)
        intra += float(np.sum((Hc - mu_c) ** 2))
    means = np.stack(means)
    mu = means.mean(axis=0)
    inter = float(np.sum((means - mu) ** 2))
    if inter <= 0.0:
        raise ContractViolation("variance_ratio: all class means coincide")
    C, N = len(classes), batch.H.shape[0]
    return (C / N) * intra / inter


def feature_label_correlation(H, y_encoded, eps_reg=1e-8):
    """Label-alignment statistic sum_c y_c^T (H H^T + eps I)^(-1) y_c over
    label columns; smaller indicates features better aligned with labels.
    The Gram matrix is taken in sample space so the expression is defined
    for any feature count."""
    H = np.asarray(H, dtype=float)
    Y = np.asarray(y_encoded, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if H.shape[0] != Y.shape[0]:
        raise ContractViolation("feature_label_correlation: row mismatch")
    K = H @ H.T + eps_reg * np.eye(H.shape[0])
    try:
        sol = np.linalg.solve(K, Y)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation("feature_label_correlation: Gram matrix singular "
                                "despite regularization") from exc
    value = float(np.sum(Y * sol))
    if not np.isfinite(value):
        raise ContractViolation("feature_label_correlation: non-finite value")
    return value


def accuracy(dataset, theta, phi, act):
    """Top-1 accuracy of the head on a classification set."""
    if dataset.n_classes is None:
        raise ContractViolation("accuracy needs a classification set")
    pred = nets.predict_batch(dataset.X, theta, phi, act)
    if pred.ndim != 2:
        raise ContractViolation("accuracy needs a multi-output head")
    return float(np.mean(pred.argmax(axis=1) == dataset.y))


def masked_eval(theta, phi, act, spec, variant, n, seed):
    """Accuracy on a fresh held-out sample of a masked composite variant.

    The sample shares the task prototypes of ``seed`` but is drawn from the
    evaluation streams, so it never overlaps training data generated with
    the same seed.
    """
    if variant not in ("AOnly", "BOnly", "AB", "Target"):
        raise ContractViolation(f"masked_eval: unknown variant {variant!r}")
    dataset = generate_composite(spec, n, seed, variant, purpose="eval")
    return accuracy(dataset, theta, phi, act)


def export_features(phi, act, dataset, path):
    """Write features plus label as CSV with header f0..f{m-1},label.

    Floats are printed with 17 significant digits so a round-trip read
    reproduces them bit-exactly.
    """
    H = nets.features_batch(dataset.X, phi, act)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(H.shape[1])] + ["label"])
        for row, label in zip(H, dataset.y):
            formatted = [f"{v:.17g}" for v in row]
            formatted.append(str(int(label)) if dataset.n_classes is not None
                             else f"{float(label):.17g}")
            writer.writerow(formatted)
    return path
