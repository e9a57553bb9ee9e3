"""Representation diagnostics: variance ratio, label correlation, exports."""
import numpy as np
import pytest

from transferlab import nets
from transferlab.datasets import CompositeSpec, LabeledSet, generate_composite
from transferlab.errors import ContractViolation
from transferlab.metrics import (FeatureBatch, accuracy, export_features,
                                 feature_label_correlation, masked_eval,
                                 variance_ratio)


def test_variance_ratio_hand_example_is_quarter():
    H = np.array([[0.0, 0.0], [2.0, 0.0], [4.0, 0.0], [6.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    assert variance_ratio(H, y) == pytest.approx(0.25)


def test_variance_ratio_zero_when_classes_collapse():
    H = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, -1.0], [5.0, -1.0]])
    y = np.array([0, 0, 1, 1])
    assert variance_ratio(H, y) == 0.0


def test_variance_ratio_invariant_to_rotation_translation_permutation():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(40, 5))
    y = rng.integers(0, 4, size=40)
    base = variance_ratio(H, y)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    shifted = H @ Q + rng.normal(size=5)
    assert variance_ratio(shifted, y) == pytest.approx(base, rel=1e-10)
    perm = rng.permutation(40)
    assert variance_ratio(H[perm], y[perm]) == pytest.approx(base, rel=1e-12)


def test_variance_ratio_rejects_degenerate_inputs():
    with pytest.raises(ContractViolation):
        variance_ratio(np.ones((4, 2)), np.zeros(4, dtype=int))
    with pytest.raises(ContractViolation):
        variance_ratio(np.ones((4, 2)), np.array([0, 0, 1, 1]))  # equal means
    with pytest.raises(ContractViolation):
        FeatureBatch(np.full((2, 2), np.inf), np.array([0, 1]))


def test_label_correlation_orthonormal_rows_gives_norm_squared():
    H = np.eye(4)
    y = np.array([1.0, -2.0, 0.5, 3.0])
    got = feature_label_correlation(H, y, eps_reg=0.0)
    assert got == pytest.approx(float(y @ y), abs=1e-12)


def test_label_correlation_scaling_law():
    rng = np.random.default_rng(1)
    H = rng.normal(size=(6, 9))
    y = rng.normal(size=6)
    base = feature_label_correlation(H, y, eps_reg=0.0)
    scaled = feature_label_correlation(3.0 * H, y, eps_reg=0.0)
    assert scaled == pytest.approx(base / 9.0, rel=1e-10)


def test_label_correlation_decreases_in_regularization():
    rng = np.random.default_rng(2)
    H = rng.normal(size=(8, 5))
    y = rng.normal(size=8)
    values = [feature_label_correlation(H, y, eps_reg=e)
              for e in (1e-8, 1e-4, 1e-2, 1.0)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] >= 0.0


def test_label_correlation_multicolumn_sums_over_columns():
    rng = np.random.default_rng(3)
    H = rng.normal(size=(7, 4))
    Y = rng.normal(size=(7, 3))
    total = feature_label_correlation(H, Y, eps_reg=1e-6)
    split_sum = sum(feature_label_correlation(H, Y[:, c], eps_reg=1e-6)
                    for c in range(3))
    assert total == pytest.approx(split_sum, rel=1e-12)


SPEC = CompositeSpec(classes=4, d_a=12, d_b=16, a_noise=0.3, a_distractors=6,
                     sig_std=0.1, modes_per_class=2)


def test_masked_eval_chance_level_for_constant_model():
    theta = np.zeros((5, 4))
    phi = np.zeros((SPEC.d, 5))
    acc = masked_eval(theta, phi, nets.RELU, SPEC, "AOnly", 4000, seed=0)
    p = 1.0 / SPEC.classes
    se = np.sqrt(p * (1 - p) / 4000)
    assert abs(acc - p) < 3 * se


def test_masked_eval_deterministic_given_seed():
    rng = np.random.default_rng(4)
    theta = rng.normal(size=(5, 4))
    phi = rng.normal(size=(SPEC.d, 5))
    a = masked_eval(theta, phi, nets.RELU, SPEC, "BOnly", 500, seed=7)
    b = masked_eval(theta, phi, nets.RELU, SPEC, "BOnly", 500, seed=7)
    assert a == b


def test_accuracy_requires_classification():
    data = LabeledSet(np.ones((3, 2)), np.zeros(3))
    with pytest.raises(ContractViolation):
        accuracy(data, np.zeros(2), np.ones((2, 2)), nets.RELU)


def test_export_features_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    data = generate_composite(SPEC, 20, seed=8, variant="AB")
    phi = rng.normal(size=(SPEC.d, 3))
    path = export_features(phi, nets.RELU, data, tmp_path / "features.csv")
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "f0,f1,f2,label"
    assert len(lines) == 21
    H = nets.features_batch(data.X, phi, nets.RELU)
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        parsed = np.array([float(c) for c in cells[:3]])
        assert np.array_equal(parsed, H[i])
        assert int(cells[3]) == data.y[i]
