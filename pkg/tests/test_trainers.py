"""Baseline trainers: degenerate equivalences, head-only closed forms,
objective properties."""
import numpy as np
import pytest

from transferlab import nets
from transferlab.datasets import (CompositeSpec, LabeledSet, TheoryTargetSpec,
                                  generate_composite, sample_theory_target)
from transferlab.errors import ContractViolation
from transferlab.metrics import accuracy
from transferlab.optim import SGDConfig
from transferlab.population import TargetDist, population_loss
from transferlab.trainers import (Arch, JointConfig, L2SPConfig,
                                  cross_validate_alpha, finetune,
                                  joint_objective, joint_train, l2sp_finetune,
                                  pretrain, train_target_only)

TEN_27 = 10.0 / 27.0


def _separable_two_class(n=60, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, 3)) * 0.3 + np.where(y[:, None] == 1, 2.0, -2.0)
    return LabeledSet(X, y, n_classes=2)


def test_target_only_fits_separable_toy_set():
    data = _separable_two_class()
    arch = Arch(3, 4, nets.RELU, target_outputs=2)
    cfg = SGDConfig(lr=0.1, momentum=0.9, weight_decay=0.0, epochs=300,
                    batch_size=0)
    params = train_target_only(data, arch, cfg, seed=0)
    assert accuracy(data, params.theta_t, params.phi, nets.RELU) == 1.0


def test_target_only_overfits_underdetermined_theory_target():
    # n_t << d: the train loss collapses while the population loss stays large
    target = sample_theory_target(TheoryTargetSpec(100), 10, seed=3)
    arch = Arch(100, 3, nets.QUADRATIC, target_outputs=0)
    cfg = SGDConfig(lr=0.01, momentum=0.9, weight_decay=0.0, epochs=4000,
                    batch_size=0)
    params = train_target_only(target, arch, cfg, seed=1)
    train_loss = nets.batch_loss(target, params.theta_t, params.phi,
                                 nets.QUADRATIC, nets.SQUARED)
    pop = population_loss(params.theta_t, params.phi, TargetDist(100))
    assert train_loss <= 1e-3
    assert pop >= 0.1


def test_joint_alpha_interpolation_objective_identity():
    rng = np.random.default_rng(4)
    source = LabeledSet(rng.normal(size=(20, 4)), rng.integers(0, 3, 20), n_classes=3)
    target = LabeledSet(rng.normal(size=(10, 4)), rng.integers(0, 3, 10), n_classes=3)
    params = nets.Params(rng.normal(size=(4, 5)), rng.normal(size=(5, 3)),
                         rng.normal(size=(5, 3)))
    ls = nets.batch_loss(source, params.theta_s, params.phi, nets.RELU,
                         nets.CROSS_ENTROPY)
    lt = nets.batch_loss(target, params.theta_t, params.phi, nets.RELU,
                         nets.CROSS_ENTROPY)
    assert joint_objective(source, target, params, JointConfig(0.0, 0.0),
                           nets.RELU) == pytest.approx(ls)
    assert joint_objective(source, target, params, JointConfig(1.0, 0.0),
                           nets.RELU) == pytest.approx(lt)


def test_joint_alpha_one_full_batch_matches_target_only_trajectory():
    data = _separable_two_class(40, seed=5)
    source = _separable_two_class(30, seed=6)
    arch = Arch(3, 4, nets.RELU, source_outputs=2, target_outputs=2)
    cfg = SGDConfig(lr=0.05, momentum=0.9, weight_decay=1e-3, epochs=40,
                    batch_size=0)
    jt = joint_train(source, data, arch, JointConfig(alpha=1.0), cfg, seed=9)
    to = train_target_only(data, Arch(3, 4, nets.RELU, target_outputs=2),
                           cfg, seed=9)
    assert np.array_equal(jt.phi, to.phi)
    assert np.array_equal(jt.theta_t, to.theta_t)


def test_joint_objective_not_increased_from_init():
    rng = np.random.default_rng(7)
    source = _separable_two_class(50, seed=8)
    target = _separable_two_class(20, seed=9)
    arch = Arch(3, 4, nets.RELU, source_outputs=2, target_outputs=2)
    cfg = SGDConfig(lr=0.05, momentum=0.9, weight_decay=0.0, epochs=60,
                    batch_size=0)
    jcfg = JointConfig(alpha=0.4, lam=1e-3)
    final = joint_train(source, target, arch, jcfg, cfg, seed=11)
    init = nets.init_params(3, 4, 2, 2,
                            np.random.default_rng(np.random.SeedSequence([11, 711])))
    assert joint_objective(source, target, final, jcfg, nets.RELU) <= \
        joint_objective(source, target, init, jcfg, nets.RELU)


def test_l2sp_zero_strength_equals_plain_finetune():
    data = _separable_two_class(30, seed=12)
    arch = Arch(3, 4, nets.RELU, target_outputs=2)
    phi_pre = np.random.default_rng(13).normal(size=(3, 4))
    cfg = SGDConfig(lr=0.05, momentum=0.9, weight_decay=1e-3, epochs=30,
                    batch_size=0)
    ft = finetune(data, phi_pre, "all_layers", arch, cfg, seed=14)
    sp = l2sp_finetune(data, L2SPConfig(0.0, phi_pre), arch, cfg, seed=14)
    assert np.array_equal(ft.phi, sp.phi)
    assert np.array_equal(ft.theta_t, sp.theta_t)


def test_l2sp_strength_pins_features_to_anchor():
    data = _separable_two_class(30, seed=15)
    arch = Arch(3, 4, nets.RELU, target_outputs=2)
    phi_pre = np.random.default_rng(16).normal(size=(3, 4))
    cfg = SGDConfig(lr=0.05, momentum=0.9, weight_decay=0.0, epochs=50,
                    batch_size=0)
    free = l2sp_finetune(data, L2SPConfig(0.0, phi_pre), arch, cfg, seed=17)
    pinned = l2sp_finetune(data, L2SPConfig(10.0, phi_pre), arch, cfg, seed=17)
    drift_free = np.linalg.norm(free.phi - phi_pre)
    drift_pinned = np.linalg.norm(pinned.phi - phi_pre)
    assert drift_pinned < 0.2 * drift_free


def test_head_only_huge_lam_shrinks_head_to_zero():
    target = sample_theory_target(TheoryTargetSpec(6), 50, seed=18)
    arch = Arch(6, 2, nets.QUADRATIC, target_outputs=0)
    phi_pre = np.random.default_rng(19).normal(size=(6, 2))
    params = finetune(target, phi_pre, "head_only", arch,
                      SGDConfig(lr=0.1), seed=0, lam=1e12)
    assert np.max(np.abs(params.theta_t)) < 1e-6
    pop = population_loss(params.theta_t, params.phi, TargetDist(6))
    assert pop == pytest.approx(2.0 / 3.0, abs=1e-5)


def test_head_only_off_axis_feature_floors_at_ten_27():
    # the best head on a non-transferable coordinate has population loss
    # (2/3) g^2 - (8/9) g + 2/3 >= 10/27, reached at g = 2/3
    d = 6
    phi_pre = np.zeros((d, 1))
    phi_pre[2, 0] = 1.0
    arch = Arch(d, 1, nets.QUADRATIC, target_outputs=0)
    target = sample_theory_target(TheoryTargetSpec(d), 3000, seed=20)
    params = finetune(target, phi_pre, "head_only", arch, SGDConfig(lr=0.1),
                      seed=0, lam=1e-9)
    gamma = float(params.theta_t[0])
    pop = population_loss(params.theta_t, params.phi, TargetDist(d))
    assert abs(gamma - 2.0 / 3.0) < 0.05
    assert TEN_27 - 1e-12 <= pop < TEN_27 + 5e-3
    exact = population_loss(np.array([2.0 / 3.0]), phi_pre, TargetDist(d))
    assert exact == pytest.approx(TEN_27, abs=1e-15)


def test_head_only_ground_truth_feature_reaches_zero_loss():
    d = 6
    phi_pre = np.zeros((d, 1))
    phi_pre[0, 0] = 1.0
    arch = Arch(d, 1, nets.QUADRATIC, target_outputs=0)
    target = sample_theory_target(TheoryTargetSpec(d), 200, seed=21)
    params = finetune(target, phi_pre, "head_only", arch, SGDConfig(lr=0.1),
                      seed=0, lam=1e-10)
    pop = population_loss(params.theta_t, params.phi, TargetDist(d))
    assert pop < 1e-10


def test_finetune_validates_mode_and_shapes():
    data = _separable_two_class(10, seed=22)
    arch = Arch(3, 4, nets.RELU, target_outputs=2)
    with pytest.raises(ContractViolation):
        finetune(data, np.zeros((2, 4)), "all_layers", arch, SGDConfig(lr=0.1), 0)
    with pytest.raises(ContractViolation):
        finetune(data, np.zeros((3, 4)), "heads", arch, SGDConfig(lr=0.1), 0)


def test_cross_validate_alpha_returns_grid_member():
    source = _separable_two_class(40, seed=23)
    target = _separable_two_class(24, seed=24)
    arch = Arch(3, 4, nets.RELU, source_outputs=2, target_outputs=2)
    cfg = SGDConfig(lr=0.05, momentum=0.9, epochs=15, batch_size=0)
    best, scores = cross_validate_alpha(source, target, arch, cfg, seed=25,
                                        grid=(0.2, 0.8))
    assert best in (0.2, 0.8)
    assert set(scores) == {0.2, 0.8}


def test_pretrain_on_composite_source_prefers_signature_block():
    # small-scale sanity: the signature block is learned nearly perfectly,
    # the transferable block close to chance
    spec = CompositeSpec(classes=4, d_a=24, d_b=64, a_noise=0.3,
                         a_distractors=16, sig_std=0.05, modes_per_class=2)
    source = generate_composite(spec, 2000, seed=3, variant="AB")
    arch = Arch(spec.d, 24, nets.RELU, source_outputs=4)
    cfg = SGDConfig(lr=0.1, momentum=0.9, weight_decay=5e-3, epochs=40,
                    batch_size=128, lr_schedule=((25, 0.1),))
    params, phi_pre = pretrain(source, arch, cfg, seed=4)
    assert np.array_equal(phi_pre, params.phi)
    from transferlab.metrics import masked_eval
    bonly = masked_eval(params.theta_s, params.phi, nets.RELU, spec, "BOnly",
                        1000, 3)
    aonly = masked_eval(params.theta_s, params.phi, nets.RELU, spec, "AOnly",
                        1000, 3)
    assert bonly >= 0.85
    assert aonly <= 0.25 + 0.15
