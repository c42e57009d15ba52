import numpy as np
import pytest

from glcert.attack import (ATTACK_KINDS, AttackError, AttackSpec,
                           PerturbedDataset, direct_attack, fgsm_l2,
                           perturbed_to_csv, run_attack)
from glcert.data import Dataset
from glcert.models import SurrogateModel, TrainConfig, train_surrogate


def _ds(points, labels, mask, name="t"):
    return Dataset(np.asarray(points, float), np.asarray(labels, float),
                   np.asarray(mask, bool), name, {})


def _reference():
    # labeled points of both classes on the x axis
    return _ds([[1.0, 0.0], [-1.0, 0.0]], [0.0, 1.0], [True, True], "ref")


def test_direct_attack_hand_example():
    # point at origin, class 0; nearest class-1 reference is (-1, 0);
    # "paper" direction moves away from it: (0,0) -> (+0.1, 0)
    target = _ds([[0.0, 0.0]], [0.0], [False])
    spec = AttackSpec("direct", 0.1)
    out = direct_attack(target, _reference(), spec)
    assert np.allclose(out.perturbed_points, [[0.1, 0.0]])
    toward = AttackSpec("direct", 0.1, direction_sign="toward_opponent")
    out2 = direct_attack(target, _reference(), toward)
    assert np.allclose(out2.perturbed_points, [[-0.1, 0.0]])


def test_direct_attack_exact_radius(rng):
    pts = rng.uniform(0, 1, (40, 2))
    labels = (pts[:, 0] >= 0.5).astype(float)
    mask = np.zeros(40, bool)
    mask[:20] = True
    target = _ds(pts, labels, mask)
    out = direct_attack(target, target, AttackSpec("direct", 0.07))
    moved = out.per_point_shift[~mask]
    assert np.allclose(moved, 0.07, atol=1e-12)
    assert np.all(out.per_point_shift[mask] == 0.0)


def test_direct_attack_degenerate_coincident():
    # attacked point coincides with its opposite-class reference
    target = _ds([[0.0, 0.0]], [0.0], [False])
    ref = _ds([[0.0, 0.0]], [1.0], [True])
    ref = _ds([[0.0, 0.0], [9.0, 9.0]], [1.0, 0.0], [True, True])
    out = direct_attack(target, ref, AttackSpec("direct", 0.05, seed=4))
    assert out.per_point_shift[0] == pytest.approx(0.05, abs=1e-12)
    again = direct_attack(target, ref, AttackSpec("direct", 0.05, seed=4))
    assert np.array_equal(out.perturbed_points, again.perturbed_points)


def test_direct_attack_needs_both_classes():
    target = _ds([[0.0, 0.0]], [0.0], [False])
    one_class = _ds([[1.0, 1.0]], [0.0], [True])
    direct_attack(target, _reference(), AttackSpec("direct", 0.1))   # fine
    with pytest.raises(AttackError):
        direct_attack(target, one_class, AttackSpec("direct", 0.1))


def _surrogate(rng):
    pts = np.vstack([rng.normal(size=(30, 4)) - 2,
                     rng.normal(size=(30, 4)) + 2])
    labels = np.concatenate([np.zeros(30), np.ones(30)])
    ds = Dataset(pts, labels, np.ones(60, bool), "s", {})
    return train_surrogate("logistic", ds, TrainConfig(epochs=100))


def test_fgsm_normalized_signs(rng):
    model = _surrogate(rng)
    target = Dataset(np.zeros((1, 4)), np.array([1.0]),
                     np.array([False]), "t", {})
    out = fgsm_l2(target, AttackSpec("ksa", 0.2, surrogate=model))
    delta = out.perturbed_points[0]
    # every coordinate is +-r/2 in dimension 4 (generic nonzero gradient)
    assert np.allclose(np.abs(delta), 0.1, atol=1e-12)
    assert np.linalg.norm(delta) == pytest.approx(0.2, abs=1e-12)


def test_fgsm_zero_gradient_leaves_point(rng):
    model = _surrogate(rng)
    zero = SurrogateModel("logistic", 4, np.zeros(5), TrainConfig())
    target = Dataset(rng.normal(size=(3, 4)), np.ones(3),
                     np.zeros(3, bool), "t", {})
    out = fgsm_l2(target, AttackSpec("ksa", 0.2, surrogate=zero))
    # w = 0 means the loss gradient is zero everywhere: nothing moves...
    # except that p - y = 0.5 - 1 is nonzero but grad(score) = w = 0
    assert np.array_equal(out.perturbed_points, target.points)
    assert model.input_dim == 4


def test_fgsm_requires_matching_surrogate(rng):
    model = _surrogate(rng)
    bad = Dataset(np.zeros((2, 3)), np.zeros(2), np.zeros(2, bool), "t", {})
    with pytest.raises(AttackError):
        fgsm_l2(bad, AttackSpec("ksa", 0.1, surrogate=model))
    with pytest.raises(AttackError):
        fgsm_l2(bad, AttackSpec("ksa", 0.1))


def test_labels_and_mask_preserved(rng):
    pts = rng.uniform(0, 1, (30, 2))
    labels = (pts[:, 1] >= 0.5).astype(float)
    mask = np.arange(30) < 15
    target = _ds(pts, labels, mask)
    out = direct_attack(target, target, AttackSpec("direct", 0.1))
    adv = out.to_dataset()
    assert np.array_equal(adv.labels, target.labels)
    assert np.array_equal(adv.labeled_mask, target.labeled_mask)
    assert adv.n == target.n


def test_scope_semantics(rng):
    pts = rng.uniform(0, 1, (20, 2))
    labels = (pts[:, 0] >= 0.5).astype(float)
    mask = np.arange(20) < 10
    target = _ds(pts, labels, mask)
    unl = direct_attack(target, target, AttackSpec("direct", 0.05))
    assert np.all(unl.per_point_shift[mask] == 0.0)
    assert np.all(unl.per_point_shift[~mask] > 0.0)
    allp = direct_attack(target, target,
                         AttackSpec("direct", 0.05, scope="all"))
    assert np.all(allp.per_point_shift > 0.0)


def test_run_attack_dispatch(rng):
    target = _ds([[0.0, 0.0]], [0.0], [False])
    out = run_attack(AttackSpec("direct", 0.1), target, _reference())
    assert out.max_shift() == pytest.approx(0.1)
    with pytest.raises(AttackError):
        run_attack(AttackSpec("direct", 0.1), target)   # no reference
    model = _surrogate(rng)
    t4 = Dataset(np.zeros((1, 4)), np.ones(1), np.zeros(1, bool), "t", {})
    out = run_attack(AttackSpec("bb_lr", 0.1, surrogate=model), t4)
    assert out.max_shift() <= 0.1 + 1e-12


def test_spec_validation():
    with pytest.raises(AttackError):
        AttackSpec("pgd", 0.1)
    with pytest.raises(AttackError):
        AttackSpec("direct", -0.1)
    with pytest.raises(AttackError):
        AttackSpec("direct", 0.1, direction_sign="backwards")
    with pytest.raises(AttackError):
        AttackSpec("direct", 0.1, scope="labeled")
    assert set(ATTACK_KINDS) == {"direct", "ksa", "bb_lr", "bb_nn",
                                 "bb_kernel"}


def test_perturbed_dataset_invariants():
    ds = _ds([[0.0, 0.0]], [0.0], [False])
    with pytest.raises(AttackError):
        PerturbedDataset(ds, np.array([[1.0, 0.0]]), np.array([0.5]))
    with pytest.raises(AttackError):
        PerturbedDataset(ds, np.zeros((2, 2)), np.zeros(2))


def test_budget_zero_identity(rng):
    pts = rng.uniform(0, 1, (10, 2))
    labels = (pts[:, 0] >= 0.5).astype(float)
    target = _ds(pts, labels, np.zeros(10, bool))
    out = direct_attack(target, _reference(), AttackSpec("direct", 0.0))
    assert np.array_equal(out.perturbed_points, pts)
    assert out.max_shift() == 0.0


def test_perturbed_csv(tmp_path):
    target = _ds([[0.0, 0.0]], [0.0], [False])
    out = direct_attack(target, _reference(), AttackSpec("direct", 0.1))
    path = tmp_path / "adv.csv"
    perturbed_to_csv(out, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,x1,xadv0,xadv1,shift"
    assert lines[1].split(",") == ["0", "0", "0.10000000000000001", "0",
                                   "0.10000000000000001"]
