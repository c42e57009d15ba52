import numpy as np
import pytest

from glcert.attack import AttackSpec
from glcert.data import Dataset
from glcert.defend import (DefenseError, DefenseSpec, augment_adversarial,
                           min_cross_class_distance, robust_prune,
                           select_separation)


def _labeled_blobs(rng, n=40, gap=3.0):
    half = n // 2
    pts = np.vstack([rng.normal(size=(half, 2)) * 0.4,
                     rng.normal(size=(half, 2)) * 0.4 + gap])
    labels = np.concatenate([np.zeros(half), np.ones(half)])
    return Dataset(pts, labels, np.ones(n, bool), "blobs", {})


def test_spec_validation():
    with pytest.raises(DefenseError):
        DefenseSpec("dropout")
    with pytest.raises(DefenseError):
        DefenseSpec("at_single", augmentation_budget=-0.1)
    with pytest.raises(DefenseError):
        DefenseSpec("prune", separation_a=0.0)
    DefenseSpec("prune", separation_a=0.2)


def test_augment_single_attack_size(rng):
    train = _labeled_blobs(rng)
    out = augment_adversarial(train, [AttackSpec("direct", 0.1)])
    # every labeled point gains at most one adversarial copy
    assert train.n < out.n <= 2 * train.n
    assert out.labeled_mask.all()


def test_augment_suite_size_and_provenance(rng):
    train = _labeled_blobs(rng)
    model_attacks = [AttackSpec("direct", 0.1, seed=1),
                     AttackSpec("direct", 0.15, seed=2),
                     AttackSpec("direct", 0.2, seed=3)]
    prov = []
    out = augment_adversarial(train, model_attacks, provenance_out=prov)
    assert out.n <= 4 * train.n
    assert len(prov) == out.n
    assert prov[: train.n] == ["original"] * train.n
    assert set(prov[train.n:]) == {"adversarial"}
    # originals are untouched and first
    assert np.array_equal(out.points[: train.n], train.points)
    assert np.array_equal(out.labels[: train.n], train.labels)


def test_augment_budget_zero_dedupes(rng):
    train = _labeled_blobs(rng)
    out = augment_adversarial(train, [AttackSpec("direct", 0.0)])
    # zero-budget copies are exact duplicates and vanish
    assert out.n == train.n


def test_augment_copies_carry_clean_labels(rng):
    train = _labeled_blobs(rng)
    out = augment_adversarial(train, [AttackSpec("direct", 0.1)])
    for i in range(train.n, out.n):
        d = np.linalg.norm(train.points - out.points[i], axis=1)
        src = int(np.argmin(d))
        assert d[src] <= 0.1 + 1e-9
        assert out.labels[i] == train.labels[src]


def test_augment_needs_attacks(rng):
    with pytest.raises(DefenseError):
        augment_adversarial(_labeled_blobs(rng), [])


def test_prune_no_removal_below_min_cross_distance(rng):
    train = _labeled_blobs(rng, gap=5.0)
    a = 0.5 * min_cross_class_distance(train)
    out = robust_prune(train, a)
    assert out.n == train.n
    assert np.array_equal(np.sort(out.points, axis=0),
                          np.sort(train.points, axis=0))


def test_prune_two_points_one_survives():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    train = Dataset(pts, np.array([0.0, 1.0]), np.ones(2, bool), "two", {})
    with pytest.raises(DefenseError, match="entire class"):
        robust_prune(train, 2.0)
    kept = robust_prune(train, 0.5)
    assert kept.n == 2


def test_prune_separation_property_random(rng):
    for trial in range(10):
        pts = rng.uniform(0, 1, (60, 2))
        labels = (rng.uniform(size=60) > 0.5).astype(float)
        train = Dataset(pts, labels, np.ones(60, bool), "rnd", {})
        a = 0.25
        try:
            out = robust_prune(train, a)
        except DefenseError:
            continue
        assert min_cross_class_distance(out) > a
        assert out.meta["separation_a"] == a


def test_prune_reports_feasible_separation():
    pts = np.array([[0.0, 0.0], [0.4, 0.0], [10.0, 0.0], [10.4, 0.0]])
    labels = np.array([0.0, 1.0, 0.0, 1.0])
    train = Dataset(pts, labels, np.ones(4, bool), "pairs", {})
    with pytest.raises(DefenseError) as exc:
        robust_prune(train, 50.0)
    # bisection lands just under the pairwise gap 9.6 (1 vs 2)
    reported = float(str(exc.value).rsplit(" ", 1)[-1])
    assert 0.0 < reported <= 50.0
    out = robust_prune(train, reported * 0.99)
    assert np.unique(out.labels).size == 2


def test_prune_validation(rng):
    with pytest.raises(DefenseError):
        robust_prune(_labeled_blobs(rng), 0.0)


def test_select_separation_prefers_larger_tie(rng):
    train = _labeled_blobs(rng, gap=6.0)
    val = _labeled_blobs(rng, n=20, gap=6.0)
    calls = []

    def evaluate(pruned, validation):
        calls.append(pruned.meta["separation_a"])
        return 0.9           # constant: force the tie-break

    a = select_separation(train, val, [0.1, 0.5, 1.0], evaluate)
    assert a == 1.0
    assert calls == [0.1, 0.5, 1.0]


def test_select_separation_skips_infeasible(rng):
    train = _labeled_blobs(rng, gap=2.0)
    val = _labeled_blobs(rng, n=20, gap=2.0)
    seen = []

    def evaluate(pruned, validation):
        seen.append(pruned.meta["separation_a"])
        return 1.0 / (1.0 + pruned.meta["separation_a"])

    a = select_separation(train, val, [0.05, 1e6], evaluate)
    assert a == 0.05 and seen == [0.05]
    with pytest.raises(DefenseError):
        select_separation(train, val, [1e6], evaluate)
    with pytest.raises(DefenseError):
        select_separation(train, val, [], evaluate)


def test_select_separation_picks_best_accuracy(rng):
    train = _labeled_blobs(rng, gap=6.0)
    val = _labeled_blobs(rng, n=20, gap=6.0)
    scores = {0.1: 0.7, 0.5: 0.95, 1.0: 0.8}

    def evaluate(pruned, validation):
        return scores[pruned.meta["separation_a"]]

    assert select_separation(train, val, [1.0, 0.1, 0.5], evaluate) == 0.5
