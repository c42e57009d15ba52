"""Training-set defenses: adversarial augmentation and robust pruning.

Augmentation appends adversarial copies of labeled training points, carrying
the clean labels, so the defended graph has a larger labeled boundary set.
Pruning greedily extracts a subset in which every oppositely labeled pair is
separated by more than a chosen distance, the separation property behind the
robust nearest-neighbor construction of Wang, Jha and Chaudhuri.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .attack import AttackSpec, run_attack

__all__ = [
    "DefenseSpec",
    "DefenseError",
    "augment_adversarial",
    "robust_prune",
    "select_separation",
    "defended_to_csv",
]


class DefenseError(ValueError):
    pass


@dataclass(frozen=True)
class DefenseSpec:
    """kind in {none, at_single, at_all, prune}; augmentation_budget is the
    crafting budget for the at_* kinds; separation_a the pruning distance."""

    kind: str = "none"
    augmentation_budget: float = 0.0
    separation_a: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "at_single", "at_all", "prune"):
            raise DefenseError(f"unknown defense kind {self.kind!r}")
        if self.augmentation_budget < 0:
            raise DefenseError("augmentation budget must be non-negative")
        if self.kind == "prune" and self.separation_a <= 0:
            raise DefenseError("pruning needs separation_a > 0")


def augment_adversarial(train: Dataset, attacks, provenance_out=None) -> Dataset:
    """Append one adversarial copy of every labeled point per attack.

    Adversarials keep the clean label and are marked labeled; exact duplicate
    rows (coordinates and label) are dropped. Attacks that need a reference
    set use the labeled training data itself.
    """
    if not attacks:
        raise DefenseError("augment_adversarial needs at least one attack")
    lab_idx = np.flatnonzero(train.labeled_mask)
    labeled_view = Dataset(train.points[lab_idx], train.labels[lab_idx],
                           np.ones(lab_idx.size, bool), train.name)
    pts = [train.points]
    labels = [train.labels]
    mask = [train.labeled_mask]
    prov = ["original"] * train.n
    for spec in attacks:
        crafted = run_attack(
            _all_scope(spec), labeled_view, reference=labeled_view)
        pts.append(crafted.perturbed_points)
        labels.append(labeled_view.labels)
        mask.append(np.ones(lab_idx.size, bool))
        prov += ["adversarial"] * lab_idx.size
    allp = np.vstack(pts)
    alll = np.concatenate(labels)
    allm = np.concatenate(mask)
    rows = {}
    keep = []
    for i in range(len(allp)):
        key = (allp[i].tobytes(), float(alll[i]), bool(allm[i]))
        if key not in rows:
            rows[key] = True
            keep.append(i)
    keep = np.array(keep)
    if provenance_out is not None:
        provenance_out.extend(prov[i] for i in keep)
    return Dataset(allp[keep], alll[keep], allm[keep],
                   f"{train.name}+aug", dict(train.meta))


def _all_scope(spec: AttackSpec):
    if spec.scope == "all":
        return spec
    return AttackSpec(spec.kind, spec.budget_r, spec.surrogate, spec.seed,
                      spec.direction_sign, "all")


def _cross_class_ok(points, labels01, candidate, admitted_opp, a):
    if admitted_opp.size == 0:
        return True
    d = np.linalg.norm(points[admitted_opp] - points[candidate], axis=1)
    return bool(d.min() > a)


def _greedy_prune(points, labels01, a):
    n = len(points)
    # confidence proxy: how many same-class points sit within distance a
    same_counts = np.empty(n, dtype=np.int64)
    for i in range(n):
        d = np.linalg.norm(points - points[i], axis=1)
        same_counts[i] = int(np.sum((d <= a) & (labels01 == labels01[i]))) - 1
    order = np.lexsort((np.arange(n), -same_counts))
    admitted = {0: [], 1: []}
    for i in order:
        c = int(labels01[i])
        if _cross_class_ok(points, labels01, i,
                           np.array(admitted[1 - c], dtype=np.int64), a):
            admitted[c].append(i)
    keep = np.sort(np.array(admitted[0] + admitted[1], dtype=np.int64))
    return keep


def robust_prune(train: Dataset, a) -> Dataset:
    """Greedy subset in which oppositely labeled points are > a apart.

    Points are admitted in order of descending same-class neighbor count, a
    point entering only if it clears distance a from every admitted point of
    the other class. If pruning at this separation wipes out a class, the
    call fails and reports the largest workable separation found by
    bisection.
    """
    if a <= 0:
        raise DefenseError("separation must be positive")
    labels01 = (train.labels >= 0.5).astype(np.int64)
    had_both = np.unique(labels01).size == 2
    keep = _greedy_prune(train.points, labels01, a)
    if had_both and np.unique(labels01[keep]).size < 2:
        feasible = _largest_feasible_a(train.points, labels01, a)
        raise DefenseError(
            f"separation {a} removes an entire class; largest workable "
            f"separation is about {feasible:.6g}")
    return Dataset(train.points[keep], train.labels[keep],
                   train.labeled_mask[keep], f"{train.name}+prune",
                   dict(train.meta, separation_a=float(a)))


def _largest_feasible_a(points, labels01, a_bad, iters=40):
    lo, hi = 0.0, a_bad
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid == 0.0:
            break
        keep = _greedy_prune(points, labels01, mid)
        if np.unique(labels01[keep]).size == 2:
            lo = mid
        else:
            hi = mid
    return lo


def min_cross_class_distance(ds: Dataset):
    """Smallest distance between oppositely labeled points (brute force)."""
    labels01 = ds.labels >= 0.5
    a_pts = ds.points[labels01]
    b_pts = ds.points[~labels01]
    if len(a_pts) == 0 or len(b_pts) == 0:
        return np.inf
    d = np.linalg.norm(a_pts[:, None, :] - b_pts[None, :, :], axis=2)
    return float(d.min())


def select_separation(train: Dataset, validation: Dataset, a_grid, evaluate):
    """Pick the separation maximizing defended validation accuracy.

    `evaluate(pruned_train, validation) -> accuracy` encapsulates the
    classifier and the fixed evaluation attack. Ties prefer the larger (more
    conservative) separation; separations that destroy a class are skipped;
    an empty feasible grid is an error.
    """
    if len(a_grid) == 0:
        raise DefenseError("empty separation grid")
    best = None
    for a in sorted(a_grid):
        try:
            pruned = robust_prune(train, a)
        except DefenseError:
            continue
        acc = evaluate(pruned, validation)
        if best is None or acc >= best[1]:
            best = (a, acc)
    if best is None:
        raise DefenseError("no separation in the grid keeps both classes")
    return best[0]


def defended_to_csv(ds: Dataset, path, provenance=None):
    from .data import dataset_to_csv
    dataset_to_csv(ds, path, header=True, provenance=provenance)
