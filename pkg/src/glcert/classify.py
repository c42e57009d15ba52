"""Thresholding solutions into classes, the kNN baseline, and accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import Dataset
from .graph import KDTREE_MAX_DIM
from .solve import HarmonicSolution

__all__ = ["Prediction", "gl_classify", "knn_classify", "accuracy",
           "predictions_to_csv"]


@dataclass(frozen=True)
class Prediction:
    """classes[i] = 1 iff scores[i] >= 1/2; scores are the harmonic value for
    the graph classifier and the vote fraction for kNN."""

    classes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.classes, dtype=np.float64)
        s = np.asarray(self.scores, dtype=np.float64)
        if c.shape != s.shape:
            raise ValueError("classes/scores length mismatch")
        if not np.array_equal(c, (s >= 0.5).astype(np.float64)):
            raise ValueError("classes must equal thresholded scores")
        c.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "classes", c)
        object.__setattr__(self, "scores", s)


def _threshold(scores):
    scores = np.asarray(scores, dtype=np.float64)
    return Prediction((scores >= 0.5).astype(np.float64), scores)


def gl_classify(sol: HarmonicSolution) -> Prediction:
    """Class 1 wherever the harmonic value reaches 1/2 (ties inclusive)."""
    return _threshold(sol.u)


def knn_classify(train: Dataset, queries, k) -> Prediction:
    """Majority vote over the k nearest labeled training points.

    Score is the fraction of neighbors voting class 1; an even split goes to
    class 1, mirroring the >= 1/2 convention of the graph classifier.
    """
    pts = train.points[train.labeled_mask]
    votes = (train.labels[train.labeled_mask] >= 0.5).astype(np.float64)
    if pts.shape[0] == 0:
        raise ValueError("knn_classify needs at least one labeled point")
    if not 1 <= k <= pts.shape[0]:
        raise ValueError(f"k={k} out of range for {pts.shape[0]} labeled points")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if pts.shape[1] <= KDTREE_MAX_DIM:
        _, idx = cKDTree(pts).query(queries, k=k)
        idx = idx.reshape(len(queries), k)
    else:
        idx = np.empty((len(queries), k), np.int64)
        for start in range(0, len(queries), 256):
            block = queries[start : start + 256]
            dist = np.linalg.norm(block[:, None, :] - pts[None, :, :], axis=2)
            idx[start : start + len(block)] = np.argsort(
                dist, axis=1, kind="stable")[:, :k]
    return _threshold(votes[idx].mean(axis=1))


def accuracy(pred: Prediction, truth, mask=None):
    """Fraction of (masked) indices whose class matches the 0/1 truth."""
    truth = (np.asarray(truth, dtype=np.float64) >= 0.5).astype(np.float64)
    if truth.shape != pred.classes.shape:
        raise ValueError("prediction/truth length mismatch")
    hit = pred.classes == truth
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("empty accuracy mask")
        hit = hit[mask]
    return float(hit.mean())


def predictions_to_csv(pred: Prediction, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("index,class,score\n")
        for i, (c, s) in enumerate(zip(pred.classes, pred.scores)):
            fh.write(f"{i},{int(c)},{format(s, '.17g')}\n")
