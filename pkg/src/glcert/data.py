"""Benchmark dataset generation, loading, label masks and CSV round-trips.

Datasets are immutable bags of points in R^d with real-valued labels and a
boolean labeled-mask. Binary tasks use {0,1} labels; the solver also accepts
arbitrary finite reals (regression-style boundary data), which some of the
synthetic stability checks rely on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Dataset",
    "SplitSpec",
    "gen_halfmoon",
    "gen_uniform_cube",
    "load_abalone",
    "load_mnist_1v7",
    "apply_label_mask",
    "labeling_rate",
    "dataset_to_csv",
    "dataset_from_csv",
]


class DataError(ValueError):
    """Raised for malformed inputs, files, or infeasible split requests."""


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Points with (optionally masked) labels.

    Parameters
    ----------
    points : (N, d) float array
    labels : (N,) float array; must be finite wherever labeled_mask is True
    labeled_mask : (N,) bool array
    name : identifier used in exports and reports
    meta : free-form provenance (split seeds, thresholds, ...)
    """

    points: np.ndarray
    labels: np.ndarray
    labeled_mask: np.ndarray
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise DataError("points must be a nonempty (N, d) array")
        lab = np.asarray(self.labels, dtype=np.float64)
        msk = np.asarray(self.labeled_mask, dtype=bool)
        if lab.shape != (pts.shape[0],) or msk.shape != (pts.shape[0],):
            raise DataError("points, labels and labeled_mask lengths differ")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain non-finite coordinates")
        if msk.any() and not np.all(np.isfinite(lab[msk])):
            raise DataError("labeled entries must carry finite labels")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "labels", _frozen(lab))
        object.__setattr__(self, "labeled_mask", _frozen(msk))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_mask.sum())

    def with_points(self, points) -> "Dataset":
        """Same labels/mask on new coordinates (perturbed copies)."""
        return replace(self, points=points)


@dataclass(frozen=True)
class SplitSpec:
    """Sizes and seed for sampling train/test/validation without replacement."""

    train_count: int
    test_count: int
    validation_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.train_count < 1 or self.test_count < 1:
            raise DataError("train and test counts must be positive")
        if self.validation_count < 0:
            raise DataError("validation count must be non-negative")

    @property
    def total(self) -> int:
        return self.train_count + self.test_count + self.validation_count


def labeling_rate(ds: Dataset) -> float:
    """Fraction of labeled points, the beta used by the certification formulas."""
    return ds.n_labeled / ds.n


def _halfmoon_points(n, noise_std, rng):
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 1.0 - np.sin(t1) - 0.5])
    pts = np.vstack([upper, lower])
    if noise_std > 0:
        pts = pts + rng.normal(0.0, noise_std, pts.shape)
    labels = np.concatenate([np.zeros(n0), np.ones(n1)])
    order = rng.permutation(n)
    return pts[order], labels[order]


def gen_halfmoon(n_train, n_test, noise_std, seed):
    """Two interleaved unit half-circles with isotropic Gaussian noise.

    The second arc is the first reflected through (1/2, 1/4), the classic
    two-moons construction. Labels are {0,1}; every point starts labeled
    (mask later with :func:`apply_label_mask`).

    Returns (train, test) datasets; both are pure functions of the seed.
    """
    if n_train < 1 or n_test < 1:
        raise DataError("halfmoon counts must be at least 1")
    if noise_std < 0:
        raise DataError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    xtr, ytr = _halfmoon_points(n_train, noise_std, rng)
    xte, yte = _halfmoon_points(n_test, noise_std, rng)
    meta = {"seed": seed, "noise_std": noise_std}
    train = Dataset(xtr, ytr, np.ones(n_train, bool), "halfmoon-train", meta)
    test = Dataset(xte, yte, np.ones(n_test, bool), "halfmoon-test", meta)
    return train, test


def gen_uniform_cube(n, dim, label_fn, seed, name="uniform-cube"):
    """Uniform samples in [0,1]^dim labeled by a supplied function of position.

    Used by the synthetic stability and certification checks, where the label
    function is a known Lipschitz map (for instance the first coordinate).
    """
    if n < 1 or dim < 1:
        raise DataError("n and dim must be positive")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, (n, dim))
    labels = np.asarray([label_fn(x) for x in pts], dtype=np.float64)
    return Dataset(pts, labels, np.ones(n, bool), name, {"seed": seed})


# UCI abalone column layout: sex, 7 morphological measurements, ring count.
_ABALONE_SEX = {"M": 0, "F": 1, "I": 2}


def load_abalone(path, split: SplitSpec):
    """Load the UCI abalone table and split into train/test/validation.

    The sex column is one-hot encoded (M, F, I), giving 10 coordinates. All
    coordinates are standardized to zero mean and unit variance computed on
    the train split. The binary label thresholds ring count at the train-split
    median (strictly greater -> class 1); the threshold is recorded in meta.
    """
    rows = []
    try:
        with open(path, "r", encoding="ascii") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 9 or parts[0] not in _ABALONE_SEX:
                    raise DataError(f"{path}: malformed abalone row at line {ln}")
                onehot = [0.0, 0.0, 0.0]
                onehot[_ABALONE_SEX[parts[0]]] = 1.0
                try:
                    nums = [float(v) for v in parts[1:8]]
                    rings = int(parts[8])
                except ValueError as exc:
                    raise DataError(f"{path}: bad numeric field at line {ln}") from exc
                rows.append((onehot + nums, rings))
    except OSError as exc:
        raise DataError(f"cannot read abalone file {path}: {exc}") from exc
    if len(rows) < split.total:
        raise DataError(
            f"abalone file has {len(rows)} rows, split needs {split.total}"
        )

    feats = np.array([r[0] for r in rows])
    rings = np.array([r[1] for r in rows], dtype=np.float64)
    rng = np.random.default_rng(split.seed)
    pick = rng.choice(len(rows), split.total, replace=False)
    itr = pick[: split.train_count]
    ite = pick[split.train_count : split.train_count + split.test_count]
    iva = pick[split.train_count + split.test_count :]

    mu = feats[itr].mean(axis=0)
    sd = feats[itr].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)  # constant column guard
    thresh = float(np.median(rings[itr]))
    labels = (rings > thresh).astype(np.float64)

    meta = {
        "seed": split.seed,
        "ring_threshold": thresh,
        "label_rule": "rings > train-median",
        "standardize_mean": mu.tolist(),
        "standardize_std": sd.tolist(),
    }

    def make(idx, tag):
        pts = (feats[idx] - mu) / sd
        return Dataset(pts, labels[idx], np.ones(len(idx), bool),
                       f"abalone-{tag}", meta)

    return make(itr, "train"), make(ite, "test"), make(iva, "validation")


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic, header_dims):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read IDX file {path}: {exc}") from exc
    head = 4 * (1 + header_dims)
    if len(raw) < head:
        raise DataError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + header_dims}i", raw[:head])
    if fields[0] != magic:
        raise DataError(
            f"{path}: IDX magic 0x{fields[0]:08x}, expected 0x{magic:08x}"
        )
    dims = fields[1:]
    count = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=head)
    if body.size != count:
        raise DataError(f"{path}: IDX payload has {body.size} bytes, expected {count}")
    return body.reshape(dims)


def load_mnist_1v7(images_path, labels_path, per_class, seed):
    """Binary digit task: ones (class 0) versus sevens (class 1).

    Reads big-endian IDX files, scales pixels to [0,1] and flattens to 784
    coordinates. Train and test each receive `per_class` images of each digit,
    sampled without replacement by the seed.
    """
    if per_class < 1:
        raise DataError("per_class must be at least 1")
    images = _read_idx(images_path, _IDX_IMAGES_MAGIC, 3)
    digits = _read_idx(labels_path, _IDX_LABELS_MAGIC, 1)
    if images.shape[0] != digits.shape[0]:
        raise DataError("IDX image/label counts differ")

    rng = np.random.default_rng(seed)
    chosen = {}
    for digit in (1, 7):
        idx = np.flatnonzero(digits == digit)
        if idx.size < 2 * per_class:
            raise DataError(
                f"need {2 * per_class} images of digit {digit}, found {idx.size}"
            )
        idx = rng.permutation(idx)
        chosen[digit] = (idx[:per_class], idx[per_class : 2 * per_class])

    def make(which, tag):
        sel = np.concatenate([chosen[1][which], chosen[7][which]])
        pts = images[sel].reshape(len(sel), -1).astype(np.float64) / 255.0
        labels = np.concatenate(
            [np.zeros(per_class), np.ones(per_class)]
        )
        order = rng.permutation(len(sel))
        return Dataset(pts[order], labels[order], np.ones(len(sel), bool),
                       f"mnist1v7-{tag}", {"seed": seed, "per_class": per_class})

    return make(0, "train"), make(1, "test")


def apply_label_mask(ds: Dataset, labeled_count, seed, max_retries=100):
    """Keep exactly `labeled_count` labels visible; hide the rest.

    Underlying labels are retained so unlabeled points can still be scored.
    For binary data the labeled subset must contain both classes; the draw is
    retried (bounded) until it does.
    """
    if not 1 <= labeled_count <= ds.n:
        raise DataError(f"labeled_count {labeled_count} out of range 1..{ds.n}")
    rng = np.random.default_rng(seed)
    classes = np.unique(ds.labels >= 0.5)
    for _ in range(max_retries):
        pick = rng.choice(ds.n, labeled_count, replace=False)
        mask = np.zeros(ds.n, bool)
        mask[pick] = True
        if classes.size < 2 or np.unique(ds.labels[mask] >= 0.5).size == 2:
            return replace(ds, labeled_mask=mask)
    raise DataError(
        f"could not draw {labeled_count} labeled points covering both classes"
    )


def dataset_to_csv(ds: Dataset, path, header=True, provenance=None):
    """Write x0..x{d-1},label,labeled rows; optional provenance column."""
    cols = [f"x{i}" for i in range(ds.dim)] + ["label", "labeled"]
    if provenance is not None:
        cols.append("provenance")
    with open(path, "w", encoding="ascii") as fh:
        if header:
            fh.write(",".join(cols) + "\n")
        for i in range(ds.n):
            vals = [format(v, ".17g") for v in ds.points[i]]
            vals.append(format(ds.labels[i], ".17g"))
            vals.append("1" if ds.labeled_mask[i] else "0")
            if provenance is not None:
                vals.append(provenance[i])
            fh.write(",".join(vals) + "\n")


def dataset_from_csv(path, header=True, name=None):
    """Inverse of :func:`dataset_to_csv` (provenance column tolerated)."""
    pts, labels, mask = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if header:
        if not lines:
            raise DataError(f"{path}: empty CSV")
        lines = lines[1:]
    for ln, line in enumerate(lines, 1):
        parts = line.split(",")
        ncoord = len(parts) - 2
        if parts and not _is_float(parts[-1]):
            ncoord -= 1  # provenance tail
        if ncoord < 1:
            raise DataError(f"{path}: too few columns at data line {ln}")
        try:
            pts.append([float(v) for v in parts[:ncoord]])
            labels.append(float(parts[ncoord]))
            mask.append(bool(int(parts[ncoord + 1])))
        except ValueError as exc:
            raise DataError(f"{path}: bad value at data line {ln}") from exc
    if not pts:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(pts), np.array(labels), np.array(mask),
                   name or "csv-import")


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False
