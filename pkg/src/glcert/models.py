"""Differentiable substitute classifiers for gradient-based attacks.

Three small models with hand-written gradients (no autodiff): logistic
regression, a one-hidden-layer tanh perceptron, and RBF-kernel logistic
regression with the median-distance bandwidth. All train deterministically
from a seed and expose input gradients of the cross-entropy loss, which the
l2 fast-gradient attack consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

__all__ = [
    "TrainConfig",
    "SurrogateModel",
    "TrainingError",
    "train_surrogate",
    "substitute_train_loop",
    "predict_proba",
    "decision_score",
    "gradient_wrt_input",
    "save_model",
    "load_model",
]

POOL_CAP = 10000


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    batch_size: int = 32       # minibatch models only
    seed: int = 0
    l2: float = 1e-4
    hidden: int = 64           # mlp only

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("bad training configuration")


@dataclass(frozen=True)
class SurrogateModel:
    """Flat parameter vector plus the metadata needed to unflatten it.

    kind "kernel" keeps its training inputs in aux["anchors"] (representer
    form); "mlp" records layer shapes; "logistic" is just (w, b).
    """

    kind: str
    input_dim: int
    params: np.ndarray
    train_config: TrainConfig
    aux: dict = field(default_factory=dict)
    loss_history: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if not np.all(np.isfinite(p)):
            raise TrainingError("non-finite model parameters")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _ce_loss(p, y):
    eps = 1e-12
    return float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))


def _labeled_xy(train: Dataset):
    x = train.points[train.labeled_mask]
    y = (train.labels[train.labeled_mask] >= 0.5).astype(np.float64)
    if len(x) < 2 or np.unique(y).size < 2:
        raise TrainingError("surrogate training needs both classes")
    return x, y


# -- logistic ---------------------------------------------------------------

def _train_logistic(x, y, cfg):
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    losses = []
    for _ in range(cfg.epochs):
        p = _sigmoid(x @ w + b)
        losses.append(_ce_loss(p, y) + 0.5 * cfg.l2 * float(w @ w))
        g = p - y
        w -= cfg.learning_rate * (x.T @ g / n + cfg.l2 * w)
        b -= cfg.learning_rate * float(g.mean())
        if not np.isfinite(losses[-1]):
            raise TrainingError("logistic training diverged")
    return np.concatenate([w, [b]]), {}, losses


def _logistic_score(m, x):
    w, b = m.params[:-1], m.params[-1]
    return x @ w + b


def _logistic_score_grad(m, x):
    return np.broadcast_to(m.params[:-1], x.shape).copy()


# -- mlp (one tanh hidden layer, manual backprop) ---------------------------

def _mlp_unflatten(m):
    d, h = m.input_dim, m.aux["hidden"]
    p = m.params
    w1 = p[: d * h].reshape(h, d)
    b1 = p[d * h : d * h + h]
    w2 = p[d * h + h : d * h + 2 * h]
    b2 = p[-1]
    return w1, b1, w2, b2


def _train_mlp(x, y, cfg):
    n, d = x.shape
    h = cfg.hidden
    rng = np.random.default_rng(cfg.seed)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), (h, d))
    b1 = np.zeros(h)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(h), h)
    b2 = 0.0
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            a = np.tanh(xb @ w1.T + b1)          # (B, h)
            p = _sigmoid(a @ w2 + b2)
            dz = (p - yb) / len(idx)             # dL/dlogit
            gw2 = a.T @ dz + cfg.l2 * w2
            gb2 = dz.sum()
            da = np.outer(dz, w2) * (1.0 - a * a)
            gw1 = da.T @ xb + cfg.l2 * w1
            gb1 = da.sum(axis=0)
            w2 -= cfg.learning_rate * gw2
            b2 -= cfg.learning_rate * gb2
            w1 -= cfg.learning_rate * gw1
            b1 -= cfg.learning_rate * gb1
        p = _sigmoid(np.tanh(x @ w1.T + b1) @ w2 + b2)
        losses.append(_ce_loss(p, y))
        if not np.isfinite(losses[-1]):
            raise TrainingError("mlp training diverged")
    params = np.concatenate([w1.ravel(), b1, w2, [b2]])
    return params, {"hidden": h}, losses


def _mlp_score(m, x):
    w1, b1, w2, b2 = _mlp_unflatten(m)
    return np.tanh(x @ w1.T + b1) @ w2 + b2


def _mlp_score_grad(m, x):
    w1, b1, w2, b2 = _mlp_unflatten(m)
    a = np.tanh(x @ w1.T + b1)
    return ((1.0 - a * a) * w2) @ w1


# -- rbf kernel logistic regression -----------------------------------------

def _median_bandwidth(x, cap=2000):
    sub = x[:cap]
    d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=2)
    iu = np.triu_indices(len(sub), k=1)
    med = float(np.sqrt(np.median(d2[iu]))) if iu[0].size else 1.0
    return med if med > 0 else 1.0


def _rbf(x, anchors, bw):
    d2 = np.sum((x[:, None, :] - anchors[None, :, :]) ** 2, axis=2)
    return np.exp(-d2 / (2.0 * bw * bw))


def _train_kernel(x, y, cfg):
    n = len(x)
    bw = _median_bandwidth(x)
    k = _rbf(x, x, bw)
    alpha = np.zeros(n)
    b = 0.0
    losses = []
    for _ in range(cfg.epochs):
        p = _sigmoid(k @ alpha + b)
        losses.append(_ce_loss(p, y) + 0.5 * cfg.l2 * float(alpha @ alpha))
        g = p - y
        alpha -= cfg.learning_rate * (k.T @ g / n + cfg.l2 * alpha)
        b -= cfg.learning_rate * float(g.mean())
        if not np.isfinite(losses[-1]):
            raise TrainingError("kernel training diverged")
    return np.concatenate([alpha, [b]]), {"anchors": x.copy(), "bandwidth": bw}, losses


def _kernel_score(m, x):
    alpha, b = m.params[:-1], m.params[-1]
    return _rbf(x, m.aux["anchors"], m.aux["bandwidth"]) @ alpha + b


def _kernel_score_grad(m, x):
    alpha = m.params[:-1]
    anchors, bw = m.aux["anchors"], m.aux["bandwidth"]
    k = _rbf(x, anchors, bw)                     # (B, n)
    # d/dx exp(-|x-a|^2 / 2bw^2) = K * (a - x) / bw^2
    weighted = k * alpha                          # (B, n)
    return (weighted @ anchors - weighted.sum(axis=1, keepdims=True) * x) / (bw * bw)


_TRAIN = {"logistic": _train_logistic, "mlp": _train_mlp, "kernel": _train_kernel}
_SCORE = {"logistic": _logistic_score, "mlp": _mlp_score, "kernel": _kernel_score}
_SCORE_GRAD = {"logistic": _logistic_score_grad, "mlp": _mlp_score_grad,
               "kernel": _kernel_score_grad}


def train_surrogate(kind, train: Dataset, cfg: TrainConfig = TrainConfig()):
    """Fit one of the substitute models on the labeled rows of `train`."""
    if kind not in _TRAIN:
        raise TrainingError(f"unknown surrogate kind {kind!r}")
    x, y = _labeled_xy(train)
    params, aux, losses = _TRAIN[kind](x, y, cfg)
    return SurrogateModel(kind, x.shape[1], params, cfg, aux, tuple(losses))


def decision_score(m: SurrogateModel, x):
    """Pre-sigmoid logit; positive favors class 1."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x2.shape[1] != m.input_dim:
        raise TrainingError(
            f"input dim {x2.shape[1]} does not match model dim {m.input_dim}")
    s = _SCORE[m.kind](m, x2)
    return s if np.ndim(x) == 2 else float(s[0])


def predict_proba(m: SurrogateModel, x):
    s = decision_score(m, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    p = _sigmoid(np.asarray(s))
    return p if np.ndim(x) == 2 else float(p[0])


def _score_grad(m, x2):
    return _SCORE_GRAD[m.kind](m, x2)


def gradient_wrt_input(m: SurrogateModel, x, target_label):
    """Input gradient of the cross-entropy loss at (x, target_label).

    Accepts a single point (returns a d-vector) or a batch with per-point
    labels (returns a matrix).
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x2.shape[1] != m.input_dim:
        raise TrainingError(
            f"input dim {x2.shape[1]} does not match model dim {m.input_dim}")
    y = np.atleast_1d(np.asarray(target_label, dtype=np.float64))
    p = _sigmoid(np.asarray(_SCORE[m.kind](m, x2)))
    g = (p - y)[:, None] * _score_grad(m, x2)
    return g if np.ndim(x) == 2 else g[0]


def substitute_train_loop(victim, seed_points, rounds, aug_step, kind="logistic",
                          cfg: TrainConfig = TrainConfig(), pool_cap=POOL_CAP):
    """Black-box substitute training by query-and-augment.

    Each round labels the current pool with the victim oracle, fits the
    surrogate, then doubles the pool by stepping every point aug_step along
    the sign of the surrogate's class-score gradient (toward the victim's
    label). The pool is capped; the final fit sees |seed| * 2**(rounds-1)
    points and the trailing augmentation feeds no further fit.

    Returns (model, query_count).
    """
    if rounds < 1:
        raise TrainingError("rounds must be at least 1")
    pool = np.atleast_2d(np.asarray(seed_points, dtype=np.float64)).copy()
    queries = 0
    model = None
    for _ in range(rounds):
        labels = np.asarray(victim(pool), dtype=np.float64)
        queries += len(pool)
        ds = Dataset(pool, labels, np.ones(len(pool), bool), "substitute-pool")
        model = train_surrogate(kind, ds, cfg)
        if len(pool) * 2 <= pool_cap:
            direction = np.sign(_score_grad(model, pool))
            direction[labels < 0.5] *= -1.0
            pool = np.vstack([pool, pool + aug_step * direction])
    return model, queries


# -- persistence -------------------------------------------------------------

def save_model(m: SurrogateModel, path):
    """Text header (kind, dims, hyperparameters) then little-endian float64
    sections: params, and for kernel models the anchor block."""
    cfg = m.train_config
    header = [
        "glcert-surrogate 1",
        f"kind {m.kind}",
        f"input_dim {m.input_dim}",
        f"params {m.params.size}",
        f"hidden {m.aux.get('hidden', 0)}",
        f"anchors {len(m.aux['anchors']) if 'anchors' in m.aux else 0}",
        f"bandwidth {format(m.aux.get('bandwidth', 0.0), '.17g')}",
        f"train {cfg.learning_rate} {cfg.epochs} {cfg.batch_size} {cfg.seed} "
        f"{cfg.l2} {cfg.hidden}",
        "end",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(m.params.astype("<f8").tobytes())
        if "anchors" in m.aux:
            fh.write(np.ascontiguousarray(m.aux["anchors"], "<f8").tobytes())


def load_model(path) -> SurrogateModel:
    with open(path, "rb") as fh:
        fields = {}
        magic = fh.readline().decode("ascii").strip()
        if magic != "glcert-surrogate 1":
            raise TrainingError(f"{path}: not a surrogate model file")
        while True:
            line = fh.readline().decode("ascii").strip()
            if line == "end":
                break
            if not line:
                raise TrainingError(f"{path}: truncated model header")
            key, _, val = line.partition(" ")
            fields[key] = val
        nparams = int(fields["params"])
        params = np.frombuffer(fh.read(8 * nparams), "<f8")
        aux = {}
        nanchors = int(fields["anchors"])
        hidden = int(fields["hidden"])
        dim = int(fields["input_dim"])
        if hidden:
            aux["hidden"] = hidden
        if nanchors:
            aux["anchors"] = np.frombuffer(
                fh.read(8 * nanchors * dim), "<f8").reshape(nanchors, dim)
            aux["bandwidth"] = float(fields["bandwidth"])
    lr, epochs, batch, seed, l2, hid = fields["train"].split()
    cfg = TrainConfig(float(lr), int(epochs), int(batch), int(seed),
                      float(l2), int(hid))
    return SurrogateModel(fields["kind"], dim, params.copy(), cfg, aux)
