"""Geometric and kNN graph construction, kernel moments, continuum operator.

Graphs are sparse symmetric nonnegative weight matrices with zero diagonal.
Two families are supported:

* bandwidth graphs with compactly supported radial kernels, weighted
  ``eps**-d * eta(|x - y| / eps)``, used by the theory-facing checks;
* kNN graphs (symmetrized union) with either uniform ``N/k`` weights or
  self-tuning Gaussian weights in the style of Zelnik-Manor and Perona,
  used by the benchmark experiments.

Neighbor search uses a kd-tree up to dimension 16 and blocked brute force
above (kd-trees degrade in high dimension; the image data is d=784).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.integrate import quad
from scipy.spatial import cKDTree
from scipy.special import gamma

from .data import Dataset

__all__ = [
    "KernelSpec",
    "KernelConstants",
    "Graph",
    "build_epsilon_graph",
    "build_knn_graph",
    "graph_laplacian_apply",
    "degree_stats",
    "kernel_constants",
    "continuum_operator",
    "pointwise_consistency_errors",
    "ball_count_band",
    "graph_to_edgelist",
    "graph_from_edgelist",
]

KDTREE_MAX_DIM = 16
_BRUTE_BLOCK = 256


class GraphError(ValueError):
    pass


def eta_indicator(t):
    """1 on [0,1], 0 beyond."""
    t = np.asarray(t, dtype=np.float64)
    return (t <= 1.0).astype(np.float64)


def eta_lipschitz_bump(t):
    """1 on [0,1], linear ramp to 0 at 2; Lipschitz constant 1."""
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(0.0, np.minimum(2.0 - t, 1.0))


_KERNELS = {
    "indicator": (eta_indicator, 1.0),
    "lipschitz_bump": (eta_lipschitz_bump, 2.0),
}


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel family and bandwidth for a geometric graph.

    kind is one of {"indicator", "lipschitz_bump", "self_tuning_gaussian"};
    epsilon is ignored for self_tuning_gaussian (that family is parameterized
    by the neighbor count in :func:`build_knn_graph`).
    """

    kind: str
    epsilon: float
    dim: int

    def __post_init__(self):
        if self.kind not in ("indicator", "lipschitz_bump", "self_tuning_gaussian"):
            raise GraphError(f"unknown kernel kind {self.kind!r}")
        if self.kind != "self_tuning_gaussian" and self.epsilon <= 0:
            raise GraphError("kernel bandwidth must be positive")
        if self.dim < 1:
            raise GraphError("kernel dim must be positive")


@dataclass(frozen=True)
class KernelConstants:
    """Radial moments: sigma_eta (second moment of one coordinate) and
    c_eta (total mass), both over the kernel support."""

    sigma_eta: float
    c_eta: float
    dim: int

    def __post_init__(self):
        if self.sigma_eta <= 0 or self.c_eta <= 0:
            raise GraphError("kernel constants must be positive")


@dataclass(frozen=True)
class Graph:
    """Sparse symmetric weight matrix with kernel metadata."""

    weights: sparse.csr_matrix
    degrees: np.ndarray
    kind: str            # kernel kind or knn weight scheme
    param: float         # epsilon for kernel graphs, k for knn graphs

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def matvec(self, u):
        return self.weights @ u


def _finalize(n, rows, cols, vals, kind, param):
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    vals = np.asarray(vals, dtype=np.float64)
    offdiag = rows != cols
    w = sparse.coo_matrix(
        (vals[offdiag], (rows[offdiag], cols[offdiag])), shape=(n, n)
    ).tocsr()
    w = w.maximum(w.T)          # exact symmetry
    w.eliminate_zeros()
    w.sort_indices()
    deg = np.asarray(w.sum(axis=1)).ravel()
    deg.flags.writeable = False
    return Graph(w, deg, kind, float(param))


def _pairs_within(points, radius):
    """(i, j, dist) for all i<j closer than radius."""
    n, d = points.shape
    if d <= KDTREE_MAX_DIM:
        tree = cKDTree(points)
        pairs = tree.query_pairs(radius, output_type="ndarray")
        if len(pairs) == 0:
            return (np.empty(0, np.int64),) * 2 + (np.empty(0),)
        dist = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
        return pairs[:, 0], pairs[:, 1], dist
    ii, jj, dd = [], [], []
    for start in range(0, n, _BRUTE_BLOCK):
        block = points[start : start + _BRUTE_BLOCK]
        dist = np.linalg.norm(block[:, None, :] - points[None, :, :], axis=2)
        bi, bj = np.nonzero(dist <= radius)
        keep = start + bi < bj
        ii.append(start + bi[keep])
        jj.append(bj[keep])
        dd.append(dist[bi[keep], bj[keep]])
    return np.concatenate(ii), np.concatenate(jj), np.concatenate(dd)


def build_epsilon_graph(ds: Dataset, kernel: KernelSpec) -> Graph:
    """Bandwidth graph with weights eps**-d * eta(|x_i - x_j| / eps).

    Zero-weight pairs are absent from the sparse structure; the support
    radius is eps for the indicator kernel and 2*eps for the bump.
    """
    if kernel.kind == "self_tuning_gaussian":
        raise GraphError("self_tuning_gaussian is a knn weighting, not a bandwidth kernel")
    eta, support = _KERNELS[kernel.kind]
    eps = kernel.epsilon
    d = ds.dim
    i, j, dist = _pairs_within(ds.points, support * eps)
    vals = eps ** (-d) * eta(dist / eps)
    keep = vals > 0
    return _finalize(ds.n, i[keep], j[keep], vals[keep], kernel.kind, eps)


def _knn_search(points, k):
    """Indices and distances of the k nearest neighbors (self excluded),
    ties broken toward smaller index."""
    n, d = points.shape
    if d <= KDTREE_MAX_DIM:
        tree = cKDTree(points)
        dist, idx = tree.query(points, k=k + 1)
        # drop the self column wherever it appears
        self_col = idx == np.arange(n)[:, None]
        out_i = np.empty((n, k), np.int64)
        out_d = np.empty((n, k))
        for r in range(n):
            keep = ~self_col[r]
            out_i[r] = idx[r, keep][:k]
            out_d[r] = dist[r, keep][:k]
        return out_i, out_d
    out_i = np.empty((n, k), np.int64)
    out_d = np.empty((n, k))
    for start in range(0, n, _BRUTE_BLOCK):
        block = points[start : start + _BRUTE_BLOCK]
        dist = np.linalg.norm(block[:, None, :] - points[None, :, :], axis=2)
        for r in range(dist.shape[0]):
            dist[r, start + r] = np.inf
            order = np.argsort(dist[r], kind="stable")[:k]
            out_i[start + r] = order
            out_d[start + r] = dist[r, order]
    return out_i, out_d


def build_knn_graph(ds: Dataset, k, weights="self_tuning_gaussian") -> Graph:
    """Symmetrized-union kNN graph.

    weights="uniform_nk" assigns every edge N/k; "self_tuning_gaussian"
    assigns exp(-|x_i - x_j|^2 / (sigma_i sigma_j)) with sigma_i the distance
    from x_i to its k-th neighbor.
    """
    if not 1 <= k < ds.n:
        raise GraphError(f"k={k} out of range for {ds.n} points")
    if weights not in ("uniform_nk", "self_tuning_gaussian"):
        raise GraphError(f"unknown knn weighting {weights!r}")
    idx, dist = _knn_search(ds.points, k)
    rows = np.repeat(np.arange(ds.n), k)
    cols = idx.ravel()
    if weights == "uniform_nk":
        vals = np.full(rows.size, ds.n / k)
    else:
        sigma = dist[:, -1]
        sigma = np.where(sigma > 0, sigma, 1.0)  # duplicate-point guard
        vals = np.exp(-dist.ravel() ** 2 / (sigma[rows] * sigma[cols]))
    return _finalize(ds.n, rows, cols, vals, f"knn_{weights}", k)


def graph_laplacian_apply(g: Graph, u):
    """(L u)(x) = sum_y W_xy (u(x) - u(y)) = deg*u - W u."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (g.n,):
        raise GraphError(f"function length {u.shape} does not match {g.n} nodes")
    return g.degrees * u - g.weights @ u


def degree_stats(g: Graph, ds: Dataset):
    """Full degree and labeled-neighbor degree of every node.

    The second vector sums edge weights into the labeled set only, the
    quantity whose lower bound drives the certification probability.
    """
    if g.n != ds.n:
        raise GraphError("graph and dataset sizes differ")
    p = np.asarray(g.weights[:, ds.labeled_mask].sum(axis=1)).ravel()
    return g.degrees.copy(), p


def _ball_volume(d):
    return np.pi ** (d / 2.0) / gamma(d / 2.0 + 1.0)


def _sphere_area(d):
    return 2.0 * np.pi ** (d / 2.0) / gamma(d / 2.0)


def kernel_constants(kernel: KernelSpec) -> KernelConstants:
    """Moments sigma_eta = int eta(|z|) z_1^2 dz and c_eta = int eta(|z|) dz.

    Closed form for the indicator kernel; adaptive quadrature on the radial
    reduction otherwise (relative tolerance 1e-8).
    """
    d = kernel.dim
    if kernel.kind == "indicator":
        vol = _ball_volume(d)
        return KernelConstants(vol / (d + 2.0), vol, d)
    if kernel.kind == "lipschitz_bump":
        eta, support = _KERNELS[kernel.kind]
        area = _sphere_area(d)
        mass, _ = quad(lambda t: float(eta(t)) * t ** (d - 1), 0.0, support,
                       epsrel=1e-8)
        second, _ = quad(lambda t: float(eta(t)) * t ** (d + 1), 0.0, support,
                         epsrel=1e-8)
        return KernelConstants(area * second / d, area * mass, d)
    raise GraphError(f"{kernel.kind} has no kernel moments")


def continuum_operator(grad_phi, lap_phi, rho, grad_rho, x, constants):
    """Weighted continuum diffusion sigma_eta/rho * div(rho^2 grad phi) at x.

    All derivative callables are analytic, supplied by the caller; for
    uniform density this reduces to sigma_eta * lap_phi(x).
    """
    x = np.asarray(x, dtype=np.float64)
    r = float(rho(x))
    if r <= 0:
        raise GraphError("density must be positive at the evaluation point")
    return constants.sigma_eta * (
        r * float(lap_phi(x)) + 2.0 * float(np.dot(grad_rho(x), grad_phi(x)))
    )


def pointwise_consistency_errors(points, phi, grad_phi, lap_phi, rho, grad_rho,
                                 kernel: KernelSpec, interior):
    """Absolute error between the rescaled graph Laplacian and the continuum
    operator at the given interior node indices.

    The discrete operator applied to smooth phi satisfies, in expectation,
    L_N phi = -(N eps^2 / 2) * L phi + lower order, so the convergent
    rescaling is ``-2 / (N eps^2) * L_N phi``; that is what is compared here.
    (The naive 1 / (N eps^2) scaling converges to -L phi / 2 and never
    matches the continuum operator.)
    """
    pts = np.asarray(points, dtype=np.float64)
    n, d = pts.shape
    if kernel.kind != "indicator":
        ds = Dataset(pts, np.zeros(n), np.ones(n, bool))
        g = build_epsilon_graph(ds, kernel)
        ln = graph_laplacian_apply(g, np.apply_along_axis(phi, 1, pts))
        ln = ln[interior]
    else:
        # indicator kernel: ball sums, no need to materialize the matrix
        eps = kernel.epsilon
        tree = cKDTree(pts)
        phiv = np.apply_along_axis(phi, 1, pts)
        ln = np.empty(len(interior))
        balls = tree.query_ball_point(pts[interior], eps)
        for t, (i, js) in enumerate(zip(interior, balls)):
            js = np.asarray(js)
            js = js[js != i]
            ln[t] = (len(js) * phiv[i] - phiv[js].sum()) * eps ** (-d)
    consts = kernel_constants(kernel)
    scaled = -2.0 * ln / (n * kernel.epsilon ** 2)
    target = np.array([
        continuum_operator(grad_phi, lap_phi, rho, grad_rho, pts[i], consts)
        for i in interior
    ])
    return np.abs(scaled - target)


def ball_count_band(points, tau, theta, density_lip=0.0, alpha=1.0,
                    density=None):
    """Neighbor counts within radius tau against the concentration band
    (1 +- theta +- density_lip * tau) * C_tau(x) * N * alpha.

    Interior nodes only (distance to the cube boundary > 2 tau, so the ball
    lies inside the domain and C_tau(x) = rho(x) * Vol(B(0, tau))). Returns
    (interior_idx, counts, lo, hi).
    """
    pts = np.asarray(points, dtype=np.float64)
    n, d = pts.shape
    if not 0 < theta:
        raise GraphError("theta must be positive")
    margin = 2.0 * tau
    interior = np.flatnonzero(
        (pts.min(axis=1) > margin) & (pts.max(axis=1) < 1.0 - margin)
    )
    tree = cKDTree(pts)
    counts = np.array([
        len(tree.query_ball_point(pts[i], tau)) - 1 for i in interior
    ])
    rho = np.ones(len(interior)) if density is None else np.array(
        [density(pts[i]) for i in interior])
    c_tau = rho * _ball_volume(d) * tau ** d
    spread = theta + density_lip * tau
    lo = (1.0 - spread) * c_tau * n * alpha
    hi = (1.0 + spread) * c_tau * n * alpha
    return interior, counts, lo, hi


def graph_to_edgelist(g: Graph, path):
    """Write `n kind param` header then one `i j weight` line per edge, i<j."""
    coo = sparse.triu(g.weights, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{g.n} {g.kind} {format(g.param, '.17g')}\n")
        for i, j, w in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {format(w, '.17g')}\n")


def graph_from_edgelist(path) -> Graph:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise GraphError(f"{path}: bad edge-list header")
        n, kind, param = int(header[0]), header[1], float(header[2])
        rows, cols, vals = [], [], []
        for ln, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise GraphError(f"{path}: bad edge at line {ln}")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(float(parts[2]))
    return _finalize(n, np.array(rows, np.int64), np.array(cols, np.int64),
                     np.array(vals), kind, param)
