"""Harmonic extension: minimize the graph Dirichlet energy subject to labels.

The minimizer satisfies L u = 0 at unlabeled nodes with u pinned to the
labels elsewhere, i.e. the block system

    L_II u_I = W_IB l_B,   L_II = D_I - W_II

with D the full degree matrix. L_II is symmetric positive definite whenever
every unlabeled component touches a labeled node, so the system is solved by
Jacobi-preconditioned conjugate gradients; a dense factorization doubles as
the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .data import Dataset
from .graph import Graph

__all__ = [
    "SolverConfig",
    "HarmonicSolution",
    "SolveError",
    "UnsolvableComponentError",
    "ConvergenceError",
    "harmonic_extend",
    "dense_oracle_solve",
    "check_maximum_principle",
    "dirichlet_energy",
    "solution_to_csv",
]


class SolveError(RuntimeError):
    pass


class UnsolvableComponentError(SolveError):
    """An unlabeled connected component has no labeled node."""


class ConvergenceError(SolveError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10          # relative residual target
    max_iter: int | None = None  # default 10*N
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass(frozen=True)
class HarmonicSolution:
    u: np.ndarray
    iterations: int
    residual_norm: float
    solver: str  # "cg" or "dense"

    def __post_init__(self):
        a = np.asarray(self.u, dtype=np.float64)
        a.flags.writeable = False
        object.__setattr__(self, "u", a)


def _partition(g: Graph, ds: Dataset):
    if g.n != ds.n:
        raise SolveError("graph and dataset sizes differ")
    if ds.n_labeled < 1:
        raise SolveError("at least one labeled node is required")
    labeled = np.flatnonzero(ds.labeled_mask)
    unlabeled = np.flatnonzero(~ds.labeled_mask)
    return labeled, unlabeled


def _check_connectivity(g: Graph, ds: Dataset, unlabeled):
    ncomp, comp = connected_components(g.weights, directed=False)
    reachable = np.zeros(ncomp, bool)
    reachable[np.unique(comp[ds.labeled_mask])] = True
    bad = unlabeled[~reachable[comp[unlabeled]]]
    if bad.size:
        raise UnsolvableComponentError(
            f"unlabeled node {bad[0]} lies in a component with no labeled node"
        )


def _blocks(g: Graph, ds: Dataset, labeled, unlabeled):
    w = g.weights
    w_ii = w[np.ix_(unlabeled, unlabeled)]
    w_ib = w[np.ix_(unlabeled, labeled)]
    d_i = g.degrees[unlabeled]
    l_ii = sparse.diags(d_i) - w_ii
    rhs = w_ib @ ds.labels[labeled]
    return l_ii.tocsr(), rhs, d_i


class _PCG:
    """Plain conjugate gradients with an optional diagonal preconditioner.

    Tracks the true (unpreconditioned) residual so the returned norm is a
    certificate of ||A x - b||.
    """

    def __init__(self, a, diag, tol, max_iter, use_jacobi):
        self.a = a
        self.tol = tol
        self.max_iter = max_iter
        if use_jacobi:
            if np.any(diag <= 0):
                raise SolveError("zero-degree unlabeled node; graph is disconnected")
            self.minv = 1.0 / diag
        else:
            self.minv = None

    def solve(self, b):
        x = np.zeros_like(b)
        r = b.copy()
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return x, 0, 0.0
        target = self.tol * bnorm
        z = r * self.minv if self.minv is not None else r
        p = z.copy()
        rz = r @ z
        for it in range(1, self.max_iter + 1):
            ap = self.a @ p
            alpha = rz / (p @ ap)
            x += alpha * p
            r -= alpha * ap
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                return x, it, rnorm
            z = r * self.minv if self.minv is not None else r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise ConvergenceError(
            f"conjugate gradients: residual {rnorm:.3e} after {self.max_iter} "
            f"iterations (target {target:.3e})", rnorm,
        )


def harmonic_extend(g: Graph, ds: Dataset, cfg: SolverConfig = SolverConfig()):
    """Label-constrained harmonic extension by preconditioned CG.

    Returns a solution with u equal to the labels at labeled nodes exactly
    and residual_norm <= tol * ||rhs|| on the unlabeled block.
    """
    labeled, unlabeled = _partition(g, ds)
    u = ds.labels.astype(np.float64).copy()
    u[unlabeled] = 0.0
    if unlabeled.size == 0:
        return HarmonicSolution(u, 0, 0.0, "cg")
    _check_connectivity(g, ds, unlabeled)
    l_ii, rhs, d_i = _blocks(g, ds, labeled, unlabeled)
    max_iter = cfg.max_iter if cfg.max_iter is not None else 10 * g.n
    pcg = _PCG(l_ii, d_i, cfg.tol, max_iter, cfg.preconditioner == "jacobi")
    x, iters, rnorm = pcg.solve(rhs)
    u[unlabeled] = x
    return HarmonicSolution(u, iters, rnorm, "cg")


DENSE_ORACLE_MAX_N = 2000


def dense_oracle_solve(g: Graph, ds: Dataset):
    """Direct dense factorization of the same block system (test oracle)."""
    if g.n > DENSE_ORACLE_MAX_N:
        raise SolveError(f"dense oracle limited to {DENSE_ORACLE_MAX_N} nodes")
    labeled, unlabeled = _partition(g, ds)
    u = ds.labels.astype(np.float64).copy()
    u[unlabeled] = 0.0
    if unlabeled.size == 0:
        return HarmonicSolution(u, 0, 0.0, "dense")
    _check_connectivity(g, ds, unlabeled)
    l_ii, rhs, _ = _blocks(g, ds, labeled, unlabeled)
    try:
        x = np.linalg.solve(l_ii.toarray(), rhs)
    except np.linalg.LinAlgError as exc:
        raise SolveError(f"singular unlabeled block: {exc}") from exc
    resid = np.linalg.norm(l_ii @ x - rhs)
    u[unlabeled] = x
    return HarmonicSolution(u, 1, float(resid), "dense")


def check_maximum_principle(sol: HarmonicSolution, ds: Dataset):
    """Worst overshoot above max label and undershoot below min label,
    both over unlabeled nodes; a converged solution keeps both <= 1e-8."""
    labels = ds.labels[ds.labeled_mask]
    free = sol.u[~ds.labeled_mask]
    if free.size == 0:
        return 0.0, 0.0
    over = max(0.0, float(free.max() - labels.max()))
    under = max(0.0, float(labels.min() - free.min()))
    return over, under


def dirichlet_energy(g: Graph, u):
    """E(u) = sum over ordered pairs of W_xy (u(x) - u(y))^2."""
    u = np.asarray(u, dtype=np.float64)
    coo = g.weights.tocoo()
    diff = u[coo.row] - u[coo.col]
    return float(np.dot(coo.data, diff * diff))


def solution_to_csv(sol: HarmonicSolution, ds: Dataset, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("node_index,u,labeled\n")
        for i in range(ds.n):
            fh.write(
                f"{i},{format(sol.u[i], '.17g')},{1 if ds.labeled_mask[i] else 0}\n"
            )
