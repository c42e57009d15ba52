import numpy as np
import pytest
from scipy import sparse

from conftest import line_graph, random_connected_graph
from glcert.data import Dataset
from glcert.graph import Graph
from glcert.solve import (ConvergenceError, SolverConfig,
                          UnsolvableComponentError, check_maximum_principle,
                          dense_oracle_solve, dirichlet_energy,
                          harmonic_extend, solution_to_csv)


def _ds_on(n, labels, mask):
    return Dataset(np.zeros((n, 2)), np.asarray(labels, float),
                   np.asarray(mask, bool), "t", {})


def test_cg_matches_dense_oracle(rng):
    for n in (10, 40, 120):
        g, ds = random_connected_graph(rng, n)
        sol = harmonic_extend(g, ds)
        ref = dense_oracle_solve(g, ds)
        assert np.max(np.abs(sol.u - ref.u)) <= 1e-8
        assert sol.residual_norm <= 1e-10 * np.linalg.norm(
            g.weights[np.ix_(~ds.labeled_mask, ds.labeled_mask)]
            @ ds.labels[ds.labeled_mask]) + 1e-300


def test_path_midpoint():
    g = line_graph([1.0, 1.0])
    ds = _ds_on(3, [0.0, 0.0, 1.0], [True, False, True])
    sol = harmonic_extend(g, ds)
    assert sol.u[1] == pytest.approx(0.5, abs=1e-12)
    assert sol.u[0] == 0.0 and sol.u[2] == 1.0


def test_star_weighted_mean():
    # center node 0, leaves 1..4 with distinct edge weights
    w = np.zeros((5, 5))
    wts = [1.0, 2.0, 3.0, 4.0]
    labels = [0.0, 0.2, 0.4, 0.6, 0.8]
    for leaf, wt in zip(range(1, 5), wts):
        w[0, leaf] = w[leaf, 0] = wt
    csr = sparse.csr_matrix(w)
    g = Graph(csr, np.asarray(csr.sum(axis=1)).ravel(), "custom", 0.0)
    ds = _ds_on(5, labels, [False, True, True, True, True])
    sol = harmonic_extend(g, ds)
    expect = np.dot(wts, labels[1:]) / sum(wts)
    assert sol.u[0] == pytest.approx(expect, abs=1e-12)


def test_maximum_principle_random(rng):
    g, ds = random_connected_graph(rng, 60)
    sol = harmonic_extend(g, ds)
    over, under = check_maximum_principle(sol, ds)
    assert over <= 1e-8 and under <= 1e-8


def test_dirichlet_energy_hand_value():
    g = line_graph([2.0, 3.0])
    u = np.array([0.0, 0.5, 1.0])
    # both orientations of each edge contribute
    assert dirichlet_energy(g, u) == pytest.approx(2 * (2 * 0.25 + 3 * 0.25))


def test_harmonic_solution_minimizes_energy(rng):
    g, ds = random_connected_graph(rng, 50)
    sol = harmonic_extend(g, ds)
    base = dirichlet_energy(g, sol.u)
    free = ~ds.labeled_mask
    for _ in range(20):
        v = sol.u.copy()
        v[free] += rng.normal(scale=0.05, size=free.sum())
        assert dirichlet_energy(g, v) >= base - 1e-12


def test_unsolvable_component_names_node():
    # two disjoint edges; labels only on the first component
    w = np.zeros((4, 4))
    w[0, 1] = w[1, 0] = 1.0
    w[2, 3] = w[3, 2] = 1.0
    csr = sparse.csr_matrix(w)
    g = Graph(csr, np.asarray(csr.sum(axis=1)).ravel(), "custom", 0.0)
    ds = _ds_on(4, [1.0, 0.0, 0.0, 0.0], [True, False, False, False])
    with pytest.raises(UnsolvableComponentError, match="node 2"):
        harmonic_extend(g, ds)


def test_all_labeled_short_circuit(rng):
    g, _ = random_connected_graph(rng, 12)
    ds = _ds_on(12, np.linspace(0, 1, 12), np.ones(12, bool))
    sol = harmonic_extend(g, ds)
    assert sol.iterations == 0 and sol.residual_norm == 0.0
    assert np.array_equal(sol.u, ds.labels)


def test_zero_rhs_short_circuit(rng):
    g, ds0 = random_connected_graph(rng, 30)
    ds = _ds_on(30, np.zeros(30), ds0.labeled_mask)
    sol = harmonic_extend(g, ds)
    assert sol.iterations == 0
    assert np.array_equal(sol.u, np.zeros(30))


def test_convergence_error(rng):
    g, ds = random_connected_graph(rng, 80)
    with pytest.raises(ConvergenceError) as exc:
        harmonic_extend(g, ds, SolverConfig(tol=1e-14, max_iter=1))
    assert exc.value.residual > 0


def test_no_preconditioner_agrees(rng):
    g, ds = random_connected_graph(rng, 40)
    a = harmonic_extend(g, ds)
    b = harmonic_extend(g, ds, SolverConfig(preconditioner="none"))
    assert np.max(np.abs(a.u - b.u)) <= 1e-8


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="ilu")


def test_solution_csv(tmp_path):
    g = line_graph([1.0, 1.0])
    ds = _ds_on(3, [0.0, 0.0, 1.0], [True, False, True])
    sol = harmonic_extend(g, ds)
    path = tmp_path / "sol.csv"
    solution_to_csv(sol, ds, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "node_index,u,labeled"
    assert lines[1] == "0,0,1"
    assert lines[2].startswith("1,0.5")
    assert lines[2].endswith(",0")
    assert len(lines) == 4
