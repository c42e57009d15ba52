import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from glcert.data import Dataset
from glcert.graph import Graph


def random_connected_graph(rng, n, labeled_frac=0.3):
    """Random symmetric weighted graph, guaranteed connected, plus a dataset
    carrying random labels in [0,1] on a random labeled subset."""
    while True:
        p = min(1.0, 4.0 * np.log(max(n, 2)) / n)
        mask = rng.uniform(size=(n, n)) < p
        w = np.where(mask, rng.uniform(0.1, 1.0, (n, n)), 0.0)
        w = np.triu(w, 1)
        w = w + w.T
        csr = sparse.csr_matrix(w)
        ncomp, _ = connected_components(csr, directed=False)
        if ncomp == 1:
            break
    deg = np.asarray(csr.sum(axis=1)).ravel()
    g = Graph(csr, deg, "custom", 0.0)
    n_lab = max(1, int(labeled_frac * n))
    lab = np.zeros(n, bool)
    lab[rng.choice(n, n_lab, replace=False)] = True
    if lab.all():
        lab[rng.integers(n)] = False
    labels = rng.uniform(0.0, 1.0, n)
    ds = Dataset(rng.normal(size=(n, 2)), labels, lab, "random", {})
    return g, ds


def line_graph(weights):
    """Path graph with the given consecutive edge weights."""
    n = len(weights) + 1
    rows = np.arange(n - 1)
    cols = rows + 1
    w = sparse.coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
    w = w + w.T
    deg = np.asarray(w.sum(axis=1)).ravel()
    return Graph(w.tocsr(), deg, "custom", 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
