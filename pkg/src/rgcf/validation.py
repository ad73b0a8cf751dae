"""Input validation shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sp

from .graph import BipartiteGraph


def check_graph(X, require_edges=True):
    """Coerce ``X`` to a :class:`BipartiteGraph`.

    Accepts a graph, a scipy sparse matrix or a dense 2-D array; any nonzero
    entry is an edge. Negative or non-finite entries are rejected.
    """
    graph = X if isinstance(X, BipartiteGraph) else _from_matrix(X)
    if require_edges and graph.n_edges == 0:
        raise ValueError("the interaction graph has no edges")
    return graph


def _from_matrix(X):
    if sp.issparse(X):
        A = sp.coo_matrix(X)
        data = A.data
        rows, cols = A.row, A.col
    else:
        A = np.asarray(X)
        if A.ndim != 2:
            raise ValueError(f"expected a 2-D interaction matrix, got shape {A.shape}")
        rows, cols = np.nonzero(A)
        data = A[rows, cols]
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        raise ValueError("interaction matrix must be finite and nonnegative")
    keep = data != 0
    return BipartiteGraph.from_edges(rows[keep], cols[keep], A.shape[0], A.shape[1])


def check_pairs(users, items, n_users, n_items):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    users, items = np.broadcast_arrays(users, items)
    if users.size and (users.min() < 0 or users.max() >= n_users):
        raise IndexError("user index out of range")
    if items.size and (items.min() < 0 or items.max() >= n_items):
        raise IndexError("item index out of range")
    return users, items


def check_edges(X, n_users, n_items):
    """Held-out edges as an ``(T, 2)`` integer array."""
    E = np.asarray(X, dtype=np.int64)
    if E.ndim != 2 or E.shape[1] != 2:
        raise ValueError("held-out edges must have shape (n, 2)")
    check_pairs(E[:, 0], E[:, 1], n_users, n_items)
    return E


def check_seed(random_state):
    """Integer seed from ``None``, an int, or a numpy generator."""
    if random_state is None:
        return int(np.random.SeedSequence().generate_state(1)[0])
    if isinstance(random_state, numbers.Integral):
        if random_state < 0:
            raise ValueError("random_state must be nonnegative")
        return int(random_state)
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2**32))
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(2**32 - 1))
    raise ValueError(f"{random_state!r} cannot be used to seed a random stream")
