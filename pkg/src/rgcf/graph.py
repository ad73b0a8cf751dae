"""Bipartite user-item graphs: ingestion, degree statistics and splitting."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

from .exceptions import GraphParseError


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


class BipartiteGraph:
    """Positive-only interaction graph between ``n_users`` users and ``n_items`` items.

    Edges are stored as a user-major CSR structure whose rows are sorted by
    item index, so membership queries are a binary search over one row.
    Instances are immutable.
    """

    def __init__(self, indptr, indices, n_items, user_ids=None, item_ids=None):
        self.indptr = _frozen(indptr, np.int64)
        self.indices = _frozen(indices, np.int64)
        self.n_users = len(self.indptr) - 1
        self.n_items = int(n_items)
        if user_ids is None:
            user_ids = [str(m) for m in range(self.n_users)]
        if item_ids is None:
            item_ids = [str(n) for n in range(self.n_items)]
        self.user_ids = tuple(user_ids)
        self.item_ids = tuple(item_ids)
        if len(self.user_ids) != self.n_users or len(self.item_ids) != self.n_items:
            raise ValueError("id lists do not match graph dimensions")

    @classmethod
    def from_edges(cls, users, items, n_users=None, n_items=None, user_ids=None, item_ids=None):
        """Build a graph from parallel index arrays; duplicate pairs collapse."""
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if n_users is None:
            n_users = len(user_ids) if user_ids is not None else int(users.max(initial=-1)) + 1
        if n_items is None:
            n_items = len(item_ids) if item_ids is not None else int(items.max(initial=-1)) + 1
        if users.size and (users.min() < 0 or users.max() >= n_users):
            raise ValueError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= n_items):
            raise ValueError("item index out of range")
        keys = np.unique(users * max(n_items, 1) + items)
        u, i = np.divmod(keys, max(n_items, 1))
        indptr = np.zeros(n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=n_users), out=indptr[1:])
        return cls(indptr, i, n_items, user_ids, item_ids)

    @property
    def n_edges(self):
        return int(self.indices.size)

    @cached_property
    def user_degrees(self):
        return _frozen(np.diff(self.indptr), np.int64)

    @cached_property
    def item_degrees(self):
        return _frozen(np.bincount(self.indices, minlength=self.n_items), np.int64)

    @cached_property
    def _item_major(self):
        users = np.repeat(np.arange(self.n_users), self.user_degrees)
        order = np.argsort(self.indices, kind="stable")
        indptr = np.zeros(self.n_items + 1, dtype=np.int64)
        np.cumsum(self.item_degrees, out=indptr[1:])
        return _frozen(indptr, np.int64), _frozen(users[order], np.int64)

    def row(self, m):
        """Items liked by user ``m`` in ascending order."""
        return self.indices[self.indptr[m]:self.indptr[m + 1]]

    def column(self, n):
        """Users who liked item ``n`` in ascending order."""
        indptr, users = self._item_major
        return users[indptr[n]:indptr[n + 1]]

    def has_edge(self, m, n):
        row = self.row(m)
        k = np.searchsorted(row, n)
        return bool(k < row.size and row[k] == n)

    def edges(self):
        """Return ``(users, items)`` index arrays in user-major order."""
        return np.repeat(np.arange(self.n_users), self.user_degrees), self.indices.copy()

    def to_csr(self):
        data = np.ones(self.n_edges, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_users, self.n_items))

    def user_index(self):
        return {uid: m for m, uid in enumerate(self.user_ids)}

    def item_index(self):
        return {iid: n for n, iid in enumerate(self.item_ids)}

    def __eq__(self, other):
        if not isinstance(other, BipartiteGraph):
            return NotImplemented
        return (
            self.n_items == other.n_items
            and self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None

    def __repr__(self):
        return f"BipartiteGraph(n_users={self.n_users}, n_items={self.n_items}, n_edges={self.n_edges})"


def load_edges(source: TextIO | Iterable[str]):
    """Parse a whitespace-separated ``user item`` edge list.

    Lines starting with ``#`` and blank lines are skipped. Ids are mapped to
    dense indices in order of first appearance.

    Returns
    -------
    graph : BipartiteGraph
    n_duplicates : int
        Number of repeated edges that were dropped.
    """
    user_index, item_index = {}, {}
    users, items = [], []
    for lineno, line in enumerate(source, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) != 2:
            raise GraphParseError(lineno, line.rstrip("\n"))
        u, i = tokens
        users.append(user_index.setdefault(u, len(user_index)))
        items.append(item_index.setdefault(i, len(item_index)))
    graph = BipartiteGraph.from_edges(
        users, items, len(user_index), len(item_index), list(user_index), list(item_index)
    )
    return graph, len(users) - graph.n_edges


def read_edges(path):
    with open(path, encoding="utf-8") as fh:
        return load_edges(fh)


def write_edges(graph, stream, edges=None):
    """Write ``graph`` (or an explicit ``(users, items)`` pair) as an edge list."""
    users, items = graph.edges() if edges is None else edges
    uid, iid = graph.user_ids, graph.item_ids
    for m, n in zip(np.asarray(users).tolist(), np.asarray(items).tolist()):
        stream.write(f"{uid[m]}\t{iid[n]}\n")


def format_edges(graph):
    buf = io.StringIO()
    write_edges(graph, buf)
    return buf.getvalue()


def log2_bins(degrees):
    """Bin index ``floor(log2 d)`` per degree; degree 0 maps to -1."""
    d = np.asarray(degrees, dtype=np.int64)
    out = np.full(d.shape, -1, dtype=np.int64)
    pos = d > 0
    # frexp is exact for integers, unlike floor(log2(d))
    out[pos] = np.frexp(d[pos].astype(np.float64))[1] - 1
    return out


def bin_bounds(b):
    return (0, 0) if b < 0 else (1 << b, (1 << (b + 1)) - 1)


def degree_histogram(degrees):
    """Counts per logarithmic degree bin as ``[(lo, hi, count), ...]``."""
    bins = log2_bins(degrees)
    return [(*bin_bounds(b), int(c)) for b, c in zip(*np.unique(bins, return_counts=True))]


@dataclass(frozen=True)
class DegreeStats:
    user_degrees: np.ndarray
    item_degrees: np.ndarray
    mu: float
    nu: float
    d_max: int
    user_histogram: list = field(default_factory=list)
    item_histogram: list = field(default_factory=list)

    @property
    def density(self):
        """|E| / (M N), which both ``mu / N`` and ``nu / M`` must equal."""
        m, n = len(self.user_degrees), len(self.item_degrees)
        return 0.0 if m == 0 or n == 0 else float(self.user_degrees.sum()) / (m * n)


def degree_stats(graph):
    n_edges = graph.n_edges
    mu = n_edges / graph.n_users if graph.n_users else 0.0
    nu = n_edges / graph.n_items if graph.n_items else 0.0
    return DegreeStats(
        user_degrees=graph.user_degrees,
        item_degrees=graph.item_degrees,
        mu=mu,
        nu=nu,
        d_max=int(graph.item_degrees.max(initial=0)),
        user_histogram=degree_histogram(graph.user_degrees),
        item_histogram=degree_histogram(graph.item_degrees),
    )


@dataclass(frozen=True)
class SplitResult:
    train: BipartiteGraph
    test: np.ndarray  # (T, 2) array of (user, item) indices
    excluded_users: np.ndarray

    def write(self, train_stream, test_stream, excluded_stream=None):
        write_edges(self.train, train_stream)
        write_edges(self.train, test_stream, (self.test[:, 0], self.test[:, 1]))
        if excluded_stream is not None:
            for m in self.excluded_users.tolist():
                excluded_stream.write(f"{self.train.user_ids[m]}\n")


def leave_one_out_split(graph, seed):
    """Hold out one uniformly chosen edge for every user of degree >= 2.

    Users with fewer than two edges keep them in ``train`` and are reported in
    ``excluded_users``. The training graph shares the id maps of ``graph``.
    """
    rng = np.random.default_rng(seed)
    deg = graph.user_degrees
    eligible = np.flatnonzero(deg >= 2)
    # one variate per user keeps choices independent of other users' degrees
    offsets = np.floor(rng.random(graph.n_users) * np.maximum(deg, 1)).astype(np.int64)
    held_pos = graph.indptr[eligible] + offsets[eligible]
    keep = np.ones(graph.n_edges, dtype=bool)
    keep[held_pos] = False
    users, items = graph.edges()
    train = BipartiteGraph.from_edges(
        users[keep], items[keep], graph.n_users, graph.n_items, graph.user_ids, graph.item_ids
    )
    test = np.column_stack([eligible, graph.indices[held_pos]]).astype(np.int64)
    return SplitResult(train, test.reshape(-1, 2), np.flatnonzero(deg < 2))
