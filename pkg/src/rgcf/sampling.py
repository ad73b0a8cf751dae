"""Random graphs: popularity histograms, hidden-graph sampling and degree-based generation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError, GenerationError
from .graph import BipartiteGraph


class WeightTree:
    """Power-of-two padded sum tree over nonnegative leaf weights.

    Internal nodes are always recomputed as the sum of their two children, so
    zeroing a leaf and later writing back its old weight restores every node
    bit for bit.
    """

    def __init__(self, weights):
        weights = [float(w) for w in weights]
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValueError("weights must be finite and nonnegative")
        self.size = len(weights)
        cap = 1
        while cap < max(self.size, 1):
            cap *= 2
        self.capacity = cap
        tree = [0.0] * (2 * cap)
        tree[cap:cap + self.size] = weights
        for i in range(cap - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]
        self._tree = tree

    @property
    def total(self):
        return self._tree[1]

    def weight(self, i):
        return self._tree[self.capacity + i]

    def leaves(self):
        return self._tree[self.capacity:self.capacity + self.size]

    def set(self, i, w):
        tree = self._tree
        j = self.capacity + i
        tree[j] = w
        j >>= 1
        while j:
            tree[j] = tree[2 * j] + tree[2 * j + 1]
            j >>= 1

    def find(self, target):
        """Leaf whose cumulative weight interval contains ``target`` in [0, total)."""
        tree = self._tree
        j = 1
        cap = self.capacity
        while j < cap:
            left = tree[2 * j]
            if target < left:
                j = 2 * j
            else:
                target -= left
                # rounding can push target past a zero right subtree
                j = 2 * j + 1 if tree[2 * j + 1] > 0.0 else 2 * j
        return j - cap

    def copy(self):
        new = WeightTree.__new__(WeightTree)
        new.size, new.capacity, new._tree = self.size, self.capacity, list(self._tree)
        return new


@dataclass
class ItemHistogram:
    """Item weights ``pi_n = d_n ** gamma`` with a sum tree for sequential draws."""

    pi: np.ndarray
    gamma: float
    r: float
    tree: WeightTree

    @property
    def n_items(self):
        return len(self.pi)


def histogram_exponent(r, d_max):
    if r <= 0:
        raise ConfigurationError(f"rate r must be positive, got {r}")
    if r == 1:
        return 1.0
    if d_max <= 1:
        raise ConfigurationError(
            f"r={r} needs a maximum item degree >= 2 (got {d_max}): gamma = 1 + log r / log d_max"
        )
    # log2 keeps powers of two exact, e.g. r=1/2, d_max=1024 -> gamma=0.9, pi_max=512
    return 1.0 + math.log2(r) / math.log2(d_max)


def build_histogram(item_degrees, r=1.0):
    """Popularity histogram whose heaviest item has weight ``r * d_max``.

    ``item_degrees`` may be a degree array or a :class:`~rgcf.graph.DegreeStats`.
    """
    degrees = getattr(item_degrees, "item_degrees", item_degrees)
    d = np.asarray(degrees, dtype=np.float64)
    gamma = histogram_exponent(r, int(d.max(initial=0)))
    if gamma == 1.0:
        pi = d.copy()
    else:
        pi = np.zeros_like(d)
        pos = d > 0
        pi[pos] = np.exp2(gamma * np.log2(d[pos]))
    return ItemHistogram(pi=pi, gamma=gamma, r=float(r), tree=WeightTree(pi))


def draw_without_replacement(hist, k, exclude=(), rng=None):
    """Draw up to ``k`` distinct items proportionally to the current tree weights.

    Items in ``exclude`` and items already drawn have their weight zeroed for
    the session; every touched leaf is restored before returning. Fewer than
    ``k`` items come back when the remaining positive weight runs out.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    rng = np.random.default_rng(rng)
    tree = hist.tree if isinstance(hist, ItemHistogram) else hist
    touched = []
    for n in exclude:
        w = tree.weight(n)
        if w > 0.0:
            touched.append((n, w))
            tree.set(n, 0.0)
    out = []
    try:
        if k:
            for u in rng.random(k).tolist():
                total = tree.total
                if total <= 0.0:
                    break
                n = tree.find(u * total)
                touched.append((n, tree.weight(n)))
                tree.set(n, 0.0)
                out.append(n)
    finally:
        for n, w in reversed(touched):
            tree.set(n, w)
    return out


def user_stream(seed, t, m):
    """Stateless per-(epoch, user) random stream."""
    return np.random.default_rng([seed, t, m])


class HiddenGraphSample:
    """One draw of the hidden "considered" graph.

    Rows are stored user-major with items ascending; ``liked`` flags the
    edges that are also in the observed graph.
    """

    def __init__(self, indptr, items, liked, n_items, epoch=0):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.items = np.asarray(items, dtype=np.int64)
        self.liked = np.asarray(liked, dtype=bool)
        self.n_users = len(self.indptr) - 1
        self.n_items = int(n_items)
        self.epoch = epoch

    @property
    def n_edges(self):
        return int(self.items.size)

    @cached_property
    def users(self):
        return np.repeat(np.arange(self.n_users), np.diff(self.indptr))

    def row(self, m):
        s = slice(self.indptr[m], self.indptr[m + 1])
        return self.items[s], self.liked[s]

    def positives(self, m):
        items, liked = self.row(m)
        return items[liked]

    def negatives(self, m):
        items, liked = self.row(m)
        return items[~liked]

    @cached_property
    def item_major(self):
        """``(indptr, users, liked, edge_order)`` with users ascending per item."""
        order = np.argsort(self.items, kind="stable")
        indptr = np.zeros(self.n_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.items, minlength=self.n_items), out=indptr[1:])
        return indptr, self.users[order], self.liked[order], order

    def negative_counts(self):
        return np.bincount(self.items[~self.liked], minlength=self.n_items)

    def __eq__(self, other):
        if not isinstance(other, HiddenGraphSample):
            return NotImplemented
        return (
            self.n_items == other.n_items
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.liked, other.liked)
        )

    __hash__ = None


def sample_hidden_graph(graph, hist, seed, t=0):
    """Sample H: every user keeps its positives and gains ``d_m`` popularity-drawn negatives.

    Negatives per user are capped at ``N - d_m``; items with zero histogram
    weight are never drawn, so a row can come back shorter.
    """
    if hist.n_items != graph.n_items:
        raise ConfigurationError("histogram and graph have different item counts")
    tree = hist.tree
    counts = np.empty(graph.n_users, dtype=np.int64)
    chunks, flags = [], []
    for m in range(graph.n_users):
        pos = graph.row(m)
        d = pos.size
        neg = draw_without_replacement(tree, min(d, graph.n_items - d), pos.tolist(), user_stream(seed, t, m)) if d else []
        items = np.concatenate([pos, np.asarray(neg, dtype=np.int64)])
        liked = np.zeros(items.size, dtype=bool)
        liked[:d] = True
        order = np.argsort(items, kind="stable")
        chunks.append(items[order])
        flags.append(liked[order])
        counts[m] = items.size
    indptr = np.zeros(graph.n_users + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    items = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    liked = np.concatenate(flags) if flags else np.empty(0, dtype=bool)
    return HiddenGraphSample(indptr, items, liked, graph.n_items, epoch=t)


@dataclass(frozen=True)
class RatioTable:
    positives: np.ndarray
    negatives: np.ndarray  # mean sampled negatives per item
    ratio: np.ndarray  # +inf where no negatives were sampled

    def write(self, stream, item_ids):
        stream.write("# item_id\tpositives\tnegatives\tratio\n")
        for iid, p, q, r in zip(item_ids, self.positives.tolist(), self.negatives.tolist(), self.ratio.tolist()):
            stream.write(f"{iid}\t{p}\t{q:.9g}\t{r:.9g}\n")


def positive_negative_ratio(graph, samples):
    """Per-item ratio of observed edges to sampled negatives, averaged over samples."""
    if not samples:
        raise ValueError("need at least one hidden graph sample")
    return ratio_table(graph.item_degrees, np.mean([s.negative_counts() for s in samples], axis=0))


def ratio_table(item_degrees, mean_negatives):
    pos = np.asarray(item_degrees).astype(np.int64)
    neg = np.asarray(mean_negatives, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(neg > 0, pos / np.where(neg > 0, neg, 1.0), np.inf)
    return RatioTable(pos, neg, ratio)


@dataclass(frozen=True)
class DegreeDistributionSpec:
    """Degree law on the integer support ``[d_min, d_max]``.

    ``family`` is ``"power"`` (p(d) ~ d^-exponent), ``"cutoff"``
    (p(d) ~ d^-exponent exp(-d/cutoff)) or ``"empirical"`` (``weights`` over
    the support, one per degree).
    """

    family: str
    exponent: float = 1.0
    cutoff: float | None = None
    d_min: int = 1
    d_max: int = 100
    weights: tuple | None = None

    def __post_init__(self):
        if self.family not in ("power", "cutoff", "empirical"):
            raise ConfigurationError(f"unknown degree family {self.family!r}")
        if self.d_min < 0 or self.d_max < self.d_min:
            raise ConfigurationError("invalid support bounds")
        if self.family != "empirical" and self.exponent <= 0:
            raise ConfigurationError("exponent must be positive")
        if self.family == "cutoff" and not (self.cutoff and self.cutoff > 0):
            raise ConfigurationError("cutoff must be positive")
        if self.family == "empirical":
            if self.weights is None or len(self.weights) != self.d_max - self.d_min + 1:
                raise ConfigurationError("empirical weights must cover the support")
        if self.family != "empirical" and self.d_min == 0:
            raise ConfigurationError("power laws need d_min >= 1")

    @property
    def support(self):
        return np.arange(self.d_min, self.d_max + 1)

    def pmf(self):
        d = self.support.astype(np.float64)
        if self.family == "power":
            w = d ** -self.exponent
        elif self.family == "cutoff":
            w = d ** -self.exponent * np.exp(-d / self.cutoff)
        else:
            w = np.asarray(self.weights, dtype=np.float64)
        total = w.sum()
        if not total > 0 or np.any(w < 0):
            raise ConfigurationError("degree distribution does not normalize")
        return w / total

    @cached_property
    def _cdf(self):
        cdf = np.cumsum(self.pmf())
        cdf[-1] = 1.0
        return cdf

    def sample(self, rng, size=None):
        u = rng.random(size)
        return self.d_min + np.searchsorted(self._cdf, u, side="right")


def equalized_degrees(user_spec, item_spec, n_users, n_items, rng, max_redraws=10**6, batch=4096):
    """Draw i.i.d. degrees, redrawing one user and one item until the sums agree."""
    du = user_spec.sample(rng, n_users)
    dn = item_spec.sample(rng, n_items)
    su, sn = int(du.sum()), int(dn.sum())
    redraws = 0
    while su != sn:
        if redraws >= max_redraws:
            raise GenerationError(f"degree sums still differ ({su} vs {sn}) after {redraws} redraws")
        size = min(batch, max_redraws - redraws)
        ms = rng.integers(n_users, size=size).tolist()
        ns = rng.integers(n_items, size=size).tolist()
        new_us = user_spec.sample(rng, size).tolist()
        new_ns = item_spec.sample(rng, size).tolist()
        for m, n, new_u, new_n in zip(ms, ns, new_us, new_ns):
            su += new_u - int(du[m])
            sn += new_n - int(dn[n])
            du[m], dn[n] = new_u, new_n
            redraws += 1
            if su == sn:
                break
    return du, dn


def generate_graph_from_degrees(user_spec, item_spec, n_users, n_items, seed, max_redraws=10**6):
    """Configuration-model bipartite graph with i.i.d. degrees from the two specs.

    User and item half-edges are paired uniformly at random once the degree
    sums agree. Repeated pairs collapse to a single edge.
    """
    if n_users < 1 or n_items < 1:
        raise ConfigurationError("n_users and n_items must be positive")
    rng = np.random.default_rng(seed)
    du, dn = equalized_degrees(user_spec, item_spec, n_users, n_items, rng, max_redraws)
    user_stubs = np.repeat(np.arange(n_users), du)
    item_stubs = rng.permutation(np.repeat(np.arange(n_items), dn))
    return BipartiteGraph.from_edges(
        user_stubs, item_stubs, n_users, n_items,
        [f"u{m}" for m in range(n_users)], [f"i{n}" for n in range(n_items)],
    )
