"""Held-out evaluation: rank scores, classification error and degree-binned summaries."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError
from .graph import bin_bounds, log2_bins

PERCENTILES = (5, 25, 75, 95)
HIST_BINS = 20


def rank_score(n_prime, scores, absent):
    """Fraction of ``absent`` items scored strictly below the held-out item ``n_prime``.

    ``scores`` is indexed by item; ``absent`` lists the items without a
    training edge for this user and must contain ``n_prime``.
    """
    absent = np.asarray(absent, dtype=np.int64)
    if absent.size == 0 or not np.any(absent == n_prime):
        raise ContractError(f"held-out item {n_prime} is not among the absent items")
    scores = np.asarray(scores)
    return float(np.count_nonzero(scores[n_prime] > scores[absent])) / absent.size


def nearest_rank_percentile(values, p):
    """Smallest value with at least ``p`` percent of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("no values")
    rank = max(math.ceil(p / 100.0 * v.size), 1)
    return float(v[rank - 1])


@dataclass(frozen=True)
class BinSummary:
    lo: int
    hi: int
    count: int
    mean: float
    median: float
    percentiles: tuple

    def row(self):
        return [self.lo, self.hi, self.count, self.mean, self.median, *self.percentiles]


def group_by_degree(values, degrees):
    """Summaries of ``values`` over logarithmic degree bins [1], [2,3], [4,7], ..."""
    values = np.asarray(values, dtype=np.float64)
    bins = log2_bins(degrees)
    if values.size == 0:
        raise ValueError("no records to group")
    out = []
    for b in np.unique(bins):
        v = values[bins == b]
        lo, hi = bin_bounds(int(b))
        out.append(BinSummary(
            lo, hi, int(v.size), float(v.mean()), nearest_rank_percentile(v, 50),
            tuple(nearest_rank_percentile(v, p) for p in PERCENTILES),
        ))
    return out


@dataclass(frozen=True)
class ClassificationBin:
    lo: int
    hi: int
    count: int
    errors: int
    histogram: tuple

    @property
    def rate(self):
        return self.errors / self.count


def classification_error(like, user_degrees, threshold=0.5, n_hist=HIST_BINS):
    """Error of predicting "like" on held-out positives, per user-degree bin.

    A probability ``>= threshold`` counts as a correct like prediction. Each
    bin also carries the histogram of probabilities over ``n_hist`` equal
    bins on [0, 1]. Empty bins are omitted.
    """
    like = np.asarray(like, dtype=np.float64)
    bins = log2_bins(user_degrees)
    edges = np.linspace(0.0, 1.0, n_hist + 1)
    out = []
    for b in np.unique(bins):
        p = like[bins == b]
        lo, hi = bin_bounds(int(b))
        hist, _ = np.histogram(p, bins=edges)
        out.append(ClassificationBin(lo, hi, int(p.size), int(np.count_nonzero(p < threshold)), tuple(hist.tolist())))
    return out


@dataclass
class EvalReport:
    test: np.ndarray
    user_degrees: np.ndarray
    item_degrees: np.ndarray
    rank: dict = field(default_factory=dict)
    like: np.ndarray | None = None

    def summary(self):
        """``{mode: (mean, median)}`` of the rank scores."""
        return {mode: (float(v.mean()), nearest_rank_percentile(v, 50)) for mode, v in self.rank.items()}

    @property
    def error(self):
        if self.like is None or self.like.size == 0:
            return float("nan")
        return float(np.mean(self.like < 0.5))

    def by_user_bin(self):
        return {mode: group_by_degree(v, self.user_degrees) for mode, v in self.rank.items()}

    def by_item_bin(self):
        return {mode: group_by_degree(v, self.item_degrees) for mode, v in self.rank.items()}

    def classification(self):
        return [] if self.like is None else classification_error(self.like, self.user_degrees)

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        pct = "\t".join(f"p{p:02d}" for p in PERCENTILES)
        head = f"# mode\tbin_lo\tbin_hi\tcount\tmean\tmedian\t{pct}\n"
        for name, groups in (("rank_by_user_bin.tsv", self.by_user_bin()), ("rank_by_item_bin.tsv", self.by_item_bin())):
            with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
                fh.write(head)
                for mode, rows in groups.items():
                    for s in rows:
                        fh.write("\t".join([mode, *(_cell(x) for x in s.row())]) + "\n")
        cls = self.classification()
        with open(os.path.join(out_dir, "classification_by_user_bin.tsv"), "w", encoding="utf-8") as fh:
            fh.write("# bin_lo\tbin_hi\tcount\terrors\terror_rate\n")
            for c in cls:
                fh.write(f"{c.lo}\t{c.hi}\t{c.count}\t{c.errors}\t{_cell(c.rate)}\n")
        with open(os.path.join(out_dir, "like_histograms.tsv"), "w", encoding="utf-8") as fh:
            fh.write("# bin_lo\tbin_hi\tprob_lo\tprob_hi\tcount\n")
            for c in cls:
                n = len(c.histogram)
                for j, cnt in enumerate(c.histogram):
                    fh.write(f"{c.lo}\t{c.hi}\t{_cell(j / n)}\t{_cell((j + 1) / n)}\t{cnt}\n")


def _cell(x):
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def evaluate(train, test, scorers, like=None):
    """Rank every held-out edge under each scoring function.

    Parameters
    ----------
    train : BipartiteGraph
    test : (T, 2) array of (user, item) held-out edges
    scorers : dict mapping a mode name to ``f(m) -> scores over all items``
    like : optional ``f(users, items) -> probabilities`` for the classification report
    """
    test = np.asarray(test, dtype=np.int64).reshape(-1, 2)
    all_items = np.arange(train.n_items)
    rank = {mode: np.empty(len(test)) for mode in scorers}
    for j, (m, n) in enumerate(test.tolist()):
        absent = np.setdiff1d(all_items, train.row(m), assume_unique=True)
        for mode, fn in scorers.items():
            rank[mode][j] = rank_score(n, fn(m), absent)
    return EvalReport(
        test=test,
        user_degrees=train.user_degrees[test[:, 0]],
        item_degrees=train.item_degrees[test[:, 1]],
        rank=rank,
        like=None if like is None else np.asarray(like(test[:, 0], test[:, 1]), dtype=np.float64),
    )
