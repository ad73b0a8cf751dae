"""Like probabilities and the three ranking scores."""

from __future__ import annotations

import enum
import math

import numpy as np

from .exceptions import ConfigurationError
from .model import edge_moments, sigmoid


class ScoreMode(str, enum.Enum):
    LIKE = "like"
    POPULARITY = "popularity"
    POPULARITY_TIMES_LIKE = "popularity_times_like"

    @property
    def uses_popularity(self):
        return self is not ScoreMode.LIKE


def probit_logistic(mean, var):
    """MacKay's approximation to the logistic-Gaussian integral."""
    mean = np.asarray(mean, dtype=np.float64)
    return sigmoid(mean / np.sqrt(1.0 + math.pi * np.asarray(var, dtype=np.float64) / 8.0))


def like_probability(q, users, items):
    """``p(g=1 | h=1)`` for each (user, item) pair, vectorized over arrays."""
    mom = q.edge_moments(np.asarray(users), np.asarray(items))
    return probit_logistic(mom.mean, mom.var)


def user_like_probabilities(q, m):
    """Like probability of user ``m`` for every item."""
    mom = edge_moments(
        q.user_mean[m], q.user_prec[m], q.item_mean, q.item_prec,
        q.user_bias_mean[m], q.user_bias_prec[m], q.item_bias_mean, q.item_bias_prec,
    )
    return probit_logistic(mom.mean, mom.var)


def score(q, users, items, mode, hist=None):
    mode = ScoreMode(mode)
    if mode.uses_popularity and hist is None:
        raise ConfigurationError(f"score mode {mode.value!r} needs an item histogram")
    if mode is ScoreMode.POPULARITY:
        return np.asarray(hist.pi, dtype=np.float64)[np.asarray(items)]
    like = like_probability(q, users, items)
    if mode is ScoreMode.LIKE:
        return like
    return hist.pi[np.asarray(items)] * like


def user_scores(q, m, mode, hist=None):
    """Scores of user ``m`` against the whole catalogue."""
    mode = ScoreMode(mode)
    if mode.uses_popularity and hist is None:
        raise ConfigurationError(f"score mode {mode.value!r} needs an item histogram")
    if mode is ScoreMode.POPULARITY:
        return np.asarray(hist.pi, dtype=np.float64).copy()
    like = user_like_probabilities(q, m)
    return like if mode is ScoreMode.LIKE else hist.pi * like


def rank_by_score(scores, candidates):
    """Candidates ordered by descending score, ties by ascending index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    s = np.asarray(scores)[candidates]
    order = np.lexsort((candidates, -s))
    return candidates[order], s[order]


def rank_items(q, m, train, mode, hist=None, scores=None):
    """``[(item, score), ...]`` over the items user ``m`` has no training edge to."""
    if scores is None:
        scores = user_scores(q, m, mode, hist)
    absent = np.setdiff1d(np.arange(train.n_items), train.row(m), assume_unique=True)
    items, s = rank_by_score(scores, absent)
    return list(zip(items.tolist(), s.tolist()))
