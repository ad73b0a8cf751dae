"""Bayesian Personalized Ranking baselines (matrix factorization with item biases).

The update is the usual BPR-MF stochastic gradient ascent step on
``ln sigmoid(s_mi - s_mj)`` with an L2 penalty, where ``s_mn = u_m . v_n + b_n``.
User biases cancel in the pairwise difference and are omitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .model import Posterior, read_posterior, write_posterior
from .sampling import build_histogram

SAMPLING_MODES = ("uniform", "popularity")


@dataclass(frozen=True)
class BprConfig:
    n_components: int = 20
    learning_rate: float = 0.05
    regularization: float = 0.01
    n_epochs: int = 100
    sampling: str = "uniform"
    seed: int = 0
    init_scale: float = 0.1

    def validate(self):
        if self.n_components < 1:
            raise ConfigurationError("n_components must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.regularization < 0:
            raise ConfigurationError("regularization must be nonnegative")
        if self.n_epochs < 0:
            raise ConfigurationError("n_epochs must be nonnegative")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigurationError(f"sampling must be one of {SAMPLING_MODES}")
        return self


@dataclass
class BprModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    item_bias: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()

    @property
    def n_users(self):
        return self.user_factors.shape[0]

    @property
    def n_items(self):
        return self.item_factors.shape[0]

    @classmethod
    def initialize(cls, n_users, n_items, n_components, rng=None, scale=0.1, user_ids=(), item_ids=()):
        rng = np.random.default_rng(rng)
        return cls(
            rng.normal(0.0, scale, (n_users, n_components)),
            rng.normal(0.0, scale, (n_items, n_components)),
            np.zeros(n_items),
            tuple(user_ids),
            tuple(item_ids),
        )

    def copy(self):
        return BprModel(self.user_factors.copy(), self.item_factors.copy(), self.item_bias.copy(),
                        self.user_ids, self.item_ids)

    def user_scores(self, m):
        return self.item_factors @ self.user_factors[m] + self.item_bias


def bpr_score(model, m, n):
    """``u_m . v_n + b_n``; broadcasts over index arrays."""
    m, n = np.asarray(m), np.asarray(n)
    return np.sum(model.user_factors[m] * model.item_factors[n], axis=-1) + model.item_bias[n]


def triple_objective(model, m, i, j, regularization):
    """Regularized BPR criterion of one sampled triple."""
    u, vi, vj = model.user_factors[m], model.item_factors[i], model.item_factors[j]
    bi, bj = model.item_bias[i], model.item_bias[j]
    x = u @ (vi - vj) + bi - bj
    penalty = u @ u + vi @ vi + vj @ vj + bi * bi + bj * bj
    return -math.log1p(math.exp(-x)) - 0.5 * regularization * penalty


def bpr_step(model, m, i, j, learning_rate, regularization):
    """One gradient ascent step on the triple (m liked i, did not like j)."""
    U, V, b = model.user_factors, model.item_factors, model.item_bias
    u = U[m].copy()
    vi, vj = V[i], V[j]
    diff = vi - vj
    x = float(u @ diff) + b[i] - b[j]
    # sigmoid(-x), derivative of ln sigmoid(x)
    z = 1.0 / (1.0 + math.exp(x)) if x > -500 else 1.0
    lr, reg = learning_rate, regularization
    U[m] += lr * (z * diff - reg * u)
    V[i] += lr * (z * u - reg * vi)
    V[j] += lr * (-z * u - reg * vj)
    b[i] += lr * (z - reg * b[i])
    b[j] += lr * (-z - reg * b[j])


class NegativeSampler:
    """Draws an item without a training edge for a user, uniformly or by popularity."""

    def __init__(self, graph, mode, rng, max_rejections=1000):
        self.graph = graph
        self.mode = mode
        self.rng = rng
        self.max_rejections = max_rejections
        self._rows = [set(graph.row(m).tolist()) for m in range(graph.n_users)]
        if mode == "popularity":
            self.hist = build_histogram(graph.item_degrees, 1.0)
            pi = self.hist.pi
            total = self.hist.tree.total
            # users with nothing left to draw once their positives are removed
            self._exhausted = np.array(
                [total - pi[graph.row(m)].sum() <= 0.0 for m in range(graph.n_users)]
            )
        else:
            self._exhausted = graph.user_degrees >= graph.n_items

    def draw(self, m):
        """A negative item for ``m``, or ``None`` when every candidate is liked."""
        if self._exhausted[m]:
            return None
        row = self._rows[m]
        rng = self.rng
        for _ in range(self.max_rejections):
            if self.mode == "uniform":
                j = int(rng.integers(self.graph.n_items))
            else:
                tree = self.hist.tree
                j = tree.find(rng.random() * tree.total)
            if j not in row:
                return j
        return self._exact(m)

    def _exact(self, m):
        absent = np.setdiff1d(np.arange(self.graph.n_items), self.graph.row(m), assume_unique=True)
        if self.mode == "uniform":
            return int(self.rng.choice(absent))
        w = self.hist.pi[absent]
        return int(self.rng.choice(absent, p=w / w.sum()))


def bpr_train(graph, config, model=None):
    """Fit a BPR model with ``n_epochs * n_edges`` sampled triples."""
    cfg = config.validate()
    if graph.n_edges == 0:
        raise ConfigurationError("cannot train on an empty graph")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = BprModel.initialize(graph.n_users, graph.n_items, cfg.n_components, rng,
                                    cfg.init_scale, graph.user_ids, graph.item_ids)
    sampler = NegativeSampler(graph, cfg.sampling, rng)
    users, items = graph.edges()
    for _ in range(cfg.n_epochs):
        for e in rng.integers(graph.n_edges, size=graph.n_edges).tolist():
            m, i = int(users[e]), int(items[e])
            j = sampler.draw(m)
            if j is not None:
                bpr_step(model, m, i, j, cfg.learning_rate, cfg.regularization)
    return model


def _as_posterior(model):
    n_users, k = model.user_factors.shape
    n_items = model.n_items
    inf = np.inf
    return Posterior(
        model.user_factors, np.full((n_users, k), inf), np.zeros(n_users), np.full(n_users, inf),
        model.item_factors, np.full((n_items, k), inf), model.item_bias, np.full(n_items, inf),
        tau={}, user_ids=model.user_ids, item_ids=model.item_ids,
    )


def write_bpr(model, stream):
    """Same layout as the posterior file; infinite precisions mark point estimates."""
    write_posterior(_as_posterior(model), stream, kind="bpr")


def read_bpr(stream):
    q, kind = read_posterior(stream)
    if kind != "bpr":
        raise ValueError(f"expected a bpr model file, found {kind!r}")
    return bpr_from_posterior(q)


def bpr_from_posterior(q):
    return BprModel(q.user_mean, q.item_mean, q.item_bias_mean, q.user_ids, q.item_ids)
