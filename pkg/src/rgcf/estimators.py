"""scikit-learn style estimators wrapping the training routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bpr import BprConfig, bpr_score, bpr_train
from .evaluation import rank_score
from .inference import TrainConfig, VBTrainer
from .prediction import like_probability, rank_by_score, score, user_scores
from .sampling import build_histogram
from .validation import check_edges, check_graph, check_pairs, check_seed


class _RankingMixin:
    """Recommendation lists and rank-score evaluation on top of ``score_items``."""

    def recommend(self, user, k=10, mode=None, exclude_seen=True):
        """Top ``k`` items for ``user`` as ``(items, scores)``, best first."""
        check_is_fitted(self)
        scores = self.score_items(user) if mode is None else self.score_items(user, mode)
        candidates = np.arange(self.train_graph_.n_items)
        if exclude_seen:
            candidates = np.setdiff1d(candidates, self.train_graph_.row(user), assume_unique=True)
        items, s = rank_by_score(scores, candidates)
        return items[:k], s[:k]

    def rank_scores(self, X, mode=None):
        """Rank score of every held-out ``(user, item)`` edge in ``X``."""
        check_is_fitted(self)
        g = self.train_graph_
        E = check_edges(X, g.n_users, g.n_items)
        all_items = np.arange(g.n_items)
        out = np.empty(len(E))
        for j, (m, n) in enumerate(E.tolist()):
            scores = self.score_items(m) if mode is None else self.score_items(m, mode)
            out[j] = rank_score(n, scores, np.setdiff1d(all_items, g.row(m), assume_unique=True))
        return out

    def score(self, X, y=None):
        """Mean rank score of held-out edges (0.5 is random guessing)."""
        return float(self.rank_scores(X).mean())


class RandomGraphVB(_RankingMixin, BaseEstimator):
    """One-class matrix factorization learned by variational Bayes over sampled hidden graphs.

    Parameters
    ----------
    n_components : int
        Latent dimension K.
    alpha, beta : float
        Shape and rate of the Gamma hyperprior on every precision.
    r : float
        Negative-sampling rate of the most popular item; 1 samples negatives
        in proportion to item degree.
    max_iter : int
        Number of sampled hidden graphs (iterations).
    t_eps : int
        Warm-up iterations with step size 1.
    t_tau : int
        Iteration after which the precisions are re-estimated.
    kappa : int or None
        If set, user and item vectors are refit ``kappa`` coordinates at a time.
    clamp_user_bias : bool
        Pin user biases at zero.
    block_count : int
        Number of item blocks in the message-passing simulation.
    random_state : int, numpy Generator or None
    n_jobs : int
        Threads for the per-vertex loops.
    track_elbo : bool
        Evaluate the objective on each sample and keep it in ``history_``.

    Attributes
    ----------
    posterior_ : Posterior
    histogram_ : ItemHistogram
    history_ : list of IterationRecord
    train_graph_ : BipartiteGraph
    """

    def __init__(self, n_components=20, alpha=0.01, beta=0.01, r=0.5, max_iter=100, t_eps=10, t_tau=3,
                 kappa=None, clamp_user_bias=True, block_count=1, step_exponent=0.6, init_scale=0.1,
                 random_state=None, n_jobs=1, track_elbo=True):
        self.n_components = n_components
        self.alpha = alpha
        self.beta = beta
        self.r = r
        self.max_iter = max_iter
        self.t_eps = t_eps
        self.t_tau = t_tau
        self.kappa = kappa
        self.clamp_user_bias = clamp_user_bias
        self.block_count = block_count
        self.step_exponent = step_exponent
        self.init_scale = init_scale
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.track_elbo = track_elbo

    def _config(self):
        return TrainConfig(
            n_components=self.n_components, alpha=self.alpha, beta=self.beta, r=self.r,
            max_iter=self.max_iter, t_eps=self.t_eps, t_tau=self.t_tau, kappa=self.kappa,
            clamp_user_bias=self.clamp_user_bias, seed=check_seed(self.random_state),
            block_count=self.block_count, step_exponent=self.step_exponent,
            init_scale=self.init_scale, n_jobs=self.n_jobs,
        ).validate()

    def fit(self, X, y=None):
        graph = check_graph(X)
        trainer = VBTrainer(graph, self._config())
        self.history_ = []
        trainer.run(self.history_.append, self.track_elbo)
        self.posterior_ = trainer.posterior
        self.histogram_ = trainer.histogram
        self.train_graph_ = graph
        self.config_ = trainer.config
        return self

    def predict_proba(self, users, items):
        """Probability that each user likes each item, given that it was considered."""
        check_is_fitted(self)
        u, i = check_pairs(users, items, self.posterior_.n_users, self.posterior_.n_items)
        return like_probability(self.posterior_, u, i)

    def decision_function(self, users, items, mode="like"):
        check_is_fitted(self)
        u, i = check_pairs(users, items, self.posterior_.n_users, self.posterior_.n_items)
        return score(self.posterior_, u, i, mode, self.histogram_)

    def score_items(self, user, mode="like"):
        check_is_fitted(self)
        return user_scores(self.posterior_, user, mode, self.histogram_)

    def histogram(self, r=None):
        """Item histogram of the training graph for another rate ``r``."""
        check_is_fitted(self)
        return self.histogram_ if r is None else build_histogram(self.train_graph_.item_degrees, r)


class BPR(_RankingMixin, BaseEstimator):
    """Bayesian Personalized Ranking with uniform or popularity-proportional negatives."""

    def __init__(self, n_components=20, learning_rate=0.05, regularization=0.01, n_epochs=100,
                 sampling="uniform", init_scale=0.1, random_state=None):
        self.n_components = n_components
        self.learning_rate = learning_rate
        self.regularization = regularization
        self.n_epochs = n_epochs
        self.sampling = sampling
        self.init_scale = init_scale
        self.random_state = random_state

    def fit(self, X, y=None):
        graph = check_graph(X)
        cfg = BprConfig(
            n_components=self.n_components, learning_rate=self.learning_rate,
            regularization=self.regularization, n_epochs=self.n_epochs, sampling=self.sampling,
            seed=check_seed(self.random_state), init_scale=self.init_scale,
        ).validate()
        self.model_ = bpr_train(graph, cfg)
        self.train_graph_ = graph
        self.config_ = cfg
        return self

    def decision_function(self, users, items):
        check_is_fitted(self)
        u, i = check_pairs(users, items, self.model_.n_users, self.model_.n_items)
        return bpr_score(self.model_, u, i)

    def score_items(self, user):
        check_is_fitted(self)
        return self.model_.user_scores(user)
