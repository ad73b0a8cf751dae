"""Data simulated from the generative model, for recovery experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import BipartiteGraph
from .model import sigmoid


@dataclass
class SyntheticData:
    graph: BipartiteGraph
    considered: BipartiteGraph
    user_factors: np.ndarray
    item_factors: np.ndarray
    item_bias: np.ndarray
    popularity: np.ndarray

    def like_probability(self, users, items):
        a = np.sum(self.user_factors[users] * self.item_factors[items], axis=-1) + self.item_bias[items]
        return sigmoid(a)


def simulate_from_model(n_users=200, n_items=50, n_components=2, seed=0, factor_scale=2.5,
                        popularity_exponent=1.0, quality=1.0, bias_noise=0.5,
                        considered=(10, 30)):
    """Sample a hidden graph and the liked edges on it.

    Each user considers between ``considered[0]`` and ``considered[1]`` items,
    drawn without replacement with probability proportional to a power-law
    item popularity. Item biases rise with log popularity (slope
    ``quality``), are centred so that a considered edge is liked about half
    the time, and every considered edge is liked with probability
    ``sigmoid(u.v + b_n)``.
    """
    rng = np.random.default_rng(seed)
    popularity = (np.arange(n_items) + 1.0) ** -popularity_exponent
    popularity /= popularity.sum()
    logp = np.log(popularity)
    bias = quality * (logp - logp.mean()) / (logp.std() or 1.0) + rng.normal(0.0, bias_noise, n_items)
    # centre on the considered edges: their items are drawn by popularity
    bias -= np.sum(popularity * bias)
    U = rng.normal(0.0, factor_scale, (n_users, n_components))
    V = rng.normal(0.0, factor_scale, (n_items, n_components)) / np.sqrt(n_components)
    hu, hi = [], []
    for m in range(n_users):
        c = int(rng.integers(considered[0], considered[1] + 1))
        items = rng.choice(n_items, size=min(c, n_items), replace=False, p=popularity)
        hu.extend([m] * items.size)
        hi.extend(items.tolist())
    hu, hi = np.asarray(hu), np.asarray(hi)
    a = np.sum(U[hu] * V[hi], axis=1) + bias[hi]
    liked = rng.random(a.size) < sigmoid(a)
    user_ids = [f"u{m}" for m in range(n_users)]
    item_ids = [f"i{n}" for n in range(n_items)]
    graph = BipartiteGraph.from_edges(hu[liked], hi[liked], n_users, n_items, user_ids, item_ids)
    hidden = BipartiteGraph.from_edges(hu, hi, n_users, n_items, user_ids, item_ids)
    return SyntheticData(graph, hidden, U, V, bias, popularity)
