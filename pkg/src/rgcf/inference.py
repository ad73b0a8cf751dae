"""Stochastic variational Bayes over random hidden-graph samples.

Each iteration draws a fresh hidden graph, then updates user biases, item
biases, user vectors and item vectors in that order. Every vertex update
computes natural parameters (precision ``P`` and mean-times-precision ``z``)
from the sampled edges, blends them with the previous ones and projects the
blended Gaussian back onto a diagonal factor.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, NumericalError
from .model import (
    GammaFactor,
    HyperPriors,
    Posterior,
    elbo,
    lambda_xi,
    optimal_xi,
)
from .sampling import build_histogram, positive_negative_ratio, ratio_table, sample_hidden_graph

logger = logging.getLogger(__name__)

# elements of the per-edge (E, K, K) scratch tensor processed per chunk
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class TrainConfig:
    n_components: int = 20
    alpha: float = 0.01
    beta: float = 0.01
    r: float = 0.5
    max_iter: int = 100
    t_eps: int = 10
    t_tau: int = 3
    kappa: int | None = None
    clamp_user_bias: bool = True
    seed: int = 0
    block_count: int = 1
    step_exponent: float = 0.6
    init_scale: float = 0.1
    n_jobs: int = 1

    def validate(self):
        if self.n_components < 1:
            raise ConfigurationError("n_components must be >= 1")
        if self.kappa is not None and not 1 <= self.kappa <= self.n_components:
            raise ConfigurationError("kappa must lie in [1, n_components]")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("alpha and beta must be positive")
        if self.r <= 0:
            raise ConfigurationError("r must be positive")
        if self.max_iter < 0 or self.t_eps < 0 or self.t_tau < 0:
            raise ConfigurationError("iteration counts must be nonnegative")
        if self.block_count < 1:
            raise ConfigurationError("block_count must be >= 1")
        if not 0.5 < self.step_exponent <= 1.0:
            raise ConfigurationError("step_exponent must lie in (0.5, 1]")
        if self.n_jobs < 1:
            raise ConfigurationError("n_jobs must be >= 1")
        return self

    @property
    def hyper(self):
        return HyperPriors(self.alpha, self.beta)


@dataclass(frozen=True)
class StepSchedule:
    accumulator: float = 0.0
    eps: float = 1.0


def step_size(t, t_eps, schedule, exponent=0.6):
    """Advance the step-size schedule after iteration ``t``.

    ``eps`` stays at 1 through the warm-up. Afterwards the accumulator decays
    by ``1 - delta**-exponent`` and grows by one, and ``eps`` is its inverse.
    """
    if t <= t_eps:
        return StepSchedule(schedule.accumulator, 1.0)
    delta = t - t_eps
    a = (1.0 - delta ** -exponent) * schedule.accumulator + 1.0
    return StepSchedule(a, 1.0 / a)


def blend(new, old, eps):
    """Convex combination ``eps * new + (1 - eps) * old`` of natural parameter pairs."""
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    if eps == 1.0:
        return new
    return tuple(eps * np.asarray(a) + (1.0 - eps) * np.asarray(b) for a, b in zip(new, old))


@dataclass
class NaturalGradientState:
    user_P: np.ndarray
    user_z: np.ndarray
    user_bias_P: np.ndarray
    user_bias_z: np.ndarray
    item_P: np.ndarray
    item_z: np.ndarray
    item_bias_P: np.ndarray
    item_bias_z: np.ndarray

    @classmethod
    def from_posterior(cls, q):
        def vec(mean, prec):
            P = np.zeros(mean.shape + mean.shape[-1:])
            idx = np.arange(mean.shape[-1])
            P[:, idx, idx] = prec
            return P, prec * mean

        uP, uz = vec(q.user_mean, q.user_prec)
        vP, vz = vec(q.item_mean, q.item_prec)
        with np.errstate(invalid="ignore"):
            ubz = np.where(np.isinf(q.user_bias_prec), 0.0, q.user_bias_prec * q.user_bias_mean)
        return cls(uP, uz, q.user_bias_prec.copy(), ubz, vP, vz,
                   q.item_bias_prec.copy(), q.item_bias_prec * q.item_bias_mean)


@dataclass
class NaturalGradientMessage:
    """Partial user natural gradients contributed by one item block."""

    block: int
    users: np.ndarray
    precision: np.ndarray  # (len(users), K, K)
    shift: np.ndarray  # (len(users), K) mean-times-precision partials


def _side_edges(hidden, side):
    """``(indptr, owners, others, liked)`` with owners ascending and others ascending per owner."""
    if side == "user":
        return hidden.indptr, hidden.users, hidden.items, hidden.liked
    indptr, users, liked, _ = hidden.item_major
    owners = np.repeat(np.arange(hidden.n_items), np.diff(indptr))
    return indptr, owners, users, liked


def _edge_terms(q, side, own, other, liked, want_vector):
    """Per-edge weight ``2 lambda(xi)`` and the linear coefficients of both updates."""
    if side == "user":
        users, items = own, other
    else:
        users, items = other, own
    mom = q.edge_moments(users, items)
    w = 2.0 * lambda_xi(optimal_xi(mom))
    g = liked.astype(np.float64)
    own_bias = q.user_bias_mean[users] if side == "user" else q.item_bias_mean[items]
    # bias update: g - 1/2 - w E[u.v + b_other]
    bias_c = g - 0.5 - w * (mom.mean - own_bias)
    if not want_vector:
        return w, bias_c, None
    # vector update: g - 1/2 - w E[b_m + b_n]
    vec_c = g - 0.5 - w * (q.user_bias_mean[users] + q.item_bias_mean[items])
    return w, bias_c, vec_c


def _owner_chunks(indptr, k, n_jobs):
    """Split owners into contiguous ranges bounded in edge count."""
    n_owner = len(indptr) - 1
    budget = max(_CHUNK_ELEMENTS // max(k * k, 1), 1)
    if n_jobs > 1:
        budget = min(budget, max(int(indptr[-1]) // n_jobs + 1, 1))
    chunks, lo = [], 0
    while lo < n_owner:
        hi = int(np.searchsorted(indptr, indptr[lo] + budget, side="right")) - 1
        hi = min(max(hi, lo + 1), n_owner)
        chunks.append((lo, hi))
        lo = hi
    return chunks


def _partials(q, hidden, side, kind, block_of=None, n_blocks=1, n_jobs=1):
    """Edge sums of the natural gradients, split by block of the *other* endpoint.

    Returns ``(P_parts, z_parts)`` with a leading block axis. Sums run over each
    owner's edges in ascending order of the other endpoint.
    """
    indptr, owners, others, liked = _side_edges(hidden, side)
    n_owner = len(indptr) - 1
    k = q.n_components
    vector = kind == "vector"
    if vector:
        P = np.zeros((n_blocks, n_owner, k, k))
        z = np.zeros((n_blocks, n_owner, k))
    else:
        P = np.zeros((n_blocks, n_owner))
        z = np.zeros((n_blocks, n_owner))
    other_mean = q.item_mean if side == "user" else q.user_mean
    other_prec = q.item_prec if side == "user" else q.user_prec
    diag = np.arange(k)

    def work(chunk):
        lo, hi = chunk
        s = slice(indptr[lo], indptr[hi])
        own, oth, lk = owners[s], others[s], liked[s]
        if own.size == 0:
            return
        blk = np.zeros(own.size, dtype=np.int64) if block_of is None else block_of[oth]
        w, bias_c, vec_c = _edge_terms(q, side, own, oth, lk, vector)
        rows = own - lo
        if vector:
            mean = other_mean[oth]
            second = mean[:, :, None] * mean[:, None, :]
            second[:, diag, diag] += 1.0 / other_prec[oth]
            np.add.at(P[:, lo:hi], (blk, rows), w[:, None, None] * second)
            np.add.at(z[:, lo:hi], (blk, rows), vec_c[:, None] * mean)
        else:
            np.add.at(P[:, lo:hi], (blk, rows), w)
            np.add.at(z[:, lo:hi], (blk, rows), bias_c)

    chunks = _owner_chunks(indptr, k if vector else 1, n_jobs)
    if n_jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(work, chunks))
    else:
        for c in chunks:
            work(c)
    return P, z


def _combine(P_parts, z_parts, prior_precision):
    """Sum block partials in block order and add the prior precision."""
    P, z = P_parts[0].copy(), z_parts[0].copy()
    for b in range(1, P_parts.shape[0]):
        P += P_parts[b]
        z += z_parts[b]
    if P.ndim == 3:
        idx = np.arange(P.shape[-1])
        P[:, idx, idx] += prior_precision
    else:
        P += prior_precision
    return P, z


def vector_natural_gradients(q, hidden, side="user", block_of=None, n_blocks=1, n_jobs=1):
    """Natural parameters of the full-Gaussian update for every user (or item) vector."""
    tau = q.tau["u" if side == "user" else "v"].mean
    return _combine(*_partials(q, hidden, side, "vector", block_of, n_blocks, n_jobs), tau)


def bias_natural_gradients(q, hidden, side="user", block_of=None, n_blocks=1, n_jobs=1):
    tau = q.tau["bu" if side == "user" else "bv"].mean
    return _combine(*_partials(q, hidden, side, "bias", block_of, n_blocks, n_jobs), tau)


def user_natural_gradient(m, hidden, q):
    """``(P_m, z_m)`` for one user vector from that user's hidden-graph row."""
    return _single_vertex(m, hidden, q, "user", "vector")


def item_natural_gradient(n, hidden, q):
    return _single_vertex(n, hidden, q, "item", "vector")


def bias_natural_gradient(vertex, hidden, q, side="user"):
    """Scalar ``(P, z)`` for one user or item bias."""
    P, z = _single_vertex(vertex, hidden, q, side, "bias")
    return float(P), float(z)


def _single_vertex(v, hidden, q, side, kind):
    fn = vector_natural_gradients if kind == "vector" else bias_natural_gradients
    P, z = fn(q, hidden, side)
    return P[v], z[v]


def block_partition(n_items, block_count):
    """Contiguous item blocks; returns ``(blocks, block_of)``."""
    blocks = np.array_split(np.arange(n_items), block_count)
    block_of = np.empty(n_items, dtype=np.int64)
    for b, items in enumerate(blocks):
        block_of[items] = b
    return blocks, block_of


def block_messages(graph, hidden, q, partition):
    """Per-block partial natural gradients for the user vectors.

    ``partition`` is a list of disjoint item index arrays covering all items.
    The full user precision is the sum of all messages plus ``E[tau_u] I``.
    """
    n_items = q.n_items
    block_of = np.full(n_items, -1, dtype=np.int64)
    for b, items in enumerate(partition):
        items = np.asarray(items, dtype=np.int64)
        if np.any(block_of[items] >= 0):
            raise ConfigurationError("item blocks overlap")
        block_of[items] = b
    if np.any(block_of < 0):
        raise ConfigurationError("item blocks do not cover every item")
    P_parts, z_parts = _partials(q, hidden, "user", "vector", block_of, len(partition))
    messages = []
    for b in range(len(partition)):
        items = np.asarray(partition[b], dtype=np.int64)
        touched = np.isin(hidden.items, items)
        users = np.unique(hidden.users[touched])
        messages.append(NaturalGradientMessage(b, users, P_parts[b][users], z_parts[b][users]))
    return messages


def _cholesky_pivots(P):
    """Cholesky pivots of one matrix, stopping at the first non-positive pivot."""
    A = np.array(P, dtype=np.float64)
    n = A.shape[0]
    pivots = []
    for j in range(n):
        d = A[j, j] - A[j, :j] @ A[j, :j]
        pivots.append(d)
        if not d > 0:
            break
        A[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            A[i, j] = (A[i, j] - A[i, :j] @ A[j, :j]) / A[j, j]
    return pivots


def cholesky_solve(P, z, vertex_ids=None):
    """Solve ``P x = z`` for a batch of symmetric positive definite ``P``."""
    P = np.asarray(P, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        for i in range(P.shape[0]):
            piv = _cholesky_pivots(P[i])
            if not piv[-1] > 0:
                v = i if vertex_ids is None else int(vertex_ids[i])
                raise NumericalError(
                    f"precision of vertex {v} is not positive definite (pivot {piv[-1]:.3g})",
                    vertex=v, pivot=float(piv[-1]),
                ) from None
        raise
    k = P.shape[-1]
    y = np.empty_like(z)
    for i in range(k):
        y[:, i] = (z[:, i] - np.einsum("bj,bj->b", L[:, i, :i], y[:, :i])) / L[:, i, i]
    x = np.empty_like(z)
    for i in range(k - 1, -1, -1):
        x[:, i] = (y[:, i] - np.einsum("bj,bj->b", L[:, i + 1:, i], x[:, i + 1:])) / L[:, i, i]
    return x


def refactorize(P, z, vertex_ids=None):
    """Project full Gaussians (batch of natural parameters) onto diagonal factors.

    The diagonal factor with the smallest KL divergence to N(P^-1 z, P^-1)
    keeps the full mean and takes the diagonal of the precision.
    """
    single = np.ndim(P) == 2
    P = np.asarray(P, dtype=np.float64)[None] if single else np.asarray(P, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)[None] if single else np.asarray(z, dtype=np.float64)
    mean = cholesky_solve(P, z, vertex_ids)
    prec = np.diagonal(P, axis1=1, axis2=2).copy()
    return (mean[0], prec[0]) if single else (mean, prec)


def partial_refactorize(P, z, mean, subset, vertex_ids=None):
    """Update only the coordinates in ``subset``, holding the others at ``mean``."""
    single = np.ndim(P) == 2
    P = np.asarray(P)[None] if single else np.asarray(P)
    z = np.asarray(z)[None] if single else np.asarray(z)
    mean = np.array(mean, dtype=np.float64)[None] if single else np.array(mean, dtype=np.float64)
    S = np.asarray(subset, dtype=np.int64)
    R = np.setdiff1d(np.arange(P.shape[-1]), S)
    rhs = z[:, S] - np.einsum("bij,bj->bi", P[:, S][:, :, R], mean[:, R])
    P_SS = P[:, S][:, :, S]
    sub = cholesky_solve(P_SS, rhs, vertex_ids)
    out_mean, out_prec = sub, np.diagonal(P_SS, axis1=1, axis2=2).copy()
    return (out_mean[0], out_prec[0]) if single else (out_mean, out_prec)


def update_hyperparameters(q, hyper):
    """Optimal Gamma factors of the four precisions given the vertex factors."""
    k = q.n_components

    def gamma(mean, prec, count):
        return GammaFactor(hyper.alpha + count / 2.0, hyper.beta + 0.5 * float(np.sum(mean**2 + 1.0 / prec)))

    out = {
        "u": gamma(q.user_mean, q.user_prec, k * q.n_users),
        "v": gamma(q.item_mean, q.item_prec, k * q.n_items),
        "bv": gamma(q.item_bias_mean, q.item_bias_prec, q.n_items),
    }
    out["bu"] = q.tau["bu"] if q.user_bias_clamped else gamma(q.user_bias_mean, q.user_bias_prec, q.n_users)
    return {key: out[key] for key in ("u", "v", "bu", "bv")}


@dataclass(frozen=True)
class IterationRecord:
    t: int
    eps: float
    elbo: float
    tau_means: tuple

    def tsv(self):
        return "\t".join([str(self.t), f"{self.eps:.9g}", f"{self.elbo:.9g}", *(f"{x:.9g}" for x in self.tau_means)])


LOG_HEADER = "t\tepsilon\telbo_sample\tE[tau_u]\tE[tau_v]\tE[tau_bu]\tE[tau_bv]"


@dataclass
class VBTrainer:
    """Holds the posterior, the blended natural parameters and the schedule."""

    graph: object
    config: TrainConfig
    posterior: Posterior | None = None
    state: NaturalGradientState | None = None
    schedule: StepSchedule = field(default_factory=StepSchedule)
    t: int = 0

    def __post_init__(self):
        cfg = self.config.validate()
        if self.posterior is None:
            self.posterior = Posterior.initialize(
                self.graph.n_users, self.graph.n_items, cfg.n_components, cfg.hyper,
                rng=np.random.default_rng([cfg.seed, 0x5EED]), clamp_user_bias=cfg.clamp_user_bias,
                user_ids=self.graph.user_ids, item_ids=self.graph.item_ids, scale=cfg.init_scale,
            )
        if self.state is None:
            self.state = NaturalGradientState.from_posterior(self.posterior)
        self.histogram = build_histogram(self.graph.item_degrees, cfg.r)
        _, self.block_of = block_partition(self.graph.n_items, cfg.block_count)
        # running per-item count of sampled negatives, for the ratio table
        self.negative_totals = np.zeros(self.graph.n_items, dtype=np.int64)
        self.n_samples = 0

    def _blocks(self, side):
        # item-side updates only see their own block, so partials are never split
        if side == "user" and self.config.block_count > 1:
            return self.block_of, self.config.block_count
        return None, 1

    def update_biases(self, hidden, side, eps=1.0):
        q, st = self.posterior, self.state
        if side == "user" and q.user_bias_clamped:
            return
        block_of, nb = self._blocks(side)
        new = bias_natural_gradients(q, hidden, side, block_of, nb, self.config.n_jobs)
        if side == "user":
            st.user_bias_P, st.user_bias_z = blend(new, (st.user_bias_P, st.user_bias_z), eps)
            q.user_bias_mean, q.user_bias_prec = st.user_bias_z / st.user_bias_P, st.user_bias_P.copy()
        else:
            st.item_bias_P, st.item_bias_z = blend(new, (st.item_bias_P, st.item_bias_z), eps)
            q.item_bias_mean, q.item_bias_prec = st.item_bias_z / st.item_bias_P, st.item_bias_P.copy()

    def update_vectors(self, hidden, side, eps=1.0):
        q, st = self.posterior, self.state
        block_of, nb = self._blocks(side)
        new = vector_natural_gradients(q, hidden, side, block_of, nb, self.config.n_jobs)
        if side == "user":
            P, z = st.user_P, st.user_z = blend(new, (st.user_P, st.user_z), eps)
            mean = q.user_mean
        else:
            P, z = st.item_P, st.item_z = blend(new, (st.item_P, st.item_z), eps)
            mean = q.item_mean
        try:
            mean, prec = self._project(P, z, mean)
        except NumericalError as err:
            err.iteration = self.t
            raise
        if side == "user":
            q.user_mean, q.user_prec = mean, prec
        else:
            q.item_mean, q.item_prec = mean, prec

    def _project(self, P, z, mean):
        kappa = self.config.kappa
        k = P.shape[-1]
        if kappa is None or kappa >= k:
            return refactorize(P, z, np.arange(P.shape[0]))
        mean = mean.copy()
        prec = np.diagonal(P, axis1=1, axis2=2).copy()
        for lo in range(0, k, kappa):
            S = np.arange(lo, min(lo + kappa, k))
            mean[:, S], _ = partial_refactorize(P, z, mean, S, np.arange(P.shape[0]))
        return mean, prec

    def update_hyperparameters(self):
        self.posterior.tau = update_hyperparameters(self.posterior, self.config.hyper)

    def sweep(self, hidden, eps=1.0):
        """One pass of the four vertex loops on a fixed hidden graph."""
        self.update_biases(hidden, "user", eps)
        self.update_biases(hidden, "item", eps)
        self.update_vectors(hidden, "user", eps)
        self.update_vectors(hidden, "item", eps)

    def sample(self, t):
        return sample_hidden_graph(self.graph, self.histogram, self.config.seed, t)

    def step(self, track_elbo=True):
        cfg = self.config
        self.t += 1
        t = self.t
        hidden = self.sample(t)
        self.negative_totals += hidden.negative_counts()
        self.n_samples += 1
        eps = self.schedule.eps
        self.sweep(hidden, eps)
        if t > cfg.t_tau:
            self.update_hyperparameters()
        value = elbo(self.graph, hidden, self.posterior, cfg.hyper) if track_elbo else float("nan")
        tau = self.posterior.tau
        record = IterationRecord(t, eps, value, tuple(tau[key].mean for key in ("u", "v", "bu", "bv")))
        self.schedule = step_size(t, cfg.t_eps, self.schedule, cfg.step_exponent)
        return record

    def ratio_table(self):
        """Observed versus mean sampled negatives per item over the samples drawn so far."""
        if self.n_samples == 0:
            return positive_negative_ratio(self.graph, [self.sample(1)])
        return ratio_table(self.graph.item_degrees, self.negative_totals / self.n_samples)

    def run(self, callback=None, track_elbo=True):
        for _ in range(self.config.max_iter):
            record = self.step(track_elbo)
            logger.debug("iteration %s", record.tsv())
            if callback is not None:
                callback(record)
        return self.posterior


def train(graph, config, callback=None, track_elbo=True):
    """Run ``config.max_iter`` iterations of stochastic VB and return the posterior."""
    if graph.n_edges == 0:
        raise ConfigurationError("cannot train on an empty graph")
    return VBTrainer(graph, config).run(callback, track_elbo)


def default_workers():
    env = os.environ.get("WORKERS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


__all__ = [
    "TrainConfig", "StepSchedule", "NaturalGradientState", "NaturalGradientMessage", "IterationRecord",
    "VBTrainer", "step_size", "blend", "refactorize", "partial_refactorize", "cholesky_solve",
    "user_natural_gradient", "item_natural_gradient", "bias_natural_gradient",
    "vector_natural_gradients", "bias_natural_gradients", "update_hyperparameters",
    "block_messages", "block_partition", "train", "LOG_HEADER",
]
