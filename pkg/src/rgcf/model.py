"""Variational factors, the logistic bound and the sampled-graph objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import digamma, expit, gammaln, log_expit

from .exceptions import ContractError

_CAP = 500.0
_LOG_2PI = math.log(2.0 * math.pi)


def sigmoid(x):
    return expit(np.clip(x, -_CAP, _CAP))


def log_sigmoid(x):
    return log_expit(np.clip(x, -_CAP, _CAP))


def lambda_xi(xi):
    """Curvature of the logistic bound, ``(sigmoid(xi) - 1/2) / (2 xi)``.

    Even in ``xi`` with limit 1/8 at zero. Evaluated through
    ``tanh(xi/2) / (4 xi)`` to avoid cancellation.
    """
    x = np.abs(np.clip(np.asarray(xi, dtype=np.float64), -_CAP, _CAP))
    small = x < 1e-4
    safe = np.where(small, 1.0, x)
    out = np.where(small, 0.125 - x * x / 96.0, np.tanh(safe / 2.0) / (4.0 * safe))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GaussianFactor:
    mean: float
    precision: float

    def __post_init__(self):
        if not self.precision > 0:
            raise ValueError("precision must be positive")

    @property
    def variance(self):
        return 1.0 / self.precision


@dataclass(frozen=True)
class GammaFactor:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def mean_log(self):
        return float(digamma(self.shape) - math.log(self.rate))

    def entropy(self):
        a, b = self.shape, self.rate
        return float(a - math.log(b) + gammaln(a) + (1.0 - a) * digamma(a))

    def expected_log_prior(self, alpha, beta):
        """E_q[log Gamma(tau; alpha, beta)]."""
        return float(alpha * math.log(beta) - gammaln(alpha) + (alpha - 1.0) * self.mean_log - beta * self.mean)


@dataclass(frozen=True)
class HyperPriors:
    alpha: float = 0.01
    beta: float = 0.01

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")

    def prior(self):
        return GammaFactor(self.alpha, self.beta)


TAU_KEYS = ("u", "v", "bu", "bv")


@dataclass
class Posterior:
    """Mean-field posterior over all vertex features and the four precisions.

    Every Gaussian coordinate is stored as a (mean, precision) pair. A clamped
    user bias has mean 0 and precision ``inf``.
    """

    user_mean: np.ndarray
    user_prec: np.ndarray
    user_bias_mean: np.ndarray
    user_bias_prec: np.ndarray
    item_mean: np.ndarray
    item_prec: np.ndarray
    item_bias_mean: np.ndarray
    item_bias_prec: np.ndarray
    tau: dict = field(default_factory=dict)
    user_bias_clamped: bool = False
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        if not self.user_ids:
            self.user_ids = tuple(str(m) for m in range(self.n_users))
        if not self.item_ids:
            self.item_ids = tuple(str(n) for n in range(self.n_items))

    @property
    def n_components(self):
        return self.user_mean.shape[1]

    @property
    def n_users(self):
        return self.user_mean.shape[0]

    @property
    def n_items(self):
        return self.item_mean.shape[0]

    @classmethod
    def initialize(cls, n_users, n_items, n_components, hyper=None, rng=None,
                   clamp_user_bias=False, user_ids=(), item_ids=(), scale=0.1):
        hyper = hyper or HyperPriors()
        rng = np.random.default_rng(rng)
        k = n_components
        prec0 = hyper.alpha / hyper.beta
        return cls(
            user_mean=rng.normal(0.0, scale, (n_users, k)),
            user_prec=np.full((n_users, k), prec0),
            user_bias_mean=np.zeros(n_users),
            user_bias_prec=np.full(n_users, np.inf if clamp_user_bias else 1.0),
            item_mean=rng.normal(0.0, scale, (n_items, k)),
            item_prec=np.full((n_items, k), prec0),
            item_bias_mean=np.zeros(n_items),
            item_bias_prec=np.ones(n_items),
            tau={key: hyper.prior() for key in TAU_KEYS},
            user_bias_clamped=clamp_user_bias,
            user_ids=tuple(user_ids),
            item_ids=tuple(item_ids),
        )

    def copy(self):
        arrays = {
            name: getattr(self, name).copy()
            for name in ("user_mean", "user_prec", "user_bias_mean", "user_bias_prec",
                         "item_mean", "item_prec", "item_bias_mean", "item_bias_prec")
        }
        return Posterior(**arrays, tau=dict(self.tau), user_bias_clamped=self.user_bias_clamped,
                         user_ids=self.user_ids, item_ids=self.item_ids)

    def edge_moments(self, users, items):
        return edge_moments(
            self.user_mean[users], self.user_prec[users], self.item_mean[items], self.item_prec[items],
            self.user_bias_mean[users], self.user_bias_prec[users],
            self.item_bias_mean[items], self.item_bias_prec[items],
        )


class EdgeMoments(NamedTuple):
    mean: np.ndarray
    var: np.ndarray


def edge_moments(u_mean, u_prec, v_mean, v_prec, bm_mean, bm_prec, bn_mean, bn_prec):
    """Mean and variance of ``a = u.v + b_m + b_n`` under independent Gaussian factors.

    Vector arguments carry the latent dimension on the last axis, so batches
    of edges are handled by passing ``(E, K)`` and ``(E,)`` arrays.
    """
    u_mean, v_mean = np.asarray(u_mean, float), np.asarray(v_mean, float)
    u_var, v_var = 1.0 / np.asarray(u_prec, float), 1.0 / np.asarray(v_prec, float)
    mean = np.sum(u_mean * v_mean, axis=-1) + bm_mean + bn_mean
    var = (
        np.sum(u_mean**2 * v_var + v_mean**2 * u_var + u_var * v_var, axis=-1)
        + 1.0 / np.asarray(bm_prec, float)
        + 1.0 / np.asarray(bn_prec, float)
    )
    return EdgeMoments(mean, var)


def optimal_xi(moments):
    """Positive root of ``xi**2 = E[a**2]``."""
    return np.sqrt(moments.mean**2 + moments.var)


def log_likelihood(g, h, a):
    """Exact ``log p(g | a, h)`` of the considered-then-liked edge model."""
    g, h, a = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (g, h, a)))
    with np.errstate(divide="ignore"):
        tail = np.where(h == 0, np.log(1.0 - g), 0.0)
    return h * (g * log_sigmoid(a) + (1.0 - g) * log_sigmoid(-a)) + tail


def jj_bound_edge(g, h, a, xi):
    """Log of the Jaakkola-Jordan lower bound on the edge likelihood."""
    g, h, a, xi = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (g, h, a, xi)))
    if np.any((g == 1) & (h == 0)):
        raise ContractError("an observed edge (g=1) must be considered (h=1)")
    a = np.clip(a, -_CAP, _CAP)
    xi = np.clip(xi, -_CAP, _CAP)
    active = g + h * (1.0 - g)
    out = g * a + active * (log_sigmoid(xi) - 0.5 * (a + xi) - lambda_xi(xi) * (a * a - xi * xi))
    return out if out.ndim else float(out)


def _gaussian_prior_terms(mean, prec, tau):
    """E_q[log N(x; 0, 1/tau)] + H[q(x)] summed over all coordinates."""
    n = mean.size
    second = np.sum(mean**2 + 1.0 / prec)
    expected_log_prior = 0.5 * n * (tau.mean_log - _LOG_2PI) - 0.5 * tau.mean * second
    entropy = 0.5 * np.sum(_LOG_2PI + 1.0 - np.log(prec))
    return float(expected_log_prior + entropy)


@dataclass(frozen=True)
class ElboTerms:
    edges: float
    vertices: float
    hyper: float

    @property
    def total(self):
        return self.edges + self.vertices + self.hyper


def elbo_terms(graph, hidden, q, hyper):
    if hidden.n_users != q.n_users or hidden.n_items != q.n_items:
        raise ContractError("hidden graph and posterior dimensions differ")
    if graph is not None and (graph.n_users != q.n_users or graph.n_items != q.n_items):
        raise ContractError("graph and posterior dimensions differ")
    users, items = hidden.users, hidden.items
    mom = q.edge_moments(users, items)
    xi = optimal_xi(mom)
    second = mom.var + mom.mean**2
    g = hidden.liked.astype(np.float64)
    edge = log_sigmoid(xi) + (g - 0.5) * mom.mean - 0.5 * xi - lambda_xi(xi) * (second - xi * xi)

    vertices = _gaussian_prior_terms(q.user_mean, q.user_prec, q.tau["u"])
    vertices += _gaussian_prior_terms(q.item_mean, q.item_prec, q.tau["v"])
    vertices += _gaussian_prior_terms(q.item_bias_mean, q.item_bias_prec, q.tau["bv"])
    if not q.user_bias_clamped:
        vertices += _gaussian_prior_terms(q.user_bias_mean, q.user_bias_prec, q.tau["bu"])

    hyper_terms = sum(
        q.tau[key].expected_log_prior(hyper.alpha, hyper.beta) + q.tau[key].entropy() for key in TAU_KEYS
    )
    return ElboTerms(float(np.sum(edge)), vertices, float(hyper_terms))


def elbo(graph, hidden, q, hyper):
    """Variational objective on one fixed hidden graph, with per-edge optimal xi.

    Only the considered edges contribute likelihood terms. ``log p(H)`` and the
    entropy of q(H) are constants and left out.
    """
    return elbo_terms(graph, hidden, q, hyper).total


_FORMAT = "rgcf-posterior 1"


def _fmt(x):
    return f"{x:.9g}"


def write_posterior(q, stream, kind="vb"):
    flags = [kind] + (["clamped"] if q.user_bias_clamped else [])
    stream.write(f"# {_FORMAT}\n")
    stream.write(f"{q.n_components} {q.n_users} {q.n_items} {','.join(flags)}\n")
    blocks = (
        (q.user_ids, q.user_mean, q.user_prec, q.user_bias_mean, q.user_bias_prec),
        (q.item_ids, q.item_mean, q.item_prec, q.item_bias_mean, q.item_bias_prec),
    )
    for ids, mean, prec, bmean, bprec in blocks:
        for i, vid in enumerate(ids):
            pairs = np.column_stack([mean[i], prec[i]]).ravel().tolist() + [bmean[i], bprec[i]]
            stream.write(vid + " " + " ".join(map(_fmt, pairs)) + "\n")
    if q.tau:
        gammas = [x for key in TAU_KEYS for x in (q.tau[key].shape, q.tau[key].rate)]
    else:
        gammas = [0.0] * 2 * len(TAU_KEYS)
    stream.write(" ".join(map(_fmt, gammas)) + "\n")


def read_posterior(stream):
    """Parse :func:`write_posterior` output; returns ``(posterior, kind)``."""
    lines = [ln for ln in (raw.strip() for raw in stream) if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty model file")
    k, m, n, flags = lines[0].split()
    k, m, n = int(k), int(m), int(n)
    flags = flags.split(",")
    if len(lines) != 2 + m + n:
        raise ValueError(f"model file has {len(lines)} lines, expected {2 + m + n}")

    def block(rows):
        ids, vals = [], []
        for row in rows:
            tok = row.split()
            if len(tok) != 2 * k + 3:
                raise ValueError(f"malformed factor line: {row[:60]!r}")
            ids.append(tok[0])
            vals.append([float(x) for x in tok[1:]])
        vals = np.asarray(vals, dtype=np.float64).reshape(len(rows), 2 * k + 2)
        return ids, vals[:, 0:2 * k:2], vals[:, 1:2 * k:2], vals[:, 2 * k], vals[:, 2 * k + 1]

    uid, um, up, ubm, ubp = block(lines[1:1 + m])
    iid, im, ip, ibm, ibp = block(lines[1 + m:1 + m + n])
    gam = [float(x) for x in lines[-1].split()]
    kind = flags[0]
    if kind == "vb":
        tau = {key: GammaFactor(gam[2 * j], gam[2 * j + 1]) for j, key in enumerate(TAU_KEYS)}
    else:
        tau = {}
    q = Posterior(um, up, ubm, ubp, im, ip, ibm, ibp, tau=tau,
                  user_bias_clamped="clamped" in flags, user_ids=tuple(uid), item_ids=tuple(iid))
    return q, kind


def save_posterior(q, path, kind="vb"):
    with open(path, "w", encoding="utf-8") as fh:
        write_posterior(q, fh, kind)


def load_posterior(path):
    with open(path, encoding="utf-8") as fh:
        return read_posterior(fh)
