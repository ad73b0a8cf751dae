import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special, stats

from rgcf.exceptions import ContractError
from rgcf.graph import BipartiteGraph
from rgcf.model import (
    EdgeMoments, GammaFactor, GaussianFactor, HyperPriors, Posterior, edge_moments, elbo, elbo_terms,
    jj_bound_edge, lambda_xi, log_likelihood, log_sigmoid, optimal_xi, read_posterior, sigmoid,
    write_posterior,
)
from rgcf.sampling import HiddenGraphSample, build_histogram, sample_hidden_graph

from conftest import random_graph
from elbo_oracle import quadrature_elbo


def test_lambda_point_values():
    assert lambda_xi(0.0) == 0.125
    assert lambda_xi(2.0) == pytest.approx((0.880797 - 0.5) / 4, abs=1e-6)
    assert lambda_xi(2.0) == pytest.approx(0.0951999, abs=1e-6)


def test_lambda_matches_definition_away_from_zero():
    xi = np.linspace(1e-4, 40, 500)
    assert np.allclose(lambda_xi(xi), (special.expit(xi) - 0.5) / (2 * xi), rtol=1e-10)
    # the series branch joins the closed form smoothly
    assert lambda_xi(0.99e-4) == pytest.approx(lambda_xi(1.01e-4), rel=1e-8)


@given(st.floats(-1e3, 1e3))
def test_lambda_is_even(x):
    assert lambda_xi(-x) == lambda_xi(x)


def test_lambda_range_and_monotone():
    xi = np.linspace(0, 50, 20001)
    lam = lambda_xi(xi)
    assert np.all(lam > 0) and np.all(lam <= 0.125)
    assert np.all(np.diff(lam) < 0)


def test_sigmoid_is_stable():
    # arguments are clipped to +-500 before exponentiation
    assert sigmoid(1e6) == 1.0 and sigmoid(-1e6) == sigmoid(-500.0) > 0.0
    assert np.isfinite(log_sigmoid(-1e6))
    assert log_sigmoid(-40.0) == pytest.approx(-40.0 - math.log1p(math.exp(-40.0)))


def test_edge_moments_plug_in():
    mom = edge_moments([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0], 0.0, 1.0, 0.0, 1.0)
    assert mom.mean == 0.0 and mom.var == 4.0


def test_edge_moments_deterministic():
    inf = np.inf
    mom = edge_moments([1.0, 2.0], [inf, inf], [3.0, -1.0], [inf, inf], 0.5, inf, -2.0, inf)
    assert mom.var == 0.0 and mom.mean == 1.0 * 3 + 2 * -1 + 0.5 - 2.0


def test_edge_moments_monte_carlo():
    rng = np.random.default_rng(0)
    um, vm = rng.normal(size=3), rng.normal(size=3)
    up, vp = rng.uniform(0.5, 3, 3), rng.uniform(0.5, 3, 3)
    bm, bn, bmp, bnp = 0.3, -0.7, 2.0, 0.5
    n = 10**6
    u = um + rng.normal(size=(n, 3)) / np.sqrt(up)
    v = vm + rng.normal(size=(n, 3)) / np.sqrt(vp)
    a = np.sum(u * v, axis=1) + bm + rng.normal(size=n) / math.sqrt(bmp) + bn + rng.normal(size=n) / math.sqrt(bnp)
    mom = edge_moments(um, up, vm, vp, bm, bmp, bn, bnp)
    se_mean = a.std() / math.sqrt(n)
    centred = a - a.mean()
    se_var = math.sqrt(np.mean(centred**4) - np.mean(centred**2) ** 2) / math.sqrt(n)
    assert abs(a.mean() - mom.mean) < 3 * se_mean
    assert abs(a.var() - mom.var) < 3 * se_var


@given(st.floats(-5, 5), st.integers(0, 100))
def test_edge_moments_linear_in_user_means(c, seed):
    rng = np.random.default_rng(seed)
    um, vm = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    p = np.ones((4, 3))
    b = rng.normal(size=4)
    base = edge_moments(um, p, vm, p, b, p[:, 0], b, p[:, 0]).mean - 2 * b
    scaled = edge_moments(c * um, p, vm, p, b, p[:, 0], b, p[:, 0]).mean - 2 * b
    assert np.allclose(scaled, c * base, atol=1e-12)


def test_optimal_xi_examples():
    assert optimal_xi(EdgeMoments(np.array(0.0), np.array(0.0))) == 0.0
    assert optimal_xi(EdgeMoments(np.array(3.0), np.array(16.0))) == 5.0


@pytest.mark.parametrize("g", [0, 1])
@pytest.mark.parametrize("mean,var", [(0.3, 0.2), (-2.0, 1.5), (4.0, 9.0), (0.0, 0.01)])
def test_optimal_xi_maximizes_expected_bound(g, mean, var):
    second = mean**2 + var

    def expected(xi):
        return log_sigmoid(xi) + (g - 0.5) * mean - 0.5 * xi - lambda_xi(xi) * (second - xi * xi)

    best = float(optimal_xi(EdgeMoments(np.array(mean), np.array(var))))
    grid = np.linspace(2 * best / 200, 2 * best, 200)
    assert np.all(expected(grid) <= expected(best) + 1e-12)


def test_bound_trivial_values():
    assert jj_bound_edge(0, 0, 1.7, 0.4) == 0.0
    assert jj_bound_edge(1, 1, 0.0, 0.0) == pytest.approx(-math.log(2), abs=1e-15)
    with pytest.raises(ContractError):
        jj_bound_edge(1, 0, 0.0, 0.0)


def test_bound_below_likelihood():
    rng = np.random.default_rng(1)
    n = 1000
    h = rng.integers(0, 2, n)
    g = h * rng.integers(0, 2, n)
    a = rng.normal(0, 5, n)
    xi = rng.uniform(-10, 10, n)
    assert np.all(jj_bound_edge(g, h, a, xi) - log_likelihood(g, h, a) <= 1e-12)


@given(st.sampled_from([(0, 1), (1, 1), (0, 0)]), st.floats(-30, 30))
def test_bound_tight_at_abs_a(gh, a):
    g, h = gh
    assert jj_bound_edge(g, h, a, abs(a)) == pytest.approx(float(log_likelihood(g, h, a)), abs=1e-9)


def test_log_likelihood_cases():
    assert log_likelihood(0, 0, 3.0) == 0.0
    assert log_likelihood(1, 0, 3.0) == -np.inf
    assert log_likelihood(1, 1, 0.5) == pytest.approx(math.log(special.expit(0.5)))
    assert log_likelihood(0, 1, 0.5) == pytest.approx(math.log(special.expit(-0.5)))


def test_gamma_factor_moments():
    f = GammaFactor(2.5, 1.7)
    dist = stats.gamma(2.5, scale=1 / 1.7)
    assert f.mean == pytest.approx(dist.mean())
    expected_log, _ = integrate.quad(lambda t: math.log(t) * dist.pdf(t), 0, np.inf)
    assert f.mean_log == pytest.approx(expected_log, rel=1e-8)
    assert f.entropy() == pytest.approx(dist.entropy(), rel=1e-10)
    prior = stats.gamma(0.01, scale=100)
    val, _ = integrate.quad(lambda t: prior.logpdf(t) * dist.pdf(t), 0, np.inf)
    assert f.expected_log_prior(0.01, 0.01) == pytest.approx(val, rel=1e-7)


def test_hyperprior_defaults():
    p = HyperPriors().prior()
    assert p.mean == 1.0
    assert p.shape / p.rate**2 == pytest.approx(100.0)
    with pytest.raises(ValueError):
        HyperPriors(alpha=0.0)
    with pytest.raises(ValueError):
        GaussianFactor(0.0, 0.0)
    assert GaussianFactor(1.0, 4.0).variance == 0.25


def test_initialize():
    q = Posterior.initialize(40, 30, 5, rng=0, clamp_user_bias=True)
    assert q.user_mean.shape == (40, 5) and q.item_prec.shape == (30, 5)
    assert np.all(q.user_prec == 1.0) and np.all(q.item_bias_prec == 1.0)
    assert np.all(q.user_bias_prec == np.inf) and np.all(q.user_bias_mean == 0)
    assert 0.07 < q.user_mean.std() < 0.13
    assert all(t.shape == 0.01 and t.rate == 0.01 for t in q.tau.values())


def one_edge_posterior(seed=0, matched=False):
    rng = np.random.default_rng(seed)
    if matched:
        # coordinates at the prior moments implied by the initial precisions
        um = vm = np.zeros((1, 1))
        prec = np.ones((1, 1))
    else:
        um, vm = rng.normal(size=(1, 1)), rng.normal(size=(1, 1))
        prec = rng.uniform(0.5, 2.0, (1, 1))
    q = Posterior(
        um, prec, np.array([0.2]), np.array([1.5]), vm, prec * 1.3, np.array([-0.4]), np.array([0.8]),
        tau={"u": GammaFactor(2.5, 1.7), "v": GammaFactor(3.0, 2.0), "bu": GammaFactor(1.5, 1.1),
             "bv": GammaFactor(4.0, 3.0)},
    )
    return q


def single_edge_sample(liked=True):
    return HiddenGraphSample([0, 1], [0], [liked], 1)


@pytest.mark.parametrize("seed,matched", [(0, False), (1, False), (2, True)])
def test_elbo_matches_quadrature(seed, matched):
    q = one_edge_posterior(seed, matched)
    hyper = HyperPriors(0.5, 0.7)
    g = BipartiteGraph.from_edges([0], [0], 1, 1)
    value = elbo(g, single_edge_sample(), q, hyper)
    assert value == pytest.approx(quadrature_elbo(q, 1, hyper), rel=1e-3)


def test_elbo_unliked_edge_matches_quadrature():
    q = one_edge_posterior(3)
    hyper = HyperPriors()
    g = BipartiteGraph.from_edges([], [], 1, 1)
    value = elbo(g, single_edge_sample(False), q, hyper)
    assert value == pytest.approx(quadrature_elbo(q, 0, hyper), rel=1e-3)


def random_instance(seed, n_users=8, n_items=6, k=3):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n_users, n_items, 0.4)
    q = Posterior.initialize(n_users, n_items, k, rng=rng, scale=0.7)
    q.user_prec = rng.uniform(0.5, 3, q.user_prec.shape)
    q.item_bias_mean = rng.normal(size=n_items)
    h = sample_hidden_graph(g, build_histogram(g.item_degrees, 1.0), seed, 1)
    return g, h, q


def test_elbo_terms_decompose_and_are_finite():
    g, h, q = random_instance(0)
    terms = elbo_terms(g, h, q, HyperPriors())
    assert all(np.isfinite([terms.edges, terms.vertices, terms.hyper]))
    assert terms.total == elbo(g, h, q, HyperPriors())


def test_elbo_empty_user_changes_only_vertex_terms():
    g, h, q = random_instance(1)
    hyper = HyperPriors()
    base = elbo_terms(g, h, q, hyper)
    users, items = g.edges()
    g2 = BipartiteGraph.from_edges(users, items, g.n_users + 1, g.n_items)
    h2 = HiddenGraphSample(np.append(h.indptr, h.indptr[-1]), h.items, h.liked, h.n_items)
    q2 = q.copy()
    q2.user_mean = np.vstack([q.user_mean, [[0.3, -0.2, 0.1]]])
    q2.user_prec = np.vstack([q.user_prec, [[1.0, 2.0, 3.0]]])
    q2.user_bias_mean = np.append(q.user_bias_mean, 0.0)
    q2.user_bias_prec = np.append(q.user_bias_prec, 1.0)
    terms = elbo_terms(g2, h2, q2, hyper)
    assert terms.edges == base.edges
    assert terms.hyper == base.hyper
    assert terms.vertices != base.vertices


def test_elbo_invariant_to_user_permutation():
    g, h, q = random_instance(2)
    hyper = HyperPriors()
    perm = np.random.default_rng(0).permutation(g.n_users)
    inv = np.argsort(perm)
    users, items = g.edges()
    gp = BipartiteGraph.from_edges(inv[users], items, g.n_users, g.n_items)
    rows = [h.row(m) for m in perm]
    indptr = np.concatenate([[0], np.cumsum([r[0].size for r in rows])])
    hp = HiddenGraphSample(indptr, np.concatenate([r[0] for r in rows]), np.concatenate([r[1] for r in rows]), h.n_items)
    qp = q.copy()
    for name in ("user_mean", "user_prec", "user_bias_mean", "user_bias_prec"):
        setattr(qp, name, getattr(q, name)[perm])
    assert elbo(gp, hp, qp, hyper) == pytest.approx(elbo(g, h, q, hyper), rel=1e-12)


def test_elbo_dimension_check():
    g, h, q = random_instance(3)
    with pytest.raises(ContractError):
        elbo(g, HiddenGraphSample([0, 0], [], [], 2), q, HyperPriors())


def test_clamped_bias_terms_are_dropped():
    g, h, q = random_instance(4)
    q.user_bias_prec[:] = np.inf
    q.user_bias_mean[:] = 0.0
    q.user_bias_clamped = True
    assert np.isfinite(elbo(g, h, q, HyperPriors()))


def test_posterior_round_trip():
    q = Posterior.initialize(3, 4, 2, rng=5, clamp_user_bias=True, user_ids=["a", "b", "c"])
    q.tau["v"] = GammaFactor(3.25, 1.125)
    buf = io.StringIO()
    write_posterior(q, buf)
    text = buf.getvalue()
    lines = text.splitlines()
    assert lines[0] == "# rgcf-posterior 1"
    assert lines[1] == "2 3 4 vb,clamped"
    assert lines[2].split()[0] == "a" and len(lines[2].split()) == 1 + 2 * 2 + 2
    assert lines[-1].split()[2:4] == ["3.25", "1.125"]
    back, kind = read_posterior(io.StringIO(text))
    assert kind == "vb" and back.user_bias_clamped and back.user_ids == ("a", "b", "c")
    assert back.item_ids == ("0", "1", "2", "3")
    for name in ("user_mean", "user_prec", "item_mean", "item_prec", "item_bias_mean", "user_bias_prec"):
        assert np.allclose(getattr(back, name), getattr(q, name), rtol=1e-8)
    assert back.tau["v"] == q.tau["v"]


def test_read_posterior_rejects_truncated_file():
    q = Posterior.initialize(2, 2, 1, rng=0)
    buf = io.StringIO()
    write_posterior(q, buf)
    lines = buf.getvalue().splitlines()
    with pytest.raises(ValueError):
        read_posterior(io.StringIO("\n".join(lines[:-2])))
    with pytest.raises(ValueError):
        read_posterior(io.StringIO(""))
