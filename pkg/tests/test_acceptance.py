"""Acceptance criteria 1-11, one pass/fail line each."""

import itertools
import time

import numpy as np

from rgcf import BPR, RandomGraphVB, leave_one_out_split, simulate_from_model
from rgcf.evaluation import evaluate, rank_score
from rgcf.graph import BipartiteGraph
from rgcf.inference import StepSchedule, TrainConfig, VBTrainer, step_size, train
from rgcf.model import GammaFactor, HyperPriors, Posterior, elbo, jj_bound_edge, lambda_xi, log_likelihood
from rgcf.prediction import probit_logistic, user_scores
from rgcf.sampling import (
    HiddenGraphSample, WeightTree, build_histogram, draw_without_replacement, histogram_exponent,
)

from conftest import random_graph
from elbo_oracle import quadrature_elbo
from gauss_hermite import logistic_gaussian

RESULTS = []


def report(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_01_bound_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    n = 10_000
    h = rng.integers(0, 2, n)
    g = h * rng.integers(0, 2, n)
    a = rng.uniform(-20, 20, n)
    xi = rng.uniform(-20, 20, n)
    below = np.exp(jj_bound_edge(g, h, a, xi)) <= np.exp(log_likelihood(g, h, a)) * (1 + 1e-12)
    gap = np.max(np.abs(jj_bound_edge(g, h, a, np.abs(a)) - log_likelihood(g, h, a)))
    elapsed = time.perf_counter() - start
    report(1, below.all() and gap <= 1e-9 and elapsed < 1.0,
           f"violations={int((~below).sum())} tight_gap={gap:.2e} time={elapsed:.3f}s")


def test_criterion_02_point_values():
    lam0, lam2 = lambda_xi(0.0), lambda_xi(2.0)
    s = StepSchedule()
    for t in (1, 2):
        s = step_size(t, 0, s)
    ok = lam0 == 0.125 and abs(lam2 - 0.0951999) <= 1e-6 and abs(s.eps - 0.746131) <= 1e-6
    report(2, ok, f"lambda(0)={lam0!r} lambda(2)={lam2:.9f} eps(delta=2)={s.eps:.9f}")


def test_criterion_03_histogram_exponent():
    gamma = histogram_exponent(0.5, 1024)
    pi_max = float(build_histogram(np.array([1, 2, 1024]), 0.5).pi.max())
    report(3, gamma == 0.9 and pi_max == 512.0, f"gamma={gamma!r} pi_max={pi_max!r}")


def test_criterion_04_sampler_fidelity():
    start = time.perf_counter()
    w = [1.0, 2.0, 3.0, 4.0, 5.0]
    W = sum(w)
    exact = {(i, j): w[i] / W * w[j] / (W - w[i]) for i, j in itertools.permutations(range(5), 2)}
    tree = WeightTree(w)
    rng = np.random.default_rng(0)
    draws = 100_000
    counts = {}
    for _ in range(draws):
        pair = tuple(draw_without_replacement(tree, 2, rng=rng))
        counts[pair] = counts.get(pair, 0) + 1
    tv = 0.5 * sum(abs(counts.get(p, 0) / draws - exact.get(p, 0.0)) for p in set(exact) | set(counts))
    elapsed = time.perf_counter() - start
    report(4, tv <= 0.02 and elapsed < 10.0, f"tv={tv:.4f} time={elapsed:.2f}s")


def test_criterion_05_elbo_monotone():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    g = random_graph(rng, 30, 20, 0.25)
    trainer = VBTrainer(g, TrainConfig(n_components=3, seed=5, init_scale=0.5))
    h = trainer.sample(1)
    hyper = trainer.config.hyper
    values = [elbo(g, h, trainer.posterior, hyper)]
    for _ in range(20):
        for side in ("user", "item"):
            trainer.update_biases(h, side, 1.0)
            values.append(elbo(g, h, trainer.posterior, hyper))
        for side in ("user", "item"):
            trainer.update_vectors(h, side, 1.0)
            values.append(elbo(g, h, trainer.posterior, hyper))
    worst = float(np.min(np.diff(values)))
    elapsed = time.perf_counter() - start
    report(5, worst >= -1e-8 and elapsed < 5.0,
           f"min_step_change={worst:.3e} start={values[0]:.3f} end={values[-1]:.3f} time={elapsed:.2f}s")


def test_criterion_06_elbo_oracle():
    q = Posterior(
        np.array([[0.3]]), np.array([[1.2]]), np.array([0.2]), np.array([1.5]),
        np.array([[-0.7]]), np.array([[0.9]]), np.array([-0.4]), np.array([0.8]),
        tau={"u": GammaFactor(2.5, 1.7), "v": GammaFactor(3.0, 2.0), "bu": GammaFactor(1.5, 1.1),
             "bv": GammaFactor(4.0, 3.0)},
    )
    hyper = HyperPriors(0.5, 0.7)
    g = BipartiteGraph.from_edges([0], [0], 1, 1)
    value = elbo(g, HiddenGraphSample([0, 1], [0], [True], 1), q, hyper)
    oracle = quadrature_elbo(q, 1, hyper)
    rel = abs(value - oracle) / abs(oracle)
    report(6, rel <= 1e-3, f"elbo={value:.6f} quadrature={oracle:.6f} rel_err={rel:.2e}")


def test_criterion_07_block_equivalence():
    start = time.perf_counter()
    g = random_graph(np.random.default_rng(7), 50, 40, 0.2)
    fits = [train(g, TrainConfig(n_components=5, max_iter=30, seed=7, block_count=b, clamp_user_bias=False),
                  track_elbo=False) for b in (1, 4)]
    names = ("user_mean", "user_prec", "user_bias_mean", "user_bias_prec", "item_mean", "item_prec",
             "item_bias_mean", "item_bias_prec")
    diff = max(float(np.max(np.abs(getattr(fits[0], k) - getattr(fits[1], k)))) for k in names)
    diff = max([diff] + [abs(fits[0].tau[k].mean - fits[1].tau[k].mean) for k in fits[0].tau])
    elapsed = time.perf_counter() - start
    report(7, diff <= 1e-8 and elapsed < 30.0, f"max_param_diff={diff:.2e} time={elapsed:.2f}s")


def test_criterion_08_generative_recovery():
    start = time.perf_counter()
    data = simulate_from_model(n_users=200, n_items=50, n_components=2, seed=0)
    split = leave_one_out_split(data.graph, 0)
    test = split.test
    trained = RandomGraphVB(n_components=2, max_iter=200, random_state=0, track_elbo=False).fit(split.train)
    untrained = RandomGraphVB(n_components=2, max_iter=0, random_state=0, track_elbo=False).fit(split.train)
    bpr = BPR(n_components=2, sampling="uniform", random_state=0).fit(split.train)
    like, chance, base = trained.score(test), untrained.score(test), bpr.score(test)
    elapsed = time.perf_counter() - start
    ok = like >= 0.75 and abs(chance - 0.5) <= 0.05 and base >= 0.65 and elapsed < 120.0
    report(8, ok, f"like={like:.4f} untrained={chance:.4f} bpr_uniform={base:.4f} "
                  f"held_out={len(test)} time={elapsed:.1f}s")


def test_criterion_09_mackay_grid():
    mean, var = np.meshgrid(np.linspace(-6, 6, 121), np.linspace(0, 10, 101))
    dev = float(np.max(np.abs(probit_logistic(mean, var) - logistic_gaussian(mean, var, n=64))))
    report(9, dev <= 0.02, f"max_abs_dev={dev:.4f}")


def test_criterion_10_rank_identities():
    rng = np.random.default_rng(10)
    T = 100
    absent = np.arange(T)
    mean = float(np.mean([rank_score(0, rng.permutation(T).astype(float), absent) for _ in range(10_000)]))
    ok_random = abs(mean - (T - 1) / (2 * T)) <= 0.02
    worst = 0.0
    for t in range(1, 9):
        cand = np.arange(t)
        for perm in itertools.permutations(range(t)):
            scores = np.array(perm, dtype=float)
            total = sum(rank_score(n, scores, cand) for n in range(t))
            worst = max(worst, abs(total / t - (t - 1) / (2 * t)))
    report(10, ok_random and worst <= 1e-12, f"mean_T100={mean:.4f} target={(T - 1) / (2 * T):.4f} "
                                            f"enumeration_max_err={worst:.1e}")


def test_criterion_11_head_tail_crossover():
    data = simulate_from_model(n_users=1000, n_items=300, n_components=2, seed=0)
    split = leave_one_out_split(data.graph, 0)
    test = split.test
    est = RandomGraphVB(n_components=2, max_iter=100, random_state=0, track_elbo=False).fit(split.train)
    hist = build_histogram(split.train.item_degrees, 1.0)
    q = est.posterior_
    modes = ("like", "popularity_times_like")
    rep = evaluate(split.train, test, {m: (lambda u, m=m: user_scores(q, u, m, hist)) for m in modes})
    bins = rep.by_item_bin()
    rows = [(a.lo, a.hi, a.count, a.mean, b.mean) for a, b in zip(bins["like"], bins["popularity_times_like"])
            if a.count]
    for lo, hi, count, like, pxl in rows:
        print(f"  item degree [{lo}, {hi}] n={count} like={like:.3f} popularity_times_like={pxl:.3f}")
    # bins with a handful of held-out edges are too noisy to call either way
    solid = [r for r in rows if r[2] >= 20]
    head, tail = solid[-1], solid[0]
    ok = head[4] > head[3] and tail[3] > tail[4]
    detail = " ".join(f"[{lo},{hi}]:{'PxL' if pxl > like else 'L'}" for lo, hi, _, like, pxl in rows)
    report(11, ok, f"winner_by_item_degree {detail}")
