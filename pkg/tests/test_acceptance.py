"""Acceptance suite: one test per criterion, sized and tolerated as stated.

Each test prints a single PASS/FAIL line (visible with -s or on failure) so
the whole gate can be read off the log.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import gammaln

from _utils import (profit_direct, random_demand_pmf, random_mixture,
                    random_mixture_bounded_ratio)
from ebstock import (BenchmarkConfig, Dataset, DiscreteMixture, EconConfig,
                     GammaPrior, ItemEconomics, QuadraturePosterior,
                     TruePosterior, WeibullPrior, brute_force_posterior,
                     brute_force_posterior_pmf, build_histogram,
                     evaluate_policy, exact_nb_marginal, fit_npmle,
                     fit_spline_marginal, generalized_robbins_pmf,
                     generate_instance, lr_test, mixture_log_likelihood,
                     mixture_posterior_mean, mixture_posterior_pmf,
                     nb_posterior_pmf, optimal_stock, plugin_breaking_cost,
                     poisson_demand_pmf, robbins_mean,
                     spline_constraint_residuals, true_posterior_policy)
from ebstock.simulation import method_decisions, naive_decisions


def report(num: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num:2d} [{'PASS' if ok else 'FAIL'}] {detail}")


# paper table: exact NB(10, 3/5) posterior vs the generalized-Robbins series
# evaluated on the exact marginal, shape=2, scale=2, X=8
APPENDIX_EXACT = [0.006047, 0.024186, 0.053210, 0.085136, 0.110677, 0.123959,
                  0.123959, 0.113334, 0.096334, 0.077067, 0.058571, 0.042597,
                  0.029818, 0.020184, 0.013264, 0.008489]
APPENDIX_SERIES = [0.006047, 0.024186, 0.053210, 0.085136, 0.110677, 0.123960,
                   0.123951, 0.113285, 0.096069, 0.076412, 0.057512, 0.046180,
                   -0.012966, -0.108988, -0.432127, 0.453766]


def test_criterion_01_appendix_table_reproduction():
    """Exact posterior column to 6 dp; series column to 4 dp with 1e-3 on
    the unstable entries (k >= 11, where the published series departs from
    the exact posterior by more than 1e-3)."""
    t0 = time.time()
    prior = GammaPrior(2.0, 2.0)
    exact = [nb_posterior_pmf(prior, 8, k) for k in range(16)]
    series = generalized_robbins_pmf(exact_nb_marginal(prior), 8, 15).values
    elapsed = time.time() - t0

    problems = []
    for k in range(16):
        if abs(exact[k] - APPENDIX_EXACT[k]) > 5e-7:
            problems.append(f"exact k={k}: {exact[k]:.6f} != "
                            f"{APPENDIX_EXACT[k]:.6f}")
    for k in range(16):
        tol = 1e-3 if k >= 11 else 5e-5
        if abs(series[k] - APPENDIX_SERIES[k]) > tol:
            problems.append(f"series k={k}: {series[k]:.6f} vs published "
                            f"{APPENDIX_SERIES[k]:.6f} (tol {tol:g})")
    if elapsed >= 1.0:
        problems.append(f"runtime {elapsed:.2f}s >= 1s")
    ok = not problems
    report(1, ok, "Appendix table: exact column 6dp, series column 4dp/1e-3, "
                  f"< 1s (elapsed {elapsed:.2f}s)")
    assert ok, "; ".join(problems)


def test_criterion_02_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    decisions_match = True
    for _ in range(50):
        mix = random_mixture(rng)
        x = int(rng.integers(0, 12))
        k_max = 30
        fast = mixture_posterior_pmf(mix, x, 1.0, k_max)
        slow = brute_force_posterior_pmf(mix, x, 1.0, k_max)
        worst = max(worst, float(np.max(np.abs(fast.probs - slow.probs))))
        econ = ItemEconomics(1.0, float(rng.uniform(0.2, 0.9)),
                             float(rng.uniform(0.0, 0.5)))
        if optimal_stock(fast, econ).quantity != \
                optimal_stock(slow, econ).quantity:
            decisions_match = False
    elapsed = time.time() - t0
    ok = worst <= 1e-12 and decisions_match and elapsed < 5.0
    report(2, ok, f"posterior oracle equivalence: max |diff| = {worst:.2e}, "
                  f"decisions identical = {decisions_match}, {elapsed:.1f}s")
    assert ok


def test_criterion_03_newsvendor_enumeration():
    t0 = time.time()
    rng = np.random.default_rng(3)
    agree = True
    for case in range(200):
        pmf = random_demand_pmf(rng)
        force_zero = case % 4 == 0
        econ = ItemEconomics(
            1.0,
            float(rng.uniform(0.05, 0.95)),
            float(rng.uniform(2.0, 20.0)) if force_zero
            else float(rng.uniform(0.0, 0.6)),
        )
        profits = [profit_direct(pmf, x, econ) for x in range(101)]
        best = int(np.argmax(profits))
        if profits[best] <= 0:
            best = 0
        if optimal_stock(pmf, econ).quantity != best:
            agree = False
            break
    elapsed = time.time() - t0
    ok = agree and elapsed < 5.0
    report(3, ok, f"optimal_stock == argmax over [0, 100] on 200 cases, "
                  f"{elapsed:.1f}s")
    assert ok


def test_criterion_04_npmle_certificates():
    t0 = time.time()
    rng = np.random.default_rng(4)
    all_ok = True
    detail = []
    for trial in range(10):
        true = random_mixture(rng, min_atoms=1, max_atoms=4, lam_high=10.0)
        lam = true.sample(rng, 20_000)
        hist = build_histogram(Dataset(rng.poisson(lam)))
        mix, rep = fit_npmle(hist, eps=1e-6, max_iter=300)
        certified = rep.certified and len(rep.iterations) <= 300
        ll_ok = mixture_log_likelihood(mix, hist) >= \
            mixture_log_likelihood(true, hist) - 1e-6 * hist.n
        bound_ok = rep.log_gamma_bound > -math.inf and all(
            it.min_log_v >= rep.log_gamma_bound - 1e-9
            for it in rep.iterations)
        if not (certified and ll_ok and bound_ok):
            all_ok = False
            detail.append(f"trial {trial}: certified={certified} "
                          f"ll_ok={ll_ok} bound_ok={bound_ok}")
    elapsed = time.time() - t0
    ok = all_ok and elapsed < 120.0
    report(4, ok, f"NPMLE certificates on 10 datasets (n=20000), "
                  f"{elapsed:.0f}s")
    assert ok, "; ".join(detail)


def test_criterion_05_spline_constraints():
    t0 = time.time()
    rng = np.random.default_rng(5)
    priors = [WeibullPrior(1.8, 2.0), WeibullPrior(1.8, 4.0),
              GammaPrior(2.0, 2.0), GammaPrior(1.2, 1.0)]
    all_ok = True
    detail = []
    for trial in range(10):
        prior = priors[trial % len(priors)]
        n = int(rng.integers(2000, 5001))
        lam = prior.sample(rng, n)
        hist = build_histogram(Dataset(rng.poisson(lam)))
        est = fit_spline_marginal(hist)
        res = spline_constraint_residuals(est)
        means = [robbins_mean(est, s) for s in range(est.spline.tail_start)]
        mono = all(b - a >= -1e-8 for a, b in zip(means, means[1:]))
        good = (res["natural"] <= 1e-8 and res["monotonicity"] <= 1e-8
                and res["probability"] <= 1e-8 and mono)
        if not good:
            all_ok = False
            detail.append(f"trial {trial}: {res} mono={mono}")
    elapsed = time.time() - t0
    report(5, all_ok, f"spline constraint satisfaction on 10 datasets, "
                      f"{elapsed:.0f}s")
    assert all_ok, "; ".join(detail)


def test_criterion_06_directional_benchmark():
    t0 = time.time()
    from ebstock import run_benchmark
    config = BenchmarkConfig(n_values=(1000,), betas=(2.0, 3.0),
                             fixed_costs=(0.2,),
                             methods=("naive", "plugin", "g"),
                             replications=20, seed=6)
    rows = [r for r in run_benchmark(config)
            if not r["method"].startswith("error")]
    problems = []
    for beta in (2.0, 3.0):
        gaps = {m: [] for m in ("naive", "plugin", "g")}
        profits = {m: [] for m in ("naive", "plugin", "g")}
        for row in rows:
            if row["beta"] == beta:
                profits[row["method"]].append(row["avg_profit"])
                if row["gap_pct"] is not None:
                    gaps[row["method"]].append(row["gap_pct"])
        for better, worse in (("g", "plugin"), ("plugin", "naive")):
            a, b = np.array(gaps[better]), np.array(gaps[worse])
            if len(a) != len(b) or len(a) < 15:
                problems.append(f"beta={beta}: undefined gaps")
                continue
            diff = b - a
            se = diff.std(ddof=1) / math.sqrt(len(diff))
            if not (diff.mean() > 0 and diff.mean() - 2 * se > 0):
                problems.append(
                    f"beta={beta}: {better} vs {worse} diff "
                    f"{diff.mean():.2f} +- {se:.2f}")
        if beta == 2.0 and not np.mean(profits["naive"]) < 0:
            problems.append(f"beta=2: naive mean profit "
                            f"{np.mean(profits['naive']):.4f} not < 0")
    elapsed = time.time() - t0
    ok = not problems and elapsed < 600.0
    report(6, ok, f"gap ordering g < plugin < naive at beta in {{2, 3}}, "
                  f"naive loses at beta=2; {elapsed:.0f}s")
    assert ok, "; ".join(problems)


def test_criterion_07_theorem_regimes():
    t0 = time.time()
    # (a) bounded two-atom prior, c = C_L, b large: naive total < 0,
    #     decreasing in n
    prior_a = DiscreteMixture(np.array([1.0, 5.0]), np.array([0.7, 0.3]))
    econ_a = EconConfig(fixed_cost=2.5, fixed_unit_cost=0.5)
    hits_a = 0
    for rep in range(20):
        master = generate_instance(8000, prior_a, econ_a, seed=700 + rep)
        totals = []
        for n in (500, 2000, 8000):
            inst = master.subset(n)
            tp = TruePosterior(inst)
            q = naive_decisions(inst, tp.k_max)
            ev = evaluate_policy(inst, q, tp)
            totals.append(ev.avg_profit * n)
        if totals[0] < 0 and totals[0] > totals[1] > totals[2]:
            hits_a += 1

    # (b) plugin-breaking cost from the two-atom construction, b = 0:
    #     plugin total < 0 < optimal total at n = 20000
    prior_b = DiscreteMixture(np.array([2.0, 6.0]), np.array([0.5, 0.5]))
    cost = plugin_breaking_cost(prior_b, s_threshold=8, frac=0.3)
    econ_b = EconConfig(fixed_cost=0.0, fixed_unit_cost=cost)
    # construction sanity: the plugin stocks exactly one unit at s >= S
    for s in range(8, 40):
        lam_hat = mixture_posterior_mean(prior_b, s)
        q = optimal_stock(poisson_demand_pmf(lam_hat, 200),
                          ItemEconomics(1.0, cost, 0.0)).quantity
        assert q == 1, f"construction broken at s={s}: plugin stocks {q}"
    hits_b = 0
    for rep in range(20):
        inst = generate_instance(20_000, prior_b, econ_b, seed=7000 + rep)
        tp = TruePosterior(inst)
        pmfs = {x: poisson_demand_pmf(mixture_posterior_mean(prior_b, int(x)),
                                      tp.k_max)
                for x in np.unique(inst.counts)}
        q = np.array([
            optimal_stock(pmfs[int(x)], inst.economics(i)).quantity
            for i, x in enumerate(inst.counts)])
        plug = evaluate_policy(inst, q, tp)
        opt = true_posterior_policy(inst, tp)
        if plug.avg_profit * inst.n < 0 < opt.avg_profit * inst.n:
            hits_b += 1
    elapsed = time.time() - t0
    ok = hits_a >= 18 and hits_b >= 18 and elapsed < 600.0
    report(7, ok, f"theorem regimes: naive-loss {hits_a}/20, "
                  f"plugin-loss {hits_b}/20; {elapsed:.0f}s")
    assert ok


def test_criterion_08_zero_probability_monotone():
    rng = np.random.default_rng(8)
    for _ in range(100):
        mix = random_mixture_bounded_ratio(rng)
        vals = [brute_force_posterior(mix, x, 1.0, 0) for x in range(21)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    report(8, True, "P[demand=0 | X=k] strictly decreasing, 100 mixtures")


def test_criterion_09_lr_test_calibration():
    # beta0 = 8 from the paper grid {2, 4, 8}: at smaller scales the K-atom
    # family saturates the nonparametric one and the chi-square null is very
    # conservative (see the grouping module's open question)
    t0 = time.time()
    prior = WeibullPrior(1.8, 8.0)
    rejections = 0
    for rep in range(200):
        rng = np.random.default_rng([900, rep])
        h0 = build_histogram(Dataset(rng.poisson(prior.sample(rng, 1000))))
        h1 = build_histogram(Dataset(rng.poisson(prior.sample(rng, 1000))))
        res = lr_test(h0, h1, cutoff=0.05, seed=rep)
        rejections += res.split
    null_rate = rejections / 200

    alt = WeibullPrior(1.8, 8.0 * 1.6)
    power_hits = 0
    for rep in range(100):
        rng = np.random.default_rng([901, rep])
        h0 = build_histogram(Dataset(rng.poisson(prior.sample(rng, 1000))))
        h1 = build_histogram(Dataset(rng.poisson(alt.sample(rng, 1000))))
        res = lr_test(h0, h1, cutoff=0.05, seed=rep)
        power_hits += res.split
    power = power_hits / 100
    elapsed = time.time() - t0
    ok = 0.01 <= null_rate <= 0.12 and power > 0.8 and elapsed < 1200.0
    report(9, ok, f"LR test: null rejection {null_rate:.3f} in [0.01, 0.12], "
                  f"power {power:.2f} > 0.8; {elapsed:.0f}s")
    assert ok


def test_criterion_10_half_normal_ratio_growth():
    def log_pdf(lam):
        lam = np.asarray(lam, dtype=float)
        return 0.5 * math.log(2.0 / math.pi) - 0.5 * lam**2

    quad = QuadraturePosterior(log_pdf, 4.5, s_max=62, nodes=8192)
    f = quad.marginal(np.arange(62))
    scaled = [f[k + 1] / f[k] * math.sqrt(k / math.log(k))
              for k in range(10, 61)]
    ok = max(scaled) <= 2.0 * scaled[0]
    report(10, ok, f"Half-Normal R(k) sqrt(k/log k) bounded on [10, 60]: "
                   f"max/first = {max(scaled) / scaled[0]:.2f}")
    assert ok
