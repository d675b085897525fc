"""Synthetic benchmark harness: generate instances, evaluate stocking
policies against the true-prior optimum, and run the method comparisons and
grouping experiments.

Every random quantity comes from numpy Generators seeded per (variable,
cell) so that instances are reproducible and nested: the first m items of a
size-n instance equal the size-m instance at the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (CountHistogram, Dataset, DemandPmf, ItemEconomics,
                   build_histogram, default_k_max, poisson_demand_pmf)
from .fmodel import (MarginalEstimate, fit_spline_marginal,
                     generalized_robbins_pmf, plugin_posterior_pmf)
from .gmodel import DiscreteMixture, fit_npmle, mixture_posterior_pmf
from .grouping import lr_test
from .newsvendor import expected_profit, optimal_stock
from .oracle import QuadraturePosterior


@dataclass(frozen=True)
class WeibullPrior:
    """Weibull(shape, scale) prior on the Poisson rate; unimodal with mode
    max(0, 1 - 1/shape)^(1/shape) * scale."""

    shape: float
    scale: float

    def __post_init__(self) -> None:
        if not self.shape > 0 or not self.scale > 0:
            raise ValueError("Weibull prior needs shape > 0 and scale > 0")

    def mode(self) -> float:
        return max(0.0, 1.0 - 1.0 / self.shape) ** (1.0 / self.shape) * self.scale

    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def log_pdf(self, lam):
        lam = np.asarray(lam, dtype=float)
        a, b = self.shape, self.scale
        with np.errstate(divide="ignore"):
            out = (math.log(a / b) + (a - 1.0) * (np.log(lam) - math.log(b))
                   - (lam / b) ** a)
        return np.where(lam > 0, out, -np.inf if a > 1 else math.log(a / b))

    def quantile(self, q: float) -> float:
        return self.scale * (-math.log1p(-q)) ** (1.0 / self.shape)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # inverse CDF: scale * (-log U)^(1/shape)
        return self.scale * (-np.log(rng.random(n))) ** (1.0 / self.shape)


@dataclass(frozen=True)
class EconConfig:
    revenue: float = 1.0
    cost_low: float = 0.5
    cost_high: float = 0.9
    fixed_cost: float = 0.2
    fixed_unit_cost: float | None = None  # overrides the U(low, high) draw

    def __post_init__(self) -> None:
        if not self.revenue > 0:
            raise ValueError("revenue must be > 0")
        if not 0 <= self.cost_low <= self.cost_high:
            raise ValueError("need 0 <= cost_low <= cost_high")
        if self.fixed_cost < 0:
            raise ValueError("fixed_cost must be >= 0")


@dataclass(frozen=True)
class Instance:
    """Simulated items plus the prior that generated them."""

    rates: np.ndarray
    revenues: np.ndarray
    unit_costs: np.ndarray
    fixed_costs: np.ndarray
    counts: np.ndarray
    prior: object
    horizon: float
    seed: int

    @property
    def n(self) -> int:
        return int(self.counts.size)

    def subset(self, m: int) -> "Instance":
        """Leading items of the master instance (the nested-design subsets)."""
        if not 1 <= m <= self.n:
            raise ValueError(f"subset size must be in [1, {self.n}]")
        return replace(self, rates=self.rates[:m], revenues=self.revenues[:m],
                       unit_costs=self.unit_costs[:m],
                       fixed_costs=self.fixed_costs[:m], counts=self.counts[:m])

    def economics(self, i: int) -> ItemEconomics:
        return ItemEconomics(float(self.revenues[i]), float(self.unit_costs[i]),
                             float(self.fixed_costs[i]))

    def histogram(self) -> CountHistogram:
        return build_histogram(Dataset(self.counts, self.horizon))


def generate_instance(n: int, prior, econ: EconConfig | None = None,
                      horizon: float = 1.0, seed: int = 0) -> Instance:
    """Draw rates from the prior, counts from Poisson(rate * horizon), and
    costs from U(cost_low, cost_high); r and b are constants.

    Separate per-variable streams make instances with the same seed nested
    across n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    econ = econ or EconConfig()
    rng_lam = np.random.default_rng([seed, 0])
    rng_x = np.random.default_rng([seed, 1])
    rng_c = np.random.default_rng([seed, 2])
    rates = prior.sample(rng_lam, n)
    counts = rng_x.poisson(rates * horizon)
    if econ.fixed_unit_cost is not None:
        costs = np.full(n, econ.fixed_unit_cost)
    else:
        costs = rng_c.uniform(econ.cost_low, econ.cost_high, size=n)
    return Instance(
        rates=rates,
        revenues=np.full(n, econ.revenue),
        unit_costs=costs,
        fixed_costs=np.full(n, econ.fixed_cost),
        counts=counts,
        prior=prior,
        horizon=horizon,
        seed=seed,
    )


@dataclass(frozen=True)
class PolicyEvaluation:
    quantities: np.ndarray
    item_profits: np.ndarray          # expected, under the true posterior
    avg_profit: float
    opt_avg_profit: float
    gap_pct: float | None             # None when the optimal average is <= 0

    @property
    def pct_stocked(self) -> float:
        return 100.0 * float((self.quantities > 0).mean())

    @property
    def avg_stock_given_positive(self) -> float:
        pos = self.quantities[self.quantities > 0]
        return float(pos.mean()) if pos.size else 0.0


class TruePosterior:
    """Posterior predictive under the instance's generating prior, cached
    per distinct observed count (the only per-item input it depends on)."""

    def __init__(self, instance: Instance, nodes: int = 4096):
        self.instance = instance
        prior = instance.prior
        s_max = int(instance.counts.max())
        mean_rate = max(float(instance.counts.mean()) / instance.horizon, 1.0)
        self.k_max = default_k_max(s_max, mean_rate)
        if isinstance(prior, DiscreteMixture):
            self._quad = None
        else:
            self._quad = QuadraturePosterior(
                prior.log_pdf, prior.quantile(1.0 - 1e-9), instance.horizon,
                s_max=s_max, k_max_hint=self.k_max, nodes=nodes)
        self._cache: dict[int, DemandPmf] = {}

    def pmf(self, x: int) -> DemandPmf:
        got = self._cache.get(x)
        if got is None:
            if self._quad is None:
                got = mixture_posterior_pmf(self.instance.prior, x,
                                            self.instance.horizon, self.k_max)
            else:
                got = self._quad.posterior_pmf(x, self.k_max)
            self._cache[x] = got
        return got


def true_posterior_policy(instance: Instance,
                          true_post: TruePosterior | None = None
                          ) -> PolicyEvaluation:
    """The gap-0 benchmark: stock optimally against the true posterior."""
    tp = true_post or TruePosterior(instance)
    quantities = np.zeros(instance.n, dtype=int)
    for i in range(instance.n):
        decision = optimal_stock(tp.pmf(int(instance.counts[i])),
                                 instance.economics(i))
        quantities[i] = decision.quantity
    return evaluate_policy(instance, quantities, tp)


def evaluate_policy(instance: Instance, quantities: np.ndarray,
                    true_post: TruePosterior | None = None
                    ) -> PolicyEvaluation:
    """Expected profit of the given decisions under the true posterior, and
    the percentage gap to the optimal policy (undefined if opt avg <= 0)."""
    quantities = np.asarray(quantities, dtype=int)
    if quantities.shape != (instance.n,):
        raise ValueError("need one decision per item")
    tp = true_post or TruePosterior(instance)
    profits = np.empty(instance.n)
    opt_profits = np.empty(instance.n)
    for i in range(instance.n):
        pmf = tp.pmf(int(instance.counts[i]))
        econ = instance.economics(i)
        profits[i] = expected_profit(pmf, int(quantities[i]), econ)
        opt_profits[i] = optimal_stock(pmf, econ).expected_profit
    avg = float(profits.mean())
    opt_avg = float(opt_profits.mean())
    gap = (opt_avg - avg) / opt_avg * 100.0 if opt_avg > 0 else None
    return PolicyEvaluation(quantities, profits, avg, opt_avg, gap)


def _decide_per_count(instance: Instance, pmf_for: dict[int, DemandPmf]
                      ) -> np.ndarray:
    quantities = np.zeros(instance.n, dtype=int)
    for i in range(instance.n):
        pmf = pmf_for[int(instance.counts[i])]
        quantities[i] = optimal_stock(pmf, instance.economics(i)).quantity
    return quantities


def naive_decisions(instance: Instance, k_max: int) -> np.ndarray:
    """Poisson at the raw per-item rate estimate X_i / T."""
    pmfs = {x: poisson_demand_pmf(x / instance.horizon, k_max)
            for x in np.unique(instance.counts)}
    return _decide_per_count(instance, pmfs)


def plugin_decisions(instance: Instance, marginal: MarginalEstimate,
                     k_max: int) -> np.ndarray:
    pmfs = {x: plugin_posterior_pmf(marginal, int(x), k_max)
            for x in np.unique(instance.counts)}
    return _decide_per_count(instance, pmfs)


def f_full_decisions(instance: Instance, marginal: MarginalEstimate,
                     k_max: int) -> np.ndarray:
    """Generalized-Robbins posterior, sanitised (negatives clamped,
    renormalised) for decision use; the raw values stay available through
    fmodel.generalized_robbins_pmf."""
    pmfs = {x: generalized_robbins_pmf(marginal, int(x), k_max).sanitized()
            for x in np.unique(instance.counts)}
    return _decide_per_count(instance, pmfs)


def g_model_decisions(instance: Instance, mixture: DiscreteMixture,
                      k_max: int) -> np.ndarray:
    pmfs = {x: mixture_posterior_pmf(mixture, int(x), instance.horizon, k_max)
            for x in np.unique(instance.counts)}
    return _decide_per_count(instance, pmfs)


METHODS = ("naive", "plugin", "f-full", "g")


def method_decisions(instance: Instance, methods=METHODS,
                     npmle_eps: float = 1e-6) -> dict[str, np.ndarray]:
    """Fit each requested method on the observations only and decide."""
    s_max = int(instance.counts.max())
    mean_rate = max(float(instance.counts.mean()) / instance.horizon, 1.0)
    k_max = default_k_max(s_max, mean_rate)
    hist = instance.histogram()
    out: dict[str, np.ndarray] = {}
    marginal = None
    if "plugin" in methods or "f-full" in methods:
        marginal = fit_spline_marginal(hist)
    for name in methods:
        if name == "naive":
            out[name] = naive_decisions(instance, k_max)
        elif name == "plugin":
            out[name] = plugin_decisions(instance, marginal, k_max)
        elif name == "f-full":
            out[name] = f_full_decisions(instance, marginal, k_max)
        elif name == "g":
            mixture, _ = fit_npmle(hist, eps=npmle_eps)
            out[name] = g_model_decisions(instance, mixture, k_max)
        else:
            raise ValueError(f"unknown method {name!r}")
    return out


@dataclass(frozen=True)
class BenchmarkConfig:
    n_values: tuple = (1000,)
    betas: tuple = (2.0, 3.0)
    fixed_costs: tuple = (0.2,)
    methods: tuple = METHODS
    replications: int = 20
    seed: int = 0
    alpha: float = 1.8
    horizon: float = 1.0
    npmle_eps: float = 1e-6


DESK_PRESET = BenchmarkConfig(n_values=(50, 100, 250, 500, 1000, 5000),
                              betas=(2.0, 3.0), replications=20)
PAPER_PRESET = BenchmarkConfig(
    n_values=(50, 100, 250, 500, 1000, 5000, 10000, 25000, 50000),
    betas=(2.0, 3.0, 4.0, 5.0), replications=50)


BENCHMARK_COLUMNS = ("method", "n", "beta", "b", "replication", "avg_profit",
                     "gap_pct", "pct_items_stocked", "avg_stock_given_positive")


def run_benchmark(config: BenchmarkConfig, progress=None) -> list[dict]:
    """One row per (method, n, beta, b, replication); failures are recorded
    and the cell skipped rather than aborting the sweep."""
    rows: list[dict] = []
    cell = 0
    for beta in config.betas:
        prior = WeibullPrior(config.alpha, beta)
        for b in config.fixed_costs:
            econ = EconConfig(fixed_cost=b)
            for rep in range(config.replications):
                cell += 1
                master_seed = _cell_seed(config.seed, cell)
                master = generate_instance(max(config.n_values), prior, econ,
                                           config.horizon, master_seed)
                for n in config.n_values:
                    instance = master.subset(n)
                    tp = TruePosterior(instance)
                    try:
                        decisions = method_decisions(instance, config.methods,
                                                     config.npmle_eps)
                    except Exception as exc:  # noqa: BLE001 - cell isolation
                        rows.append({"method": f"error:{type(exc).__name__}",
                                     "n": n, "beta": beta, "b": b,
                                     "replication": rep,
                                     "avg_profit": math.nan, "gap_pct": None,
                                     "pct_items_stocked": math.nan,
                                     "avg_stock_given_positive": math.nan})
                        continue
                    for name, q in decisions.items():
                        ev = evaluate_policy(instance, q, tp)
                        rows.append({
                            "method": name, "n": n, "beta": beta, "b": b,
                            "replication": rep,
                            "avg_profit": ev.avg_profit,
                            "gap_pct": ev.gap_pct,
                            "pct_items_stocked": ev.pct_stocked,
                            "avg_stock_given_positive":
                                ev.avg_stock_given_positive,
                        })
                    if progress is not None:
                        progress(rows[-1])
    return rows


def _cell_seed(base: int, cell: int) -> int:
    return int(np.random.SeedSequence([base, cell]).generate_state(1)[0])


def realized_profit(quantities, future_sales, revenues, unit_costs,
                    fixed_costs) -> float:
    """Total realised profit of decisions against observed future sales."""
    q = np.asarray(quantities, dtype=float)
    s = np.asarray(future_sales, dtype=float)
    r = np.asarray(revenues, dtype=float)
    c = np.asarray(unit_costs, dtype=float)
    b = np.asarray(fixed_costs, dtype=float)
    if not (q.shape == s.shape == r.shape == c.shape == b.shape):
        raise ValueError("all inputs must have equal length")
    return float(np.sum(r * np.minimum(q, s) - c * q - b * (q > 0)))


@dataclass(frozen=True)
class GroupingConfig:
    n0: int = 1000
    n1: int = 200
    beta0: float = 4.0
    multipliers: tuple = (1.0, 1.6)
    fixed_costs: tuple = (0.2,)
    cutoffs: tuple = (0.0005, 0.05, 0.5, 1.0)
    replications: int = 30
    seed: int = 0
    alpha: float = 1.8
    k: int = 5
    npmle_eps: float = 1e-4


GROUPING_COLUMNS = ("beta_multiplier", "b", "cutoff", "mean_profit",
                    "split_proportion", "replications")


def grouping_experiment(config: GroupingConfig) -> list[dict]:
    """Split-or-pool sweep for the designated (second) group.

    Per replication the LR test runs once; each cutoff then decides whether
    the second group is estimated from its own data or from the pool, and
    the resulting decisions for that group are scored under its true
    posterior. Per-cutoff mean profit and split proportion are returned.
    """
    rows: list[dict] = []
    cell = 0
    for mult in config.multipliers:
        prior0 = WeibullPrior(config.alpha, config.beta0)
        prior1 = WeibullPrior(config.alpha, config.beta0 * mult)
        for b in config.fixed_costs:
            econ = EconConfig(fixed_cost=b)
            profits = {c: [] for c in config.cutoffs}
            splits = {c: 0 for c in config.cutoffs}
            done = 0
            for rep in range(config.replications):
                cell += 1
                seed = _cell_seed(config.seed, cell)
                inst0 = generate_instance(config.n0, prior0, econ, seed=seed)
                inst1 = generate_instance(config.n1, prior1, econ,
                                          seed=seed + 1)
                hist0, hist1 = inst0.histogram(), inst1.histogram()
                try:
                    test = lr_test(hist0, hist1, k=config.k, seed=seed)
                    pooled = CountHistogram.merge(hist0, hist1)
                    mix_own, _ = fit_npmle(hist1, eps=config.npmle_eps)
                    mix_pool, _ = fit_npmle(pooled, eps=config.npmle_eps)
                except Exception:  # noqa: BLE001 - per-run failures logged
                    continue
                done += 1
                tp1 = TruePosterior(inst1)
                s_max = int(inst1.counts.max())
                k_max = default_k_max(
                    s_max, max(float(inst1.counts.mean()), 1.0))
                for cutoff in config.cutoffs:
                    split = test.p_value < cutoff
                    mixture = mix_own if split else mix_pool
                    q = g_model_decisions(inst1, mixture, k_max)
                    ev = evaluate_policy(inst1, q, tp1)
                    profits[cutoff].append(ev.avg_profit)
                    splits[cutoff] += int(split)
            for cutoff in config.cutoffs:
                vals = profits[cutoff]
                rows.append({
                    "beta_multiplier": mult, "b": b, "cutoff": cutoff,
                    "mean_profit": float(np.mean(vals)) if vals else math.nan,
                    "split_proportion": splits[cutoff] / done if done else
                        math.nan,
                    "replications": done,
                })
    return rows


def plugin_breaking_cost(prior: DiscreteMixture, s_threshold: int,
                         frac: float = 0.5) -> float:
    """Unit cost at which the plugin policy loses money on a two-atom prior.

    With atoms lam2 < lam1, weights p2/p1, and q = lam2/lam1, the cost is
    c = 1 - e^(-lam1) - a q^S with a strictly between
    a_tilde = (lam1 - lam2) e^(-lam2) p2/p1   and
    a_star = (e^(lam1-lam2) - 1) e^(-lam2) p2/p1;
    frac picks the point between the two bounds.
    """
    if prior.support_size != 2:
        raise ValueError("construction needs exactly two atoms")
    if not 0 < frac < 1:
        raise ValueError("frac must be in (0, 1)")
    lam2, lam1 = float(prior.atoms[0]), float(prior.atoms[1])
    p2, p1 = float(prior.weights[0]), float(prior.weights[1])
    q = lam2 / lam1
    a_tilde = (lam1 - lam2) * math.exp(-lam2) * p2 / p1
    a_star = (math.exp(lam1 - lam2) - 1.0) * math.exp(-lam2) * p2 / p1
    a = a_tilde + frac * (a_star - a_tilde)
    c = 1.0 - math.exp(-lam1) - a * q**s_threshold
    if not 0 < c < 1:
        raise ValueError("construction gives an out-of-range cost; "
                         "use smaller atoms or a smaller threshold")
    return c
