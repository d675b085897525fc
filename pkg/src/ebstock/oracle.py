"""Exact conjugate and brute-force references used to validate estimators.

Under a gamma prior the marginal of the observed count and the posterior
predictive of future demand are both negative binomial, which gives closed
forms to check every estimator against. Finite mixtures get a direct-sum
reference, continuous priors a quadrature one.

Negative binomial convention: NB(r, p) has pmf C(k+r-1, k) p^r (1-p)^k,
i.e. p is the "success" probability. A Gamma(shape a, scale t) prior on the
rate with X ~ Poisson(rate * T) gives X ~ NB(a, 1/(1 + t T)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import gamma as gamma_dist
from scipy.stats import nbinom

from .core import DemandPmf
from .gmodel import DiscreteMixture


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    scale: float

    def __post_init__(self) -> None:
        if not self.shape > 0 or not self.scale > 0:
            raise ValueError("gamma prior needs shape > 0 and scale > 0")

    def mean(self) -> float:
        return self.shape * self.scale

    def log_pdf(self, lam):
        return gamma_dist.logpdf(lam, self.shape, scale=self.scale)

    def quantile(self, q: float) -> float:
        return float(gamma_dist.ppf(q, self.shape, scale=self.scale))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.gamma(self.shape, self.scale, size=n)


def nb_marginal(prior: GammaPrior, s: int, horizon: float = 1.0) -> float:
    """P[X = s] for X ~ Poisson(rate * horizon), rate ~ prior.

    X ~ NB(shape, 1/(1 + scale * horizon)); horizons other than 1 enter by
    rate scaling.
    """
    if s < 0:
        raise ValueError("count must be >= 0")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    return float(nbinom.pmf(s, prior.shape, 1.0 / (1.0 + prior.scale * horizon)))


def nb_posterior_pmf(prior: GammaPrior, x: int, k: int,
                     horizon: float = 1.0) -> float:
    """Exact posterior predictive P[future demand = k | X = x].

    For horizon 1 this is NB(shape + x, (1 + scale)/(1 + 2 scale)); the
    general-horizon form follows from the Gamma(shape + x, scale/(1 +
    scale*horizon)) posterior but is only paper-verified at horizon 1.
    """
    if x < 0 or k < 0:
        raise ValueError("counts must be >= 0")
    t_post = prior.scale / (1.0 + prior.scale * horizon)
    return float(nbinom.pmf(k, prior.shape + x, 1.0 / (1.0 + t_post)))


def nb_posterior_mean(prior: GammaPrior, x: int, horizon: float = 1.0) -> float:
    """Exact posterior mean of the rate given X = x."""
    if x < 0:
        raise ValueError("count must be >= 0")
    return (prior.shape + x) * prior.scale / (1.0 + prior.scale * horizon)


def brute_force_posterior(mix: DiscreteMixture, x: int, horizon: float,
                          k: int) -> float:
    """P[future demand = k | X = x] for a finite mixture, by direct summation.

    Evaluates (sum_j p_j lam_j^(k+x) e^(-lam_j (T+1))) /
    (k! sum_j p_j lam_j^x e^(-lam_j T)) term by term in log space. Kept as a
    scalar loop so it stays an independent check on the vectorised
    implementation in gmodel.
    """
    if x < 0 or k < 0:
        raise ValueError("counts must be >= 0")

    def log_terms(power: int, decay: float) -> list[float]:
        out = []
        for lam, w in zip(mix.atoms, mix.weights):
            if lam == 0.0:
                out.append(math.log(w) if power == 0 else -math.inf)
            else:
                out.append(math.log(w) + power * math.log(lam) - lam * decay)
        return out

    den = log_terms(x, horizon)
    mden = max(den)
    if mden == -math.inf:
        raise ValueError("all atoms give zero mass to the observed count")
    log_den = mden + math.log(math.fsum(math.exp(t - mden) for t in den))
    num = log_terms(k + x, horizon + 1.0)
    mnum = max(num)
    if mnum == -math.inf:
        return 0.0
    log_num = mnum + math.log(math.fsum(math.exp(t - mnum) for t in num))
    return math.exp(log_num - float(gammaln(k + 1.0)) - log_den)


def brute_force_posterior_pmf(mix: DiscreteMixture, x: int, horizon: float,
                              k_max: int) -> DemandPmf:
    probs = np.array([brute_force_posterior(mix, x, horizon, k)
                      for k in range(k_max + 1)])
    total = float(probs.sum())
    if total > 1.0 + 1e-9:
        raise ValueError(f"posterior pmf sums to {total} > 1")
    return DemandPmf(probs, max(0.0, 1.0 - total))


class QuadraturePosterior:
    """Quadrature-grade posterior for a continuous prior on the rate.

    Panels of 32-point Gauss-Legendre quadrature on a log-spaced grid over
    (0, upper], plus one linear panel near 0; at least 4096 nodes total. The
    grid upper end is extended past the prior quantile so that posterior
    integrands for counts up to s_max (and predictive demands up to
    k_max_hint) remain covered. Accuracy over speed: this is a reference.
    """

    def __init__(self, log_pdf, upper: float, horizon: float = 1.0,
                 s_max: int = 0, k_max_hint: int = 0, nodes: int = 4096):
        if not upper > 0:
            raise ValueError("upper must be > 0")
        if not horizon > 0:
            raise ValueError("horizon must be > 0")
        self.horizon = horizon
        hi = max(
            upper * 1.5,
            2.0 * (s_max + 10.0 * math.sqrt(s_max + 1.0) + 20.0) / horizon,
            2.0 * (s_max + k_max_hint + 20.0) / (horizon + 1.0),
        )
        lo = hi * 1e-10
        n_panels = max(nodes // 32, 128)
        edges = np.concatenate([[0.0], np.geomspace(lo, hi, n_panels)])
        gl_x, gl_w = np.polynomial.legendre.leggauss(32)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        lam = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
        wq = (half[:, None] * gl_w[None, :]).ravel()
        keep = lam > 0
        self._lam = lam[keep]
        self._log_lam = np.log(self._lam)
        self._log_wg = np.log(wq[keep]) + np.asarray(log_pdf(self._lam), float)

    def _log_moment(self, power, decay: float):
        """log integral of lam^power e^(-lam * decay) dPrior(lam)."""
        power = np.atleast_1d(np.asarray(power, dtype=float))
        expo = power[:, None] * self._log_lam[None, :] \
            - decay * self._lam[None, :] + self._log_wg[None, :]
        return logsumexp(expo, axis=1)

    def marginal(self, s_values) -> np.ndarray:
        """pmf of the observed count at the instance horizon."""
        s = np.atleast_1d(np.asarray(s_values, dtype=float))
        logm = self._log_moment(s, self.horizon) + s * math.log(self.horizon) \
            - gammaln(s + 1.0)
        return np.exp(logm)

    def posterior_pmf(self, x: int, k_max: int) -> DemandPmf:
        if x < 0 or k_max < 0:
            raise ValueError("x and k_max must be >= 0")
        k = np.arange(k_max + 1)
        log_den = float(self._log_moment(x, self.horizon)[0])
        log_num = self._log_moment(k + x, self.horizon + 1.0)
        probs = np.exp(log_num - gammaln(k + 1.0) - log_den)
        total = float(probs.sum())
        if total > 1.0 + 1e-9:
            raise ValueError(f"quadrature posterior sums to {total} > 1")
        return DemandPmf(probs, max(0.0, 1.0 - total))

    def posterior_mean(self, x: int) -> float:
        log_den = float(self._log_moment(x, self.horizon)[0])
        log_num = float(self._log_moment(x + 1, self.horizon)[0])
        return math.exp(log_num - log_den)
