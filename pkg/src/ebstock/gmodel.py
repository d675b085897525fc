"""g-modelling: nonparametric MLE of the rate mixing distribution.

The mixing distribution is estimated by the fully corrective conditional
gradient method: each iteration re-optimises the weights over the current
atom support, then adds the atom that maximises the gradient-based
certificate. Termination with certificate eps_bar <= eps guarantees an
eps-optimal solution. Posterior functionals of the fitted mixture are exact
finite sums evaluated in log space.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import CountHistogram, DemandPmf

_PRUNE_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteMixture:
    """Finite-support distribution over the Poisson rate: ascending distinct
    atoms with positive weights summing to one."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        if atoms.ndim != 1 or atoms.size == 0 or atoms.shape != weights.shape:
            raise ValueError("atoms and weights must be aligned non-empty vectors")
        if atoms[0] < 0:
            raise ValueError("atoms must be >= 0")
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly ascending")
        if weights.min() <= 0:
            raise ValueError("weights must be > 0")
        if abs(weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights must sum to 1, got {weights.sum()}")

    @property
    def support_size(self) -> int:
        return int(self.atoms.size)

    def mean(self) -> float:
        return float(self.atoms @ self.weights)

    def log_marginal(self, s, horizon: float = 1.0):
        """log P[X = s] for X ~ Poisson(lambda * horizon), lambda ~ this."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lk = _log_kernel(s, self.atoms * horizon)
        out = logsumexp(lk, axis=1, b=self.weights[None, :]) - gammaln(s + 1.0)
        return out if out.size > 1 else float(out[0])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.atoms, size=n, p=self.weights)


@dataclass(frozen=True)
class CGIteration:
    support_size: int
    objective: float
    certificate: float
    new_atom: float | None
    min_log_v: float = math.nan   # smallest log v_t(s), for the gamma bound


@dataclass
class CGReport:
    """Per-iteration trace of the conditional gradient solve."""

    iterations: list[CGIteration] = field(default_factory=list)
    termination: str = "max_iter"
    certified: bool = False
    requested_eps: float = math.nan
    final_certificate: float = math.nan
    log_gamma_bound: float = math.nan

    @property
    def gamma_bound(self) -> float:
        """Natural-scale lower bound on iterate entries (may underflow)."""
        return math.exp(self.log_gamma_bound)


def _log_kernel(s: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Matrix of s*log(mu) - mu over counts s (rows) and atoms mu (cols);
    the mu = 0 column is 0 at s = 0 and -inf elsewhere."""
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lk = np.outer(s, np.log(mu)) - mu[None, :]
    zero = mu == 0
    if zero.any():
        lk[:, zero] = np.where(s[:, None] == 0, 0.0, -np.inf)
    return lk


def mixture_log_likelihood(mix: DiscreteMixture, hist: CountHistogram,
                           horizon: float | None = None) -> float:
    """Total log-likelihood of the histogram under the Poisson mixture.

    Returns -inf when some observed count has zero mass under the mixture
    (e.g. a positive count with a single atom at 0).
    """
    T = hist.horizon if horizon is None else horizon
    s = hist.values.astype(float)
    lk = _log_kernel(s, mix.atoms * T)
    logv = logsumexp(lk, axis=1, b=mix.weights[None, :])
    if np.any(np.isneginf(logv)):
        return -math.inf
    return float(hist.counts @ (logv - gammaln(s + 1.0)))


def cg_subproblem(log_w: np.ndarray, s_values: np.ndarray,
                  s_max: float) -> tuple[float, float]:
    """Globally maximise sum_s w_s mu^s e^(-mu) over mu in [0, s_max].

    w_s must be positive (passed as logs). The objective is a sum of
    quasiconcave bumps peaking at mu = s, so a dense log-spaced grid over
    (0, s_max] plus golden-section refinement of the best brackets finds the
    global maximum; no maximiser can exceed the largest observation.
    Returns (mu_star, objective value).
    """
    s = np.asarray(s_values, dtype=float)
    log_w = np.asarray(log_w, dtype=float)

    def log_obj_vec(mu: np.ndarray) -> np.ndarray:
        lk = _log_kernel(s, mu)
        return logsumexp(lk + log_w[:, None], axis=0)

    def log_obj(mu: float) -> float:
        return float(log_obj_vec(np.array([mu]))[0])

    if s_max <= 0:
        return 0.0, math.exp(log_obj(0.0))

    grid = np.concatenate([[0.0], np.geomspace(s_max * 1e-8, s_max, 2048)])
    vals = log_obj_vec(grid)

    # candidate brackets: local maxima of the grid evaluation, best 5
    interior = np.flatnonzero(
        (vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])) + 1
    cand = set(interior.tolist()) | {0, len(grid) - 1}
    order = sorted(cand, key=lambda i: -vals[i])[:5]

    phi = (math.sqrt(5.0) - 1.0) / 2.0
    best_mu, best_val = 0.0, -math.inf
    for i in order:
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, len(grid) - 1)]
        x1 = b - phi * (b - a)
        x2 = a + phi * (b - a)
        f1, f2 = log_obj(x1), log_obj(x2)
        for _ in range(90):
            if f1 < f2:
                a, x1, f1 = x1, x2, f2
                x2 = a + phi * (b - a)
                f2 = log_obj(x2)
            else:
                b, x2, f2 = x2, x1, f1
                x1 = b - phi * (b - a)
                f1 = log_obj(x1)
        mu = 0.5 * (a + b)
        val = log_obj(mu)
        for m, v in ((grid[i], vals[i]), (mu, val)):
            if v > best_val:
                best_mu, best_val = float(m), float(v)
    return best_mu, math.exp(best_val)


def _simplex_mle_weights(A: np.ndarray, c: np.ndarray,
                         init: np.ndarray | None = None,
                         kkt_tol: float = 1e-9) -> np.ndarray:
    """Maximise sum_s c_s log((A p)_s) over the simplex.

    A is a positive (rows may contain zeros) kernel matrix, c sums to 1.
    EM warm start then active-set Newton on the equality-constrained KKT
    system; at the optimum every active gradient component equals 1.
    Returns the full-length weight vector with pruned entries set to 0.
    """
    n_atoms = A.shape[1]
    p = np.full(n_atoms, 1.0 / n_atoms) if init is None else init.copy()
    p = np.clip(p, 1e-300, None)
    p /= p.sum()

    for _ in range(200):
        v = A @ p
        if v.min() <= 0:
            raise ValueError("support gives zero likelihood for an observed count")
        g = A.T @ (c / v)
        p *= g
        p /= p.sum()
        if np.max(np.abs(g - 1.0)) < 1e-4:
            break

    active = p > 1e-14
    if not active.any():
        active = p == p.max()
    for _outer in range(50):
        idx = np.flatnonzero(active)
        Aa = A[:, idx]
        pa = p[idx] / p[idx].sum()
        for _ in range(100):
            v = Aa @ pa
            g = Aa.T @ (c / v)
            if np.max(np.abs(g - 1.0)) <= kkt_tol:
                break
            H = Aa.T @ (Aa * (c / v**2)[:, None])
            d = pa.size
            K = np.zeros((d + 1, d + 1))
            K[:d, :d] = H
            K[:d, d] = 1.0
            K[d, :d] = 1.0
            rhs = np.zeros(d + 1)
            rhs[:d] = g - 1.0
            try:
                step = np.linalg.solve(K, rhs)[:d]
            except np.linalg.LinAlgError:
                K[:d, :d] += 1e-12 * np.eye(d)
                step = np.linalg.solve(K, rhs)[:d]
            t = 1.0
            neg = step < 0
            if neg.any():
                t = min(1.0, 0.9 * float(np.min(-pa[neg] / step[neg])))
            cur = float(c @ np.log(v))
            while t > 1e-16:
                pn = pa + t * step
                if (pn > 0).all() and float(c @ np.log(Aa @ pn)) >= cur - 1e-14:
                    break
                t *= 0.5
            pa = pa + t * step
            pa = np.clip(pa, 0.0, None)
            pa /= pa.sum()
            drop = pa < 1e-16
            if drop.any():
                keep = ~drop
                Aa, pa, idx = Aa[:, keep], pa[keep], idx[keep]
                pa /= pa.sum()
        pnew = np.zeros(n_atoms)
        pnew[idx] = pa
        v = A @ pnew
        g = A.T @ (c / np.clip(v, 1e-300, None))
        violated = (pnew == 0.0) & (g > 1.0 + kkt_tol)
        if not violated.any():
            p = pnew
            break
        active = (pnew > 0.0) | violated
        p = np.where(pnew > 0.0, pnew, 1e-8)
        p /= p.sum()
    p = np.where(p < _PRUNE_TOL, 0.0, p)
    p /= p.sum()
    return p


def reoptimize_weights(support: np.ndarray, hist: CountHistogram,
                       horizon: float | None = None,
                       init: np.ndarray | None = None,
                       kkt_tol: float = 1e-9) -> np.ndarray:
    """Optimal simplex weights for a fixed atom support (rate scale).

    Atoms with optimal weight below 1e-12 come back as exactly 0.
    """
    T = hist.horizon if horizon is None else horizon
    support = np.asarray(support, dtype=float)
    if support.size == 0:
        raise ValueError("support must be non-empty")
    if support.size == 1:
        return np.array([1.0])
    s = hist.values.astype(float)
    lk = _log_kernel(s, support * T)
    rowmax = lk.max(axis=1, keepdims=True)
    if np.any(np.isneginf(rowmax)):
        raise ValueError("some observed count has zero mass under every atom")
    A = np.exp(lk - rowmax)
    return _simplex_mle_weights(A, hist.frequencies(), init=init,
                                kkt_tol=kkt_tol)


def log_gamma_lower_bound(log_v1: np.ndarray, hist: CountHistogram) -> float:
    """Log of the computable lower bound on all iterate entries v_t(s),
    derived from the first iterate. Exact for a single observed value."""
    s = hist.values.astype(float)
    y = hist.counts.astype(float)
    log_peak = np.where(s > 0, s * np.log(np.clip(s, 1e-300, None)) - s, 0.0)
    diff = log_v1 - log_peak
    best = math.inf
    for i in range(s.size):
        other = np.delete(np.arange(s.size), i)
        val = log_v1[i] + float((y[other] / y[i]) @ diff[other])
        best = min(best, val)
    return best


def gamma_lower_bound(v1: np.ndarray, hist: CountHistogram) -> float:
    """Natural-scale version of log_gamma_lower_bound (can underflow to 0
    on large instances; tests against iterates should use the log form)."""
    with np.errstate(divide="ignore"):
        return math.exp(log_gamma_lower_bound(np.log(np.asarray(v1, float)), hist))


def _default_init(hist: CountHistogram, T: float) -> np.ndarray:
    qs = np.quantile(hist.expand() / T, np.linspace(0.1, 0.95, 8),
                     method="inverted_cdf")
    return np.unique(np.concatenate([[0.0], np.asarray(qs, dtype=float)]))


def fit_npmle(hist: CountHistogram, eps: float = 1e-6, max_iter: int = 300,
              init: np.ndarray | None = None, kkt_tol: float = 1e-9,
              ) -> tuple[DiscreteMixture, CGReport]:
    """Nonparametric MLE of the mixing distribution by fully corrective CG.

    Each iteration solves the restricted weight problem on the current
    support, then evaluates the certificate eps_bar = max_mu sum_s y_s mu^s
    e^(-mu) / (n v(s)) - 1 and adds the maximising atom. Stops when
    eps_bar <= eps (certified eps-optimal) or at the iteration cap.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    T = hist.horizon
    s = hist.values.astype(float)
    c = hist.frequencies()
    s_max = float(s[-1])

    lam_support = _default_init(hist, T) if init is None else \
        np.unique(np.asarray(init, dtype=float))
    if lam_support.size == 0:
        raise ValueError("initial support must be non-empty")
    if s_max > 0 and not np.any(lam_support > 0):
        lam_support = np.append(lam_support, s_max / T)
    mu_support = lam_support * T

    report = CGReport(requested_eps=eps)
    weights = None
    prev_weights: np.ndarray | None = None
    for t in range(1, max_iter + 1):
        weights = reoptimize_weights(mu_support / T, hist, init=prev_weights,
                                     kkt_tol=kkt_tol)
        keep = weights > 0
        mu_support, weights = mu_support[keep], weights[keep]
        weights /= weights.sum()

        lk = _log_kernel(s, mu_support)
        log_v = logsumexp(lk, axis=1, b=weights[None, :])
        h = float(c @ log_v)
        if t == 1:
            report.log_gamma_bound = log_gamma_lower_bound(log_v, hist)

        mu_new, obj = cg_subproblem(np.log(c) - log_v, s, s_max)
        eps_bar = obj - 1.0
        report.final_certificate = eps_bar

        min_log_v = float(log_v.min())
        if eps_bar <= eps:
            report.iterations.append(
                CGIteration(mu_support.size, h, eps_bar, None, min_log_v))
            report.termination = "certificate"
            report.certified = True
            break
        if np.min(np.abs(mu_support - mu_new)) <= 1e-12 * (1.0 + s_max):
            report.iterations.append(
                CGIteration(mu_support.size, h, eps_bar, None, min_log_v))
            report.termination = "stalled"
            warnings.warn("CG subproblem returned a duplicate atom before "
                          "reaching the certificate; result not certified")
            break
        report.iterations.append(
            CGIteration(mu_support.size, h, eps_bar, mu_new / T, min_log_v))
        if t == max_iter:
            warnings.warn("CG hit the iteration cap before the certificate; "
                          "result not certified")
            break
        pos = int(np.searchsorted(mu_support, mu_new))
        mu_support = np.insert(mu_support, pos, mu_new)
        prev_weights = np.insert(weights * (1.0 - 1e-3), pos, 1e-3)

    # merge near-duplicate atoms (weighted mean position), then re-polish
    merged_mu, merged_w = _merge_atoms(mu_support, weights, 1e-6 * max(s_max, 1.0))
    if merged_mu.size != mu_support.size:
        merged_w = reoptimize_weights(merged_mu / T, hist, init=merged_w,
                                      kkt_tol=kkt_tol)
        keep = merged_w > 0
        merged_mu, merged_w = merged_mu[keep], merged_w[keep]
        merged_w /= merged_w.sum()
        lk = _log_kernel(s, merged_mu)
        log_v = logsumexp(lk, axis=1, b=merged_w[None, :])
        _, obj = cg_subproblem(np.log(c) - log_v, s, s_max)
        report.final_certificate = obj - 1.0
        report.certified = report.certified and report.final_certificate <= eps

    mixture = DiscreteMixture(merged_mu / T, merged_w)
    bound = min(hist.values.size, math.ceil((hist.max_value + 2) / 2))
    if mixture.support_size > bound:
        warnings.warn(
            f"fitted support size {mixture.support_size} exceeds the "
            f"theoretical bound {bound} (finite-tolerance solve); reported, "
            "not corrected")
    return mixture, report


def _merge_atoms(mu: np.ndarray, w: np.ndarray,
                 tol: float) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(mu)
    mu, w = mu[order], w[order]
    out_mu: list[float] = []
    out_w: list[float] = []
    for m, ww in zip(mu, w):
        if out_mu and m - out_mu[-1] <= tol:
            tot = out_w[-1] + ww
            out_mu[-1] = (out_mu[-1] * out_w[-1] + m * ww) / tot
            out_w[-1] = tot
        else:
            out_mu.append(float(m))
            out_w.append(float(ww))
    return np.asarray(out_mu), np.asarray(out_w)


def mixture_posterior_pmf(mix: DiscreteMixture, x: int, horizon: float,
                          k_max: int) -> DemandPmf:
    """Exact posterior predictive pmf of future demand given X = x.

    p(k) = sum_j p_j lam_j^(k+x) e^(-lam_j (T+1)) /
           (k! sum_j p_j lam_j^x e^(-lam_j T)), evaluated in log space.
    """
    if x < 0 or k_max < 0:
        raise ValueError("x and k_max must be >= 0")
    lam = mix.atoms
    logp = np.log(mix.weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        loglam = np.where(lam > 0, np.log(lam), -np.inf)
    den_terms = logp + (x * loglam if x > 0 else 0.0) - lam * horizon
    log_den = float(logsumexp(den_terms))
    if log_den == -math.inf:
        raise ValueError("posterior undefined: observed count has zero "
                         "mass under the mixture")
    k = np.arange(k_max + 1)
    with np.errstate(invalid="ignore"):
        expo = (k[:, None] + x) * loglam[None, :]
    if x == 0:
        expo[0, lam == 0] = 0.0  # lambda^0 = 1 even at the zero atom
    num_terms = logp[None, :] + expo - (lam * (horizon + 1.0))[None, :]
    log_num = logsumexp(num_terms, axis=1)
    probs = np.exp(log_num - gammaln(k + 1.0) - log_den)
    total = float(probs.sum())
    if total > 1.0 + 1e-9:
        raise ValueError(f"posterior pmf sums to {total} > 1")
    return DemandPmf(probs, max(0.0, 1.0 - total))


def mixture_posterior_mean(mix: DiscreteMixture, x: int,
                           horizon: float = 1.0) -> float:
    """Posterior mean of the rate given X = x under the mixture prior."""
    if x < 0:
        raise ValueError("x must be >= 0")
    lam = mix.atoms
    logp = np.log(mix.weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        loglam = np.where(lam > 0, np.log(lam), -np.inf)
    den = logp + (x * loglam if x > 0 else 0.0) - lam * horizon
    log_den = float(logsumexp(den))
    if log_den == -math.inf:
        raise ValueError("posterior undefined: observed count has zero "
                         "mass under the mixture")
    num = logp + (x + 1) * loglam - lam * horizon
    log_num = float(logsumexp(num))
    return math.exp(log_num - log_den)


def mixture_to_json(mix: DiscreteMixture, loglik: float | None = None,
                    certificate_eps: float | None = None) -> str:
    return json.dumps({
        "atoms": mix.atoms.tolist(),
        "weights": mix.weights.tolist(),
        "loglik": loglik,
        "certificate_eps": certificate_eps,
    }, sort_keys=True)


def mixture_from_json(text: str) -> DiscreteMixture:
    obj = json.loads(text)
    return DiscreteMixture(np.asarray(obj["atoms"]), np.asarray(obj["weights"]))
