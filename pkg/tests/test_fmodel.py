import json
import math

import numpy as np
import pytest

from ebstock import (CountHistogram, Dataset, DiscreteMixture, GammaPrior,
                     QuadraturePosterior, build_histogram, empirical_marginal,
                     exact_mixture_marginal, exact_nb_marginal,
                     fit_spline_marginal, generalized_robbins_pmf,
                     marginal_from_json, marginal_to_json, nb_marginal,
                     nb_posterior_mean, nb_posterior_pmf, plugin_posterior_pmf,
                     poisson_pmf, robbins_mean, spline_constraint_residuals)
from ebstock.fmodel import SplineFitError


def geometric_histogram(q=0.55, n=20_000, seed=7):
    rng = np.random.default_rng(seed)
    counts = rng.geometric(1 - q, size=n) - 1
    return build_histogram(Dataset(counts))


def test_empirical_marginal_example():
    hist = CountHistogram(np.array([0, 2]), np.array([2, 1]))
    est = empirical_marginal(hist)
    assert est.pmf(0) == pytest.approx(2 / 3)
    assert est.pmf(1) == 0.0
    assert est.pmf(2) == pytest.approx(1 / 3)
    assert est.pmf(99) == 0.0
    total = float(np.sum(est.pmf(np.arange(3))))
    assert total == pytest.approx(1.0, abs=1e-15)


def test_empirical_marginal_tracks_truth():
    rng = np.random.default_rng(3)
    prior = GammaPrior(2.0, 0.5)  # NB(2, 1/(1+0.5)) i.e. NB(2, 2/3)
    lam = prior.sample(rng, 50_000)
    hist = build_histogram(Dataset(rng.poisson(lam)))
    est = empirical_marginal(hist)
    worst = max(abs(est.pmf(s) - nb_marginal(prior, s))
                for s in range(hist.max_value + 1))
    assert worst < 0.01


def test_robbins_mean_conjugate_oracle():
    marginal = exact_nb_marginal(GammaPrior(2.0, 2.0))
    want = nb_posterior_mean(GammaPrior(2.0, 2.0), 8)   # (2+8) * 2/3
    assert want == pytest.approx(20.0 / 3.0, abs=1e-12)
    assert robbins_mean(marginal, 8) == pytest.approx(want, abs=1e-9)


def test_robbins_mean_point_mass_and_ratio_identity():
    hist = CountHistogram(np.array([0]), np.array([5]))
    est = empirical_marginal(hist)
    assert robbins_mean(est, 0) == 0.0

    marginal = exact_nb_marginal(GammaPrior(1.5, 1.2))
    for x in (0, 3, 9):
        assert robbins_mean(marginal, x) == pytest.approx(
            (x + 1) * marginal.ratio(x), abs=1e-12)


def test_robbins_mean_off_support_errors():
    hist = CountHistogram(np.array([0, 2]), np.array([2, 1]))
    est = empirical_marginal(hist)
    with pytest.raises(ValueError, match="outside"):
        robbins_mean(est, 1)


def test_plugin_pmf():
    marginal = exact_nb_marginal(GammaPrior(2.0, 2.0))
    pmf = plugin_posterior_pmf(marginal, 8, 40)
    rate = 20.0 / 3.0
    for k in (0, 3, 11):
        assert pmf.probs[k] == pytest.approx(poisson_pmf(rate, k), rel=1e-8)
    assert pmf.probs.sum() + pmf.tail == pytest.approx(1.0, abs=1e-9)

    degenerate = empirical_marginal(CountHistogram(np.array([0]), np.array([3])))
    point = plugin_posterior_pmf(degenerate, 0, 10)
    assert point.probs[0] == 1.0


def test_spline_fit_recovers_geometric_tail():
    hist = geometric_histogram()
    est = fit_spline_marginal(hist)
    assert est.spline is not None
    assert abs(est.spline.tail_slope - math.log(0.55)) < 0.05


def test_spline_fit_satisfies_constraints():
    est = fit_spline_marginal(geometric_histogram())
    res = spline_constraint_residuals(est)
    assert res["natural"] <= 1e-8
    assert res["monotonicity"] <= 1e-8
    total = float(np.sum(est.pmf(np.arange(1001))))
    assert total <= 1.0 + 1e-6


def test_spline_robbins_means_monotone():
    est = fit_spline_marginal(geometric_histogram())
    s0 = est.spline.tail_start
    means = [robbins_mean(est, s) for s in range(s0)]
    assert all(b - a >= -1e-8 for a, b in zip(means, means[1:]))


def test_spline_fit_degenerate_data_errors():
    hist = CountHistogram(np.array([4]), np.array([100]))
    with pytest.raises(SplineFitError):
        fit_spline_marginal(hist)


def test_spline_serialisation_roundtrip():
    est = fit_spline_marginal(geometric_histogram())
    clone = marginal_from_json(marginal_to_json(est))
    s = np.arange(0, 60)
    assert np.allclose(clone.pmf(s), est.pmf(s), rtol=0, atol=0)
    assert clone.spline.log_likelihood == est.spline.log_likelihood


def test_empirical_serialisation_roundtrip():
    hist = CountHistogram(np.array([0, 2, 5]), np.array([3, 1, 2]))
    est = empirical_marginal(hist)
    clone = marginal_from_json(marginal_to_json(est))
    s = np.arange(0, 8)
    assert np.allclose(clone.pmf(s), est.pmf(s), rtol=0, atol=0)


def test_generalized_robbins_accurate_then_divergent():
    # on the exact conjugate marginal the series tracks the exact posterior
    # for small k and falls apart somewhere in k = 12..15
    prior = GammaPrior(2.0, 2.0)
    marginal = exact_nb_marginal(prior)
    result = generalized_robbins_pmf(marginal, 8, 15)
    exact = np.array([nb_posterior_pmf(prior, 8, k) for k in range(16)])
    errs = result.values - exact
    assert np.max(np.abs(errs[:10])) <= 1e-3
    assert any(abs(errs[k]) > 0.01 or result.values[k] < 0
               for k in range(12, 16))


def test_generalized_robbins_diagnostics_on_empirical():
    rng = np.random.default_rng(0)
    hist = build_histogram(Dataset(rng.poisson(3.0, size=500)))
    est = empirical_marginal(hist)
    result = generalized_robbins_pmf(est, 2, 10)
    assert result.flagged.any()          # support runs out inside the series
    pmf = result.sanitized()
    assert pmf.probs.sum() + pmf.tail == pytest.approx(1.0, abs=1e-9)
    assert pmf.probs.min() >= 0.0


def test_generalized_robbins_off_support_errors():
    hist = CountHistogram(np.array([0, 2]), np.array([2, 1]))
    with pytest.raises(ValueError, match="outside"):
        generalized_robbins_pmf(empirical_marginal(hist), 1, 5)


def test_marginal_ratio_vanishes_for_bounded_prior():
    mix = DiscreteMixture(np.array([2.0, 6.0]), np.array([0.5, 0.5]))
    marginal = exact_mixture_marginal(mix)
    ratios = [marginal.ratio(k) for k in range(5, 61, 5)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 0.15                      # ~ lam_max / k


def test_half_normal_ratio_scaling_bounded():
    def log_pdf(lam):
        lam = np.asarray(lam, dtype=float)
        return 0.5 * math.log(2.0 / math.pi) - 0.5 * lam**2

    quad = QuadraturePosterior(log_pdf, 4.5, s_max=40, nodes=8192)
    f = quad.marginal(np.arange(42))
    scaled = [f[k + 1] / f[k] * math.sqrt(k / math.log(k))
              for k in range(10, 41)]
    assert max(scaled) <= 2.0 * scaled[0]
