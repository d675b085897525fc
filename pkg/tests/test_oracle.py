import math

import numpy as np
import pytest

from _utils import random_mixture, random_mixture_bounded_ratio
from ebstock import (DiscreteMixture, GammaPrior, QuadraturePosterior,
                     brute_force_posterior, brute_force_posterior_pmf,
                     nb_marginal, nb_posterior_mean, nb_posterior_pmf,
                     poisson_pmf)

# Appendix-style exact posterior values for shape=2, scale=2, X=8
EXACT_POSTERIOR_2_2_8 = {0: 0.006047, 5: 0.123959, 15: 0.008489}


def test_nb_marginal_geometric_case():
    assert nb_marginal(GammaPrior(1.0, 1.0), 0) == pytest.approx(0.5, abs=1e-12)


def test_nb_marginal_normalises():
    prior = GammaPrior(2.0, 2.0)
    total = sum(nb_marginal(prior, s) for s in range(201))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_nb_marginal_matches_quadrature():
    prior = GammaPrior(2.0, 2.0)
    quad = QuadraturePosterior(prior.log_pdf, prior.quantile(1 - 1e-9),
                               s_max=30, nodes=8192)
    got = quad.marginal(np.arange(12))
    want = np.array([nb_marginal(prior, s) for s in range(12)])
    assert np.max(np.abs(got - want)) < 1e-10


def test_nb_posterior_paper_values():
    prior = GammaPrior(2.0, 2.0)
    for k, val in EXACT_POSTERIOR_2_2_8.items():
        assert nb_posterior_pmf(prior, 8, k) == pytest.approx(val, abs=5e-7)


def test_nb_posterior_nonunit_horizon_vs_quadrature():
    # the T != 1 generalisation is not paper-verified; check it against
    # quadrature instead
    prior = GammaPrior(1.7, 2.4)
    T = 2.5
    quad = QuadraturePosterior(prior.log_pdf, prior.quantile(1 - 1e-9),
                               horizon=T, s_max=20, k_max_hint=20, nodes=8192)
    pmf = quad.posterior_pmf(6, 20)
    want = np.array([nb_posterior_pmf(prior, 6, k, horizon=T)
                     for k in range(21)])
    assert np.max(np.abs(pmf.probs - want)) < 1e-10


def test_robbins_identity_on_exact_marginal():
    for prior, x in [(GammaPrior(2.0, 2.0), 8), (GammaPrior(1.3, 0.7), 2),
                     (GammaPrior(5.0, 0.5), 0)]:
        robbins = (x + 1) * nb_marginal(prior, x + 1) / nb_marginal(prior, x)
        assert robbins == pytest.approx(nb_posterior_mean(prior, x), abs=1e-10)


def test_brute_force_single_atom_is_poisson():
    mix = DiscreteMixture(np.array([3.2]), np.array([1.0]))
    for x in (0, 2, 7):
        for k in (0, 1, 5):
            assert brute_force_posterior(mix, x, 1.0, k) == pytest.approx(
                poisson_pmf(3.2, k), abs=1e-14)


def test_brute_force_direct_summation_reference():
    # two atoms {1: 0.5, 4: 0.5}, X=0, k=0, T=1: plain-float evaluation
    mix = DiscreteMixture(np.array([1.0, 4.0]), np.array([0.5, 0.5]))
    num = 0.5 * math.exp(-2.0) + 0.5 * math.exp(-8.0)
    den = 0.5 * math.exp(-1.0) + 0.5 * math.exp(-4.0)
    assert brute_force_posterior(mix, 0, 1.0, 0) == pytest.approx(
        num / den, rel=1e-13)


def test_brute_force_normalises():
    mix = DiscreteMixture(np.array([2.0, 6.0]), np.array([0.3, 0.7]))
    total = sum(brute_force_posterior(mix, 10, 1.0, k) for k in range(200))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_brute_force_zero_denominator():
    mix = DiscreteMixture(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        brute_force_posterior(mix, 3, 1.0, 0)
    # but X = 0 is fine: all future demand mass at 0
    assert brute_force_posterior(mix, 0, 1.0, 0) == pytest.approx(1.0)


def test_zero_demand_probability_strictly_decreasing_in_count():
    rng = np.random.default_rng(99)
    for _ in range(30):
        mix = random_mixture_bounded_ratio(rng)
        vals = [brute_force_posterior(mix, x, 1.0, 0) for x in range(21)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


def test_quadrature_posterior_matches_conjugate():
    prior = GammaPrior(2.0, 2.0)
    quad = QuadraturePosterior(prior.log_pdf, prior.quantile(1 - 1e-9),
                               s_max=20, k_max_hint=30, nodes=8192)
    pmf = quad.posterior_pmf(8, 25)
    want = np.array([nb_posterior_pmf(prior, 8, k) for k in range(26)])
    assert np.max(np.abs(pmf.probs - want)) < 1e-10
    assert quad.posterior_mean(8) == pytest.approx(
        nb_posterior_mean(prior, 8), abs=1e-9)


def test_brute_force_pmf_wrapper():
    mix = DiscreteMixture(np.array([1.0, 5.0]), np.array([0.4, 0.6]))
    pmf = brute_force_posterior_pmf(mix, 4, 1.0, 40)
    assert pmf.probs.sum() + pmf.tail == pytest.approx(1.0, abs=1e-12)
    assert pmf.tail < 1e-8
