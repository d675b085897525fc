"""Empirical-Bayes demand estimation and newsvendor stocking for many
items with Poisson demand."""

__version__ = "0.1.0"

from .core import (CountHistogram, DataError, Dataset, DemandPmf,
                   ItemEconomics, build_histogram, default_k_max,
                   poisson_demand_pmf, poisson_log_pmf, poisson_pmf,
                   read_dataset_csv)
from .fmodel import (GeneralizedRobbinsResult, MarginalEstimate,
                     SplineFitError, empirical_marginal, exact_mixture_marginal,
                     exact_nb_marginal, fit_spline_marginal,
                     generalized_robbins_pmf, marginal_from_json,
                     marginal_to_json, plugin_posterior_pmf, robbins_mean,
                     spline_constraint_residuals)
from .gmodel import (CGReport, DiscreteMixture, cg_subproblem, fit_npmle,
                     gamma_lower_bound, log_gamma_lower_bound,
                     mixture_from_json, mixture_log_likelihood,
                     mixture_posterior_mean, mixture_posterior_pmf,
                     mixture_to_json, reoptimize_weights)
from .grouping import (LrTestResult, chi_square_survival, fit_k_atom_mixture,
                       lr_test)
from .newsvendor import (StockDecision, critical_quantile, expected_profit,
                         optimal_stock)
from .oracle import (GammaPrior, QuadraturePosterior, brute_force_posterior,
                     brute_force_posterior_pmf, nb_marginal, nb_posterior_mean,
                     nb_posterior_pmf)
from .simulation import (BenchmarkConfig, EconConfig, GroupingConfig,
                         Instance, PolicyEvaluation, TruePosterior,
                         WeibullPrior, evaluate_policy, generate_instance,
                         grouping_experiment, method_decisions,
                         plugin_breaking_cost, realized_profit, run_benchmark,
                         true_posterior_policy)

__all__ = [name for name in dir() if not name.startswith("_")]
