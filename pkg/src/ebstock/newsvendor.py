"""Single-item newsvendor stocking with a fixed in-stock cost.

Given a predictive demand pmf and item economics, the optimal positive stock
is the 1 - c/r quantile of demand; it is only held if the expected profit at
that level covers the fixed cost, otherwise nothing is stocked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DemandPmf, ItemEconomics

# Strict quantile / zero-stock comparisons are made at this float tolerance.
_TOL = 1e-12


@dataclass(frozen=True)
class StockDecision:
    quantity: int
    expected_profit: float


def expected_profit(pmf: DemandPmf, x: int, econ: ItemEconomics) -> float:
    """Expected profit of stocking x units: r E[min(x, demand)] - b 1(x>0) - c x.

    Demand mass beyond the pmf truncation point is treated as >= x, which is
    exact whenever x <= k_max and an upper bound otherwise.
    """
    if x < 0:
        raise ValueError(f"stock level must be >= 0, got {x}")
    if x == 0:
        return 0.0
    probs = pmf.probs
    top = min(x, pmf.k_max)
    k = np.arange(top + 1)
    head = float(k @ probs[: top + 1])
    cdf_x = float(probs[: top + 1].sum())
    e_min = head + x * (1.0 - cdf_x)
    return econ.revenue * e_min - econ.fixed_cost - econ.unit_cost * x


def critical_quantile(pmf: DemandPmf, revenue: float, unit_cost: float) -> int:
    """Smallest x with F(x) > 1 - c/r (the newsvendor critical fractile).

    Returns 0 when c >= r; raises when c <= 0 (the quantile is unbounded) or
    when the pmf is truncated below the requested quantile.
    """
    if unit_cost <= 0:
        raise ValueError("unit cost must be > 0 for a bounded quantile")
    if unit_cost >= revenue:
        return 0
    target = 1.0 - unit_cost / revenue
    cdf = pmf.cdf()
    hits = np.flatnonzero(cdf > target + _TOL)
    if hits.size == 0:
        raise ValueError(
            "demand pmf truncated below the requested quantile; "
            "increase k_max")
    return int(hits[0])


def optimal_stock(pmf: DemandPmf, econ: ItemEconomics) -> StockDecision:
    """Profit-maximising stock level including the fixed-cost shutdown rule.

    Stocks the critical quantile x* unless b > (r-c) x* - r sum_{k<=x*}
    (x*-k) p(k); ties stock x* (the shutdown inequality is strict).
    """
    r, c, b = econ.revenue, econ.unit_cost, econ.fixed_cost
    if c >= r:
        return StockDecision(0, 0.0)
    if c <= 0:
        # No holding cost: every unit up to the top of the support pays.
        nz = np.flatnonzero(pmf.probs > 0)
        x_star = pmf.k_max if pmf.tail > 0 else int(nz[-1]) if nz.size else 0
    else:
        x_star = critical_quantile(pmf, r, c)
    if x_star == 0:
        return StockDecision(0, 0.0)
    k = np.arange(x_star + 1)
    shortfall = float((x_star - k) @ pmf.probs[: x_star + 1])
    threshold = (r - c) * x_star - r * shortfall
    if b > threshold + _TOL:
        return StockDecision(0, 0.0)
    return StockDecision(x_star, expected_profit(pmf, x_star, econ))
