"""Shared domain types, Poisson primitives, and histogram construction.

All probability arithmetic is done in log space with log-gamma; factorial-scale
cancellation is the known failure mode of the naive formulas.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln


class DataError(ValueError):
    """Input dataset is empty, malformed, or inconsistent."""


@dataclass(frozen=True)
class ItemEconomics:
    """Per-item economics: revenue per unit sold, cost per unit stocked,
    and a fixed cost incurred whenever the item is kept in stock at all."""

    revenue: float
    unit_cost: float
    fixed_cost: float

    def __post_init__(self) -> None:
        if not self.revenue > 0:
            raise ValueError(f"revenue must be > 0, got {self.revenue}")
        if self.unit_cost < 0:
            raise ValueError(f"unit_cost must be >= 0, got {self.unit_cost}")
        if self.fixed_cost < 0:
            raise ValueError(f"fixed_cost must be >= 0, got {self.fixed_cost}")


@dataclass(frozen=True)
class Dataset:
    """Observed demand counts, one per item, over a horizon of given length."""

    counts: np.ndarray
    horizon: float = 1.0

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if counts.size and counts.min() < 0:
            raise ValueError("counts must be non-negative")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")

    @property
    def n(self) -> int:
        return int(self.counts.size)


@dataclass(frozen=True)
class CountHistogram:
    """Pooled observation counts: distinct count values (ascending) and the
    number of items observed at each value."""

    values: np.ndarray
    counts: np.ndarray
    horizon: float = 1.0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "counts", counts)
        if values.size == 0:
            raise DataError("histogram must be non-empty")
        if values.shape != counts.shape:
            raise ValueError("values and counts must align")
        if np.any(np.diff(values) <= 0):
            raise ValueError("values must be strictly ascending")
        if values[0] < 0:
            raise ValueError("count values must be non-negative")
        if counts.min() < 1:
            raise ValueError("every stored value needs multiplicity >= 1")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def max_value(self) -> int:
        return int(self.values[-1])

    def frequencies(self) -> np.ndarray:
        return self.counts / self.n

    def expand(self) -> np.ndarray:
        """Inverse of build_histogram: the sorted raw count vector."""
        return np.repeat(self.values, self.counts)

    @staticmethod
    def merge(a: "CountHistogram", b: "CountHistogram") -> "CountHistogram":
        """Pool two histograms observed over the same horizon."""
        if a.horizon != b.horizon:
            raise ValueError("cannot merge histograms with different horizons")
        values = np.union1d(a.values, b.values)
        counts = np.zeros_like(values)
        counts[np.searchsorted(values, a.values)] += a.counts
        counts[np.searchsorted(values, b.values)] += b.counts
        return CountHistogram(values, counts, a.horizon)


def build_histogram(data: Dataset) -> CountHistogram:
    """Tabulate a dataset into a CountHistogram. Errors on empty data."""
    if data.n == 0:
        raise DataError("cannot build a histogram from an empty dataset")
    values, counts = np.unique(data.counts, return_counts=True)
    return CountHistogram(values, counts, data.horizon)


def poisson_log_pmf(rate: float, k: int) -> float:
    """log P[Poisson(rate) = k], with rate = 0 allowed (point mass at 0)."""
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    if k < 0 or k != int(k):
        raise ValueError(f"k must be a non-negative integer, got {k}")
    if rate == 0.0:
        return 0.0 if k == 0 else -math.inf
    return k * math.log(rate) - rate - float(gammaln(k + 1.0))


def poisson_pmf(rate: float, k: int) -> float:
    return math.exp(poisson_log_pmf(rate, k))


@dataclass(frozen=True)
class DemandPmf:
    """Truncated predictive pmf for one item's future demand.

    probs[k] = P[demand = k] for k = 0..k_max; tail holds the mass beyond
    the truncation point so normalisation stays checkable.
    """

    probs: np.ndarray
    tail: float

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if probs.min() < 0:
            raise ValueError("probabilities must be non-negative")
        if self.tail < 0:
            raise ValueError("tail mass must be non-negative")
        total = float(probs.sum()) + self.tail
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pmf plus tail must sum to 1, got {total}")

    @property
    def k_max(self) -> int:
        return int(self.probs.size - 1)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> "DemandPmf":
        """Build with the tail inferred as the missing mass (clipped at 0)."""
        probs = np.asarray(probs, dtype=float)
        return cls(probs, max(0.0, 1.0 - float(probs.sum())))


def poisson_demand_pmf(rate: float, k_max: int) -> DemandPmf:
    """Poisson(rate) truncated at k_max with explicit tail mass."""
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    if rate == 0.0:
        probs = np.zeros(k_max + 1)
        probs[0] = 1.0
        return DemandPmf(probs, 0.0)
    k = np.arange(k_max + 1)
    probs = np.exp(k * math.log(rate) - rate - gammaln(k + 1.0))
    return DemandPmf(probs, max(0.0, 1.0 - float(probs.sum())))


def default_k_max(x_obs: int, mean_rate: float) -> int:
    """Default pmf truncation point for an item that observed x_obs."""
    return int(x_obs) + int(math.ceil(10.0 * (1.0 + max(mean_rate, 0.0))))


@dataclass(frozen=True)
class ItemTable:
    """Rows of a dataset CSV: ids, observed demand, optional economics and
    realized future demand for validation."""

    item_ids: tuple
    demands: np.ndarray
    prices: np.ndarray | None = None
    unit_costs: np.ndarray | None = None
    fixed_costs: np.ndarray | None = None
    future_demands: np.ndarray | None = None

    def dataset(self, horizon: float) -> Dataset:
        return Dataset(self.demands, horizon)


def read_dataset_csv(path: str) -> ItemTable:
    """Read `item_id,demand` CSV, with optional `price,unit_cost,fixed_cost,
    future_demand` columns. Raises DataError with the offending line number."""
    ids: list[str] = []
    cols: dict[str, list[float]] = {
        "demand": [], "price": [], "unit_cost": [], "fixed_cost": [],
        "future_demand": [],
    }
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "item_id" not in reader.fieldnames \
                or "demand" not in reader.fieldnames:
            raise DataError(f"{path}: header must contain item_id,demand")
        present = [c for c in cols if c in reader.fieldnames]
        for lineno, row in enumerate(reader, start=2):
            ids.append(row["item_id"])
            for c in present:
                raw = row.get(c)
                if raw is None or raw == "":
                    raise DataError(f"{path}:{lineno}: missing value for {c}")
                try:
                    cols[c].append(float(raw))
                except ValueError as exc:
                    raise DataError(
                        f"{path}:{lineno}: bad value {raw!r} for {c}") from exc
    if not ids:
        raise DataError(f"{path}: no data rows")
    demands = np.asarray(cols["demand"])
    if np.any(demands < 0) or np.any(demands != np.round(demands)):
        raise DataError(f"{path}: demand column must hold non-negative integers")

    def arr(name: str) -> np.ndarray | None:
        return np.asarray(cols[name]) if cols[name] else None

    return ItemTable(
        item_ids=tuple(ids),
        demands=demands.astype(np.int64),
        prices=arr("price"),
        unit_costs=arr("unit_cost"),
        fixed_costs=arr("fixed_cost"),
        future_demands=arr("future_demand"),
    )
