"""QoS evaluation metrics: degradation, its distribution and deactivations."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algorithms import SAT_TOL, is_deactivated

__all__ = [
    "MetricsError", "DropMetrics", "qos_degradation", "drop_metrics",
    "average_degradation_unsatisfied", "empirical_cdf", "cdf_at",
    "deactivated_fraction",
]


class MetricsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DropMetrics:
    """Per-link outcome of one algorithm on one drop.

    ``degradation`` is zero for every satisfied link.
    """
    algorithm: str
    seed: int
    qos: np.ndarray
    rates: np.ndarray
    degradation: np.ndarray
    satisfied: int
    deactivated: int
    sum_rate: float


def qos_degradation(rates, qos):
    """Shortfall ``max(0, qos_u - r_u)`` of every link."""
    rates = np.asarray(rates, dtype=float)
    qos = np.asarray(qos, dtype=float)
    if qos.ndim == 0:
        qos = np.full(rates.shape, float(qos))
    if rates.shape != qos.shape:
        raise MetricsError("rates and qos must be aligned by user")
    return np.maximum(0.0, qos - rates)


def drop_metrics(result, algorithm, seed, deactivation_eps=1e-3) -> DropMetrics:
    """Summarize an ``AllocationResult``."""
    rates = np.asarray(result.rates, dtype=float)
    qos = np.asarray(result.qos, dtype=float)
    satisfied = rates >= qos - SAT_TOL
    deg = np.where(satisfied, 0.0, qos_degradation(rates, qos))
    return DropMetrics(str(algorithm), int(seed), qos, rates, deg, int(satisfied.sum()),
                       int(np.sum(is_deactivated(rates, deactivation_eps))), float(rates.sum()))


def _nonempty(drops):
    drops = list(drops)
    if not drops:
        raise MetricsError("need at least one drop")
    return drops


def average_degradation_unsatisfied(drops: Sequence[DropMetrics]) -> float:
    """Mean degradation over all links (of all drops) that miss their requirement.

    Zero when every link is satisfied.
    """
    deg = np.concatenate([d.degradation for d in _nonempty(drops)])
    bad = deg[deg > 0]
    return float(bad.mean()) if bad.size else 0.0


def empirical_cdf(values):
    """Right-continuous empirical CDF as ``(support, cumulative_fraction)``.

    ``support`` holds the sorted distinct sample values.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise MetricsError("empirical CDF of an empty sample")
    support, counts = np.unique(values, return_counts=True)
    return support, np.cumsum(counts) / values.size


def cdf_at(cdf, x):
    """Evaluate a CDF from :func:`empirical_cdf` at ``x``."""
    support, frac = cdf
    i = np.searchsorted(support, x, side="right")
    return float(frac[i - 1]) if i > 0 else 0.0


def deactivated_fraction(drops: Sequence[DropMetrics], eps=1e-3) -> float:
    """Fraction of links, across drops, with rate strictly below ``eps``
    (exactly zero when ``eps == 0``)."""
    rates = np.concatenate([d.rates for d in _nonempty(drops)])
    return float(np.mean(is_deactivated(rates, eps)))
