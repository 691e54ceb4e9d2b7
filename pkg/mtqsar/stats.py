# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Paired model comparison over datasets.

Two models are compared through their per-task AUC differences: the median
difference, a sign test over the nonzero differences and a Wilson score
interval around the fraction of positive ones. The models are called
distinguishable when the interval excludes 0.5.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import csv
import logging
import math

from scipy.stats import norm
import numpy as np

from .evaluation import EvalResult
from .qsarerror import StatsError

logger = logging.getLogger(__name__)

COMPARISON_HEADER = ("model_a", "model_b", "median_delta_auc", "k", "n", "ci_lo", "ci_hi", "significant")
DEFAULT_ALPHA = 0.05


def paired_deltas(a: EvalResult, b: EvalResult) -> Dict[str, float]:
    """``AUC(a) - AUC(b)`` per task, in the task order of ``a``.

    :raises StatsError: ``TaskMismatch`` unless both results define AUCs for
        the same tasks
    """
    first = a.aucs()
    second = b.aucs()
    if set(first) != set(second):
        missing = sorted(set(first) ^ set(second))
        raise StatsError(message="results differ in tasks: " + ", ".join(missing), code="TaskMismatch",
                         tasks=missing)
    return {name: first[name] - second[name] for name in first}


def sign_test(deltas: Iterable[float]) -> Tuple[int, int]:
    """``(k, n)``: positive and nonzero differences; exact zeros are left out.

    :raises StatsError: ``EmptyInput`` for no deltas, ``AllZero`` if every
        delta is zero
    """
    values = list(deltas)
    if not values:
        raise StatsError(message="no differences to test", code="EmptyInput")
    n = sum(1 for value in values if value != 0)
    if n == 0:
        raise StatsError(message="all differences are exactly zero", code="AllZero")
    k = sum(1 for value in values if value > 0)
    return k, n


def wilson_interval(k: int, n: int, alpha: float = DEFAULT_ALPHA) -> Tuple[float, float]:
    """Wilson score interval of the proportion ``k / n``.

    :raises StatsError: ``InvalidCounts`` unless ``0 <= k <= n`` and ``n >= 1``
    """
    if n < 1 or k < 0 or k > n:
        raise StatsError(message="invalid counts k=%d n=%d" % (k, n), code="InvalidCounts")
    if not 0.0 < alpha < 1.0:
        raise StatsError(message="alpha must be in (0, 1)", code="InvalidCounts")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    p = k / n
    z2 = z * z
    denominator = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denominator
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denominator
    return max(0.0, center - half), min(1.0, center + half)


def bootstrap_mean_ci(values: Sequence[float], resamples: int = 10000, alpha: float = DEFAULT_ALPHA,
                      seed: int = 0) -> Tuple[float, float]:
    """Percentile bootstrap interval of the mean.

    :raises StatsError: ``EmptyInput`` for an empty sample
    """
    sample = np.asarray(values, dtype=np.float64)
    if sample.size == 0:
        raise StatsError(message="cannot bootstrap an empty sample", code="EmptyInput")
    rng = np.random.default_rng(seed)
    means = sample[rng.integers(0, sample.size, size=(resamples, sample.size))].mean(axis=1)
    lo, hi = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


@dataclass
class ComparisonResult:
    """One row of a comparison table.

    ``all_zero`` marks comparisons whose deltas are all exactly zero; they
    have ``n == 0``, the uninformative interval ``(0, 1)`` and are never
    significant.
    """

    model_a: str
    model_b: str
    deltas: Dict[str, float]
    median_delta: float
    k: int
    n: int
    ci: Tuple[float, float]
    alpha: float = DEFAULT_ALPHA
    all_zero: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def significant(self) -> bool:
        return self.ci[0] > 0.5 or self.ci[1] < 0.5

    @property
    def favors(self) -> Optional[str]:
        if self.ci[0] > 0.5:
            return "a"
        if self.ci[1] < 0.5:
            return "b"
        return None

    def row(self) -> List[str]:
        return [self.model_a, self.model_b, repr(self.median_delta), str(self.k), str(self.n),
                repr(self.ci[0]), repr(self.ci[1]), "true" if self.significant else "false"]


def median_delta(deltas: Sequence[float]) -> float:
    """Median; the mean of the two central values for even lengths."""
    if not len(deltas):
        raise StatsError(message="no differences", code="EmptyInput")
    return float(np.median(np.asarray(deltas, dtype=np.float64)))


def compare(a: EvalResult, b: EvalResult, alpha: float = DEFAULT_ALPHA, name_a: Optional[str] = None,
            name_b: Optional[str] = None) -> ComparisonResult:
    """Compare two evaluation results task by task.

    :raises StatsError: ``TaskMismatch`` from :func:`paired_deltas`
    """
    deltas = paired_deltas(a, b)
    name_a = name_a or "%s %s" % (a.model, a.arch)
    name_b = name_b or "%s %s" % (b.model, b.arch)
    values = list(deltas.values())
    median = median_delta(values)
    try:
        k, n = sign_test(values)
    except StatsError as exc:
        if exc.code != "AllZero":
            raise
        logger.info(f"{name_a} vs {name_b}: all differences are zero, models indistinguishable")
        return ComparisonResult(name_a, name_b, deltas, median, 0, 0, (0.0, 1.0), alpha, True,
                                ["AllZero: " + exc.message])
    return ComparisonResult(name_a, name_b, deltas, median, k, n, wilson_interval(k, n, alpha), alpha)


def median_auc(result: EvalResult) -> float:
    """Median test AUC over the tasks with a defined AUC."""
    aucs = list(result.aucs().values())
    if not aucs:
        raise StatsError(message="no defined AUCs in result", code="EmptyInput")
    return float(np.median(aucs))


def write_comparisons(results: Sequence[ComparisonResult], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(COMPARISON_HEADER)
        for result in results:
            writer.writerow(result.row())


def read_comparisons(path: str) -> List[Dict[str, str]]:
    """Rows of a comparison CSV as dictionaries keyed by the header."""
    with open(path, encoding="utf-8", newline="") as fin:
        reader = csv.DictReader(fin)
        if tuple(reader.fieldnames or ()) != COMPARISON_HEADER:
            raise StatsError(message=path + " is not a comparison file", code="MalformedResult")
        return [dict(row) for row in reader]
