# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Task relatedness, multitask benefit against dataset size and covariate shift."""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import csv
import logging

from joblib import Parallel, delayed
from scipy.stats import linregress, pearsonr
import numpy as np

from .chem import fingerprint_matrix, tanimoto_matrix
from .data import TaskDataset
from .qsarerror import AnalysisError
from .split import TEST, TRAIN, SplitAssignment

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.5
SHIFT_BINS = 20
PAIR_CHUNK = 1024
BOUND_SLACK = 1e-9
HISTOGRAM_HEADER = ("bin_center", "count")
SHIFT_SUMMARY_HEADER = ("task", "regime", "n_test", "mean_max_sim")
RELATEDNESS_HEADER = ("task_a", "task_b", "tau", "similar_same", "similar_different", "r", "pairs")
REGRESSION_HEADER = ("slope", "intercept", "r2", "points")


@dataclass(frozen=True)
class RelatednessReport:
    """``R = max(S, D) / (S + D)`` over similar cross-task pairs; ``r`` is
    ``None`` when no pair reaches the threshold."""

    task_a: str
    task_b: str
    similar_same: int
    similar_different: int
    r: Optional[float]
    tau: float
    pairs: int

    def row(self) -> List[str]:
        return [self.task_a, self.task_b, repr(self.tau), str(self.similar_same), str(self.similar_different),
                "" if self.r is None else repr(self.r), str(self.pairs)]


def _count_chunk(first: np.ndarray, first_labels: np.ndarray, second: np.ndarray, second_labels: np.ndarray,
                 tau: float) -> Tuple[int, int]:
    similar = tanimoto_matrix(first, second) >= tau
    same = first_labels[:, None] == second_labels[None, :]
    return int(np.count_nonzero(similar & same)), int(np.count_nonzero(similar & ~same))


def popcount_window(counts: np.ndarray, sorted_counts: np.ndarray, tau: float) -> slice:
    """Columns of the popcount-sorted ``sorted_counts`` that can reach
    similarity ``tau`` with some row whose popcount is in ``counts``.

    Tanimoto similarity never exceeds ``min(|a|, |b|) / max(|a|, |b|)``, and
    an empty fingerprint has similarity 0 to everything.
    """
    if tau <= 0 or not len(counts):
        return slice(0, len(sorted_counts))
    low = max(tau * int(counts.min()) * (1.0 - BOUND_SLACK), 1)
    high = int(counts.max()) / tau * (1.0 + BOUND_SLACK)
    start = int(np.searchsorted(sorted_counts, low, side="left"))
    stop = int(np.searchsorted(sorted_counts, high, side="right"))
    return slice(start, max(start, stop))


def _by_popcount(matrix: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    counts = matrix.sum(axis=1, dtype=np.int64)
    order = np.argsort(counts, kind="stable")
    return matrix[order], labels[order], counts[order]


def relatedness(alpha: TaskDataset, beta: TaskDataset, tau: float = DEFAULT_TAU, strict: bool = False,
                jobs: int = 1) -> RelatednessReport:
    """Label agreement of structurally similar compounds across two tasks.

    Every cross pair ``(a, b)`` is counted, self pairs included when
    ``alpha is beta``. Pairs with Tanimoto similarity ``>= tau`` count as
    ``S`` when their labels agree and as ``D`` otherwise. Both sides are
    sorted by popcount and each chunk is only compared with the columns
    inside its :func:`popcount_window`.

    :param strict: raise instead of reporting an undefined ``R``
    :raises AnalysisError: ``NoSimilarPairs`` with ``strict`` and ``S + D == 0``
    """
    if len(alpha) and len(beta) and alpha.records[0].fingerprint.width != beta.records[0].fingerprint.width:
        raise AnalysisError(message="tasks were featurized with different widths", code="WidthMismatch")
    width = alpha.records[0].fingerprint.width if len(alpha) else (beta.records[0].fingerprint.width if len(beta)
                                                                   else 1)
    first = fingerprint_matrix([record.fingerprint for record in alpha.records], width)
    second = fingerprint_matrix([record.fingerprint for record in beta.records], width)
    first, first_labels, first_counts = _by_popcount(first, alpha.labels)
    second, second_labels, second_counts = _by_popcount(second, beta.labels)

    chunks = [slice(start, start + PAIR_CHUNK) for start in range(0, first.shape[0], PAIR_CHUNK)]
    windows = [popcount_window(first_counts[chunk], second_counts, tau) for chunk in chunks]
    counts = Parallel(n_jobs=jobs)(
        delayed(_count_chunk)(first[chunk], first_labels[chunk], second[window], second_labels[window], tau)
        for chunk, window in zip(chunks, windows)
    )
    same = sum(count[0] for count in counts)
    different = sum(count[1] for count in counts)
    total = same + different
    if total == 0:
        if strict:
            raise AnalysisError(message="no compound pairs with similarity >= %g between %s and %s"
                                % (tau, alpha.name, beta.name), code="NoSimilarPairs")
        logger.warning(f"relatedness of {alpha.name} and {beta.name}: no similar pairs at tau={tau}")
        r = None
    else:
        r = max(same, different) / total
    return RelatednessReport(alpha.name, beta.name, same, different, r, tau, len(alpha) * len(beta))


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r2: float
    points: int

    def row(self) -> List[str]:
        return [repr(self.slope), repr(self.intercept), repr(self.r2), str(self.points)]


def size_benefit_regression(points: Sequence[Tuple[float, float]]) -> RegressionResult:
    """Least squares fit of AUC difference against ``log10`` training size.

    :param points: ``(training size, delta AUC)`` per task
    :raises AnalysisError: ``TooFewPoints`` below three points,
        ``InvalidSize`` for sizes <= 0, ``DegenerateX`` if all sizes are equal
    """
    if len(points) < 3:
        raise AnalysisError(message="need at least 3 points, got %d" % len(points), code="TooFewPoints")
    sizes = np.array([point[0] for point in points], dtype=np.float64)
    deltas = np.array([point[1] for point in points], dtype=np.float64)
    if (sizes <= 0).any():
        raise AnalysisError(message="training sizes must be positive", code="InvalidSize")
    x = np.log10(sizes)
    if np.ptp(x) == 0:
        raise AnalysisError(message="all training sizes are equal", code="DegenerateX")
    if np.ptp(deltas) == 0:
        return RegressionResult(0.0, float(deltas[0]), 0.0, len(points))
    fit = linregress(x, deltas)
    return RegressionResult(float(fit.slope), float(fit.intercept), float(fit.rvalue) ** 2, len(points))


@dataclass(frozen=True)
class ShiftHistogram:
    """Max train-set similarity per test compound and its 0.05-wide histogram."""

    task: str
    regime: str
    values: Tuple[float, ...]
    counts: Tuple[int, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float("nan")

    @property
    def bin_centers(self) -> Tuple[float, ...]:
        edges = np.linspace(0.0, 1.0, SHIFT_BINS + 1)
        return tuple(float(center) for center in (edges[:-1] + edges[1:]) / 2.0)

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fout:
            writer = csv.writer(fout, lineterminator="\n")
            writer.writerow(HISTOGRAM_HEADER)
            for center, count in zip(self.bin_centers, self.counts):
                writer.writerow(["%.3f" % center, count])


def _histogram(values: Sequence[float]) -> Tuple[int, ...]:
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=SHIFT_BINS, range=(0.0, 1.0))
    return tuple(int(count) for count in counts)


def covariate_shift(task: TaskDataset, assignment: SplitAssignment) -> ShiftHistogram:
    """Maximum Tanimoto similarity of every test compound to the task's
    training compounds; validation compounds take no part.

    :raises AnalysisError: ``EmptySubset`` if train or test is empty
    """
    if task.name not in assignment.buckets:
        raise AnalysisError(message="assignment does not cover task " + task.name, code="EmptySubset")
    train_rows = assignment.rows(task.name, TRAIN)
    test_rows = assignment.rows(task.name, TEST)
    if not train_rows or not test_rows:
        raise AnalysisError(message="task %s has %d training and %d test records"
                            % (task.name, len(train_rows), len(test_rows)), code="EmptySubset")
    width = task.records[0].fingerprint.width
    train = fingerprint_matrix([task.records[row].fingerprint for row in train_rows], width)
    test = fingerprint_matrix([task.records[row].fingerprint for row in test_rows], width)
    best = np.concatenate([tanimoto_matrix(test[start:start + PAIR_CHUNK], train).max(axis=1)
                           for start in range(0, test.shape[0], PAIR_CHUNK)])
    values = tuple(float(value) for value in best)
    return ShiftHistogram(task.name, assignment.regime, values, _histogram(values))


def merge_histograms(histograms: Sequence[ShiftHistogram]) -> ShiftHistogram:
    """Pool the values of several histograms (e.g. every fold of a k-fold split)."""
    if not histograms:
        raise AnalysisError(message="no histograms to merge", code="EmptySubset")
    values = tuple(value for histogram in histograms for value in histogram.values)
    return ShiftHistogram(histograms[0].task, histograms[0].regime, values, _histogram(values))


def write_shift_summary(histograms: Sequence[ShiftHistogram], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(SHIFT_SUMMARY_HEADER)
        for histogram in histograms:
            writer.writerow([histogram.task, histogram.regime, len(histogram.values), repr(histogram.mean)])


def label_correlation(alpha: TaskDataset, beta: TaskDataset) -> Optional[float]:
    """Pearson correlation of the labels of compounds measured in both tasks.

    ``None`` with fewer than two shared compounds or a constant label vector.
    """
    first = {record.compound_id: record.label for record in alpha.records}
    second = {record.compound_id: record.label for record in beta.records}
    shared = [compound_id for compound_id in first if compound_id in second]
    if len(shared) < 2:
        return None
    x = np.array([first[compound_id] for compound_id in shared], dtype=np.float64)
    y = np.array([second[compound_id] for compound_id in shared], dtype=np.float64)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(pearsonr(x, y)[0])


def write_rows(header: Sequence[str], rows: Sequence[Sequence[str]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
