# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Train/validation/test assignments: leaky and non-leaky temporal splits and
stratified random k-fold cross-validation."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import bisect
import csv
import datetime
import logging

import numpy as np

from .data import ACTIVE, Collection, TaskDataset
from .hashing import derive_seed
from .qsarerror import SplitError

logger = logging.getLogger(__name__)

TRAIN = "train"
VALID = "valid"
TEST = "test"
EXCLUDED = "excluded"
BUCKETS = (TRAIN, VALID, TEST, EXCLUDED)

LEAKY = "leaky-temporal"
NON_LEAKY = "non-leaky-temporal"
RANDOM_KFOLD = "random-kfold"
REGIMES = (LEAKY, NON_LEAKY, RANDOM_KFOLD)

DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)
MIN_TEMPORAL_RECORDS = 10
FRACTION_TOLERANCE = 0.05

ASSIGNMENT_HEADER = ("task", "compound_id", "bucket", "regime", "focus", "cutoff_train", "cutoff_valid")


@dataclass(frozen=True)
class TemporalCutoffs:
    """Cutoff dates of one task. Records dated ``<= train_cutoff`` are
    training records, ``<= valid_cutoff`` validation records, later ones test
    records."""

    train_cutoff: datetime.date
    valid_cutoff: datetime.date
    counts: Tuple[int, int, int]
    warning: str = ""

    def bucket(self, date: datetime.date) -> str:
        if date <= self.train_cutoff:
            return TRAIN
        if date <= self.valid_cutoff:
            return VALID
        return TEST


@dataclass
class SplitAssignment:
    """Per task: record index -> bucket, plus provenance.

    :param regime: one of ``REGIMES``
    :param buckets: task name -> bucket per record (index aligned with the task)
    :param cutoffs: task name -> cutoffs (temporal regimes)
    :param fold: held-out fold index (random k-fold)
    :param focus: focus task (non-leaky regime)
    :param notes: provenance notes (warnings, leakage flags, decisions)
    :param dropped: side tasks removed because they had no training rows
    """

    regime: str
    buckets: Dict[str, Tuple[str, ...]]
    cutoffs: Dict[str, TemporalCutoffs] = field(default_factory=dict)
    fold: Optional[int] = None
    focus: Optional[str] = None
    notes: List[str] = field(default_factory=list)
    dropped: List[str] = field(default_factory=list)

    @property
    def task_names(self) -> Tuple[str, ...]:
        return tuple(self.buckets)

    def rows(self, task: str, bucket: str) -> List[int]:
        return [index for index, value in enumerate(self.buckets[task]) if value == bucket]

    def counts(self, task: str) -> Dict[str, int]:
        values = self.buckets[task]
        return {bucket: values.count(bucket) for bucket in BUCKETS}

    @property
    def label(self) -> str:
        """Regime name with the fold or focus it was built for."""
        if self.fold is not None:
            return "%s/fold-%d" % (self.regime, self.fold)
        if self.focus is not None:
            return "%s/%s" % (self.regime, self.focus)
        return self.regime


@dataclass(frozen=True)
class FoldSet:
    """k assignments of one task, fold i held out as test in assignment i."""

    task: str
    folds: Tuple[Tuple[int, ...], ...]
    assignments: Tuple[SplitAssignment, ...]

    @property
    def k(self) -> int:
        return len(self.folds)


def temporal_cutoffs(task: TaskDataset, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> TemporalCutoffs:
    """Choose the train and validation cutoff dates of a task.

    Over the distinct dates in order, the train cutoff is the date whose
    cumulative record count is closest to ``fractions[0]`` of the records, the
    validation cutoff the date (not before the train cutoff) closest to
    ``fractions[0] + fractions[1]``. Ties on a date all fall on the earlier
    side, equal distances resolve to the earlier date, and the last date is
    never a cutoff so the test set is never empty.

    :raises SplitError: ``TooFewRecords`` (fewer than 10 records) or
        ``DegenerateDates`` (a single distinct date)
    """
    total = len(task.records)
    if total < MIN_TEMPORAL_RECORDS:
        raise SplitError(message="task %s has %d records, need %d" % (task.name, total, MIN_TEMPORAL_RECORDS),
                         code="TooFewRecords", task=task.name)
    if len(fractions) != 3 or any(value < 0 for value in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(message="fractions must be three non-negative values summing to 1",
                         code="InvalidFractions")

    dates = sorted(record.date for record in task.records)
    distinct = sorted(set(dates))
    if len(distinct) < 2:
        raise SplitError(message="all records of task %s share one date" % task.name,
                         code="DegenerateDates", task=task.name)

    cumulative = [bisect.bisect_right(dates, date) for date in distinct]
    candidates = range(len(distinct) - 1)

    def closest(target: float, start: int) -> int:
        return min((index for index in candidates if index >= start),
                   key=lambda index: (abs(cumulative[index] - target), index))

    train_index = closest(fractions[0] * total, 0)
    valid_index = closest((fractions[0] + fractions[1]) * total, train_index)
    n_train = cumulative[train_index]
    n_valid = cumulative[valid_index] - n_train
    counts = (n_train, n_valid, total - n_train - n_valid)

    warning = ""
    achieved = [count / total for count in counts]
    if any(abs(value - target) > FRACTION_TOLERANCE for value, target in zip(achieved, fractions)):
        warning = "task %s: achievable split %d/%d/%d deviates from %s" % (
            task.name, counts[0], counts[1], counts[2], "/".join(str(value) for value in fractions))
        logger.warning(warning)

    return TemporalCutoffs(distinct[train_index], distinct[valid_index], counts, warning)


def _temporal_buckets(task: TaskDataset, cutoffs: TemporalCutoffs) -> Tuple[str, ...]:
    return tuple(cutoffs.bucket(record.date) for record in task.records)


def leaky_split(collection: Collection, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> SplitAssignment:
    """Split every task independently at its own cutoffs.

    Training rows of one task that postdate the first test row of another task
    are allowed and recorded in ``notes``.
    """
    assignment = SplitAssignment(LEAKY, {})
    for task in collection.tasks:
        cutoffs = temporal_cutoffs(task, fractions)
        assignment.cutoffs[task.name] = cutoffs
        assignment.buckets[task.name] = _temporal_buckets(task, cutoffs)
        if cutoffs.warning:
            assignment.notes.append(cutoffs.warning)

    for task in collection.tasks:
        test_dates = [record.date for record, bucket in zip(task.records, assignment.buckets[task.name])
                      if bucket == TEST]
        if not test_dates:
            continue
        first_test = min(test_dates)
        for other in collection.tasks:
            if other.name == task.name:
                continue
            later = sum(1 for record, bucket in zip(other.records, assignment.buckets[other.name])
                        if bucket == TRAIN and record.date > first_test)
            if later:
                note = "anachronistic side information: %d training rows of %s postdate test rows of %s" % (
                    later, other.name, task.name)
                assignment.notes.append(note)
                logger.info(note)
    return assignment


def non_leaky_split(collection: Collection, focus: str,
                    fractions: Sequence[float] = DEFAULT_FRACTIONS) -> SplitAssignment:
    """Split every task at the cutoff dates of the focus task.

    The focus task gets exactly its leaky assignment. Other tasks are cut at
    the same two dates, so no training row of any task postdates the focus
    training cutoff; side tasks left without training rows are dropped (all
    rows excluded) with a warning.

    :raises SplitError: ``FocusNotFound``
    """
    if focus not in collection.task_names:
        raise SplitError(message="focus task %r not in collection" % focus, code="FocusNotFound", task=focus)

    cutoffs = temporal_cutoffs(collection.task(focus), fractions)
    assignment = SplitAssignment(NON_LEAKY, {}, focus=focus)
    if cutoffs.warning:
        assignment.notes.append(cutoffs.warning)
    assignment.notes.append("side tasks use the focus cutoffs for training, validation and test rows")

    for task in collection.tasks:
        assignment.cutoffs[task.name] = cutoffs
        buckets = _temporal_buckets(task, cutoffs)
        if task.name != focus and TRAIN not in buckets:
            warning = "side task %s has no training rows before %s and is dropped" % (
                task.name, cutoffs.train_cutoff.isoformat())
            logger.warning(warning)
            assignment.notes.append(warning)
            assignment.dropped.append(task.name)
            buckets = tuple(EXCLUDED for _ in buckets)
        assignment.buckets[task.name] = buckets
    return assignment


def stratified_kfold(task: TaskDataset, k: int = 5, seed: int = 0) -> FoldSet:
    """Stratified k-fold partition of one task.

    Actives and inactives are shuffled independently (numpy generator seeded
    with ``seed``) and dealt round-robin into the folds, the inactives
    continuing where the actives stopped so fold sizes differ by at most one.

    :raises SplitError: ``InvalidFoldCount`` for ``k < 2``, ``ClassTooSmall``
        if a class has fewer than ``k`` members
    """
    if k < 2:
        raise SplitError(message="k-fold needs k >= 2, got %d" % k, code="InvalidFoldCount")
    labels = task.labels
    actives = np.flatnonzero(labels == ACTIVE)
    inactives = np.flatnonzero(labels != ACTIVE)
    if len(actives) < k or len(inactives) < k:
        raise SplitError(message="task %s: %d actives / %d inactives cannot fill %d folds"
                         % (task.name, len(actives), len(inactives), k), code="ClassTooSmall", task=task.name)

    rng = np.random.default_rng(seed)
    fold_of = np.zeros(len(labels), dtype=np.int64)
    dealt = 0
    for members in (actives, inactives):
        for index in rng.permutation(members):
            fold_of[index] = dealt % k
            dealt += 1

    folds = tuple(tuple(int(index) for index in np.flatnonzero(fold_of == fold)) for fold in range(k))
    assignments = []
    for fold in range(k):
        buckets = tuple(TEST if value == fold else TRAIN for value in fold_of)
        assignments.append(SplitAssignment(RANDOM_KFOLD, {task.name: buckets}, fold=fold))
    return FoldSet(task.name, folds, tuple(assignments))


def random_kfold_split(collection: Collection, k: int = 5, seed: int = 0) -> List[SplitAssignment]:
    """Fold every task independently; assignment i holds fold i of every task
    as test. Task j uses the seed ``derive_seed(seed, j)``."""
    fold_sets = [stratified_kfold(task, k, derive_seed(seed, index)) for index, task in enumerate(collection.tasks)]
    assignments = []
    for fold in range(k):
        buckets = {fold_set.task: fold_set.assignments[fold].buckets[fold_set.task] for fold_set in fold_sets}
        assignments.append(SplitAssignment(RANDOM_KFOLD, buckets, fold=fold,
                                           notes=["no validation set is held out under random cross-validation"]))
    return assignments


def write_assignment(assignment: SplitAssignment, collection: Collection, path: str) -> None:
    """Write ``task,compound_id,bucket,regime,focus,cutoff_train,cutoff_valid``."""
    with open(path, "w", newline="", encoding="utf-8") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(ASSIGNMENT_HEADER)
        for task in collection.tasks:
            if task.name not in assignment.buckets:
                continue
            cutoffs = assignment.cutoffs.get(task.name)
            train_cut = cutoffs.train_cutoff.isoformat() if cutoffs else ""
            valid_cut = cutoffs.valid_cutoff.isoformat() if cutoffs else ""
            for record, bucket in zip(task.records, assignment.buckets[task.name]):
                writer.writerow((task.name, record.compound_id, bucket, assignment.label,
                                 assignment.focus or "", train_cut, valid_cut))


def read_assignment(path: str, collection: Collection) -> SplitAssignment:
    """Read an assignment written by :func:`write_assignment` back for ``collection``."""
    per_task: Dict[str, Dict[str, str]] = {}
    label = ""
    focus = ""
    cutoff_text: Dict[str, Tuple[str, str]] = {}
    with open(path, newline="", encoding="utf-8") as fin:
        reader = csv.reader(fin)
        if tuple(next(reader, ())) != ASSIGNMENT_HEADER:
            raise SplitError(message=path + ": not an assignment file", code="MalformedAssignment")
        for row in reader:
            if len(row) != len(ASSIGNMENT_HEADER) or row[2] not in BUCKETS:
                raise SplitError(message="%s:%d: bad row" % (path, reader.line_num), code="MalformedAssignment")
            per_task.setdefault(row[0], {})[row[1]] = row[2]
            label, focus = row[3], row[4]
            cutoff_text[row[0]] = (row[5], row[6])

    regime, _, qualifier = label.partition("/")
    fold = int(qualifier[len("fold-"):]) if qualifier.startswith("fold-") else None
    assignment = SplitAssignment(regime, {}, fold=fold, focus=focus or None)
    for task in collection.tasks:
        if task.name not in per_task:
            continue
        mapping = per_task[task.name]
        try:
            assignment.buckets[task.name] = tuple(mapping[record.compound_id] for record in task.records)
        except KeyError as ex:
            raise SplitError(message="%s: compound %s of task %s has no bucket" % (path, ex, task.name),
                             code="MalformedAssignment")
        train_cut, valid_cut = cutoff_text[task.name]
        if train_cut and valid_cut:
            buckets = assignment.buckets[task.name]
            counts = (buckets.count(TRAIN), buckets.count(VALID), buckets.count(TEST))
            assignment.cutoffs[task.name] = TemporalCutoffs(datetime.date.fromisoformat(train_cut),
                                                            datetime.date.fromisoformat(valid_cut), counts)
        if all(bucket == EXCLUDED for bucket in assignment.buckets[task.name]):
            assignment.dropped.append(task.name)
    return assignment
