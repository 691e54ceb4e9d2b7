# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Assay tables, task collections and dense multitask matrices."""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, MutableMapping, Optional, Sequence, Tuple
import csv
import datetime
import logging
import os

import numpy as np

from .chem import Fingerprint, circular_fingerprint, fingerprint_matrix, parse_smiles
from .qsarerror import DataError, SmilesError

if TYPE_CHECKING:
    from .split import SplitAssignment  # noqa: F401

logger = logging.getLogger(__name__)

HEADER = ("compound_id", "smiles", "label", "date")
FINGERPRINT_HEADER = ("compound_id", "smiles", "bits")

ACTIVE = 1
INACTIVE = 0
LABELS = {"active": ACTIVE, "inactive": INACTIVE}
LABEL_NAMES = {ACTIVE: "active", INACTIVE: "inactive"}

SPLIT_LOCAL = "split-local"
FULL_DATASET = "full-dataset"

FingerprintCache = MutableMapping[str, Fingerprint]


@dataclass(frozen=True)
class Record:
    compound_id: str
    smiles: str
    fingerprint: Fingerprint
    label: int
    date: datetime.date


@dataclass(frozen=True)
class TaskDataset:
    name: str
    records: Tuple[Record, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([record.label for record in self.records], dtype=np.int64)

    @property
    def n_actives(self) -> int:
        return sum(1 for record in self.records if record.label == ACTIVE)

    @property
    def n_inactives(self) -> int:
        return len(self.records) - self.n_actives


@dataclass(frozen=True)
class Collection:
    """Ordered set of tasks. The order defines the output head order.

    ``side_tasks`` names tasks that are trained on but never evaluated.
    """

    tasks: Tuple[TaskDataset, ...]
    side_tasks: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        names = [task.name for task in self.tasks]
        if len(set(names)) != len(names):
            raise DataError(message="task names must be unique: " + ", ".join(names), code="DuplicateTask")

    @property
    def task_names(self) -> Tuple[str, ...]:
        return tuple(task.name for task in self.tasks)

    @property
    def evaluated_tasks(self) -> Tuple[str, ...]:
        return tuple(name for name in self.task_names if name not in self.side_tasks)

    @property
    def width(self) -> int:
        for task in self.tasks:
            for record in task.records:
                return record.fingerprint.width
        return 0

    def task(self, name: str) -> TaskDataset:
        for task in self.tasks:
            if task.name == name:
                return task
        raise DataError(message="no task named " + repr(name), code="TaskNotFound")

    @property
    def compound_index(self) -> Dict[str, Dict[str, int]]:
        """compound_id -> {task name -> label}"""
        index: Dict[str, Dict[str, int]] = {}
        for task in self.tasks:
            for record in task.records:
                index.setdefault(record.compound_id, {})[task.name] = record.label
        return index

    def subset(self, names: Iterable[str]) -> "Collection":
        wanted = list(names)
        tasks = tuple(self.task(name) for name in wanted)
        return Collection(tasks, tuple(name for name in self.side_tasks if name in wanted))

    def merge(self, side: "Collection") -> "Collection":
        """Append the tasks of ``side`` as side-information tasks."""
        return Collection(self.tasks + side.tasks, self.side_tasks + side.task_names)


@dataclass(frozen=True)
class MultitaskMatrix:
    """Dense matrices: one row per compound, one column per task."""

    compound_ids: Tuple[str, ...]
    task_names: Tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    @property
    def n_examples(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_tasks(self) -> int:
        return len(self.task_names)

    def task_column(self, name: str) -> int:
        try:
            return self.task_names.index(name)
        except ValueError:
            raise DataError(message="no task named " + repr(name), code="TaskNotFound")

    def select_tasks(self, names: Sequence[str]) -> "MultitaskMatrix":
        """Restrict to ``names`` and drop rows without any measurement left."""
        columns = [self.task_column(name) for name in names]
        weights = self.weights[:, columns]
        rows = np.flatnonzero((weights > 0).any(axis=1))
        return MultitaskMatrix(
            tuple(self.compound_ids[row] for row in rows),
            tuple(names),
            self.features[rows],
            self.labels[rows][:, columns],
            weights[rows],
        )


def _parse_date(text: str, path: str, line: int) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text.strip())
    except ValueError:
        raise DataError(message="invalid date %r in %s:%d" % (text, path, line),
                        code="MalformedRow", file=path, line=line)


def _fingerprint(smiles: str, radius: int, width: int, cache: Optional[FingerprintCache]) -> Fingerprint:
    if cache is not None and smiles in cache:
        return cache[smiles]
    fingerprint = circular_fingerprint(parse_smiles(smiles), radius, width)
    if cache is not None:
        cache[smiles] = fingerprint
    return fingerprint


def read_task(path: str, radius: int = 2, width: int = 1024,
              cache: Optional[FingerprintCache] = None, name: str = "") -> TaskDataset:
    """Read one assay CSV (``compound_id,smiles,label,date``) into a task.

    Inconclusive rows are dropped. Repeated compound ids are merged when their
    labels agree (earliest date kept) and discarded when they disagree.
    """
    if not name:
        name = os.path.splitext(os.path.basename(path))[0]

    rows: Dict[str, List[Tuple[str, int, datetime.date]]] = {}
    order: List[str] = []
    with open(path, newline="", encoding="utf-8") as fin:
        reader = csv.reader(fin)
        header = next(reader, None)
        if header is None or tuple(column.strip().lower() for column in header) != HEADER:
            raise DataError(message="%s: header must be %s" % (path, ",".join(HEADER)),
                            code="MalformedRow", file=path, line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not column.strip() for column in row):
                continue
            if len(row) != len(HEADER):
                raise DataError(message="%s:%d: expected %d columns" % (path, line, len(HEADER)),
                                code="MalformedRow", file=path, line=line)
            compound_id, smiles, label_text, date_text = (column.strip() for column in row)
            label_text = label_text.lower()
            if label_text == "inconclusive":
                continue
            if label_text not in LABELS or not compound_id or not smiles:
                raise DataError(message="%s:%d: bad row %r" % (path, line, row),
                                code="MalformedRow", file=path, line=line)
            date = _parse_date(date_text, path, line)
            if compound_id not in rows:
                rows[compound_id] = []
                order.append(compound_id)
            rows[compound_id].append((smiles, LABELS[label_text], date))

    records = []
    discarded = 0
    for compound_id in order:
        measurements = rows[compound_id]
        labels = {label for _, label, _ in measurements}
        if len(labels) > 1:
            discarded += 1
            continue
        smiles, label, _ = measurements[0]
        date = min(date for _, _, date in measurements)
        try:
            fingerprint = _fingerprint(smiles, radius, width, cache)
        except SmilesError as ex:
            raise DataError(message="%s: compound %s: %s" % (path, compound_id, ex),
                            code="UnparseableSmiles", file=path, compound_id=compound_id,
                            offset=ex.offset)
        records.append(Record(compound_id, smiles, fingerprint, label, date))

    if discarded:
        logger.info(f"{name}: {discarded} compounds with conflicting labels discarded")

    task = TaskDataset(name, tuple(records))
    if not records or task.n_actives == 0 or task.n_inactives == 0:
        raise DataError(message="task %s needs at least one active and one inactive record" % name,
                        code="EmptyTask", task=name)
    return task


def load_collection(paths: Sequence[str], radius: int = 2, width: int = 1024,
                    cache: Optional[FingerprintCache] = None) -> Collection:
    """Load one task per CSV file; the task name is the file stem.

    :param paths: CSV files with header ``compound_id,smiles,label,date``
    :param radius: fingerprint radius
    :param width: fingerprint width in bits
    :param cache: optional SMILES -> Fingerprint cache, filled as a side effect
    :return: the collection in the order of ``paths``
    :raises DataError: ``MalformedRow``, ``UnparseableSmiles`` or ``EmptyTask``
    """
    if cache is None:
        cache = {}
    return Collection(tuple(read_task(path, radius, width, cache) for path in paths))


def write_task(task: TaskDataset, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(HEADER)
        for record in task.records:
            writer.writerow((record.compound_id, record.smiles, LABEL_NAMES[record.label],
                             record.date.isoformat()))


def write_collection(collection: Collection, directory: str) -> List[str]:
    """Write one normalized CSV per task and return the file paths in task order."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for task in collection.tasks:
        path = os.path.join(directory, task.name + ".csv")
        write_task(task, path)
        paths.append(path)
    return paths


def write_fingerprints(collection: Collection, path: str) -> None:
    """Write the distinct structures of a collection as ``compound_id,smiles,bits``."""
    seen = set()
    with open(path, "w", newline="", encoding="utf-8") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(FINGERPRINT_HEADER)
        for task in collection.tasks:
            for record in task.records:
                if record.smiles in seen:
                    continue
                seen.add(record.smiles)
                bits = " ".join(str(bit) for bit in sorted(record.fingerprint.bits))
                writer.writerow((record.compound_id, record.smiles, bits))


def read_fingerprints(path: str, width: int) -> Dict[str, Fingerprint]:
    """Read a fingerprint file back into a SMILES -> Fingerprint cache."""
    cache: Dict[str, Fingerprint] = {}
    with open(path, newline="", encoding="utf-8") as fin:
        reader = csv.reader(fin)
        header = next(reader, None)
        if header is None or tuple(header) != FINGERPRINT_HEADER:
            raise DataError(message=path + ": not a fingerprint file", code="MalformedRow", file=path, line=1)
        for row in reader:
            if len(row) != len(FINGERPRINT_HEADER):
                raise DataError(message="%s:%d: bad row" % (path, reader.line_num),
                                code="MalformedRow", file=path, line=reader.line_num)
            try:
                bits = frozenset(int(bit) for bit in row[2].split())
            except ValueError:
                raise DataError(message="%s:%d: bits must be integers" % (path, reader.line_num),
                                code="MalformedRow", file=path, line=reader.line_num)
            cache[row[1]] = Fingerprint(width, bits)
    return cache


def class_weights(task: TaskDataset, training_rows: Sequence[int], mode: str = SPLIT_LOCAL) -> np.ndarray:
    """Per-record example weights balancing actives against inactives.

    Majority-class records get 1.0 and minority-class records get
    ``majority count / minority count``. Counts come from ``training_rows``
    (``split-local``, temporal regimes) or from the whole task
    (``full-dataset``, random cross-validation).

    :return: weights for every record of ``task`` (index aligned)
    :raises DataError: ``SingleClassTraining`` if a class is missing
    """
    labels = task.labels
    if mode == SPLIT_LOCAL:
        counted = labels[np.asarray(training_rows, dtype=np.int64)] if len(training_rows) else labels[:0]
    elif mode == FULL_DATASET:
        counted = labels
    else:
        raise DataError(message="unknown class weight mode " + repr(mode), code="InvalidMode")

    actives = int(np.count_nonzero(counted == ACTIVE))
    inactives = int(counted.shape[0]) - actives
    if actives == 0 or inactives == 0:
        raise DataError(message="task %s: training rows contain %d actives and %d inactives"
                        % (task.name, actives, inactives), code="SingleClassTraining", task=task.name)

    weights = np.ones(len(task.records), dtype=np.float64)
    if actives > inactives:
        weights[labels == INACTIVE] = actives / inactives
    elif inactives > actives:
        weights[labels == ACTIVE] = inactives / actives
    return weights


def assemble_dense(collection: Collection, assignment: "SplitAssignment", subset: str,
                   mode: str = SPLIT_LOCAL, class_weighting: bool = True) -> MultitaskMatrix:
    """Build the dense multitask matrix of one subset of an assignment.

    One row per unique compound id present in ``subset`` for any task (first
    appearance order over tasks), one label/weight column per task of the
    collection. Missing measurements have weight 0. On the training subset the
    class weights of :func:`class_weights` are applied; other subsets carry
    weight 1 per measurement.

    :param subset: ``train``, ``valid`` or ``test``
    :raises DataError: ``SingleClassTraining`` propagated per task
    """
    from .split import TRAIN

    row_of: Dict[str, int] = {}
    fingerprints: List[Fingerprint] = []
    entries: List[Tuple[int, int, int, float]] = []
    for column, task in enumerate(collection.tasks):
        buckets = assignment.buckets.get(task.name)
        if buckets is None:
            continue
        if len(buckets) != len(task.records):
            raise DataError(message="assignment does not cover task " + task.name, code="IncompleteAssignment")
        rows = [index for index, bucket in enumerate(buckets) if bucket == subset]
        if not rows:
            continue
        if class_weighting and subset == TRAIN:
            weights = class_weights(task, assignment.rows(task.name, TRAIN), mode)
        else:
            weights = np.ones(len(task.records), dtype=np.float64)
        for index in rows:
            record = task.records[index]
            if record.compound_id not in row_of:
                row_of[record.compound_id] = len(fingerprints)
                fingerprints.append(record.fingerprint)
            entries.append((row_of[record.compound_id], column, record.label, float(weights[index])))

    n_rows = len(fingerprints)
    n_tasks = len(collection.tasks)
    width = collection.width
    labels = np.zeros((n_rows, n_tasks), dtype=np.int64)
    weights_matrix = np.zeros((n_rows, n_tasks), dtype=np.float64)
    for row, column, label, weight in entries:
        labels[row, column] = label
        weights_matrix[row, column] = weight

    ids = [""] * n_rows
    for compound_id, row in row_of.items():
        ids[row] = compound_id
    features = fingerprint_matrix(fingerprints, width) if n_rows else np.zeros((0, width), dtype=np.uint8)
    return MultitaskMatrix(tuple(ids), collection.task_names, features, labels, weights_matrix)


def training_counts(collection: Collection, assignment: "SplitAssignment") -> Dict[str, int]:
    """Number of training records per task that the assignment keeps."""
    from .split import TRAIN

    return {name: len(assignment.rows(name, TRAIN)) for name in collection.task_names
            if name in assignment.buckets}


def labels_by_compound(task: TaskDataset) -> Mapping[str, int]:
    return {record.compound_id: record.label for record in task.records}

