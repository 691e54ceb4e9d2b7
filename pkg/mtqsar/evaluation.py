# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""ROC AUC, checkpoint selection and per-task evaluation."""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
import csv
import logging

from scipy.stats import rankdata
import numpy as np

from .baselines import predict_proba
from .checkpoints import CheckpointStore
from .data import SPLIT_LOCAL, Collection, MultitaskMatrix, assemble_dense
from .mtnn import ModelParams, predict
from .qsarerror import DataError, EvalError, TrainingError
from .split import TEST, VALID, SplitAssignment

logger = logging.getLogger(__name__)

RESULT_HEADER = ("task", "model", "arch", "regime", "step", "auc", "n_active", "n_inactive")
CURVE_HEADER = ("step", "task", "auc")

NN_FAMILIES = ("stnn", "u-mtnn", "w-mtnn")
BASELINE_FAMILIES = ("logreg", "forest")
FAMILIES = NN_FAMILIES + BASELINE_FAMILIES

SELECT_VALIDATION = "validation"
SELECT_FINAL = "final"
SELECT_TARGET_STEP = "target-step"
SELECTIONS = (SELECT_VALIDATION, SELECT_FINAL, SELECT_TARGET_STEP)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney estimate of the ROC AUC.

    The fraction of (active, inactive) pairs whose active scores higher, with
    ties counting one half, computed from midranks.

    :raises EvalError: ``SingleClass`` unless both classes are present
    """
    values = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if values.shape != y.shape or values.ndim != 1:
        raise EvalError(message="scores and labels must be equal-length vectors", code="ShapeMismatch")
    actives = int(np.count_nonzero(y == 1))
    inactives = int(y.shape[0]) - actives
    if actives == 0 or inactives == 0:
        raise EvalError(message="AUC needs actives and inactives, got %d and %d" % (actives, inactives),
                        code="SingleClass")
    ranks = rankdata(values)
    u_statistic = ranks[y == 1].sum() - actives * (actives + 1) / 2.0
    return float(u_statistic / (actives * inactives))


@dataclass(frozen=True)
class TaskEval:
    task: str
    auc: Optional[float]
    step: Optional[int]
    n_active: int
    n_inactive: int
    subset: str = TEST
    error: Optional[str] = None

    @property
    def defined(self) -> bool:
        return self.auc is not None


@dataclass
class EvalResult:
    """Per-task test AUCs of one model on one split regime."""

    model: str
    arch: str
    regime: str
    tasks: Dict[str, TaskEval] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def add(self, evaluation: TaskEval) -> None:
        self.tasks[evaluation.task] = evaluation

    def aucs(self) -> Dict[str, float]:
        """Defined AUCs by task, in insertion order."""
        return {name: evaluation.auc for name, evaluation in self.tasks.items() if evaluation.auc is not None}

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fout:
            writer = csv.writer(fout, lineterminator="\n")
            writer.writerow(RESULT_HEADER)
            for evaluation in self.tasks.values():
                writer.writerow([
                    evaluation.task, self.model, self.arch, self.regime,
                    "" if evaluation.step is None else evaluation.step,
                    "" if evaluation.auc is None else repr(evaluation.auc),
                    evaluation.n_active, evaluation.n_inactive,
                ])

    @classmethod
    def read_csv(cls, path: str) -> "EvalResult":
        with open(path, encoding="utf-8", newline="") as fin:
            reader = csv.reader(fin)
            header = next(reader, None)
            if header is None or tuple(header) != RESULT_HEADER:
                raise EvalError(message=path + " is not an evaluation result file", code="MalformedResult")
            result: Optional[EvalResult] = None
            for row in reader:
                if len(row) != len(RESULT_HEADER):
                    raise EvalError(message="malformed row in " + path, code="MalformedResult",
                                    line=reader.line_num)
                if result is None:
                    result = cls(row[1], row[2], row[3])
                try:
                    evaluation = TaskEval(row[0], float(row[5]) if row[5] else None,
                                          int(row[4]) if row[4] else None, int(row[6]), int(row[7]))
                except ValueError:
                    raise EvalError(message="malformed number in " + path, code="MalformedResult",
                                    line=reader.line_num)
                result.add(evaluation)
        if result is None:
            raise EvalError(message=path + " holds no results", code="MalformedResult")
        return result


def score_task(model: Any, features: np.ndarray, task: str) -> np.ndarray:
    """Active probabilities of ``task`` for every row of ``features``."""
    if isinstance(model, ModelParams):
        if task not in model.tasks:
            raise EvalError(message="model has no head for task " + repr(task), code="TaskNotFound")
        return predict(model, features)[:, model.tasks.index(task)]
    return predict_proba(model, features)


def _task_rows(matrix: MultitaskMatrix, task: str) -> Tuple[np.ndarray, np.ndarray]:
    column = matrix.task_column(task)
    rows = np.flatnonzero(matrix.weights[:, column] > 0)
    return rows, matrix.labels[rows, column]


def matrix_auc(model: Any, matrix: MultitaskMatrix, task: str) -> float:
    rows, labels = _task_rows(matrix, task)
    return roc_auc(score_task(model, matrix.features[rows], task), labels)


def select_checkpoint(store: CheckpointStore, valid: MultitaskMatrix, task: str) -> Tuple[int, float]:
    """Earliest step with the highest validation AUC of ``task``.

    :raises EvalError: ``SingleClass`` if the validation rows lack a class,
        ``EmptyStore`` if there are no checkpoints
    """
    if not len(store):
        raise EvalError(message="no checkpoints to select from", code="EmptyStore")
    best: Optional[Tuple[int, float]] = None
    for checkpoint in store:
        auc = matrix_auc(checkpoint.model, valid, task)
        if best is None or auc > best[1]:
            best = (checkpoint.step, auc)
    assert best is not None
    return best


def checkpoint_aucs(store: CheckpointStore, matrix: MultitaskMatrix,
                    tasks: Optional[Sequence[str]] = None) -> List[Tuple[int, str, Optional[float]]]:
    """AUC of every task at every checkpoint; ``None`` where undefined."""
    curves: List[Tuple[int, str, Optional[float]]] = []
    names = list(tasks) if tasks is not None else list(matrix.task_names)
    for checkpoint in store:
        for name in names:
            try:
                auc: Optional[float] = matrix_auc(checkpoint.model, matrix, name)
            except EvalError:
                auc = None
            curves.append((checkpoint.step, name, auc))
    return curves


def write_curves(curves: Iterable[Tuple[int, str, Optional[float]]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for step, name, auc in curves:
            writer.writerow([step, name, "" if auc is None else repr(auc)])


def _counts(matrix: MultitaskMatrix, task: str) -> Tuple[int, int]:
    if task not in matrix.task_names:
        return 0, 0
    _, labels = _task_rows(matrix, task)
    actives = int(np.count_nonzero(labels == 1))
    return actives, int(labels.shape[0]) - actives


def evaluate(collection: Collection, assignment: SplitAssignment, family: str, arch: str,
             stores: Mapping[str, CheckpointStore], selection: str = SELECT_VALIDATION,
             class_mode: str = SPLIT_LOCAL) -> EvalResult:
    """Score every evaluated task on the test subset of ``assignment``.

    Network families pick a checkpoint per task (highest validation AUC with
    ``selection="validation"``, the last one with ``"final"``); baselines
    score their single model directly. A task whose evaluation fails is
    recorded with an undefined AUC and the error code, and the remaining
    tasks are still evaluated.

    :param stores: task name -> checkpoints holding that task's model (one
        shared store for multitask networks)
    """
    if family not in FAMILIES:
        raise EvalError(message="unknown model family " + repr(family), code="InvalidConfig")
    if selection not in (SELECT_VALIDATION, SELECT_FINAL):
        raise EvalError(message="per-assignment evaluation supports validation or final selection",
                        code="InvalidConfig")
    test = assemble_dense(collection, assignment, TEST, class_mode, class_weighting=False)
    valid = None
    if family in NN_FAMILIES and selection == SELECT_VALIDATION:
        valid = assemble_dense(collection, assignment, VALID, class_mode, class_weighting=False)

    result = EvalResult(family, arch, assignment.regime)
    for name in collection.evaluated_tasks:
        if name not in stores or name in assignment.dropped:
            continue
        n_active, n_inactive = _counts(test, name)
        step: Optional[int] = None
        try:
            store = stores[name]
            if family in BASELINE_FAMILIES:
                model = store.latest.model
            elif valid is not None:
                step, _ = select_checkpoint(store, valid, name)
                model = store.get(step)
            else:
                step = store.latest.step
                model = store.latest.model
            auc: Optional[float] = matrix_auc(model, test, name)
            error = None
        except (EvalError, DataError, TrainingError) as exc:
            logger.warning(f"task {name}: evaluation failed: {exc}")
            auc, error = None, exc.code
            result.notes.append("%s: %s" % (name, exc))
        result.add(TaskEval(name, auc, step, n_active, n_inactive, TEST, error))
    return result


def target_step_eval(stores: Sequence[CheckpointStore], tests: Sequence[MultitaskMatrix],
                     task: str) -> Tuple[int, float]:
    """Common step maximizing the mean test AUC of ``task`` over folds.

    Each fold is scored at its checkpoint closest to the candidate step; the
    earliest step wins ties.

    :raises EvalError: ``ScheduleMismatch`` if the folds were checkpointed on
        different schedules
    """
    if not stores or len(stores) != len(tests):
        raise EvalError(message="need one test matrix per fold", code="ShapeMismatch")
    schedule = stores[0].steps
    if not schedule:
        raise EvalError(message="no checkpoints to select from", code="EmptyStore")
    for store in stores[1:]:
        if list(store.steps) != list(schedule):
            raise EvalError(message="folds were checkpointed on different schedules", code="ScheduleMismatch")

    cache: Dict[Tuple[int, int], float] = {}
    best: Optional[Tuple[int, float]] = None
    for step in schedule:
        fold_aucs = []
        for fold, (store, test) in enumerate(zip(stores, tests)):
            checkpoint = store.closest(step)
            key = (fold, checkpoint.step)
            if key not in cache:
                cache[key] = matrix_auc(checkpoint.model, test, task)
            fold_aucs.append(cache[key])
        mean = float(np.mean(fold_aucs))
        if best is None or mean > best[1]:
            best = (step, mean)
    assert best is not None
    return best


def fold_mean(results: Sequence[EvalResult]) -> EvalResult:
    """k-fold mean test AUC per task; counts are summed over folds."""
    if not results:
        raise EvalError(message="no fold results to average", code="EmptyInput")
    first = results[0]
    merged = EvalResult(first.model, first.arch, first.regime)
    names: List[str] = []
    for result in results:
        names += [name for name in result.tasks if name not in names]
    for name in names:
        evaluations = [result.tasks[name] for result in results if name in result.tasks]
        defined = [evaluation.auc for evaluation in evaluations if evaluation.auc is not None]
        steps = {evaluation.step for evaluation in evaluations}
        merged.add(TaskEval(
            name,
            float(np.mean(defined)) if defined else None,
            steps.pop() if len(steps) == 1 else None,
            sum(evaluation.n_active for evaluation in evaluations),
            sum(evaluation.n_inactive for evaluation in evaluations),
        ))
        if len(defined) < len(evaluations):
            merged.notes.append("%s: %d of %d folds undefined" % (name, len(evaluations) - len(defined),
                                                                 len(evaluations)))
    return merged