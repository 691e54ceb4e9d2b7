# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

import datetime
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(1, "..")

from mtqsar.baselines import LogRegModel, train_logreg  # noqa: E402
from mtqsar.checkpoints import CheckpointStore  # noqa: E402
from mtqsar.chem import featurize  # noqa: E402
from mtqsar.data import Collection, MultitaskMatrix, Record, TaskDataset, assemble_dense  # noqa: E402
from mtqsar.evaluation import (EvalResult, TaskEval, evaluate, fold_mean, roc_auc, select_checkpoint,  # noqa: E402
                               target_step_eval)
from mtqsar.qsarerror import EvalError  # noqa: E402
from mtqsar.split import TRAIN, leaky_split  # noqa: E402


def brute_force_auc(scores, labels):
    actives = [score for score, label in zip(scores, labels) if label == 1]
    inactives = [score for score, label in zip(scores, labels) if label == 0]
    total = 0.0
    for active in actives:
        for inactive in inactives:
            total += 1.0 if active > inactive else 0.5 if active == inactive else 0.0
    return total / (len(actives) * len(inactives))


def scored(wins, n_inactive):
    """Identity features with one logistic regression per model whose scores
    make active ``i`` outrank exactly ``wins[i]`` inactives."""
    scores = [float(win) + 0.5 for win in wins] + [float(rank) for rank in range(1, n_inactive + 1)]
    labels = [1] * len(wins) + [0] * n_inactive
    return np.array(scores), np.array(labels)


def validation_matrix(labels):
    rows = len(labels)
    return MultitaskMatrix(tuple("C%d" % row for row in range(rows)), ("A",), np.eye(rows),
                           np.array(labels).reshape(-1, 1), np.ones((rows, 1)))


def store_of(steps_and_scores):
    store = CheckpointStore()
    for step, scores in steps_and_scores:
        store.add(step, LogRegModel(np.asarray(scores, dtype=np.float64), 0.0))
    return store


class RocAucTest(unittest.TestCase):
    def test_small_example(self):
        self.assertEqual(0.75, roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))

    def test_ties_count_one_half(self):
        self.assertEqual(0.5, roc_auc([0.3, 0.3, 0.3, 0.3], [0, 1, 0, 1]))
        self.assertEqual(1.0, roc_auc([0.1, 0.9], [0, 1]))
        self.assertEqual(0.0, roc_auc([0.9, 0.1], [0, 1]))

    def test_matches_pairwise_count(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            size = int(rng.integers(2, 40))
            labels = rng.integers(0, 2, size=size)
            labels[0], labels[1] = 0, 1
            scores = rng.integers(0, 6, size=size) / 5.0
            self.assertAlmostEqual(brute_force_auc(scores, labels), roc_auc(scores, labels), places=12)

    def test_single_class(self):
        with self.assertRaises(EvalError) as context:
            roc_auc([0.1, 0.2], [1, 1])
        self.assertEqual("SingleClass", context.exception.code)
        with self.assertRaises(EvalError) as context:
            roc_auc([0.1, 0.2], [1])
        self.assertEqual("ShapeMismatch", context.exception.code)


class CheckpointSelectionTest(unittest.TestCase):
    def test_earliest_best_step(self):
        low, labels = scored([5, 2], 5)
        high, _ = scored([5, 4], 5)
        store = store_of([(1000, low), (2000, high), (3000, high)])
        step, auc = select_checkpoint(store, validation_matrix(labels), "A")
        self.assertEqual(2000, step)
        self.assertAlmostEqual(0.9, auc)

    def test_target_step_over_folds(self):
        at_80, labels = scored([4, 4, 4, 4], 5)
        at_90, _ = scored([5, 5, 4, 4], 5)
        at_85, _ = scored([5, 4, 4, 4], 5)
        first = store_of([(100, at_80), (200, at_90)])
        second = store_of([(100, at_90), (200, at_85)])
        matrix = validation_matrix(labels)
        step, mean = target_step_eval([first, second], [matrix, matrix], "A")
        self.assertEqual(200, step)
        self.assertAlmostEqual(0.875, mean)

    def test_schedule_mismatch(self):
        at_80, labels = scored([4, 4, 4, 4], 5)
        matrix = validation_matrix(labels)
        with self.assertRaises(EvalError) as context:
            target_step_eval([store_of([(100, at_80), (200, at_80)]), store_of([(100, at_80)])],
                             [matrix, matrix], "A")
        self.assertEqual("ScheduleMismatch", context.exception.code)
        with self.assertRaises(EvalError) as context:
            target_step_eval([store_of([(100, at_80), (200, at_80), (300, at_80)]),
                              store_of([(100, at_80), (250, at_80), (300, at_80)])],
                             [matrix, matrix], "A")
        self.assertEqual("ScheduleMismatch", context.exception.code)
        with self.assertRaises(EvalError) as context:
            select_checkpoint(CheckpointStore(), matrix, "A")
        self.assertEqual("EmptyStore", context.exception.code)


def dated_records(prefix, labels, smiles=("CCO", "c1ccccc1", "CC(=O)O", "CCN", "OCCO")):
    records = []
    for index, label in enumerate(labels):
        text = smiles[index % len(smiles)]
        date = datetime.date(2015, 1, 1) + datetime.timedelta(days=index)
        records.append(Record("%s%d" % (prefix, index), text, featurize(text, 2, 64), label, date))
    return tuple(records)


class EvaluateTest(unittest.TestCase):
    def setUp(self):
        good = TaskDataset("A", dated_records("A", [0, 1] * 10))
        single = TaskDataset("B", dated_records("B", [0, 1, 0, 1, 0, 1, 0, 0, 1, 1]))
        self.collection = Collection((good, single))
        self.assignment = leaky_split(self.collection)
        train = assemble_dense(self.collection, self.assignment, TRAIN)
        self.stores = {}
        for name in ("A", "B"):
            column = train.task_column(name)
            rows = train.weights[:, column] > 0
            store = CheckpointStore()
            store.add(0, train_logreg(train.features[rows], train.labels[rows, column]))
            self.stores[name] = store

    def test_undefined_task_does_not_stop_the_rest(self):
        result = evaluate(self.collection, self.assignment, "logreg", "-", self.stores)
        self.assertEqual(["A", "B"], list(result.tasks))
        self.assertIsNotNone(result.tasks["A"].auc)
        self.assertEqual((2, 2), (result.tasks["A"].n_active, result.tasks["A"].n_inactive))
        self.assertIsNone(result.tasks["B"].auc)
        self.assertEqual("SingleClass", result.tasks["B"].error)
        self.assertEqual(["A"], list(result.aucs()))

    def test_unknown_family(self):
        with self.assertRaises(EvalError) as context:
            evaluate(self.collection, self.assignment, "svm", "-", self.stores)
        self.assertEqual("InvalidConfig", context.exception.code)


class EvalResultTest(unittest.TestCase):
    def test_csv_file(self):
        result = EvalResult("w-mtnn", "(2000, 100)", "leaky-temporal")
        result.add(TaskEval("A", 0.8125, 3000, 12, 30))
        result.add(TaskEval("B", None, None, 0, 7, error="SingleClass"))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "results.csv")
            result.write_csv(path)
            with open(path, encoding="utf-8") as fin:
                lines = fin.read().splitlines()
            loaded = EvalResult.read_csv(path)
        self.assertEqual("task,model,arch,regime,step,auc,n_active,n_inactive", lines[0])
        self.assertEqual("A,w-mtnn,\"(2000, 100)\",leaky-temporal,3000,0.8125,12,30", lines[1])
        self.assertEqual({"A": 0.8125}, loaded.aucs())
        self.assertEqual(("w-mtnn", "(2000, 100)", "leaky-temporal"), (loaded.model, loaded.arch, loaded.regime))
        self.assertIsNone(loaded.tasks["B"].auc)

    def test_malformed_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "results.csv")
            with open(path, "w", encoding="utf-8") as fout:
                fout.write("task,auc\nA,0.5\n")
            with self.assertRaises(EvalError) as context:
                EvalResult.read_csv(path)
            self.assertEqual("MalformedResult", context.exception.code)

            with open(path, "w", encoding="utf-8") as fout:
                fout.write("task,model,arch,regime,step,auc,n_active,n_inactive\n"
                           "A,logreg,-,leaky-temporal,0,0.75,4,6\n"
                           "B,logreg,-,leaky-temporal,0,high,4,6\n")
            with self.assertRaises(EvalError) as context:
                EvalResult.read_csv(path)
        self.assertEqual("MalformedResult", context.exception.code)
        self.assertEqual(3, context.exception.details["line"])

    def test_fold_mean(self):
        folds = []
        for auc_a, auc_b in ((0.6, 0.9), (0.8, None)):
            result = EvalResult("stnn", "(1000)", "random-kfold")
            result.add(TaskEval("A", auc_a, 500, 2, 3))
            result.add(TaskEval("B", auc_b, 500, 1, 4))
            folds.append(result)
        merged = fold_mean(folds)
        self.assertAlmostEqual(0.7, merged.tasks["A"].auc)
        self.assertAlmostEqual(0.9, merged.tasks["B"].auc)
        self.assertEqual(500, merged.tasks["A"].step)
        self.assertEqual((4, 6), (merged.tasks["A"].n_active, merged.tasks["A"].n_inactive))
        self.assertEqual(["B: 1 of 2 folds undefined"], merged.notes)


if __name__ == "__main__":
    unittest.main()
