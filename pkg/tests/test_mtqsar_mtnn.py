# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

import datetime
import math
import sys
import unittest

import numpy as np

sys.path.insert(1, "..")

from mtqsar.chem import featurize  # noqa: E402
from mtqsar.data import Collection, MultitaskMatrix, Record, TaskDataset  # noqa: E402
from mtqsar.evaluation import roc_auc  # noqa: E402
from mtqsar.mtnn import (INVERSE_SIZE, TRAIN_MODE, Adagrad, Architecture, TrainConfig, backward,  # noqa: E402
                         dropout_masks, forward, forward_pass, init_model, loss, predict, task_weights, train)
from mtqsar.qsarerror import NumericError, TrainingError  # noqa: E402
from mtqsar.split import TRAIN, SplitAssignment  # noqa: E402

METHANE = featurize("C")


def random_matrix(seed, rows=64, width=16, tasks=2, missing=0.3):
    """Random bit features; task t is active when bit t is set."""
    rng = np.random.default_rng(seed)
    features = (rng.random((rows, width)) < 0.4).astype(np.uint8)
    labels = features[:, :tasks].astype(np.int64)
    weights = (rng.random((rows, tasks)) >= missing).astype(np.float64)
    weights[0, :] = 1.0
    ids = tuple("C%d" % row for row in range(rows))
    names = tuple("task%d" % task for task in range(tasks))
    return MultitaskMatrix(ids, names, features, labels, weights)


def gradient_error(seed):
    """Relative error between backprop and central differences on a random network."""
    rng = np.random.default_rng(seed)
    for _ in range(20):
        n_layers = int(rng.integers(1, 4))
        hidden = tuple(int(size) for size in rng.integers(2, 7, size=n_layers))
        width = int(rng.integers(3, 8))
        n_tasks = int(rng.integers(1, 4))
        batch_size = int(rng.integers(4, 9))
        params = init_model(Architecture(hidden), width, n_tasks, int(rng.integers(1 << 30)), dtype=np.float64)
        for layer in range(n_layers):
            params.arrays["gamma%d" % layer] += rng.normal(0.0, 0.3, size=hidden[layer])
            params.arrays["beta%d" % layer] += rng.normal(0.0, 0.3, size=hidden[layer])
        batch = rng.normal(size=(batch_size, width))
        labels = rng.integers(0, 2, size=(batch_size, n_tasks))
        weights = rng.random((batch_size, n_tasks)) * (rng.random((batch_size, n_tasks)) > 0.2)
        tasks = rng.random(n_tasks) + 0.5
        masks = dropout_masks(params, batch_size, float(rng.choice([0.0, 0.3])), rng)
        cache = forward_pass(params, batch, TRAIN_MODE, masks)
        if min(np.abs(shifted).min() for shifted in cache.activated) >= 1e-3:
            break
    else:
        raise AssertionError("no network without near-zero activations for seed %d" % seed)

    def objective():
        return loss(forward_pass(params, batch, TRAIN_MODE, masks).probabilities, labels, weights, tasks)

    analytic = backward(params, cache, labels, weights, tasks)
    numeric = {}
    step = 1e-5
    for name in params.trainable_names():
        array = params.arrays[name]
        estimate = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + step
            upper = objective()
            array[index] = original - step
            lower = objective()
            array[index] = original
            estimate[index] = (upper - lower) / (2 * step)
        numeric[name] = estimate
    difference = max(np.abs(analytic[name] - numeric[name]).max() for name in numeric)
    scale = max((np.abs(analytic[name]) + np.abs(numeric[name])).max() for name in numeric)
    return difference / scale


class MtnnModelTest(unittest.TestCase):
    def test_init_shapes(self):
        params = init_model(Architecture((2000, 100)), 1024, 22, seed=1)
        self.assertEqual([(1024, 2000), (2000, 100)], params.layer_shapes())
        self.assertEqual((22, 100, 2), params.arrays["head_W"].shape)
        self.assertEqual((22, 2), params.arrays["head_b"].shape)
        self.assertEqual(22, len(params.heads))
        self.assertTrue(np.all(params.arrays["var1"] == 1.0))
        std = float(params.arrays["W0"].std())
        self.assertAlmostEqual(math.sqrt(2.0 / 1024), std, delta=0.002)

    def test_architecture_parsing(self):
        self.assertEqual((2000, 1000), Architecture.parse("(2000, 1000)").hidden)
        self.assertEqual((4000, 2000, 1000, 1000), Architecture.parse("4000-2000-1000-1000").hidden)
        self.assertEqual("(2000, 100)", str(Architecture.parse([2000, 100])))
        self.assertEqual("2000-100", Architecture((2000, 100)).slug)
        for bad in ("", "(0)", "abc"):
            with self.assertRaises(TrainingError) as context:
                Architecture.parse(bad)
            self.assertEqual("InvalidArchitecture", context.exception.code)

    def test_probabilities_sum_to_one(self):
        params = init_model(Architecture((8, 4)), 16, 3, seed=5)
        batch = random_matrix(2, rows=10).features
        for mode in ("infer", "train"):
            probabilities = forward(params, batch, mode, dropout=0.5, rng=np.random.default_rng(0))
            self.assertEqual((10, 3, 2), probabilities.shape)
            np.testing.assert_allclose(probabilities.sum(axis=2), 1.0, atol=1e-12)
        self.assertEqual((10, 3), predict(params, batch).shape)

    def test_zero_network_predicts_one_half(self):
        params = init_model(Architecture((8,)), 16, 2, seed=5)
        for name in params.arrays:
            if name.startswith("W") or name.startswith("head"):
                params.arrays[name][...] = 0.0
        np.testing.assert_allclose(predict(params, random_matrix(3).features), 0.5)

    def test_shape_mismatch(self):
        params = init_model(Architecture((8,)), 16, 2, seed=5)
        with self.assertRaises(TrainingError) as context:
            forward(params, np.zeros((4, 15)))
        self.assertEqual("ShapeMismatch", context.exception.code)


class MtnnLossTest(unittest.TestCase):
    def test_uniform_probabilities(self):
        probabilities = np.full((6, 1, 2), 0.5)
        labels = np.array([[0], [1], [0], [1], [1], [0]])
        self.assertAlmostEqual(math.log(2.0), loss(probabilities, labels, np.ones((6, 1))), places=12)

    def test_perfect_predictions(self):
        labels = np.array([[0, 1], [1, 0], [1, 1]])
        probabilities = np.stack([1 - labels, labels], axis=2).astype(np.float64)
        self.assertEqual(0.0, loss(probabilities, labels, np.ones((3, 2))))

    def test_zero_weights(self):
        labels = np.array([[0, 1], [1, 0]])
        probabilities = np.stack([labels, 1 - labels], axis=2).astype(np.float64)
        self.assertEqual(0.0, loss(probabilities, labels, np.zeros((2, 2))))

    def test_task_weights_scale_task_terms(self):
        probabilities = np.full((4, 2, 2), 0.5)
        labels = np.zeros((4, 2), dtype=np.int64)
        value = loss(probabilities, labels, np.ones((4, 2)), np.array([1.6, 0.4]))
        self.assertAlmostEqual(2.0 * math.log(2.0), value, places=12)

    def test_gradients_match_finite_differences(self):
        for seed in range(20):
            self.assertLess(gradient_error(seed), 1e-4, "seed %d" % seed)

    def test_unweighted_entries_do_not_contribute(self):
        rng = np.random.default_rng(8)
        params = init_model(Architecture((6,)), 5, 3, seed=4, dtype=np.float64)
        batch = rng.normal(size=(8, 5))
        labels = rng.integers(0, 2, size=(8, 3))
        weights = np.ones((8, 3))
        weights[:, 2] = 0.0
        weights[:4, 0] = 0.0
        tasks = np.ones(3)
        cache = forward_pass(params, batch, TRAIN_MODE)
        grads = backward(params, cache, labels, weights, tasks)
        self.assertTrue(np.all(grads["head_W"][2] == 0.0))
        self.assertTrue(np.all(grads["head_b"][2] == 0.0))

        flipped = labels.copy()
        flipped[:, 2] = 1 - flipped[:, 2]
        flipped[:4, 0] = 1 - flipped[:4, 0]
        again = backward(params, cache, flipped, weights, tasks)
        for name in grads:
            np.testing.assert_array_equal(grads[name], again[name])

    def test_step_against_gradient_lowers_loss(self):
        rng = np.random.default_rng(12)
        params = init_model(Architecture((10, 6)), 8, 2, seed=2, dtype=np.float64)
        batch = rng.normal(size=(16, 8))
        labels = rng.integers(0, 2, size=(16, 2))
        weights = np.ones((16, 2))
        tasks = np.ones(2)
        cache = forward_pass(params, batch, TRAIN_MODE)
        before = loss(cache.probabilities, labels, weights, tasks)
        grads = backward(params, cache, labels, weights, tasks)
        for name, grad in grads.items():
            params.arrays[name] -= 1e-3 * grad
        after = loss(forward_pass(params, batch, TRAIN_MODE).probabilities, labels, weights, tasks)
        self.assertLess(after, before)


class MtnnOptimizerTest(unittest.TestCase):
    def test_effective_step_never_increases(self):
        rng = np.random.default_rng(0)
        params = init_model(Architecture((4,)), 3, 2, seed=0, dtype=np.float64)
        optimizer = Adagrad(params, 0.01)
        np.testing.assert_allclose(optimizer.effective_step("W0"), 0.01 / math.sqrt(0.1 + 1e-8))
        previous = {name: optimizer.effective_step(name) for name in params.trainable_names()}
        for _ in range(10):
            grads = {name: rng.normal(size=params.arrays[name].shape) for name in params.trainable_names()}
            optimizer.apply(params, grads)
            for name in params.trainable_names():
                current = optimizer.effective_step(name)
                self.assertTrue(np.all(current <= previous[name]))
                previous[name] = current

    def test_config_overrides(self):
        config = TrainConfig().with_overrides({"max_steps": 10, "dropout": 0.25})
        self.assertEqual(10, config.max_steps)
        self.assertEqual(0.1, config.initial_accumulator)
        self.assertEqual(0.99, config.bn_momentum)
        for bad in ({"momentum": 0.5}, {"dropout": 1.0}, {"task_weighting": "bogus"}, {"batch_size": 0}):
            with self.assertRaises(TrainingError) as context:
                TrainConfig().with_overrides(bad)
            self.assertEqual("InvalidConfig", context.exception.code)


class MtnnTaskWeightTest(unittest.TestCase):
    def test_inverse_size_weights(self):
        def task(name, size):
            records = tuple(Record("%s%d" % (name, index), "C", METHANE, index % 2, datetime.date(2015, 1, 1))
                            for index in range(size))
            return TaskDataset(name, records)

        collection = Collection((task("small", 100), task("large", 400)))
        assignment = SplitAssignment("leaky-temporal", {"small": (TRAIN,) * 100, "large": (TRAIN,) * 400})
        self.assertEqual({"small": 1.6, "large": 0.4}, task_weights(collection, assignment, INVERSE_SIZE))
        self.assertEqual({"small": 1.0, "large": 1.0}, task_weights(collection, assignment))

        assignment.buckets["small"] = ("test",) * 100
        with self.assertRaises(TrainingError) as context:
            task_weights(collection, assignment, INVERSE_SIZE)
        self.assertEqual("EmptyTask", context.exception.code)


class MtnnTrainTest(unittest.TestCase):
    def test_same_seed_same_checkpoints(self):
        matrix = random_matrix(1)
        config = TrainConfig(learning_rate=0.01, batch_size=16, max_steps=20, checkpoint_interval=5, seed=3)
        first = train(matrix, Architecture((8,)), config)
        second = train(matrix, Architecture((8,)), config)
        self.assertEqual([5, 10, 15, 20], first.steps)
        self.assertEqual(first.losses, second.losses)
        for one, two in zip(first, second):
            for name, value in one.model.arrays.items():
                np.testing.assert_array_equal(value, two.model.arrays[name])
                self.assertEqual(np.float32, value.dtype)

    def test_final_step_always_checkpointed(self):
        config = TrainConfig(batch_size=8, max_steps=7, checkpoint_interval=3)
        self.assertEqual([3, 6, 7], train(random_matrix(4), Architecture((4,)), config).steps)

    def test_training_learns_easy_tasks(self):
        matrix = random_matrix(6, rows=128)
        config = TrainConfig(learning_rate=0.05, batch_size=32, dropout=0.0, max_steps=300,
                             checkpoint_interval=100, seed=1)
        store = train(matrix, Architecture((16,)), config)
        scores = predict(store.latest.model, matrix.features)
        for column in range(matrix.n_tasks):
            rows = matrix.weights[:, column] > 0
            self.assertGreater(roc_auc(scores[rows, column], matrix.labels[rows, column]), 0.9)

    def test_empty_task_column(self):
        matrix = random_matrix(1)
        matrix.weights[:, 1] = 0.0
        with self.assertRaises(TrainingError) as context:
            train(matrix, Architecture((4,)), TrainConfig(max_steps=2))
        self.assertEqual("EmptyTask", context.exception.code)

    def test_divergence_raises_numeric_error(self):
        config = TrainConfig(learning_rate=1e300, batch_size=16, max_steps=50, checkpoint_interval=1, dropout=0.0)
        with np.errstate(all="ignore"):
            with self.assertRaises(NumericError) as context:
                train(random_matrix(2), Architecture((8,)), config)
        self.assertEqual("NonFiniteLoss", context.exception.code)
        self.assertIsNotNone(context.exception.store)


if __name__ == "__main__":
    unittest.main()
