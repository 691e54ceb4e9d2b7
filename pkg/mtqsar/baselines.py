# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Single-task baselines: L2 logistic regression and a CART random forest.

Neither baseline uses example weights. Fingerprint features are bits, so the
only split threshold a tree needs is 0.5.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

from joblib import Parallel, delayed
from scipy.special import expit
import numpy as np

from .checkpoints import ParamFile
from .hashing import derive_seed
from .qsarerror import TrainingError

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-6
MAX_ITERATIONS = 5000
THRESHOLD = 0.5
LEAF = -1


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    l2: float = 1.0
    converged: bool = True
    iterations: int = 0
    notes: List[str] = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return int(self.weights.shape[0])

    def decision(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias

    def to_param_file(self) -> ParamFile:
        return ParamFile("logreg", (), self.input_width, (), {
            "weights": np.asarray(self.weights, dtype=np.float64),
            "bias": np.array([self.bias], dtype=np.float64),
            "l2": np.array([self.l2], dtype=np.float64),
        })

    @classmethod
    def from_param_file(cls, content: ParamFile) -> "LogRegModel":
        try:
            return cls(np.array(content.arrays["weights"]), float(content.arrays["bias"][0]),
                       float(content.arrays["l2"][0]))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TrainingError(message="incomplete logreg parameters: %s" % exc, code="CorruptCheckpoint")


def logreg_objective(weights: np.ndarray, bias: float, features: np.ndarray, labels: np.ndarray,
                     l2: float = 1.0) -> float:
    """``sum_i log(1 + exp(-s_i z_i)) + l2 / 2 * |w|^2`` with ``s_i = +-1``;
    the bias is not penalized."""
    margins = (2.0 * labels - 1.0) * (features @ weights + bias)
    return float(np.logaddexp(0.0, -margins).sum() + 0.5 * l2 * weights @ weights)


def logreg_gradient(weights: np.ndarray, bias: float, features: np.ndarray, labels: np.ndarray,
                    l2: float = 1.0) -> Tuple[np.ndarray, float]:
    residual = expit(features @ weights + bias) - labels
    return features.T @ residual + l2 * weights, float(residual.sum())


def train_logreg(features: np.ndarray, labels: Sequence[int], l2: float = 1.0,
                 max_iterations: int = MAX_ITERATIONS, tolerance: float = GRADIENT_TOLERANCE) -> LogRegModel:
    """Fit L2-regularized logistic regression by full-batch gradient descent.

    Step sizes start from the Barzilai-Borwein estimate and are halved until
    the Armijo condition holds. Stops when the gradient norm drops below
    ``tolerance``.

    :raises TrainingError: ``SingleClass`` if only one class is present
    :return: the model; if the iteration cap is hit first, the best iterate
        with ``converged=False`` and a ``NoConvergence`` note
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise TrainingError(message="features and labels do not align", code="ShapeMismatch")
    if y.size == 0 or y.min() == y.max():
        raise TrainingError(message="logistic regression needs both classes", code="SingleClass")

    weights = np.zeros(x.shape[1])
    bias = 0.0
    value = logreg_objective(weights, bias, x, y, l2)
    grad_w, grad_b = logreg_gradient(weights, bias, x, y, l2)
    step = 1.0
    best = (value, weights, bias)

    for iteration in range(1, max_iterations + 1):
        norm = math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
        if norm < tolerance:
            return LogRegModel(weights, bias, l2, True, iteration - 1)
        while True:
            candidate_w = weights - step * grad_w
            candidate_b = bias - step * grad_b
            candidate = logreg_objective(candidate_w, candidate_b, x, y, l2)
            if candidate <= value - 0.5 * step * norm * norm or step < 1e-16:
                break
            step *= 0.5
        new_grad_w, new_grad_b = logreg_gradient(candidate_w, candidate_b, x, y, l2)
        delta_theta = np.append(candidate_w - weights, candidate_b - bias)
        delta_grad = np.append(new_grad_w - grad_w, new_grad_b - grad_b)
        curvature = float(delta_theta @ delta_grad)
        step = float(delta_theta @ delta_theta) / curvature if curvature > 0 else step * 2.0

        weights, bias, value = candidate_w, candidate_b, candidate
        grad_w, grad_b = new_grad_w, new_grad_b
        if value < best[0]:
            best = (value, weights, bias)

    message = "logistic regression stopped after %d iterations without converging" % max_iterations
    logger.warning(message)
    return LogRegModel(best[1], best[2], l2, False, max_iterations, ["NoConvergence: " + message])


@dataclass
class Tree:
    """Array-encoded CART tree; ``feature == -1`` marks a leaf.

    ``counts[node]`` holds the (inactive, active) counts of the bootstrap
    rows reaching the node.
    """

    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def leaves(self, bits: np.ndarray) -> np.ndarray:
        node = np.zeros(bits.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            current = node[active]
            goes_right = bits[active, self.feature[current]]
            node[active] = np.where(goes_right, self.right[current], self.left[current])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def active_fraction(self, bits: np.ndarray) -> np.ndarray:
        counts = self.counts[self.leaves(bits)]
        return counts[:, 1] / counts.sum(axis=1)


@dataclass
class ForestModel:
    trees: List[Tree]
    seeds: Tuple[int, ...]
    input_width: int
    max_features_frac: float = 1.0 / 3.0
    min_samples_split: int = 6

    def to_param_file(self) -> ParamFile:
        arrays: Dict[str, np.ndarray] = {
            "seeds": np.array(self.seeds, dtype=np.uint64),
            "settings": np.array([self.max_features_frac, self.min_samples_split], dtype=np.float64),
        }
        for index, tree in enumerate(self.trees):
            arrays["tree%d.feature" % index] = tree.feature.astype(np.int32)
            arrays["tree%d.left" % index] = tree.left.astype(np.int32)
            arrays["tree%d.right" % index] = tree.right.astype(np.int32)
            arrays["tree%d.counts" % index] = tree.counts.astype(np.float64)
        return ParamFile("forest", (), self.input_width, (), arrays)

    @classmethod
    def from_param_file(cls, content: ParamFile) -> "ForestModel":
        arrays = content.arrays
        try:
            seeds = tuple(int(seed) for seed in arrays["seeds"])
            trees = [Tree(np.array(arrays["tree%d.feature" % index], dtype=np.int64),
                          np.array(arrays["tree%d.left" % index], dtype=np.int64),
                          np.array(arrays["tree%d.right" % index], dtype=np.int64),
                          np.array(arrays["tree%d.counts" % index]))
                     for index in range(len(seeds))]
            frac, min_split = arrays["settings"]
            return cls(trees, seeds, content.input_width, float(frac), int(min_split))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TrainingError(message="incomplete forest parameters: %s" % exc, code="CorruptCheckpoint")


def gini(n_total: np.ndarray, n_active: np.ndarray) -> np.ndarray:
    """Gini impurity of nodes with ``n_total`` rows of which ``n_active`` are active."""
    n_total = np.asarray(n_total, dtype=np.float64)
    safe = np.where(n_total > 0, n_total, 1.0)
    p = np.asarray(n_active, dtype=np.float64) / safe
    return np.where(n_total > 0, 2.0 * p * (1.0 - p), 0.0)


def split_gains(bits: np.ndarray, labels: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Gini gain of splitting the rows on each of ``features`` at 0.5.

    Candidates that leave one side empty get ``-inf``.
    """
    n = labels.shape[0]
    n_active = int(labels.sum())
    columns = bits[:, features]
    right_total = columns.sum(axis=0)
    right_active = columns[labels == 1].sum(axis=0)
    left_total = n - right_total
    left_active = n_active - right_active
    parent = gini(np.array(n), np.array(n_active))
    gain = parent - (left_total * gini(left_total, left_active) + right_total * gini(right_total, right_active)) / n
    return np.where((left_total > 0) & (right_total > 0), gain, -np.inf)


def _grow_tree(bits: np.ndarray, labels: np.ndarray, seed: int, max_features: int, min_samples_split: int,
               bootstrap: bool) -> Tree:
    rng = np.random.default_rng(seed)
    n, width = bits.shape
    rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    feature: List[int] = []
    left: List[int] = []
    right: List[int] = []
    counts: List[Tuple[int, int]] = []

    def new_node(node_rows: np.ndarray) -> int:
        n_active = int(labels[node_rows].sum())
        feature.append(LEAF)
        left.append(LEAF)
        right.append(LEAF)
        counts.append((node_rows.size - n_active, n_active))
        return len(feature) - 1

    stack = [(new_node(rows), rows)]
    while stack:
        node, node_rows = stack.pop()
        n_inactive, n_active = counts[node]
        if node_rows.size < min_samples_split or n_active == 0 or n_inactive == 0:
            continue
        candidates = rng.choice(width, size=max_features, replace=False)
        gains = split_gains(bits[np.ix_(node_rows, candidates)], labels[node_rows], np.arange(max_features))
        best = int(np.argmax(gains))
        if not gains[best] > 1e-12:
            continue
        chosen = int(candidates[best])
        goes_right = bits[node_rows, chosen]
        left_node = new_node(node_rows[~goes_right])
        right_node = new_node(node_rows[goes_right])
        feature[node], left[node], right[node] = chosen, left_node, right_node
        stack.append((right_node, node_rows[goes_right]))
        stack.append((left_node, node_rows[~goes_right]))

    return Tree(np.array(feature, dtype=np.int64), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(counts, dtype=np.float64).reshape(-1, 2))


def train_random_forest(features: np.ndarray, labels: Sequence[int], trees: int = 100,
                        max_features_frac: float = 1.0 / 3.0, min_samples_split: int = 6, seed: int = 0,
                        jobs: int = 1, bootstrap: bool = True) -> ForestModel:
    """Grow a random forest of CART trees.

    Tree ``i`` draws its bootstrap rows and feature subsets from a generator
    seeded with ``derive_seed(seed, i)``, so the forest does not depend on
    how trees are scheduled over ``jobs`` workers. Each split considers
    ``ceil(max_features_frac * width)`` random features; nodes smaller than
    ``min_samples_split`` and pure nodes become leaves.

    :raises TrainingError: ``EmptyInput`` with fewer than ``min_samples_split`` rows
    """
    bits = np.asarray(features) > THRESHOLD
    y = np.asarray(labels, dtype=np.int64)
    if bits.ndim != 2 or bits.shape[0] != y.shape[0]:
        raise TrainingError(message="features and labels do not align", code="ShapeMismatch")
    if bits.shape[0] == 0 or bits.shape[0] < min_samples_split:
        raise TrainingError(message="random forest needs at least %d rows, got %d"
                            % (min_samples_split, bits.shape[0]), code="EmptyInput")
    if trees < 1 or not 0.0 < max_features_frac <= 1.0:
        raise TrainingError(message="bad forest settings", code="InvalidConfig")

    width = bits.shape[1]
    max_features = max(1, min(width, math.ceil(max_features_frac * width)))
    seeds = tuple(derive_seed(seed, index) for index in range(trees))
    grown = Parallel(n_jobs=jobs)(
        delayed(_grow_tree)(bits, y, tree_seed, max_features, min_samples_split, bootstrap) for tree_seed in seeds
    )
    return ForestModel(list(grown), seeds, width, max_features_frac, min_samples_split)


def predict_proba(model: Union[LogRegModel, ForestModel], features: np.ndarray) -> np.ndarray:
    """Active-class probability per row.

    Logistic regression applies the sigmoid; the forest averages the active
    fraction of the leaf each tree sends the row to.

    :raises TrainingError: ``ShapeMismatch`` if the width differs from the model's
    """
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[1] != model.input_width:
        raise TrainingError(message="features of shape %s do not match model width %d"
                            % (x.shape, model.input_width), code="ShapeMismatch")
    if isinstance(model, LogRegModel):
        return expit(model.decision(x))
    if not model.trees:
        raise TrainingError(message="forest has no trees", code="EmptyInput")
    bits = x > THRESHOLD
    return np.mean([tree.active_fraction(bits) for tree in model.trees], axis=0)


def fit_baseline(family: str, features: np.ndarray, labels: Sequence[int], seed: int = 0, jobs: int = 1,
                 options: Optional[Dict[str, Any]] = None) -> Union[LogRegModel, ForestModel]:
    """Train the baseline named ``logreg`` or ``forest``."""
    options = dict(options or {})
    if family == "logreg":
        return train_logreg(features, labels, **options)
    if family == "forest":
        return train_random_forest(features, labels, seed=seed, jobs=jobs, **options)
    raise TrainingError(message="unknown baseline " + repr(family), code="InvalidConfig")
