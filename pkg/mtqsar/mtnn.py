# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Feed-forward single-task and multitask networks.

Each hidden layer is affine -> batch norm -> ReLU -> dropout; every task has
its own two-class softmax head on top of the shared representation. Training
uses Adagrad on minibatches drawn with replacement from the dense rows and
snapshots the parameters every ``checkpoint_interval`` steps.

The training loss is ``sum_t task_weight[t] * mean_i(weight[i, t] * CE[i, t])``,
mean over the minibatch and sum over tasks with class and task weights
multiplied. Arithmetic is float64; checkpoints store float32.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from .checkpoints import CheckpointStore
from .data import Collection, MultitaskMatrix, training_counts
from .hashing import derive_seed
from .qsarerror import NumericError, TrainingError

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
INVERSE_SIZE = "inverse-size"
TASK_WEIGHTINGS = (UNIFORM, INVERSE_SIZE)

TRAIN_MODE = "train"
INFER_MODE = "infer"

BN_EPSILON = 1e-5
PAPER_MAX_STEPS = 1_000_000
PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class Architecture:
    """Hidden layer sizes ``(x1, ..., xn)``."""

    hidden: Tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.hidden or any(int(size) < 1 for size in self.hidden):
            raise TrainingError(message="architecture needs at least one positive layer size",
                                code="InvalidArchitecture")

    def __str__(self) -> str:
        return "(" + ", ".join(str(size) for size in self.hidden) + ")"

    @property
    def slug(self) -> str:
        return "-".join(str(size) for size in self.hidden)

    @classmethod
    def parse(cls, value: Union[str, Sequence[int], "Architecture"]) -> "Architecture":
        """Accepts a preset name such as ``"2000,1000"``, ``"(2000, 1000)"``,
        ``"2000-1000"`` or a list of sizes."""
        if isinstance(value, Architecture):
            return value
        if isinstance(value, str):
            text = value.strip().strip("()").replace("-", ",")
            try:
                sizes = tuple(int(part) for part in text.split(",") if part.strip())
            except ValueError:
                raise TrainingError(message="cannot parse architecture " + repr(value),
                                    code="InvalidArchitecture")
            return cls(sizes)
        return cls(tuple(int(size) for size in value))


ARCH_1000 = Architecture((1000,))
ARCH_4000 = Architecture((4000,))
ARCH_2000_100 = Architecture((2000, 100))
ARCH_2000_1000 = Architecture((2000, 1000))
ARCH_4000_2000_1000_1000 = Architecture((4000, 2000, 1000, 1000))
PRESETS = (ARCH_1000, ARCH_4000, ARCH_2000_100, ARCH_2000_1000, ARCH_4000_2000_1000_1000)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    dropout: float = 0.5
    max_steps: int = 50_000
    checkpoint_interval: int = 1_000
    seed: int = 0
    task_weighting: str = UNIFORM
    initial_accumulator: float = 0.1
    epsilon: float = 1e-8
    bn_momentum: float = 0.99

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_steps < 1 or self.checkpoint_interval < 1:
            raise TrainingError(message="learning rate, batch size, max steps and checkpoint interval "
                                "must be positive", code="InvalidConfig")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError(message="dropout rate must be in [0, 1)", code="InvalidConfig")
        if self.task_weighting not in TASK_WEIGHTINGS:
            raise TrainingError(message="unknown task weighting " + repr(self.task_weighting),
                                code="InvalidConfig")
        if self.initial_accumulator < 0 or self.epsilon < 0 or not 0.0 <= self.bn_momentum < 1.0:
            raise TrainingError(message="bad optimizer constants", code="InvalidConfig")
        return self

    def with_overrides(self, overrides: Dict[str, Any]) -> "TrainConfig":
        known = set(self.__dataclass_fields__)
        unknown = set(overrides) - known
        if unknown:
            raise TrainingError(message="unknown training options: " + ", ".join(sorted(unknown)),
                                code="InvalidConfig")
        return replace(self, **overrides).validate()


@dataclass
class ModelParams:
    """Network parameters keyed by name.

    Hidden layer ``l`` has ``W{l}`` (in x out), ``b{l}``, ``gamma{l}``,
    ``beta{l}`` and running statistics ``mean{l}``/``var{l}``; the heads are
    stacked as ``head_W`` (tasks x last x 2) and ``head_b`` (tasks x 2).
    """

    architecture: Architecture
    input_width: int
    tasks: Tuple[str, ...]
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.architecture.hidden)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def trainable_names(self) -> List[str]:
        names = []
        for layer in range(self.n_layers):
            names += ["W%d" % layer, "b%d" % layer, "gamma%d" % layer, "beta%d" % layer]
        return names + ["head_W", "head_b"]

    def statistic_names(self) -> List[str]:
        names = []
        for layer in range(self.n_layers):
            names += ["mean%d" % layer, "var%d" % layer]
        return names

    def astype(self, dtype: Any) -> "ModelParams":
        return ModelParams(self.architecture, self.input_width, self.tasks,
                           {name: np.array(value, dtype=dtype) for name, value in self.arrays.items()})

    def frozen(self) -> "ModelParams":
        """float32 read-only copy, the form stored in checkpoints."""
        snapshot = self.astype(np.float32)
        for value in snapshot.arrays.values():
            value.setflags(write=False)
        return snapshot

    @property
    def heads(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(self.arrays["head_W"][task], self.arrays["head_b"][task]) for task in range(self.n_tasks)]

    def layer_shapes(self) -> List[Tuple[int, int]]:
        return [tuple(self.arrays["W%d" % layer].shape) for layer in range(self.n_layers)]  # type: ignore


def init_model(arch: Architecture, input_width: int, n_tasks: int, seed: int,
               tasks: Optional[Sequence[str]] = None, dtype: Any = np.float32) -> ModelParams:
    """Initialize a network.

    Hidden weights are normal with standard deviation ``sqrt(2 / fan_in)``,
    head weights ``sqrt(1 / fan_in)``; biases and batch-norm shifts are 0,
    batch-norm scales 1, running means 0 and running variances 1.

    :param arch: hidden layer sizes
    :param input_width: fingerprint width
    :param n_tasks: number of softmax heads
    :param seed: seed of the numpy generator
    :param tasks: task names (defaults to ``task0..``)
    """
    if input_width < 1 or n_tasks < 1:
        raise TrainingError(message="input width and task count must be >= 1", code="InvalidArchitecture")
    if tasks is None:
        tasks = ["task%d" % index for index in range(n_tasks)]
    if len(tasks) != n_tasks:
        raise TrainingError(message="got %d task names for %d tasks" % (len(tasks), n_tasks),
                            code="ShapeMismatch")

    rng = np.random.default_rng(seed)
    arrays: Dict[str, np.ndarray] = {}
    fan_in = input_width
    for layer, size in enumerate(arch.hidden):
        arrays["W%d" % layer] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, size))
        arrays["b%d" % layer] = np.zeros(size)
        arrays["gamma%d" % layer] = np.ones(size)
        arrays["beta%d" % layer] = np.zeros(size)
        arrays["mean%d" % layer] = np.zeros(size)
        arrays["var%d" % layer] = np.ones(size)
        fan_in = size
    arrays["head_W"] = rng.normal(0.0, math.sqrt(1.0 / fan_in), size=(n_tasks, fan_in, 2))
    arrays["head_b"] = np.zeros((n_tasks, 2))
    params = ModelParams(arch, input_width, tuple(tasks), arrays)
    return params.astype(dtype)


@dataclass
class ForwardCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    normalized: List[np.ndarray] = field(default_factory=list)
    inv_std: List[np.ndarray] = field(default_factory=list)
    activated: List[np.ndarray] = field(default_factory=list)
    masks: List[Optional[np.ndarray]] = field(default_factory=list)
    batch_mean: List[np.ndarray] = field(default_factory=list)
    batch_var: List[np.ndarray] = field(default_factory=list)
    representation: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def dropout_masks(params: ModelParams, batch_size: int, rate: float,
                  rng: Optional[np.random.Generator]) -> List[Optional[np.ndarray]]:
    """Inverted dropout masks (kept units scaled by 1 / (1 - rate))."""
    if rng is None or rate <= 0.0:
        return [None] * params.n_layers
    keep = 1.0 - rate
    return [(rng.random((batch_size, size)) >= rate) / keep for size in params.architecture.hidden]


def forward_pass(params: ModelParams, batch: np.ndarray, mode: str = INFER_MODE,
                 masks: Optional[List[Optional[np.ndarray]]] = None) -> ForwardCache:
    """Run the network and keep the intermediates needed for backpropagation."""
    if batch.ndim != 2 or batch.shape[1] != params.input_width:
        raise TrainingError(message="batch of shape %s does not match input width %d"
                            % (batch.shape, params.input_width), code="ShapeMismatch")
    if mode not in (TRAIN_MODE, INFER_MODE):
        raise TrainingError(message="unknown mode " + repr(mode), code="InvalidMode")
    arrays = params.arrays
    cache = ForwardCache()
    hidden = np.asarray(batch, dtype=np.float64)
    for layer in range(params.n_layers):
        cache.inputs.append(hidden)
        affine = hidden @ arrays["W%d" % layer].astype(np.float64) + arrays["b%d" % layer]
        if mode == TRAIN_MODE:
            mean = affine.mean(axis=0)
            var = affine.var(axis=0)
        else:
            mean = arrays["mean%d" % layer].astype(np.float64)
            var = arrays["var%d" % layer].astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
        normalized = (affine - mean) * inv_std
        shifted = normalized * arrays["gamma%d" % layer] + arrays["beta%d" % layer]
        activated = np.maximum(shifted, 0.0)
        mask = masks[layer] if (masks is not None and mode == TRAIN_MODE) else None
        hidden = activated * mask if mask is not None else activated

        cache.normalized.append(normalized)
        cache.inv_std.append(inv_std)
        cache.activated.append(shifted)
        cache.masks.append(mask)
        cache.batch_mean.append(mean)
        cache.batch_var.append(var)

    cache.representation = hidden
    logits = np.einsum("nh,thc->ntc", hidden, arrays["head_W"].astype(np.float64)) + arrays["head_b"]
    cache.probabilities = _softmax(logits)
    return cache


def forward(params: ModelParams, batch: np.ndarray, mode: str = INFER_MODE, dropout: float = 0.0,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Class probabilities of shape ``(n_examples, n_tasks, 2)``.

    :param mode: ``train`` uses batch statistics and dropout (when ``rng`` is
        given and ``dropout > 0``), ``infer`` uses running statistics
    """
    masks = dropout_masks(params, batch.shape[0], dropout, rng) if mode == TRAIN_MODE else None
    probabilities = forward_pass(params, batch, mode, masks).probabilities
    assert probabilities is not None
    return probabilities


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Active-class probabilities ``(n_examples, n_tasks)`` in infer mode."""
    outputs = []
    for start in range(0, features.shape[0], PREDICT_CHUNK):
        outputs.append(forward(params, features[start:start + PREDICT_CHUNK])[:, :, 1])
    if not outputs:
        return np.zeros((0, params.n_tasks))
    return np.concatenate(outputs, axis=0)


def _check_loss_shapes(probabilities: np.ndarray, labels: np.ndarray, example_weights: np.ndarray,
                       task_weights: np.ndarray) -> None:
    n_examples, n_tasks = labels.shape
    if (probabilities.shape != (n_examples, n_tasks, 2) or example_weights.shape != labels.shape
            or task_weights.shape != (n_tasks,)):
        raise TrainingError(message="loss inputs have inconsistent shapes", code="ShapeMismatch")


def loss(probabilities: np.ndarray, labels: np.ndarray, example_weights: np.ndarray,
         task_weights: Optional[np.ndarray] = None) -> float:
    """Weighted softmax cross-entropy.

    :param probabilities: ``(n, tasks, 2)`` class probabilities
    :param labels: ``(n, tasks)`` binary labels
    :param example_weights: ``(n, tasks)`` weights, 0 where unmeasured
    :param task_weights: ``(tasks,)`` weights, default all 1
    :return: ``sum_t task_weight[t] * mean_i(weight[i, t] * CE[i, t])``
    """
    labels = np.asarray(labels)
    example_weights = np.asarray(example_weights, dtype=np.float64)
    if task_weights is None:
        task_weights = np.ones(labels.shape[1] if labels.ndim == 2 else 0)
    task_weights = np.asarray(task_weights, dtype=np.float64)
    _check_loss_shapes(probabilities, labels, example_weights, task_weights)
    if labels.shape[0] == 0:
        return 0.0

    chosen = np.take_along_axis(probabilities, labels.astype(np.int64)[:, :, None], axis=2)[:, :, 0]
    measured = example_weights > 0
    with np.errstate(divide="ignore"):
        entropy = np.where(measured, -np.log(np.where(measured, chosen, 1.0)), 0.0)
    per_task = (np.where(measured, example_weights * entropy, 0.0)).sum(axis=0) / labels.shape[0]
    return float((task_weights * per_task).sum())


def backward(params: ModelParams, cache: ForwardCache, labels: np.ndarray, example_weights: np.ndarray,
             task_weights: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of :func:`loss` for a train-mode forward pass."""
    probabilities = cache.probabilities
    representation = cache.representation
    assert probabilities is not None and representation is not None
    _check_loss_shapes(probabilities, labels, example_weights, task_weights)
    n_examples = labels.shape[0]
    arrays = params.arrays

    coefficient = task_weights[None, :] * example_weights / n_examples
    onehot = np.stack([1 - labels, labels], axis=2).astype(np.float64)
    delta = np.where((coefficient > 0)[:, :, None], coefficient[:, :, None] * (probabilities - onehot), 0.0)

    grads: Dict[str, np.ndarray] = {}
    grads["head_W"] = np.einsum("nh,ntc->thc", representation, delta)
    grads["head_b"] = delta.sum(axis=0)
    upstream = np.einsum("ntc,thc->nh", delta, arrays["head_W"].astype(np.float64))

    for layer in reversed(range(params.n_layers)):
        mask = cache.masks[layer]
        if mask is not None:
            upstream = upstream * mask
        upstream = upstream * (cache.activated[layer] > 0)
        normalized = cache.normalized[layer]
        grads["gamma%d" % layer] = (upstream * normalized).sum(axis=0)
        grads["beta%d" % layer] = upstream.sum(axis=0)
        d_normalized = upstream * arrays["gamma%d" % layer]
        d_affine = cache.inv_std[layer] / n_examples * (
            n_examples * d_normalized
            - d_normalized.sum(axis=0)
            - normalized * (d_normalized * normalized).sum(axis=0)
        )
        grads["W%d" % layer] = cache.inputs[layer].T @ d_affine
        grads["b%d" % layer] = d_affine.sum(axis=0)
        upstream = d_affine @ arrays["W%d" % layer].astype(np.float64).T
    return grads


class Adagrad:
    """Adagrad: ``G += g**2; theta -= lr * g / sqrt(G + epsilon)``."""

    def __init__(self, params: ModelParams, learning_rate: float, initial_accumulator: float = 0.1,
                 epsilon: float = 1e-8) -> None:
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.accumulators = {name: np.full(params.arrays[name].shape, initial_accumulator, dtype=np.float64)
                             for name in params.trainable_names()}

    def effective_step(self, name: str) -> np.ndarray:
        return self.learning_rate / np.sqrt(self.accumulators[name] + self.epsilon)

    def apply(self, params: ModelParams, grads: Dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            accumulator = self.accumulators[name]
            accumulator += grad * grad
            params.arrays[name] -= self.learning_rate * grad / np.sqrt(accumulator + self.epsilon)


def task_weights(collection: Collection, assignment: Any, mode: str = UNIFORM) -> Dict[str, float]:
    """Per-task cost weights of the tasks an assignment keeps.

    ``uniform`` gives 1.0 everywhere; ``inverse-size`` gives weights
    proportional to 1 / (training records) normalized to mean 1, computed in
    exact rational arithmetic.

    :raises TrainingError: ``EmptyTask`` if a kept task has no training rows
    """
    if mode not in TASK_WEIGHTINGS:
        raise TrainingError(message="unknown task weighting " + repr(mode), code="InvalidConfig")
    counts = {name: count for name, count in training_counts(collection, assignment).items()
              if name not in assignment.dropped}
    empty = [name for name, count in counts.items() if count == 0]
    if empty:
        raise TrainingError(message="tasks without training rows: " + ", ".join(empty), code="EmptyTask")
    if mode == UNIFORM:
        return {name: 1.0 for name in counts}
    inverse = {name: Fraction(1, count) for name, count in counts.items()}
    mean = sum(inverse.values(), Fraction(0)) / len(inverse)
    return {name: float(value / mean) for name, value in inverse.items()}


def matrix_loss(params: ModelParams, matrix: MultitaskMatrix, weights: Optional[np.ndarray] = None) -> float:
    """Infer-mode loss over a whole dense matrix."""
    probabilities = forward(params, matrix.features)
    return loss(probabilities, matrix.labels, matrix.weights, weights)


def train(matrix: MultitaskMatrix, arch: Architecture, config: TrainConfig,
          weights: Optional[Sequence[float]] = None) -> CheckpointStore:
    """Train a network on a dense matrix and return its checkpoints.

    Minibatches of ``batch_size`` rows are drawn uniformly with replacement
    from a numpy generator seeded with ``config.seed``; initialization uses
    ``derive_seed(config.seed, 0)``. A snapshot is taken every
    ``checkpoint_interval`` steps and at the final step.

    :param weights: per-task cost weights in matrix column order
    :raises TrainingError: ``EmptyTask`` if a task column has no weight
    :raises NumericError: ``NonFiniteLoss``; ``store`` holds the checkpoints
        written before the failure
    """
    config.validate()
    if matrix.n_examples == 0:
        raise TrainingError(message="empty training matrix", code="EmptyTask")
    empty = [name for column, name in enumerate(matrix.task_names) if not (matrix.weights[:, column] > 0).any()]
    if empty:
        raise TrainingError(message="tasks without weighted training entries: " + ", ".join(empty),
                            code="EmptyTask")
    task_weight = np.ones(matrix.n_tasks) if weights is None else np.asarray(weights, dtype=np.float64)
    if task_weight.shape != (matrix.n_tasks,):
        raise TrainingError(message="need one task weight per matrix column", code="ShapeMismatch")

    params = init_model(arch, matrix.features.shape[1], matrix.n_tasks, derive_seed(config.seed, 0),
                        matrix.task_names, dtype=np.float64)
    optimizer = Adagrad(params, config.learning_rate, config.initial_accumulator, config.epsilon)
    rng = np.random.default_rng(config.seed)
    store = CheckpointStore(metadata={
        "kind": "mtnn",
        "architecture": list(arch.hidden),
        "tasks": list(matrix.task_names),
        "task_weights": [float(value) for value in task_weight],
        "loss_aggregation": "mean over batch, sum over tasks, class x task weights",
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "dropout": config.dropout,
        "max_steps": config.max_steps,
        "checkpoint_interval": config.checkpoint_interval,
        "seed": config.seed,
    })

    momentum = config.bn_momentum
    for step in range(1, config.max_steps + 1):
        rows = rng.integers(0, matrix.n_examples, size=config.batch_size)
        batch = matrix.features[rows].astype(np.float64)
        labels = matrix.labels[rows]
        example_weights = matrix.weights[rows]
        masks = dropout_masks(params, config.batch_size, config.dropout, rng)

        cache = forward_pass(params, batch, TRAIN_MODE, masks)
        assert cache.probabilities is not None
        value = loss(cache.probabilities, labels, example_weights, task_weight)
        if not math.isfinite(value):
            raise NumericError(message="non-finite loss at step %d" % step, code="NonFiniteLoss",
                               store=store, step=step)
        grads = backward(params, cache, labels, example_weights, task_weight)
        optimizer.apply(params, grads)
        for layer in range(params.n_layers):
            running_mean = params.arrays["mean%d" % layer]
            running_var = params.arrays["var%d" % layer]
            running_mean *= momentum
            running_mean += (1.0 - momentum) * cache.batch_mean[layer]
            running_var *= momentum
            running_var += (1.0 - momentum) * cache.batch_var[layer]

        if step % config.checkpoint_interval == 0 or step == config.max_steps:
            if not all(np.isfinite(array).all() for array in params.arrays.values()):
                raise NumericError(message="non-finite parameters at step %d" % step, code="NonFiniteLoss",
                                   store=store, step=step)
            store.add(step, params.frozen(), value)
            logger.debug(f"step {step}: minibatch loss {value:.6f}")
    return store
