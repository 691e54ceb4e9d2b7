# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Experiment configuration files.

A configuration is one JSON object; see ``docs-source/config_schema.json``.
Everything is validated before any compute starts.
"""

from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional
import json
import os

from .evaluation import FAMILIES, SELECT_FINAL, SELECT_TARGET_STEP, SELECT_VALIDATION, SELECTIONS
from .hashing import MASK64
from .mtnn import Architecture, TrainConfig
from .qsarerror import ConfigError, DataError, TrainingError
from .split import LEAKY, NON_LEAKY, RANDOM_KFOLD, REGIMES
from .synthetic import SyntheticSpec

DEFAULT_FINGERPRINT = {"radius": 2, "width": 1024}


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


@dataclass
class ExperimentConfig:
    """One experiment: data, split regime, model family and training settings.

    :param seed: master seed; every other seed is derived from it
    :param datasets: assay CSV files (one task each)
    :param synthetic: synthetic collection parameters instead of ``datasets``
    :param side_datasets: extra tasks trained on but never evaluated
    :param tasks: optional subset of the primary tasks, in the given order
    :param regime: ``leaky-temporal``, ``non-leaky-temporal`` or ``random-kfold``
    :param focus_tasks: focus tasks of the non-leaky regime (one sub-run each)
    :param model: ``stnn``, ``u-mtnn``, ``w-mtnn``, ``logreg`` or ``forest``
    :param architecture: hidden layer sizes, e.g. ``"2000,1000"``
    :param train: overrides of the training defaults
    :param evaluation: checkpoint selection (``validation``, ``final`` or
        ``target-step``); defaults to ``final`` for random k-fold and
        ``validation`` otherwise
    """

    seed: int
    name: str = "experiment"
    datasets: List[str] = field(default_factory=list)
    synthetic: Optional[Dict[str, Any]] = None
    side_datasets: List[str] = field(default_factory=list)
    tasks: Optional[List[str]] = None
    regime: str = LEAKY
    focus_tasks: List[str] = field(default_factory=list)
    model: str = "w-mtnn"
    architecture: str = "2000,1000"
    train: Dict[str, Any] = field(default_factory=dict)
    folds: int = 5
    evaluation: Optional[str] = None
    fingerprint: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_FINGERPRINT))
    output: str = "runs"
    jobs: int = 1

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: str = "") -> "ExperimentConfig":
        """Build and validate a configuration; relative dataset paths are
        resolved against ``base_dir``."""
        if not isinstance(data, dict):
            raise ConfigError(message="configuration must be a JSON object", code="InvalidConfig")
        names = {item.name for item in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(message="unknown configuration keys: " + ", ".join(unknown), code="UnknownKey")
        if "seed" not in data or data["seed"] is None:
            raise ConfigError(message="the configuration needs a seed", code="MissingSeed")
        values = dict(data)
        if isinstance(values.get("architecture"), (list, tuple)):
            values["architecture"] = ",".join(str(size) for size in values["architecture"])
        for key in ("datasets", "side_datasets"):
            values[key] = [path if os.path.isabs(path) or not base_dir else os.path.join(base_dir, path)
                           for path in values.get(key, [])]
        try:
            config = cls(**values)
        except TypeError as exc:
            raise ConfigError(message=str(exc), code="InvalidConfig")
        return config.validate()

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fin:
                data = json.load(fin)
        except OSError as exc:
            raise ConfigError(message="cannot read %s: %s" % (path, exc), code="MissingConfig")
        except json.JSONDecodeError as exc:
            raise ConfigError(message="%s is not valid JSON: %s" % (path, exc), code="InvalidConfig")
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> Dict[str, Any]:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    def with_overrides(self, seed: Optional[int] = None, output: Optional[str] = None,
                       jobs: Optional[int] = None) -> "ExperimentConfig":
        """Apply the ``--seed``, ``--out`` and ``--jobs`` command line flags."""
        data = self.to_dict()
        if seed is not None:
            data["seed"] = seed
        if output is not None:
            data["output"] = output
        if jobs is not None:
            data["jobs"] = jobs
        return type(self)(**data).validate()

    def validate(self) -> "ExperimentConfig":
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= MASK64:
            raise ConfigError(message="seed must be an unsigned 64-bit integer", code="InvalidSeed")
        if bool(self.datasets) == bool(self.synthetic):
            raise ConfigError(message="give either datasets or a synthetic spec", code="InvalidConfig")
        if self.synthetic:
            try:
                SyntheticSpec.from_dict(self.synthetic)
            except DataError as exc:
                raise ConfigError(message=exc.message, code=exc.code)
        if self.regime not in REGIMES:
            raise ConfigError(message="unknown regime " + repr(self.regime), code="InvalidRegime")
        if self.model not in FAMILIES:
            raise ConfigError(message="unknown model " + repr(self.model), code="InvalidModel")
        if self.regime == NON_LEAKY and not self.focus_tasks:
            raise ConfigError(message="the non-leaky regime needs at least one focus task", code="MissingFocus")
        if self.tasks is not None and self.focus_tasks:
            missing = [name for name in self.focus_tasks if name not in self.tasks]
            if missing:
                raise ConfigError(message="focus tasks outside the task subset: " + ", ".join(missing),
                                  code="MissingFocus")
        if self.regime == RANDOM_KFOLD and (not _is_int(self.folds) or self.folds < 2):
            raise ConfigError(message="random k-fold needs at least 2 folds", code="InvalidFolds")
        if self.evaluation is not None and self.evaluation not in SELECTIONS:
            raise ConfigError(message="unknown evaluation mode " + repr(self.evaluation), code="InvalidEvaluation")
        if self.regime == RANDOM_KFOLD and self.evaluation_mode == SELECT_VALIDATION:
            raise ConfigError(message="random k-fold holds out no validation set", code="InvalidEvaluation")
        if self.regime != RANDOM_KFOLD and self.evaluation_mode == SELECT_TARGET_STEP:
            raise ConfigError(message="target-step evaluation needs the random k-fold regime",
                              code="InvalidEvaluation")
        if not isinstance(self.fingerprint, dict):
            raise ConfigError(message="fingerprint must be an object", code="InvalidFingerprint")
        radius = self.fingerprint.get("radius", 2)
        width = self.fingerprint.get("width", 1024)
        if (set(self.fingerprint) - set(DEFAULT_FINGERPRINT)
                or not (_is_int(radius) and _is_int(width))
                or radius < 0 or width < 64 or width & (width - 1)):
            raise ConfigError(message="fingerprint needs radius >= 0 and a power-of-two width >= 64",
                              code="InvalidFingerprint")
        if not _is_int(self.jobs) or self.jobs < 1:
            raise ConfigError(message="jobs must be >= 1", code="InvalidConfig")
        try:
            Architecture.parse(self.architecture)
            TrainConfig(seed=self.seed).with_overrides(self.train)
        except TrainingError as exc:
            raise ConfigError(message=exc.message, code=exc.code)
        return self

    @property
    def arch(self) -> Architecture:
        return Architecture.parse(self.architecture)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed).with_overrides(self.train)

    @property
    def evaluation_mode(self) -> str:
        if self.evaluation:
            return self.evaluation
        return SELECT_FINAL if self.regime == RANDOM_KFOLD else SELECT_VALIDATION

    @property
    def radius(self) -> int:
        return int(self.fingerprint.get("radius", 2))

    @property
    def width(self) -> int:
        return int(self.fingerprint.get("width", 1024))

    @property
    def synthetic_spec(self) -> Optional[SyntheticSpec]:
        if not self.synthetic:
            return None
        return SyntheticSpec.from_dict(self.synthetic)
