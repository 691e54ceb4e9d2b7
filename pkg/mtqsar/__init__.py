# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

__version__ = (0, 1, 0)

from .analysis import covariate_shift, label_correlation, relatedness, size_benefit_regression  # noqa: F401
from .baselines import predict_proba, train_logreg, train_random_forest  # noqa: F401
from .checkpoints import CheckpointStore  # noqa: F401
from .chem import Fingerprint, Molecule, circular_fingerprint, parse_smiles, tanimoto  # noqa: F401
from .config import ExperimentConfig  # noqa: F401
from .data import Collection, MultitaskMatrix, TaskDataset, assemble_dense, read_task  # noqa: F401
from .evaluation import EvalResult, evaluate, roc_auc, select_checkpoint  # noqa: F401
from .experiment_api import Experiment  # noqa: F401
from .mtnn import Architecture, ModelParams, TrainConfig, forward, predict, train  # noqa: F401
from .qsarerror import (AnalysisError, ChemError, ConfigError, DataError, EvalError, NumericError,  # noqa: F401
                        QSARError, SmilesError, SplitError, StatsError, TrainingError)
from .split import SplitAssignment, leaky_split, non_leaky_split, stratified_kfold  # noqa: F401
from .stats import ComparisonResult, compare, sign_test, wilson_interval  # noqa: F401
from .synthetic import SyntheticSpec, generate_synthetic  # noqa: F401
