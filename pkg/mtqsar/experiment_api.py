# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Benchmark experiments for multitask QSAR models"""

from typing import Optional

from .config import ExperimentConfig
from .runs import RunsMixin
from .studies import StudiesMixin


class Experiment(
    RunsMixin,
    StudiesMixin
):
    """One benchmark experiment and the tools to compare finished ones.

    The stages ``featurize``, ``split``, ``train`` and ``evaluate`` can be
    called one by one; each picks up the artifacts of the earlier stages from
    the run directory. ``run`` executes all of them.

    Comparing and analyzing work on run directories and need no
    configuration::

        Experiment(jobs=4).compare_runs("runs/w-mtnn", "runs/stnn")

    :param config: the experiment configuration
    :param out: overrides the output directory of the configuration
    :param jobs: overrides the number of parallel jobs
    :type config: ExperimentConfig
    :type out: string
    :type jobs: int
    """

    def __init__(self, config: Optional[ExperimentConfig] = None, out: Optional[str] = None,
                 jobs: Optional[int] = None) -> None:
        """Constructor"""
        super().__init__(config, out, jobs)

    @classmethod
    def from_file(cls, path: str, seed: Optional[int] = None, out: Optional[str] = None,
                  jobs: Optional[int] = None) -> "Experiment":
        """Load and validate a configuration file before anything is computed.

        :raises ConfigError: if the configuration is invalid
        """
        config = ExperimentConfig.from_file(path)
        if seed is not None:
            config = config.with_overrides(seed=seed)
        return cls(config, out, jobs)
