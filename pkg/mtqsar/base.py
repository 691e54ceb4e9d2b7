# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple
import json
import logging
import os

from joblib import Parallel, delayed

from .checkpoints import CheckpointStore
from .config import ExperimentConfig
from .data import Collection, load_collection, read_fingerprints, write_collection, write_fingerprints
from .hashing import file_hash
from .qsarerror import AnalysisError, ConfigError
from .split import SplitAssignment
from .synthetic import SyntheticSpec, generate_synthetic

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RUN_FORMAT = "mtqsar-run"
RUN_VERSION = 1
DATA_DIR = "data"
FINGERPRINTS = "fingerprints.csv"
RESULTS = "results.csv"


class BaseMixin():
    """Shared state of an experiment: its configuration, the run directory
    and the loaded collection.

    Runs are laid out as::

        <output>/<name>/manifest.json
        <output>/<name>/data/<task>.csv
        <output>/<name>/fingerprints.csv
        <output>/<name>/<sub-run>/assignment.csv
        <output>/<name>/<sub-run>/models/<model>/...
        <output>/<name>/<sub-run>/results.csv
        <output>/<name>/results.csv

    :param config: the experiment configuration (not needed for comparing
        or analyzing finished runs)
    :param out: overrides ``config.output``
    :param jobs: overrides ``config.jobs``
    :type config: ExperimentConfig
    :type out: string
    :type jobs: int
    """

    def __init__(self, config: Optional[ExperimentConfig] = None, out: Optional[str] = None,
                 jobs: Optional[int] = None) -> None:
        """Constructor"""
        if config is not None and (out is not None or jobs is not None):
            config = config.with_overrides(output=out, jobs=jobs)
        self.config = config
        self.jobs = jobs or (config.jobs if config else 1)
        self.out = out if config is None else config.output
        self.collection: Optional[Collection] = None
        self.manifest: Dict[str, Any] = {}
        self.assignments: List[Tuple[str, SplitAssignment]] = []
        self.trained: Optional[Dict[str, Dict[str, CheckpointStore]]] = None

    def require_config(self) -> ExperimentConfig:
        if self.config is None:
            raise ConfigError(message="this operation needs an experiment configuration", code="MissingConfig")
        return self.config

    @property
    def run_dir(self) -> str:
        config = self.require_config()
        return os.path.join(config.output, config.name)

    def run_path(self, *parts: str) -> str:
        """Path below the run directory; parent directories are created."""
        path = os.path.join(self.run_dir, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    def parallel(self, function: Callable[..., Any], calls: Iterable[tuple]) -> List[Any]:
        """Run ``function(*args)`` for every call on up to ``jobs`` workers;
        results come back in call order."""
        return list(Parallel(n_jobs=self.jobs)(delayed(function)(*args) for args in calls))

    # ----- data ---------------------------------------------------------

    def load_data(self) -> Collection:
        """Read or generate the collection the configuration describes."""
        if self.collection is not None:
            return self.collection
        config = self.require_config()
        if config.synthetic:
            spec = SyntheticSpec.from_dict(dict(config.synthetic, radius=config.radius, width=config.width))
            collection = generate_synthetic(spec, config.seed)
        else:
            cache: Dict[str, Any] = {}
            collection = load_collection(config.datasets, config.radius, config.width, cache)
            if config.side_datasets:
                collection = collection.merge(load_collection(config.side_datasets, config.radius, config.width,
                                                              cache))
        if config.tasks is not None:
            collection = collection.subset(list(config.tasks) + list(collection.side_tasks))
        for focus in config.focus_tasks:
            if focus not in collection.evaluated_tasks:
                raise ConfigError(message="focus task %s is not a primary task" % focus, code="MissingFocus")
        self.collection = collection
        return collection

    def input_hashes(self) -> Dict[str, str]:
        config = self.require_config()
        return {path: file_hash(path) for path in list(config.datasets) + list(config.side_datasets)}

    # ----- manifest -----------------------------------------------------

    def write_manifest(self) -> str:
        path = self.run_path(MANIFEST)
        with open(path, "w", encoding="utf-8", newline="\n") as fout:
            fout.write(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        return path

    def mark_stage(self, stage: str) -> None:
        stages = self.manifest.setdefault("stages", [])
        if stage not in stages:
            stages.append(stage)
        self.write_manifest()

    def note(self, message: str) -> None:
        logger.warning(message)
        notes = self.manifest.setdefault("notes", [])
        if message not in notes:
            notes.append(message)

    def start_manifest(self) -> None:
        config = self.require_config()
        self.manifest = {
            "format": RUN_FORMAT,
            "version": RUN_VERSION,
            "config": config.to_dict(),
            "seed": config.seed,
            "inputs": self.input_hashes(),
            "stages": [],
            "notes": [],
        }

    @classmethod
    def read_manifest(cls, run_dir: str) -> Dict[str, Any]:
        """Manifest of a finished or partial run.

        :raises AnalysisError: ``MissingArtifact`` if there is none
        """
        path = os.path.join(run_dir, MANIFEST)
        if not os.path.isfile(path):
            raise AnalysisError(message="no run manifest in " + run_dir, code="MissingArtifact")
        with open(path, encoding="utf-8") as fin:
            manifest = json.load(fin)
        if manifest.get("format") != RUN_FORMAT:
            raise AnalysisError(message=path + " is not a run manifest", code="MissingArtifact")
        return manifest

    @classmethod
    def load_run_collection(cls, run_dir: str) -> Collection:
        """Rebuild a run's collection from its normalized data files."""
        manifest = cls.read_manifest(run_dir)
        if "tasks" not in manifest:
            raise AnalysisError(message="run %s was not featurized" % run_dir, code="MissingArtifact")
        width = int(manifest["config"]["fingerprint"].get("width", 1024))
        radius = int(manifest["config"]["fingerprint"].get("radius", 2))
        cache = read_fingerprints(os.path.join(run_dir, FINGERPRINTS), width)
        paths = [os.path.join(run_dir, DATA_DIR, name + ".csv") for name in manifest["tasks"]]
        loaded = load_collection(paths, radius, width, cache)
        return Collection(loaded.tasks, tuple(manifest.get("side_tasks", [])))

    def save_collection(self, collection: Collection) -> None:
        write_collection(collection, os.path.join(self.run_dir, DATA_DIR))
        write_fingerprints(collection, self.run_path(FINGERPRINTS))
        self.manifest["tasks"] = list(collection.task_names)
        self.manifest["side_tasks"] = list(collection.side_tasks)
