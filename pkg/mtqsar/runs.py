# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

from dataclasses import replace
from typing import Any, Callable, Dict, List, Optional, Tuple
import logging
import os
import shutil

import numpy as np

from .base import DATA_DIR, RESULTS, BaseMixin
from .baselines import fit_baseline
from .checkpoints import CheckpointStore
from .chem import fingerprint_matrix
from .data import FULL_DATASET, SPLIT_LOCAL, Collection, assemble_dense, write_collection
from .evaluation import (BASELINE_FAMILIES, NN_FAMILIES, SELECT_FINAL, SELECT_TARGET_STEP, EvalResult, TaskEval,
                         checkpoint_aucs, evaluate, fold_mean, target_step_eval, write_curves)
from .hashing import derive_seed
from .mtnn import INVERSE_SIZE, UNIFORM, train, task_weights
from .qsarerror import ConfigError, EvalError, NumericError, QSARError
from .split import (LEAKY, NON_LEAKY, RANDOM_KFOLD, TEST, TRAIN, VALID, SplitAssignment, leaky_split,
                    non_leaky_split, random_kfold_split, read_assignment, write_assignment)

logger = logging.getLogger(__name__)

ASSIGNMENT = "assignment.csv"
CURVES = "curves.csv"
MODELS = "models"
SHARED_MODEL = "mtnn"
MULTITASK_FAMILIES = ("u-mtnn", "w-mtnn")
SYNTHETIC_DIR = "synthetic"
STAGES = ("featurize", "split", "train", "eval")
STAGE_KEYS = {"split": ("subruns",), "train": ("job_seeds", "models"), "eval": ()}


def _train_network(matrix: Any, arch: Any, train_config: Any, weights: Optional[List[float]]) -> CheckpointStore:
    return train(matrix, arch, train_config, weights)


def _train_baseline(family: str, features: np.ndarray, labels: np.ndarray, seed: int) -> CheckpointStore:
    model = fit_baseline(family, features, labels, seed=seed)
    store = CheckpointStore(metadata={"kind": family, "seed": seed})
    store.add(0, model)
    return store


def _run_job(job: str, function: Callable[..., CheckpointStore], args: Tuple[Any, ...]) -> CheckpointStore:
    try:
        return function(*args)
    except NumericError as exc:
        exc.details["job"] = job
        raise


class RunsMixin(BaseMixin):
    def _resume(self) -> None:
        """Continue the manifest of an earlier stage, or start a new one."""
        if self.manifest:
            return
        try:
            self.manifest = self.read_manifest(self.run_dir)
        except QSARError:
            self.start_manifest()

    def _invalidate(self, stage: str) -> None:
        """Forget everything the stages after ``stage`` produced, in the
        manifest and in the run directory."""
        later = STAGES[STAGES.index(stage) + 1:]
        for entry in self.manifest.get("subruns", []):
            subrun = os.path.join(self.run_dir, entry["name"])
            if "split" in later:
                shutil.rmtree(subrun, ignore_errors=True)
                continue
            shutil.rmtree(os.path.join(subrun, MODELS), ignore_errors=True)
            for artifact in (RESULTS, CURVES):
                if os.path.isfile(os.path.join(subrun, artifact)):
                    os.remove(os.path.join(subrun, artifact))
        if os.path.isfile(os.path.join(self.run_dir, RESULTS)):
            os.remove(os.path.join(self.run_dir, RESULTS))
        for name in later:
            for key in STAGE_KEYS[name]:
                self.manifest.pop(key, None)
        self.manifest["stages"] = [name for name in self.manifest.get("stages", []) if name not in later]
        self.manifest.pop("failed", None)
        if "split" in later:
            self.assignments = []
        self.trained = None

    def _collection(self) -> Collection:
        if self.collection is None:
            self._resume()
            if "tasks" in self.manifest:
                self.collection = self.load_run_collection(self.run_dir)
            else:
                self.featurize()
        assert self.collection is not None
        return self.collection

    def _class_mode(self) -> str:
        return FULL_DATASET if self.require_config().regime == RANDOM_KFOLD else SPLIT_LOCAL

    @staticmethod
    def evaluation_view(collection: Collection, assignment: SplitAssignment) -> Collection:
        """The collection as one sub-run evaluates it: a non-leaky sub-run
        evaluates its focus task only."""
        if assignment.focus is None:
            return collection
        side = tuple(name for name in collection.task_names if name != assignment.focus)
        return Collection(collection.tasks, side)

    def arch_label(self) -> str:
        config = self.require_config()
        return str(config.arch) if config.model in NN_FAMILIES else "-"

    # ----- stages -------------------------------------------------------

    def synthesize(self, directory: Optional[str] = None) -> List[str]:
        """Generate the configured synthetic collection and write it as assay
        CSV files, one per task.

        :param directory: target directory (default ``<run>/synthetic``)
        :raises ConfigError: ``InvalidConfig`` if the configuration reads
            datasets instead of a synthetic spec
        """
        config = self.require_config()
        if not config.synthetic:
            raise ConfigError(message="the configuration has no synthetic section", code="InvalidConfig")
        collection = self.load_data()
        paths = write_collection(collection, directory or os.path.join(self.run_dir, SYNTHETIC_DIR))
        logger.info(f"wrote {len(paths)} synthetic tasks")
        return paths

    def featurize(self) -> Collection:
        """Load or generate the data, fingerprint it and write the normalized
        task files and the fingerprint cache into the run directory.

        Starts a new manifest; splits, models and results of an earlier run
        in the same directory are removed.
        """
        self._resume()
        self._invalidate("featurize")
        shutil.rmtree(os.path.join(self.run_dir, DATA_DIR), ignore_errors=True)
        self.start_manifest()
        collection = self.load_data()
        self.save_collection(collection)
        self.mark_stage("featurize")
        logger.info(f"featurized {len(collection.tasks)} tasks into {self.run_dir}")
        return collection

    def split(self) -> List[Tuple[str, SplitAssignment]]:
        """Split every task according to the configured regime.

        :return: ``(sub-run name, assignment)`` pairs: ``main`` for the leaky
            regime, ``focus-<task>`` per focus task for the non-leaky regime
            and ``fold-<i>`` per fold for random k-fold
        """
        config = self.require_config()
        collection = self._collection()
        self._invalidate("split")
        if config.regime == LEAKY:
            subruns = [("main", leaky_split(collection))]
        elif config.regime == NON_LEAKY:
            subruns = [("focus-" + focus, non_leaky_split(collection, focus)) for focus in config.focus_tasks]
        else:
            subruns = [("fold-%d" % assignment.fold, assignment)
                       for assignment in random_kfold_split(collection, config.folds, config.seed)]

        entries = []
        for name, assignment in subruns:
            write_assignment(assignment, collection, self.run_path(name, ASSIGNMENT))
            for message in assignment.notes:
                self.note("%s: %s" % (name, message))
            entries.append({"name": name, "label": assignment.label, "dropped": list(assignment.dropped)})
        self.manifest["subruns"] = entries
        self.assignments = subruns
        self.mark_stage("split")
        return subruns

    def _assignments(self) -> List[Tuple[str, SplitAssignment]]:
        if self.assignments:
            return self.assignments
        collection = self._collection()
        if "subruns" not in self.manifest:
            return self.split()
        self.assignments = [(entry["name"], read_assignment(os.path.join(self.run_dir, entry["name"], ASSIGNMENT),
                                                            collection))
                            for entry in self.manifest["subruns"]]
        return self.assignments

    def train(self) -> Dict[str, Dict[str, CheckpointStore]]:
        """Train the configured model family on every sub-run.

        Multitask networks get one shared model per sub-run; single-task
        networks and baselines get one model per evaluated task. Job ``i``
        (in sub-run and task order) is seeded with ``derive_seed(seed, i + 1)``.

        :return: sub-run -> task -> checkpoints of the model scoring that task
        :raises NumericError: after saving the checkpoints written before the
            failure
        """
        config = self.require_config()
        collection = self._collection()
        family = config.model
        arch = config.arch
        base_train = config.train_config
        class_mode = self._class_mode()
        if family in BASELINE_FAMILIES and config.train:
            self.note("model %s ignores the training and checkpoint settings %s"
                      % (family, ", ".join(sorted(config.train))))

        subruns = self._assignments()
        self._invalidate("train")
        jobs: List[Tuple[str, str, List[str], Callable[..., CheckpointStore], Tuple[Any, ...]]] = []
        seeds: Dict[str, int] = {}
        for name, assignment in subruns:
            view = self.evaluation_view(collection, assignment)
            evaluated = [task for task in view.evaluated_tasks if task not in assignment.dropped]
            if family in MULTITASK_FAMILIES:
                retained = [task for task in collection.task_names
                            if task in assignment.buckets and task not in assignment.dropped]
                matrix = assemble_dense(collection, assignment, TRAIN, class_mode).select_tasks(retained)
                weights = task_weights(collection, assignment, INVERSE_SIZE if family == "w-mtnn" else UNIFORM)
                seed = derive_seed(config.seed, len(jobs) + 1)
                seeds["%s/%s" % (name, SHARED_MODEL)] = seed
                jobs.append((name, SHARED_MODEL, evaluated, _train_network,
                             (matrix, arch, replace(base_train, seed=seed), [weights[task] for task in retained])))
                continue
            for task_name in evaluated:
                key = "%s-%s" % (family, task_name)
                seed = derive_seed(config.seed, len(jobs) + 1)
                seeds["%s/%s" % (name, key)] = seed
                if family == "stnn":
                    matrix = assemble_dense(collection.subset([task_name]), assignment, TRAIN, class_mode)
                    jobs.append((name, key, [task_name], _train_network,
                                 (matrix, arch, replace(base_train, seed=seed), None)))
                else:
                    task = collection.task(task_name)
                    rows = assignment.rows(task_name, TRAIN)
                    features = fingerprint_matrix([task.records[row].fingerprint for row in rows], collection.width)
                    jobs.append((name, key, [task_name], _train_baseline,
                                 (family, features, task.labels[rows], seed)))

        self.manifest["job_seeds"] = seeds
        try:
            stores = self.parallel(_run_job, [("%s/%s" % (name, key), function, args)
                                              for name, key, _, function, args in jobs])
        except NumericError as exc:
            job = exc.details.get("job", "")
            if exc.store is not None and job:
                exc.store.save(os.path.join(self.run_dir, job.split("/")[0], MODELS, job.split("/")[1]))
            self.note("training %s diverged: %s" % (job, exc))
            self.write_manifest()
            raise

        trained: Dict[str, Dict[str, CheckpointStore]] = {}
        models: Dict[str, Dict[str, List[str]]] = {}
        for (name, key, covered, _, _), store in zip(jobs, stores):
            store.save(os.path.join(self.run_dir, name, MODELS, key))
            models.setdefault(name, {})[key] = covered
            for task_name in covered:
                trained.setdefault(name, {})[task_name] = store
        self.manifest["models"] = models
        self.trained = trained
        self.mark_stage("train")
        return trained

    def _stores(self, name: str) -> Dict[str, CheckpointStore]:
        if self.trained is not None:
            return self.trained.get(name, {})
        if "models" not in self.manifest:
            return self.train().get(name, {})
        stores: Dict[str, CheckpointStore] = {}
        for key, covered in self.manifest["models"].get(name, {}).items():
            store = CheckpointStore.load(os.path.join(self.run_dir, name, MODELS, key))
            for task_name in covered:
                stores[task_name] = store
        return stores

    def evaluate(self) -> EvalResult:
        """Evaluate every sub-run and combine them into the run result.

        Temporal regimes select checkpoints on validation AUC; a non-leaky run
        reports each focus task from its own sub-run. Random k-fold reports
        the fold-mean test AUC at the final checkpoint, or at the common
        target step with ``evaluation: target-step``.
        """
        config = self.require_config()
        collection = self._collection()
        family = config.model
        label = self.arch_label()
        class_mode = self._class_mode()
        selection = SELECT_FINAL if config.evaluation_mode == SELECT_TARGET_STEP else config.evaluation_mode

        results = []
        subruns = self._assignments()
        for name, assignment in subruns:
            view = self.evaluation_view(collection, assignment)
            stores = self._stores(name)
            result = evaluate(view, assignment, family, label, stores, selection, class_mode)
            result.write_csv(self.run_path(name, RESULTS))
            for message in result.notes:
                self.note("%s: %s" % (name, message))
            if family in NN_FAMILIES:
                self._write_curves(name, view, assignment, stores)
            results.append(result)

        if config.regime == RANDOM_KFOLD:
            if config.evaluation_mode == SELECT_TARGET_STEP and family in NN_FAMILIES:
                combined = self._target_step(collection, subruns, results)
            else:
                combined = fold_mean(results)
        elif config.regime == NON_LEAKY:
            combined = EvalResult(family, label, config.regime)
            for result in results:
                for evaluation in result.tasks.values():
                    combined.add(evaluation)
        else:
            combined = results[0]
        combined.write_csv(self.run_path(RESULTS))
        self.mark_stage("eval")
        return combined

    def _write_curves(self, name: str, view: Collection, assignment: SplitAssignment,
                      stores: Dict[str, CheckpointStore]) -> None:
        subset = TEST if self.require_config().regime == RANDOM_KFOLD else VALID
        matrix = assemble_dense(view, assignment, subset, self._class_mode(), class_weighting=False)
        curves = []
        seen: List[int] = []
        for store in stores.values():
            if id(store) in seen:
                continue
            seen.append(id(store))
            covered = [task for task, other in stores.items() if other is store and task in view.evaluated_tasks]
            curves += checkpoint_aucs(store, matrix, covered)
        write_curves(curves, self.run_path(name, CURVES))

    def _target_step(self, collection: Collection, subruns: List[Tuple[str, SplitAssignment]],
                     results: List[EvalResult]) -> EvalResult:
        config = self.require_config()
        combined = EvalResult(config.model, self.arch_label(), config.regime)
        tests = [assemble_dense(collection, assignment, TEST, self._class_mode(), class_weighting=False)
                 for _, assignment in subruns]
        per_fold = [self._stores(name) for name, _ in subruns]
        for task_name in collection.evaluated_tasks:
            evaluations = [result.tasks[task_name] for result in results if task_name in result.tasks]
            n_active = sum(evaluation.n_active for evaluation in evaluations)
            n_inactive = sum(evaluation.n_inactive for evaluation in evaluations)
            try:
                step, auc = target_step_eval([stores[task_name] for stores in per_fold], tests, task_name)
                combined.add(TaskEval(task_name, auc, step, n_active, n_inactive))
            except (EvalError, KeyError) as exc:
                combined.notes.append("%s: target-step evaluation failed: %s" % (task_name, exc))
                combined.add(TaskEval(task_name, None, None, n_active, n_inactive,
                                      error=getattr(exc, "code", "MissingModel")))
        return combined

    def run(self) -> str:
        """Featurize, split, train and evaluate; returns the run directory.

        A failing stage is recorded in the manifest and the error re-raised;
        artifacts of the completed stages stay in place.
        """
        self.require_config()
        stage = "featurize"
        try:
            self.featurize()
            stage = "split"
            self.split()
            stage = "train"
            self.train()
            stage = "eval"
            self.evaluate()
        except QSARError as exc:
            self.manifest["failed"] = {"stage": stage, "code": exc.code, "message": exc.message}
            self.write_manifest()
            raise
        return self.run_dir
