# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

import contextlib
import csv
import io
import json
import os
import shutil
import statistics
import sys
import tempfile
import unittest

sys.path.insert(1, "..")

from mtqsar.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, exit_code, main  # noqa: E402
from mtqsar.evaluation import EvalResult, TaskEval  # noqa: E402
from mtqsar.experiment_api import Experiment  # noqa: E402
from mtqsar.qsarerror import AnalysisError, ConfigError, DataError, NumericError  # noqa: E402
from mtqsar.stats import compare, read_comparisons  # noqa: E402

SYNTHETIC = {
    "tasks": [
        {"name": "A", "size": 200, "rho": 0.9, "noise": 0.05},
        {"name": "B", "size": 260, "rho": 0.9, "noise": 0.05},
        {"name": "C", "size": 320, "rho": 0.8, "noise": 0.05},
    ],
    "drift": 2.0,
}
QUICK_TRAINING = {"max_steps": 30, "checkpoint_interval": 10, "batch_size": 32, "learning_rate": 0.05}


def write_config(directory, name, **values):
    data = {
        "seed": 11,
        "name": name,
        "synthetic": SYNTHETIC,
        "architecture": "16",
        "train": QUICK_TRAINING,
        "fingerprint": {"radius": 2, "width": 256},
        "output": os.path.join(directory, "runs"),
    }
    data.update(values)
    path = os.path.join(directory, name + ".json")
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(data, fout)
    return path


def read_bytes(path):
    with open(path, "rb") as fin:
        return fin.read()


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fin:
        return list(csv.DictReader(fin))


def quiet_main(argv):
    with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
        return main(argv)


class ExperimentRunTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.wmtnn = Experiment.from_file(write_config(cls.tmp, "wmtnn")).run()
        cls.again = Experiment.from_file(write_config(cls.tmp, "wmtnn"), out=os.path.join(cls.tmp, "again")).run()
        cls.stnn = Experiment.from_file(write_config(cls.tmp, "stnn", model="stnn")).run()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def test_run_directory(self):
        manifest = Experiment.read_manifest(self.wmtnn)
        self.assertEqual(["featurize", "split", "train", "eval"], manifest["stages"])
        self.assertEqual(11, manifest["seed"])
        self.assertEqual(["A", "B", "C"], manifest["tasks"])
        self.assertEqual(["main"], [entry["name"] for entry in manifest["subruns"]])
        self.assertEqual({"main": {"mtnn": ["A", "B", "C"]}}, manifest["models"])
        for name in ("fingerprints.csv", "results.csv", "data/A.csv", "main/assignment.csv", "main/curves.csv",
                     "main/models/mtnn/manifest.json", "main/models/mtnn/step-000000030.params"):
            self.assertTrue(os.path.isfile(os.path.join(self.wmtnn, name)), name)
        result = EvalResult.read_csv(os.path.join(self.wmtnn, "results.csv"))
        self.assertEqual(["A", "B", "C"], list(result.tasks))
        self.assertEqual(("w-mtnn", "(16)", "leaky-temporal"), (result.model, result.arch, result.regime))
        for evaluation in result.tasks.values():
            self.assertIn(evaluation.step, (10, 20, 30))

        stnn = Experiment.read_manifest(self.stnn)
        self.assertEqual(["stnn-A", "stnn-B", "stnn-C"], sorted(stnn["models"]["main"]))
        self.assertEqual(3, len(set(stnn["job_seeds"].values())))

    def test_same_seed_same_files(self):
        for name in ("results.csv", "main/results.csv", "main/curves.csv", "main/assignment.csv",
                     "fingerprints.csv", "main/models/mtnn/step-000000030.params"):
            self.assertEqual(read_bytes(os.path.join(self.wmtnn, name)), read_bytes(os.path.join(self.again, name)),
                             name)
        first = os.path.join(self.tmp, "first.csv")
        second = os.path.join(self.tmp, "second.csv")
        Experiment().compare_runs(self.wmtnn, self.stnn, out=first)
        Experiment().compare_runs(self.again, self.stnn, out=second)
        self.assertEqual(read_bytes(first), read_bytes(second))

    def test_other_seed_other_models(self):
        other = Experiment.from_file(write_config(self.tmp, "wmtnn"), seed=12,
                                     out=os.path.join(self.tmp, "other")).run()
        name = "main/models/mtnn/step-000000030.params"
        self.assertNotEqual(read_bytes(os.path.join(self.wmtnn, name)), read_bytes(os.path.join(other, name)))

    def test_stage_by_stage(self):
        path = write_config(self.tmp, "wmtnn")
        out = os.path.join(self.tmp, "staged")
        Experiment.from_file(path, out=out).featurize()
        Experiment.from_file(path, out=out).split()
        Experiment.from_file(path, out=out).train()
        run_dir = Experiment.from_file(path, out=out).run_dir
        Experiment.from_file(path, out=out).evaluate()
        self.assertEqual(["featurize", "split", "train", "eval"], Experiment.read_manifest(run_dir)["stages"])
        self.assertEqual(read_bytes(os.path.join(self.wmtnn, "results.csv")),
                         read_bytes(os.path.join(run_dir, "results.csv")))

    def test_featurize_again_starts_a_new_run(self):
        out = os.path.join(self.tmp, "refeaturized")
        run_dir = Experiment.from_file(write_config(self.tmp, "refeaturize"), out=out).run()
        self.assertTrue(os.path.isdir(os.path.join(run_dir, "main", "models")))

        wide_dir = os.path.join(self.tmp, "wide")
        os.makedirs(wide_dir, exist_ok=True)
        wider = write_config(wide_dir, "refeaturize", seed=99, fingerprint={"radius": 2, "width": 512})
        Experiment.from_file(wider, out=out).featurize()
        manifest = Experiment.read_manifest(run_dir)
        self.assertEqual(99, manifest["seed"])
        self.assertEqual({"radius": 2, "width": 512}, manifest["config"]["fingerprint"])
        self.assertEqual(["featurize"], manifest["stages"])
        for key in ("subruns", "models", "job_seeds", "failed"):
            self.assertNotIn(key, manifest)
        self.assertFalse(os.path.exists(os.path.join(run_dir, "main")))
        self.assertFalse(os.path.exists(os.path.join(run_dir, "results.csv")))
        collection = Experiment.load_run_collection(run_dir)
        self.assertEqual(512, collection.width)
        self.assertEqual(("A", "B", "C"), collection.task_names)

        result = Experiment.from_file(wider, out=out).evaluate()
        self.assertEqual(["featurize", "split", "train", "eval"], Experiment.read_manifest(run_dir)["stages"])
        self.assertEqual({"A", "B", "C"}, set(result.tasks))

    def test_split_again_drops_models_and_results(self):
        path = write_config(self.tmp, "wmtnn")
        out = os.path.join(self.tmp, "resplit")
        run_dir = Experiment.from_file(path, out=out).run()
        Experiment.from_file(path, out=out).split()
        manifest = Experiment.read_manifest(run_dir)
        self.assertEqual(["featurize", "split"], manifest["stages"])
        self.assertNotIn("models", manifest)
        self.assertNotIn("job_seeds", manifest)
        self.assertTrue(os.path.isfile(os.path.join(run_dir, "main", "assignment.csv")))
        self.assertFalse(os.path.exists(os.path.join(run_dir, "main", "models")))
        self.assertFalse(os.path.exists(os.path.join(run_dir, "results.csv")))

        Experiment.from_file(path, out=out).train()
        self.assertEqual(["featurize", "split", "train"], Experiment.read_manifest(run_dir)["stages"])
        Experiment.from_file(path, out=out).evaluate()
        self.assertEqual(read_bytes(os.path.join(self.wmtnn, "results.csv")),
                         read_bytes(os.path.join(run_dir, "results.csv")))

    def test_compare_and_report(self):
        comparison_path = os.path.join(self.tmp, "compare", "wmtnn-stnn.csv")
        result = Experiment().compare_runs(self.wmtnn, self.stnn, out=comparison_path)
        self.assertEqual(("w-mtnn (16)", "stnn (16)"), (result.model_a, result.model_b))
        self.assertLessEqual(result.n, 3)
        rows = read_comparisons(comparison_path)
        self.assertEqual(1, len(rows))

        summary_path = Experiment().report([comparison_path, comparison_path], os.path.join(self.tmp, "table.csv"),
                                           [self.wmtnn])
        summary = read_rows(summary_path)
        self.assertEqual(2, len(summary))
        self.assertEqual("w-mtnn (16)", summary[0]["model_a"])
        self.assertNotEqual("", summary[0]["median_auc_a"])
        self.assertTrue(summary[0]["ci"].startswith("("))

    def test_analyses(self):
        out = os.path.join(self.tmp, "analysis")
        (relatedness_path,) = Experiment().analyze([self.wmtnn], "relatedness", out, tau=0.5)
        rows = read_rows(relatedness_path)
        self.assertEqual(6, len(rows))
        self.assertEqual([("A", "A"), ("A", "B"), ("A", "C")], [(row["task_a"], row["task_b"]) for row in rows[:3]])

        paths = Experiment().analyze([self.wmtnn, self.stnn], "size-benefit", out)
        self.assertEqual(["size_benefit_points.csv", "size_benefit_fit.csv"], [os.path.basename(p) for p in paths])
        self.assertEqual(3, len(read_rows(paths[0])))

        paths = Experiment().analyze([self.wmtnn], "covariate-shift", out)
        self.assertEqual(4, len(paths))
        self.assertEqual(["A", "B", "C"], [row["task"] for row in read_rows(paths[-1])])

        with self.assertRaises(AnalysisError) as context:
            Experiment().analyze([self.wmtnn], "size-benefit", out)
        self.assertEqual("MissingArtifact", context.exception.code)
        with self.assertRaises(AnalysisError) as context:
            Experiment().analyze([os.path.join(self.tmp, "nowhere")], "relatedness", out)
        self.assertEqual("MissingArtifact", context.exception.code)


class RegimeTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_non_leaky_focus_runs(self):
        path = write_config(self.tmp, "nonleaky", model="logreg", regime="non-leaky-temporal", focus_tasks=["A", "C"])
        run_dir = Experiment.from_file(path).run()
        manifest = Experiment.read_manifest(run_dir)
        self.assertEqual(["focus-A", "focus-C"], [entry["name"] for entry in manifest["subruns"]])
        self.assertEqual({"focus-A": {"logreg-A": ["A"]}, "focus-C": {"logreg-C": ["C"]}}, manifest["models"])
        result = EvalResult.read_csv(os.path.join(run_dir, "results.csv"))
        self.assertEqual(["A", "C"], list(result.tasks))
        self.assertEqual("-", result.arch)

    def test_random_kfold_at_target_step(self):
        path = write_config(self.tmp, "kfold", model="stnn", regime="random-kfold", folds=3, evaluation="target-step")
        run_dir = Experiment.from_file(path).run()
        manifest = Experiment.read_manifest(run_dir)
        self.assertEqual(3, len(manifest["subruns"]))
        result = EvalResult.read_csv(os.path.join(run_dir, "results.csv"))
        self.assertEqual(["A", "B", "C"], list(result.tasks))
        for evaluation in result.tasks.values():
            self.assertIn(evaluation.step, (10, 20, 30))
            self.assertIsNotNone(evaluation.auc)
        rows = read_rows(os.path.join(run_dir, "fold-0", "assignment.csv"))
        self.assertEqual(200, sum(row["task"] == "A" for row in rows))
        self.assertEqual({"train", "test"}, {row["bucket"] for row in rows})

    def test_random_forest_fold_mean(self):
        path = write_config(self.tmp, "forest", model="forest", regime="random-kfold", folds=2, train={},
                            synthetic={"tasks": [{"name": "A", "size": 80}, {"name": "B", "size": 60}]})
        run_dir = Experiment.from_file(path, jobs=2).run()
        result = EvalResult.read_csv(os.path.join(run_dir, "results.csv"))
        self.assertEqual(("forest", "-", "random-kfold"), (result.model, result.arch, result.regime))
        self.assertEqual(80, result.tasks["A"].n_active + result.tasks["A"].n_inactive)

    def test_synthesize_then_run_from_files(self):
        path = write_config(self.tmp, "synthetic")
        paths = Experiment.from_file(path).synthesize(os.path.join(self.tmp, "assays"))
        self.assertEqual(["A.csv", "B.csv", "C.csv"], [os.path.basename(p) for p in paths])
        files = write_config(self.tmp, "files", synthetic=None, datasets=paths[:2], side_datasets=paths[2:],
                             model="u-mtnn")
        run_dir = Experiment.from_file(files).run()
        manifest = Experiment.read_manifest(run_dir)
        self.assertEqual(["C"], manifest["side_tasks"])
        self.assertEqual(sorted(paths), sorted(manifest["inputs"]))
        result = EvalResult.read_csv(os.path.join(run_dir, "results.csv"))
        self.assertEqual(["A", "B"], list(result.tasks))

    def test_synthesize_needs_synthetic_section(self):
        path = write_config(self.tmp, "files", synthetic=None, datasets=["A.csv"])
        with self.assertRaises(ConfigError) as context:
            Experiment.from_file(path).synthesize()
        self.assertEqual("InvalidConfig", context.exception.code)


class CommandLineTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_pipeline(self):
        path = write_config(self.tmp, "logreg", model="logreg")
        out = os.path.join(self.tmp, "cli")
        self.assertEqual(EXIT_OK, quiet_main(["-q", "run", "--config", path, "--out", out]))
        self.assertEqual(EXIT_OK, quiet_main(["-q", "run", "--config", path, "--out", out, "--seed", "3",
                                              "--jobs", "2"]))
        run_dir = os.path.join(out, "logreg")
        self.assertEqual(3, Experiment.read_manifest(run_dir)["seed"])

        stnn = write_config(self.tmp, "stnn", model="stnn")
        self.assertEqual(EXIT_OK, quiet_main(["-q", "featurize", "--config", stnn, "--out", out]))
        self.assertEqual(EXIT_OK, quiet_main(["-q", "split", "--config", stnn, "--out", out]))
        self.assertEqual(EXIT_OK, quiet_main(["-q", "train", "--config", stnn, "--out", out]))
        self.assertEqual(EXIT_OK, quiet_main(["-q", "eval", "--config", stnn, "--out", out]))

        comparison = os.path.join(self.tmp, "compare.csv")
        self.assertEqual(EXIT_OK, quiet_main(["compare", run_dir, os.path.join(out, "stnn"), "--out", comparison]))
        self.assertEqual(EXIT_OK, quiet_main(["report", comparison, "--runs", run_dir,
                                              "--out", os.path.join(self.tmp, "table.csv")]))
        self.assertEqual(EXIT_OK, quiet_main(["analyze", "covariate-shift", run_dir, "--out",
                                              os.path.join(self.tmp, "shift")]))
        self.assertTrue(os.path.isfile(os.path.join(self.tmp, "shift", "shift_summary.csv")))

        synthetic = os.path.join(self.tmp, "assays")
        self.assertEqual(EXIT_OK, quiet_main(["synth", "--config", path, "--out", synthetic]))
        self.assertTrue(os.path.isfile(os.path.join(synthetic, "B.csv")))

    def test_config_errors(self):
        path = os.path.join(self.tmp, "broken.json")
        with open(path, "w", encoding="utf-8") as fout:
            json.dump({"synthetic": SYNTHETIC}, fout)
        self.assertEqual(EXIT_CONFIG, quiet_main(["run", "--config", path]))
        self.assertEqual(EXIT_CONFIG, quiet_main(["run", "--config", os.path.join(self.tmp, "missing.json")]))
        self.assertEqual(EXIT_CONFIG, quiet_main(["run", "--config", write_config(self.tmp, "ok"), "--jobs", "0"]))

    def test_data_errors(self):
        assay = os.path.join(self.tmp, "bad.csv")
        with open(assay, "w", encoding="utf-8") as fout:
            fout.write("compound_id,smiles,label,date\nX1,CCO,active,2015-01-01\nX2,C1CC,inactive,2015-02-01\n")
        path = write_config(self.tmp, "bad", synthetic=None, datasets=[assay])
        self.assertEqual(EXIT_DATA, quiet_main(["run", "--config", path]))
        manifest = Experiment.read_manifest(os.path.join(self.tmp, "runs", "bad"))
        self.assertEqual({"stage": "featurize", "code": "UnparseableSmiles"},
                         {key: manifest["failed"][key] for key in ("stage", "code")})
        self.assertEqual(EXIT_DATA, quiet_main(["compare", os.path.join(self.tmp, "x"), os.path.join(self.tmp, "y")]))

    def test_corrupt_artifacts(self):
        runs = []
        for name in ("x", "y"):
            os.makedirs(os.path.join(self.tmp, name))
            with open(os.path.join(self.tmp, name, "results.csv"), "w", encoding="utf-8") as fout:
                fout.write("task,model,arch,regime,step,auc,n_active,n_inactive\n"
                           "A,logreg,-,leaky-temporal,zero,0.75,4,6\n")
            runs.append(os.path.join(self.tmp, name))
        self.assertEqual(EXIT_DATA, quiet_main(["compare"] + runs))
        bad_width = write_config(self.tmp, "wide", fingerprint={"width": "256"})
        self.assertEqual(EXIT_CONFIG, quiet_main(["featurize", "--config", bad_width]))

    def test_exit_codes(self):
        self.assertEqual(EXIT_CONFIG, exit_code(ConfigError(message="m", code="InvalidConfig")))
        self.assertEqual(EXIT_DATA, exit_code(DataError(message="m", code="MalformedRow")))
        self.assertEqual(EXIT_NUMERIC, exit_code(NumericError(message="m", code="NonFiniteLoss")))


def focus_results(tasks, architecture, train, seeds):
    """Focus task test AUC of W-MTNN and of STNN, one pseudo-task per seed."""
    tmp = tempfile.mkdtemp()
    label = "(%s)" % ", ".join(architecture.split(","))
    multitask = EvalResult("w-mtnn", label, "leaky-temporal")
    single = EvalResult("stnn", label, "leaky-temporal")
    try:
        common = {"synthetic": {"tasks": tasks}, "architecture": architecture, "train": train}
        for seed in range(seeds):
            for model, result, extra in (("w-mtnn", multitask, {}), ("stnn", single, {"tasks": ["focus"]})):
                path = write_config(tmp, model, seed=seed, model=model, **common, **extra)
                run_dir = Experiment.from_file(path, out=os.path.join(tmp, "seed%d" % seed)).run()
                focus = EvalResult.read_csv(os.path.join(run_dir, "results.csv")).tasks["focus"]
                result.add(TaskEval("seed%d" % seed, focus.auc, focus.step, focus.n_active, focus.n_inactive))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return multitask, single


class SmallMultitaskEffectTest(unittest.TestCase):
    """A small focus task next to two large side tasks with the same labels."""

    def test_multitask_helps_small_focus_task(self):
        tasks = [{"name": "focus", "size": 150, "rho": 1.0, "noise": 0.0, "active_fraction": 0.5},
                 {"name": "side0", "size": 1500, "rho": 1.0, "noise": 0.0, "active_fraction": 0.5},
                 {"name": "side1", "size": 1000, "rho": 1.0, "noise": 0.0, "active_fraction": 0.5}]
        train = {"max_steps": 400, "checkpoint_interval": 100, "batch_size": 64, "learning_rate": 0.05,
                 "dropout": 0.1}
        multitask, single = focus_results(tasks, "32", train, seeds=3)
        self.assertEqual(3, len(multitask.aucs()))
        self.assertGreater(statistics.median(multitask.aucs().values()),
                           statistics.median(single.aucs().values()))
        self.assertGreater(compare(multitask, single).median_delta, 0.0)


@unittest.skipUnless(os.environ.get("MTQSAR_SLOW_TESTS"), "set MTQSAR_SLOW_TESTS=1 to run")
class MultitaskEffectTest(unittest.TestCase):
    """Five tasks sharing one latent signal: the weighted multitask network
    should beat the single-task network on the small focus task."""

    SEEDS = 10

    def test_multitask_helps_small_focus_task(self):
        tasks = [{"name": "focus", "size": 286, "rho": 0.9, "noise": 0.05}]
        tasks += [{"name": "side%d" % index, "size": 2858, "rho": 0.9, "noise": 0.05} for index in range(4)]
        multitask, single = focus_results(tasks, "256,64", {"max_steps": 20_000, "checkpoint_interval": 2_000},
                                          self.SEEDS)
        self.assertGreater(statistics.median(multitask.aucs().values()),
                           statistics.median(single.aucs().values()))
        comparison = compare(multitask, single)
        self.assertGreater(comparison.k / comparison.n, 0.5)


if __name__ == "__main__":
    unittest.main()
