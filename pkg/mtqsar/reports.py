# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

from typing import Dict, List, Optional, Sequence
import csv
import logging
import os

from .base import RESULTS, BaseMixin
from .evaluation import EvalResult
from .qsarerror import AnalysisError, StatsError
from .stats import DEFAULT_ALPHA, ComparisonResult, compare, median_auc, read_comparisons, write_comparisons

logger = logging.getLogger(__name__)

SUMMARY_HEADER = ("model_a", "model_b", "median_auc_a", "median_delta_auc", "k", "n", "ci", "significant")


class ReportsMixin(BaseMixin):
    @classmethod
    def run_result(cls, run_dir: str) -> EvalResult:
        """The combined evaluation result of a finished run.

        :raises AnalysisError: ``MissingArtifact`` if the run was not evaluated
        """
        path = os.path.join(run_dir, RESULTS)
        if not os.path.isfile(path):
            raise AnalysisError(message="run %s has no evaluation results" % run_dir, code="MissingArtifact")
        return EvalResult.read_csv(path)

    @staticmethod
    def model_name(result: EvalResult) -> str:
        if result.arch and result.arch != "-":
            return "%s %s" % (result.model, result.arch)
        return result.model

    def compare_runs(self, run_a: str, run_b: str, alpha: float = DEFAULT_ALPHA,
                     out: Optional[str] = None) -> ComparisonResult:
        """Compare the per-task test AUCs of two runs and write the table row.

        :param out: comparison CSV to write (default
            ``<run_a>/compare-<name of run_b>.csv``)
        :raises StatsError: ``TaskMismatch`` if the runs cover different tasks
        """
        first = self.run_result(run_a)
        second = self.run_result(run_b)
        result = compare(first, second, alpha, self.model_name(first), self.model_name(second))
        if out is None:
            out = os.path.join(run_a, "compare-%s.csv" % os.path.basename(os.path.normpath(run_b)))
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        write_comparisons([result], out)
        logger.info(f"{result.model_a} vs {result.model_b}: k={result.k} n={result.n} "
                    f"interval=({result.ci[0]:.2f}, {result.ci[1]:.2f})")
        return result

    def report(self, comparisons: Sequence[str], out: str, runs: Sequence[str] = ()) -> str:
        """Concatenate comparison CSVs into one summary table.

        :param comparisons: comparison CSV files, one or more rows each
        :param out: summary CSV to write
        :param runs: finished runs; the median AUC of ``model_a`` is filled in
            where one of them produced it
        """
        medians: Dict[str, float] = {}
        for run_dir in runs:
            result = self.run_result(run_dir)
            try:
                medians[self.model_name(result)] = median_auc(result)
            except StatsError:
                logger.warning(f"run {run_dir} has no defined AUCs")

        rows: List[List[str]] = []
        for path in comparisons:
            for row in read_comparisons(path):
                median = medians.get(row["model_a"])
                rows.append([
                    row["model_a"],
                    row["model_b"],
                    "" if median is None else "%.3f" % median,
                    "%.3f" % float(row["median_delta_auc"]),
                    row["k"],
                    row["n"],
                    "(%.2f, %.2f)" % (float(row["ci_lo"]), float(row["ci_hi"])),
                    "*" if row["significant"] == "true" else "",
                ])
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as fout:
            writer = csv.writer(fout, lineterminator="\n")
            writer.writerow(SUMMARY_HEADER)
            writer.writerows(rows)
        return out
