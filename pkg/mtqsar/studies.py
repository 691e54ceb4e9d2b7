# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

from typing import List, Optional, Sequence, Tuple
import os

from .analysis import (RELATEDNESS_HEADER, REGRESSION_HEADER, ShiftHistogram, covariate_shift,
                       label_correlation, merge_histograms, relatedness, size_benefit_regression, write_rows,
                       write_shift_summary)
from .data import Collection
from .qsarerror import AnalysisError
from .reports import ReportsMixin
from .split import TRAIN, SplitAssignment, read_assignment
from .stats import paired_deltas

RELATEDNESS = "relatedness"
SIZE_BENEFIT = "size-benefit"
COVARIATE_SHIFT = "covariate-shift"
ANALYSES = (RELATEDNESS, SIZE_BENEFIT, COVARIATE_SHIFT)

ANALYSIS_DIR = "analysis"
POINTS_HEADER = ("task", "train_size", "delta_auc")


class StudiesMixin(ReportsMixin):
    @classmethod
    def run_assignments(cls, run_dir: str, collection: Collection) -> List[Tuple[str, SplitAssignment]]:
        manifest = cls.read_manifest(run_dir)
        if "subruns" not in manifest:
            raise AnalysisError(message="run %s was not split" % run_dir, code="MissingArtifact")
        return [(entry["name"], read_assignment(os.path.join(run_dir, entry["name"], "assignment.csv"), collection))
                for entry in manifest["subruns"]]

    @staticmethod
    def _evaluates(assignment: SplitAssignment, task: str) -> bool:
        return task in assignment.buckets and task not in assignment.dropped and assignment.focus in (None, task)

    def analyze(self, runs: Sequence[str], which: str, out: Optional[str] = None, tau: float = 0.5) -> List[str]:
        """Run one of the dataset analyses and write its CSV files.

        ``relatedness`` scores every task pair of the first run,
        ``size-benefit`` regresses the AUC difference of the first run over
        the second against training size and ``covariate-shift`` writes one
        similarity histogram per run and task plus a summary.

        :param out: output directory (default ``<first run>/analysis``)
        :return: the files written
        :raises AnalysisError: ``MissingArtifact`` if a run lacks what the
            analysis needs
        """
        if which not in ANALYSES:
            raise AnalysisError(message="unknown analysis " + repr(which), code="InvalidAnalysis")
        if not runs:
            raise AnalysisError(message="no runs given", code="MissingArtifact")
        out = out or os.path.join(runs[0], ANALYSIS_DIR)
        os.makedirs(out, exist_ok=True)
        if which == RELATEDNESS:
            return [self._relatedness(runs[0], out, tau)]
        if which == SIZE_BENEFIT:
            if len(runs) != 2:
                raise AnalysisError(message="size-benefit needs a multitask and a single-task run",
                                    code="MissingArtifact")
            return self._size_benefit(runs[0], runs[1], out)
        return self._covariate_shift(runs, out)

    def _relatedness(self, run_dir: str, out: str, tau: float) -> str:
        collection = self.load_run_collection(run_dir)
        rows = []
        for first_index, first in enumerate(collection.tasks):
            for second in collection.tasks[first_index:]:
                report = relatedness(first, second, tau, jobs=self.jobs)
                correlation = label_correlation(first, second)
                rows.append(report.row() + ["" if correlation is None else repr(correlation)])
        path = os.path.join(out, "relatedness.csv")
        write_rows(RELATEDNESS_HEADER + ("label_correlation",), rows, path)
        return path

    def _size_benefit(self, multitask_run: str, single_run: str, out: str) -> List[str]:
        deltas = paired_deltas(self.run_result(multitask_run), self.run_result(single_run))
        collection = self.load_run_collection(multitask_run)
        assignments = self.run_assignments(multitask_run, collection)
        points = []
        for task, delta in deltas.items():
            sizes = [len(assignment.rows(task, TRAIN)) for _, assignment in assignments
                     if self._evaluates(assignment, task)]
            if not sizes:
                raise AnalysisError(message="no training split for task " + task, code="MissingArtifact")
            points.append((task, sum(sizes) / len(sizes), delta))
        fit = size_benefit_regression([(size, delta) for _, size, delta in points])
        points_path = os.path.join(out, "size_benefit_points.csv")
        fit_path = os.path.join(out, "size_benefit_fit.csv")
        write_rows(POINTS_HEADER, [[task, repr(size), repr(delta)] for task, size, delta in points], points_path)
        write_rows(REGRESSION_HEADER, [fit.row()], fit_path)
        return [points_path, fit_path]

    def _covariate_shift(self, runs: Sequence[str], out: str) -> List[str]:
        written = []
        summary: List[ShiftHistogram] = []
        for run_dir in runs:
            collection = self.load_run_collection(run_dir)
            assignments = self.run_assignments(run_dir, collection)
            for task in collection.evaluated_tasks:
                histograms = [covariate_shift(collection.task(task), assignment)
                              for _, assignment in assignments if self._evaluates(assignment, task)]
                if not histograms:
                    continue
                histogram = merge_histograms(histograms)
                path = os.path.join(out, "shift-%s-%s.csv" % (histogram.regime, task))
                histogram.write_csv(path)
                written.append(path)
                summary.append(histogram)
        if not summary:
            raise AnalysisError(message="no evaluated task to analyze", code="MissingArtifact")
        summary_path = os.path.join(out, "shift_summary.csv")
        write_shift_summary(summary, summary_path)
        return written + [summary_path]
