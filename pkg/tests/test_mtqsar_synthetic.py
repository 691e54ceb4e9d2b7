# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

import datetime
import sys
import unittest

sys.path.insert(1, "..")

from mtqsar.chem import featurize  # noqa: E402
from mtqsar.qsarerror import DataError  # noqa: E402
from mtqsar.synthetic import SyntheticSpec, SyntheticTask, drifted_spec, generate_synthetic  # noqa: E402


class SyntheticSpecTest(unittest.TestCase):
    def test_from_dict(self):
        spec = SyntheticSpec.from_dict({"tasks": [{"name": "A", "size": 50, "rho": 0.5}], "drift": 2.0,
                                        "width": 256})
        self.assertEqual("A", spec.tasks[0].name)
        self.assertEqual(50, spec.effective_pool_size)
        self.assertEqual(spec.to_dict(), SyntheticSpec.from_dict(spec.to_dict()).to_dict())

    def test_invalid_specs(self):
        bad = (
            {"tasks": []},
            {"tasks": [{"name": "A", "size": 50}], "colour": "red"},
            {"tasks": [{"name": "A", "size": 50, "shape": 1}]},
            {"tasks": [{"name": "A", "size": 1}]},
            {"tasks": [{"name": "A", "size": 50, "rho": 1.5}]},
            {"tasks": [{"name": "A", "size": 50, "noise": 0.7}]},
            {"tasks": [{"name": "A", "size": 50, "active_fraction": 1.0}]},
            {"tasks": [{"name": "A", "size": 50}, {"name": "A", "size": 20}]},
            {"tasks": [{"name": "A", "size": 50, "start": "2015-01-01", "end": "2014-01-01"}]},
            {"tasks": [{"name": "A", "size": 50, "end": "yesterday"}]},
            {"tasks": [{"name": "A", "size": 50}], "pool_size": 10},
            {"tasks": [{"name": "A", "size": 50}], "drift": -1.0},
        )
        for data in bad:
            with self.assertRaises(DataError, msg=str(data)) as context:
                SyntheticSpec.from_dict(data)
            self.assertEqual("InvalidSpec", context.exception.code)


class GenerateSyntheticTest(unittest.TestCase):
    def test_same_seed_same_collection(self):
        spec = drifted_spec({"A": 60, "B": 90}, width=256)
        first = generate_synthetic(spec, 17)
        second = generate_synthetic(spec, 17)
        self.assertEqual(first.tasks, second.tasks)
        self.assertNotEqual(first.tasks, generate_synthetic(spec, 18).tasks)

    def test_records(self):
        spec = drifted_spec({"A": 120, "B": 80}, width=256, side_end="2024-06-30")
        collection = generate_synthetic(spec, 3)
        self.assertEqual(("A", "B"), collection.task_names)
        self.assertEqual([120, 80], [len(task) for task in collection.tasks])
        for task in collection.tasks:
            self.assertEqual(len(task), len({record.compound_id for record in task.records}))
            self.assertGreater(task.n_actives, 0)
            self.assertGreater(task.n_inactives, 0)
            for record in task.records[:10]:
                self.assertEqual(featurize(record.smiles, 2, 256), record.fingerprint)
        first_dates = [record.date for record in collection.task("A").records]
        second_dates = [record.date for record in collection.task("B").records]
        self.assertLessEqual(max(first_dates), datetime.date(2019, 12, 31))
        self.assertGreaterEqual(min(first_dates + second_dates), datetime.date(2010, 1, 1))
        self.assertLessEqual(max(second_dates), datetime.date(2024, 6, 30))

    def test_fully_correlated_tasks_agree(self):
        spec = SyntheticSpec([SyntheticTask("A", 150), SyntheticTask("B", 150)], width=256)
        collection = generate_synthetic(spec, 9)
        labels = {record.compound_id: record.label for record in collection.task("A").records}
        self.assertEqual(labels, {record.compound_id: record.label for record in collection.task("B").records})

    def test_side_tasks(self):
        spec = SyntheticSpec([SyntheticTask("A", 40), SyntheticTask("S", 40, side=True)], width=128)
        collection = generate_synthetic(spec, 1)
        self.assertEqual(("S",), collection.side_tasks)
        self.assertEqual(("A",), tuple(collection.evaluated_tasks))


if __name__ == "__main__":
    unittest.main()
