from unittest import TestCase
from unittest.mock import patch
import io
import json
import os
import shutil

import numpy as np

from sdganlab.history import HistoryHandler
from sdganlab.in_out import get_subfolder
from sdganlab.logging import RECORD_COLUMNS, RunRecord, write_csv
from sdganlab.utilities.summarize_training import Summarizer, main


def make_record(cell, seed, frechet, diverged=False, variance=0.1):
    record = RunRecord("abc", cell, seed, diverged=diverged)
    for step in (0, 100):
        row = dict.fromkeys(RECORD_COLUMNS)
        row.update(step=step, loss_D=1.3, frechet_data=frechet + 1.,
                   frechet_feature=frechet, modes_hit=8 - seed,
                   hq_fraction=0.5, diverged=0)
        record.add_row(row)
    if diverged:
        row = dict.fromkeys(RECORD_COLUMNS)
        row.update(step=101, diverged=1)
        record.add_row(row)
    else:
        record.trajectory_variance = [variance, 0.01]
    return record


class TestHistoryHandler(TestCase):
    """
    Write records into a dummy directory .temp/history, then read them back.
    """
    def setUp(self):
        self.temp_dir = os.path.join(os.path.dirname(__file__), ".temp",
                                     "history")
        self.train_log = get_subfolder(self.temp_dir, "train_log", create=True)
        self.records = [
            make_record("baseline-aug", 0, 0.4, variance=0.3),
            make_record("baseline-aug", 1, 0.6, variance=0.5),
            make_record("sd-feature-aug", 1, 0.2),
            make_record("sd-feature-aug", 0, 0.3),
            make_record("sd-feature-aug", 2, 9.9, diverged=True),
        ]
        for record in self.records:
            path = os.path.join(self.train_log, record.name)
            with open(path + ".json", "w") as f:
                f.write(record.dumps())
            write_csv(path + ".csv", RECORD_COLUMNS,
                      [[row[c] for c in RECORD_COLUMNS] for row in record.rows],
                      "abc")
        self.history = HistoryHandler(self.temp_dir)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_names(self):
        self.assertEqual(self.history.get_record_names(), [
            "baseline-aug_seed0", "baseline-aug_seed1", "sd-feature-aug_seed0",
            "sd-feature-aug_seed1", "sd-feature-aug_seed2"])
        self.assertEqual(HistoryHandler("nowhere").get_record_names(), [])

    def test_record(self):
        record = self.history.get_record("sd-feature-aug_seed1")
        self.assertEqual(record.to_dict(), self.records[2].to_dict())

    def test_record_data(self):
        data = self.history.get_record_data("sd-feature-aug_seed2")
        self.assertEqual(data.dtype.names, RECORD_COLUMNS)
        np.testing.assert_array_equal(data["step"], [0, 100, 101])
        np.testing.assert_array_equal(data["diverged"], [0, 0, 1])
        self.assertTrue(np.isnan(data["loss_D"][2]))
        self.assertTrue(np.isnan(data["loss_SD"]).all())

    def test_config_hash(self):
        self.assertEqual(self.history.get_config_hash("baseline-aug_seed0"),
                         "abc")

    def test_summary(self):
        summary = Summarizer(self.temp_dir).summarize_folder(self.temp_dir)
        self.assertEqual(list(summary), ["baseline-aug", "sd-feature-aug"])
        sd = summary["sd-feature-aug"]
        self.assertEqual(sd["seeds"], [0, 1, 2])
        self.assertEqual(sd["diverged"], 1)
        self.assertAlmostEqual(sd["frechet_feature"]["mean"], 0.25)
        self.assertAlmostEqual(sd["frechet_feature"]["median"], 0.25)
        self.assertEqual(sd["modes_hit"], {"mean": 7.5, "median": 7.5})
        self.assertAlmostEqual(sd["trajectory_variance"]["mean"], 0.1)
        base = summary["baseline-aug"]
        self.assertAlmostEqual(base["trajectory_variance"]["median"], 0.4)

    def test_all_diverged(self):
        shutil.rmtree(self.train_log)
        os.makedirs(self.train_log)
        record = make_record("sd-l1-aug", 0, 1., diverged=True)
        with open(os.path.join(self.train_log, record.name + ".json"), "w") as f:
            f.write(record.dumps())
        summary = Summarizer(self.temp_dir).summarize_folder(self.temp_dir)
        self.assertEqual(summary["sd-l1-aug"]["diverged"], 1)
        self.assertIsNone(summary["sd-l1-aug"]["frechet_data"])
        self.assertIsNone(summary["sd-l1-aug"]["trajectory_variance"])

    def test_write_summary(self):
        path = Summarizer(self.temp_dir).write_summary()
        first = open(path).read()
        self.assertEqual(json.loads(first), self.history.get_summary())
        self.assertNotIn("config_hash", self.history.get_summary())
        Summarizer([self.temp_dir]).write_summary(self.temp_dir)
        self.assertEqual(open(path).read(), first)

    def test_main(self):
        with patch("sys.argv", ["sdgan-summarize", self.temp_dir, "-write"]), \
                patch("sys.stdout", new_callable=io.StringIO) as out:
            main()
        lines = out.getvalue().splitlines()
        self.assertTrue(lines[0].startswith("folder"))
        self.assertEqual(len(lines), 3)
        self.assertIn("sd-feature-aug", lines[2])
        self.assertTrue(os.path.isfile(self.history.summary_file))
