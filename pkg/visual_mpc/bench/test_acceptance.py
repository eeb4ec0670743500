# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import os
import tempfile
import unittest

from visual_mpc import hooks
from visual_mpc.bench.benchmark_service import ResultTable
from visual_mpc.config import shipped_config_path
from visual_mpc.settings import load_run_config
from visual_mpc.tasks import BENCH_DIR, OCCLUSION_SUMMARY_FILE, run_pipeline
from visual_mpc.utils import load_json_file

SLOW = os.environ.get("VISUAL_MPC_SLOW_TESTS") == "1"
# reuse a finished desk run across sessions; the pipeline skips stages that are up to date
RUN_DIR_ENV = "VISUAL_MPC_ACCEPTANCE_DIR"


def success_rate(table, category, mode, threshold=15.0):
	rows = table.select(mode=mode, category=category)
	return sum(row.succeeded(threshold) for row in rows) / len(rows)


@unittest.skipUnless(SLOW, "set VISUAL_MPC_SLOW_TESTS=1 to run")
class IntegrationTestDeskAcceptance(unittest.TestCase):
	"""Full desk-scale pipeline: collection, both trainings, both suites and the occlusion study"""

	@classmethod
	def setUpClass(cls):
		cls.tmp = None
		out_dir = os.environ.get(RUN_DIR_ENV)
		if not out_dir:
			cls.tmp = tempfile.TemporaryDirectory()
			out_dir = cls.tmp.name
		config = load_run_config(shipped_config_path(hooks.default_config))
		run_pipeline(config, out_dir)
		cls.bench_dir = os.path.join(out_dir, BENCH_DIR)
		cls.table = ResultTable.read(os.path.join(cls.bench_dir, "results.csv"))

	@classmethod
	def tearDownClass(cls):
		if cls.tmp is not None:
			cls.tmp.cleanup()

	def test_long_suite_ordering(self):
		rates = {mode: success_rate(self.table, "long", mode) for mode in ("oracle", "registration", "propagation")}
		self.assertEqual(len(self.table.select(mode="oracle", category="long")), 50)
		self.assertGreaterEqual(rates["oracle"], rates["registration"], rates)
		self.assertGreaterEqual(rates["registration"] - rates["propagation"], 0.10, rates)

	def test_short_suite_modes_comparable(self):
		rates = [success_rate(self.table, "short", mode) for mode in ("oracle", "registration", "propagation")]
		self.assertLessEqual(max(rates) - min(rates), 0.15, rates)

	def test_registration_reacquires_after_occlusion(self):
		summary = load_json_file(os.path.join(self.bench_dir, OCCLUSION_SUMMARY_FILE))
		self.assertEqual(summary["scenarios"], 10)
		self.assertGreaterEqual(summary["reacquired"], 8)
		self.assertGreater(summary["mean_propagation_drift"], summary["mean_registration_error"])
