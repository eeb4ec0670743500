# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import json
import os
import tempfile
import unittest

from visual_mpc import hooks
from visual_mpc.config import shipped_config_path
from visual_mpc.settings import RunConfig, apply_override, load_run_config
from visual_mpc.utils import ValidationError


def write_config(directory, data):
	path = os.path.join(directory, "run.json")
	with open(path, "w", encoding="utf-8") as f:
		json.dump(data, f)
	return path


class UnitTestRunConfig(unittest.TestCase):
	def test_defaults_validate(self):
		config = load_run_config()
		self.assertEqual(config, RunConfig().validate())
		self.assertEqual(config.scene.image_size, (48, 64))

	def test_shipped_configs_validate(self):
		for name in hooks.shipped_configs:
			with self.subTest(config=name):
				load_run_config(shipped_config_path(name))
		self.assertTrue(os.path.exists(shipped_config_path(hooks.default_config)))

	def test_layering_file_then_overrides(self):
		with tempfile.TemporaryDirectory() as tmp:
			path = write_config(tmp, {"planner": {"cem": {"iterations": 5, "horizon": 9}}, "bench": {"seed": 4}})
			config = load_run_config(path, ["planner.cem.iterations=2", "bench.n_tasks.short=3"])
		self.assertEqual(config.planner.cem.iterations, 2)
		self.assertEqual(config.planner.cem.horizon, 9)
		self.assertEqual(config.bench.seed, 4)
		# dict sections merge instead of replacing the defaults
		self.assertEqual(config.bench.n_tasks["short"], 3)
		self.assertEqual(config.bench.n_tasks["long"], 50)

	def test_list_values_become_tuples(self):
		config = load_run_config(None, ['bench.suites=["short"]', "scene.image_size=[32,48]"])
		self.assertEqual(config.bench.suites, ("short",))
		self.assertEqual(config.scene.image_size, (32, 48))

	def test_string_values_need_no_quotes(self):
		config = load_run_config(None, ["planner.mpc.mode=oracle", "planner.mpc.cost_kind=warp_length"])
		self.assertEqual((config.planner.mpc.mode, config.planner.mpc.cost_kind), ("oracle", "warp_length"))

	def test_rejected_configs(self):
		for overrides in (
			["planner.horizon=3"],
			["planner.cem.horizon=10"],
			["planner.mpc.mode=tracker"],
			["registration.neighborhood=4"],
			["predictor.train_horizon=15"],
			["registration.h_end=15"],
			["planner.cem.horizon=18", "predictor.horizon=15"],
			['bench.suites=["medium"]'],
			["scene.z_reflex=0.2"],
			["planner.cem"],
		):
			with self.subTest(overrides=overrides), self.assertRaises(ValidationError):
				load_run_config(None, overrides)

	def test_override_into_scalar_rejected(self):
		with self.assertRaises(ValidationError):
			apply_override({"seed": 3}, "seed.value=1")

	def test_hash_tracks_resolved_values(self):
		base = load_run_config()
		self.assertEqual(base.hash(), load_run_config().hash())
		self.assertEqual(len(base.hash()), 12)
		self.assertNotEqual(base.hash(), load_run_config(None, ["collect.seed=1"]).hash())
		# an override equal to the default resolves to the same config
		self.assertEqual(base.hash(), load_run_config(None, ["collect.seed=0"]).hash())
		self.assertEqual(json.loads(json.dumps(base.to_dict())), base.to_dict())
