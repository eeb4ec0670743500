# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import os
import tempfile
import unittest
from unittest import mock

import numpy as np
from PIL import Image

from visual_mpc.regnet.registration_model import RegistrationNet
from visual_mpc.regnet.training_service import (
	CHECKPOINT_FILE,
	LOSS_CURVE_FILE,
	RegistrationTrainingService,
	evaluate_registration,
	held_out_losses,
	known_shift_error,
	self_registration_magnitude,
	tracking_errors,
)
from visual_mpc.regnet.visualization import export_strip
from visual_mpc.settings import CollectSettings, NetworkSettings, RegistrationSettings, SceneSettings
from visual_mpc.trajstore.collection_service import CollectionService
from visual_mpc.trajstore.trajectory_record import read_record
from visual_mpc.utils import TrainingDivergedError, ValidationError

SLOW = os.environ.get("VISUAL_MPC_SLOW_TESTS") == "1"
TINY = NetworkSettings(down_widths=(4, 4, 4), up_widths=(4, 4, 4), head_scale=1e-3)
BACKGROUND = SceneSettings().background


def constant_flow_network(dx, dy):
	"""A network whose head ignores its features and emits the flow (dx, dy) everywhere"""
	network = RegistrationNet.initialize(TINY, np.random.default_rng(0))
	head = network.params.layers[-1]
	head.kernel[...] = 0
	head.bias[...] = (dx, dy)
	return network


def tiny_settings(**changes):
	values = {
		"network": TINY,
		"steps": 4,
		"ramp_steps": 2,
		"h_start": 1,
		"h_end": 3,
		"batch_size": 2,
		"synthetic_fraction": 0.5,
		"max_shift": 3,
		"log_every": 1,
		"seed": 9,
	}
	values.update(changes)
	return RegistrationSettings(**values)


class IntegrationTestRegistrationTraining(unittest.TestCase):
	@classmethod
	def setUpClass(cls):
		cls.tmp = tempfile.TemporaryDirectory()
		settings = CollectSettings(n_trajectories=4, episode_len=8, seed=21, reflex=False, held_out_fraction=0.25)
		cls.index = CollectionService(SceneSettings(), settings).collect(os.path.join(cls.tmp.name, "data"), progress=False)
		cls.held_out = read_record(cls.index.paths("held_out")[0])

	@classmethod
	def tearDownClass(cls):
		cls.tmp.cleanup()

	def test_same_seed_gives_identical_checkpoints(self):
		outputs = []
		for name in ("a", "b"):
			out_dir = os.path.join(self.tmp.name, name)
			RegistrationTrainingService(tiny_settings(), config_hash="h").train(self.index, out_dir, progress=False)
			with open(os.path.join(out_dir, CHECKPOINT_FILE), "rb") as f:
				outputs.append(f.read())
		self.assertEqual(outputs[0], outputs[1])
		loaded = RegistrationNet.load(os.path.join(self.tmp.name, "a", CHECKPOINT_FILE))
		self.assertEqual(loaded.trained_steps, 4)

	def test_loss_curve_follows_curriculum(self):
		out_dir = os.path.join(self.tmp.name, "curve")
		_, curve = RegistrationTrainingService(tiny_settings()).train(self.index, out_dir, progress=False)
		self.assertEqual([h for _, h, _ in curve], [1, 2, 3, 3])
		with open(os.path.join(out_dir, LOSS_CURVE_FILE), encoding="utf-8") as f:
			lines = f.read().splitlines()
		self.assertEqual(lines[0], "step,h,loss")
		self.assertEqual(len(lines), 5)

	def test_gap_longer_than_episode_rejected(self):
		with self.assertRaises(ValidationError):
			RegistrationTrainingService(tiny_settings(h_end=8)).train(self.index, progress=False)

	def test_nan_loss_aborts(self):
		service = RegistrationTrainingService(tiny_settings())
		with mock.patch.object(RegistrationNet, "loss_and_grads", return_value=(float("nan"), {}, {})):
			with self.assertRaises(TrainingDivergedError):
				service.train(self.index, progress=False)

	def test_known_shift_of_exact_network(self):
		frame = self.held_out.frames["top"][0]
		self.assertEqual(known_shift_error(constant_flow_network(4.0, 0.0), frame, (4, 0), BACKGROUND), 0.0)
		self.assertAlmostEqual(known_shift_error(constant_flow_network(0.0, 0.0), frame, (4, 0), BACKGROUND), 4.0)

	def test_self_registration_magnitude(self):
		frames = self.held_out.frames["top"][:2]
		self.assertAlmostEqual(self_registration_magnitude(constant_flow_network(3.0, 4.0), frames), 5.0, places=5)

	def test_tracking_errors_of_zero_flow_match_ground_truth_motion(self):
		errors = tracking_errors(constant_flow_network(0.0, 0.0), self.index, max_gap=3, n_pairs=12)
		self.assertEqual(sum(len(v) for v in errors.values()), 12)
		self.assertTrue(set(errors) <= {1, 2, 3})
		self.assertTrue(all(e >= 0 for values in errors.values() for e in values))

	def test_evaluation_reports_baseline(self):
		network = constant_flow_network(0.0, 0.0)
		losses = held_out_losses(network, self.index, h=3, n_pairs=4)
		self.assertAlmostEqual(losses["model_photometric"], losses["zero_flow"], places=5)
		result = evaluate_registration(network, self.index, tiny_settings(), BACKGROUND, n_pairs=6)
		for key in ("tracking_median_px", "known_shift_median_px", "self_registration_px", "model", "zero_flow"):
			self.assertTrue(np.isfinite(result[key]), key)

	def test_strip_export(self):
		frames = self.held_out.frames["top"][:4]
		path = os.path.join(self.tmp.name, "strips", "strip.png")
		export_strip(
			path, constant_flow_network(0.0, 0.0), frames, frames[0], frames[-1], [(10, 10)], [(20, 30)], scale=2
		)
		with Image.open(path) as image:
			self.assertEqual(image.size, (4 * (64 * 2 + 2), 3 * (48 * 2 + 2)))


class IntegrationTestRegistrationLearns(unittest.TestCase):
	@unittest.skipUnless(SLOW, "set VISUAL_MPC_SLOW_TESTS=1 to run")
	def test_training_beats_zero_flow(self):
		with tempfile.TemporaryDirectory() as tmp:
			settings = CollectSettings(n_trajectories=40, episode_len=10, seed=3, held_out_fraction=0.1)
			index = CollectionService(SceneSettings(), settings).collect(os.path.join(tmp, "data"), progress=False)
			network, _ = RegistrationTrainingService(
				RegistrationSettings(
					network=NetworkSettings(down_widths=(16, 16, 16), up_widths=(16, 16, 16)),
					steps=600,
					ramp_steps=200,
					h_end=4,
				)
			).train(index, progress=False)
			losses = held_out_losses(network, index, h=4, n_pairs=20)
		self.assertLess(losses["model_photometric"], losses["zero_flow"])
