# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import math
import os
import tempfile
import unittest

import numpy as np

from visual_mpc.bench.occlusion import OCCLUDER_COLOR, build_scenario, occlude, occlusion_study, play_scenario
from visual_mpc.predictor.predictor_model import FlowPredictor
from visual_mpc.regnet.registration_model import RegistrationNet
from visual_mpc.settings import NetworkSettings, SceneSettings
from visual_mpc.sim.simulator import TabletopSimulator

TINY = NetworkSettings(down_widths=(4, 4, 4), up_widths=(4, 4, 4))


def still(model):
	head = model.params.layers[-1]
	head.kernel[...] = 0
	head.bias[...] = 0
	return model


class UnitTestOcclusionScenario(unittest.TestCase):
	def setUp(self):
		self.sim = TabletopSimulator(SceneSettings(), reflex=False)

	def test_scripted_actions(self):
		scenario = build_scenario(self.sim, 3)
		self.assertEqual(scenario.actions.shape, (9, 4))
		self.assertLess(scenario.actions[0, 2], 0)
		np.testing.assert_array_equal(scenario.actions[1], scenario.actions[-1])
		self.assertAlmostEqual(math.hypot(*scenario.actions[1, :2]), 0.02)
		again = build_scenario(self.sim, 3)
		np.testing.assert_array_equal(scenario.actions, again.actions)

	def test_occluder_hides_target_only_while_occluded(self):
		scenario = build_scenario(self.sim, 3)
		states, frames = play_scenario(self.sim, scenario)
		self.assertEqual(len(states), len(frames))
		for t, (state, frame) in enumerate(zip(states, frames, strict=True)):
			row, col = (int(round(v)) for v in self.sim.object_pixel_position(state, "top", 0))
			hidden = np.allclose(frame[row, col], OCCLUDER_COLOR)
			self.assertEqual(hidden, t in scenario.occluded)
			if t not in scenario.occluded:
				np.testing.assert_array_equal(frame, self.sim.render(state, "top"))

	def test_occlude_clips_at_border(self):
		state = self.sim.reset(1, num_objects=1)
		frame = self.sim.render(state, "top")
		hidden = occlude(frame, self.sim, state, "top", 0)
		self.assertEqual(hidden.shape, frame.shape)
		self.assertFalse(np.shares_memory(hidden, frame))

	def test_pushes_move_the_object(self):
		moved = []
		for seed in range(5):
			states, _ = play_scenario(self.sim, build_scenario(self.sim, seed))
			moved.append(self.sim.world_distance(states[0], states[-1], 0) * self.sim.settings.pixels_per_meter)
		self.assertGreater(max(moved), 2.0)


class IntegrationTestOcclusionStudy(unittest.TestCase):
	def test_still_networks_give_equal_errors(self):
		registration = still(RegistrationNet.initialize(TINY, np.random.default_rng(0)))
		predictor = still(FlowPredictor.initialize(TINY, SceneSettings().action_bounds, np.random.default_rng(1)))
		report = occlusion_study(registration, predictor, n_scenarios=3, seed=4)
		self.assertEqual(len(report.results), 3)
		for result in report.results:
			self.assertAlmostEqual(result.registration_error, result.propagation_drift, places=9)
		self.assertTrue(0.0 <= report.reacquired_fraction <= 1.0)
		summary = report.as_dict()
		self.assertEqual(summary["scenarios"], 3)
		with tempfile.TemporaryDirectory() as tmp:
			path = report.write(os.path.join(tmp, "occlusion.csv"))
			with open(path, encoding="utf-8") as f:
				self.assertEqual(len(f.read().splitlines()), 4)
