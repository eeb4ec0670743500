# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import unittest

import numpy as np

from visual_mpc.cost.planning_cost import (
	CostReport,
	DesignatedPixelSet,
	PixelEntry,
	PlanningCost,
	baseline_costs,
	pixel_cost,
	total_cost,
	weights,
)
from visual_mpc.predictor.pixel_distribution import delta_distribution
from visual_mpc.predictor.predictor_model import FlowPredictor
from visual_mpc.regnet.registration_model import RegistrationNet
from visual_mpc.settings import NetworkSettings
from visual_mpc.utils import ValidationError

BOUNDS = (0.05, 0.05, 0.05, 0.26)
TINY = NetworkSettings(down_widths=(4, 4, 4), up_widths=(4, 4, 4))


def with_constant_head(model, dx, dy):
	head = model.params.layers[-1]
	head.kernel[...] = 0
	head.bias[...] = (dx, dy)
	return model


def brute_force_cost(distributions, goal):
	total = 0.0
	for p in distributions:
		for row in range(p.shape[0]):
			for col in range(p.shape[1]):
				total += p[row, col] * np.hypot(row - goal[0], col - goal[1])
	return total


class UnitTestPixelCost(unittest.TestCase):
	def test_goal_reached(self):
		self.assertEqual(pixel_cost(delta_distribution((48, 64), (20, 30))[None], (20, 30)), 0.0)

	def test_two_point_expectation(self):
		p = np.zeros((48, 64))
		p[10, 10] = p[13, 14] = 0.5
		self.assertAlmostEqual(pixel_cost(p[None], (10, 10)), 2.5)

	def test_matches_brute_force(self):
		rng = np.random.default_rng(0)
		p = rng.uniform(size=(3, 12, 16))
		p /= p.sum(axis=(-2, -1), keepdims=True)
		goal = (4.0, 11.0)
		self.assertAlmostEqual(pixel_cost(p, goal), brute_force_cost(p, goal), delta=1e-6)

	def test_translation_consistent(self):
		rng = np.random.default_rng(1)
		p = np.zeros((2, 20, 20))
		p[:, 2:10, 3:12] = rng.uniform(size=(2, 8, 9))
		p /= p.sum(axis=(-2, -1), keepdims=True)
		shifted = np.roll(p, (4, 5), axis=(-2, -1))
		self.assertAlmostEqual(pixel_cost(p, (6, 6)), pixel_cost(shifted, (10, 11)), places=9)

	def test_unnormalized_rejected(self):
		with self.assertRaises(ValidationError):
			pixel_cost(2 * delta_distribution((8, 8), (1, 1))[None], (1, 1))


class UnitTestWeights(unittest.TestCase):
	def test_examples(self):
		np.testing.assert_allclose(weights([2.0, 2.0]), [0.5, 0.5])
		np.testing.assert_allclose(weights([1.0, 3.0]), [0.75, 0.25])
		np.testing.assert_allclose(weights([0.0, 5.0]), [1.0, 0.0], atol=1e-3)

	def test_random_instances_match_oracle(self):
		rng = np.random.default_rng(2)
		for _ in range(1000):
			errors = rng.uniform(0.01, 2, size=int(rng.integers(1, 9)))
			inverse = [1.0 / max(e, 1e-4) for e in errors]
			expected = [v / sum(inverse) for v in inverse]
			np.testing.assert_allclose(weights(errors), expected, rtol=0, atol=1e-6)
			np.testing.assert_allclose(weights(errors * 7.5), weights(errors), atol=1e-12)

	def test_negative_rejected(self):
		with self.assertRaises(ValidationError):
			weights([1.0, -0.5])


class UnitTestTotalCost(unittest.TestCase):
	def test_examples(self):
		self.assertEqual(total_cost([1.0], [3.5]), 3.5)
		self.assertAlmostEqual(total_cost([0.75, 0.25], [4.0, 8.0]), 5.0)
		np.testing.assert_allclose(total_cost([0.75, 0.25], [[4.0, 8.0], [0.0, 4.0]]), [5.0, 1.0])

	def test_permutation_invariant(self):
		rng = np.random.default_rng(3)
		w = weights(rng.uniform(size=5))
		c = rng.uniform(size=5)
		order = rng.permutation(5)
		self.assertAlmostEqual(total_cost(w, c), total_cost(w[order], c[order]), places=12)

	def test_index_mismatch_rejected(self):
		with self.assertRaises(ValidationError):
			total_cost([0.5, 0.5], [1.0, 2.0, 3.0])

	def test_report_consistency(self):
		report = CostReport(np.array([4.0, 8.0]), np.array([0.75, 0.25]), 5.0, [("top", 0, "start"), ("top", 0, "goal")])
		report.validate()
		self.assertEqual(report.as_dict()["entries"][1]["key"], ["top", 0, "goal"])


class UnitTestDesignatedPixelSet(unittest.TestCase):
	def test_weighted_entries(self):
		entries = [
			PixelEntry("top", 0, 0, "start", (10, 10), (20, 20), error=1.0),
			PixelEntry("top", 0, 0, "goal", (11, 10), (20, 20), error=3.0),
		]
		pixel_set = DesignatedPixelSet.weighted(entries)
		np.testing.assert_allclose(pixel_set.weights, [0.75, 0.25])
		np.testing.assert_allclose(DesignatedPixelSet.weighted(entries, uniform=True).weights, [0.5, 0.5])
		self.assertEqual(pixel_set.distributions("top", (48, 64)).shape, (2, 48, 64))

	def test_duplicate_entries_rejected(self):
		entry = PixelEntry("top", 0, 0, "start", (10, 10), (20, 20), error=1.0)
		with self.assertRaises(ValidationError):
			DesignatedPixelSet.weighted([entry, entry])


class UnitTestBaselineCosts(unittest.TestCase):
	def test_identical_frames(self):
		frame = np.random.default_rng(4).uniform(size=(16, 16, 3)).astype(np.float32)
		still = with_constant_head(RegistrationNet.initialize(TINY, np.random.default_rng(0)), 0.0, 0.0)
		self.assertEqual(baseline_costs(frame, frame, still), {"pixelwise": 0.0, "warp_length": 0.0})
		moving = with_constant_head(RegistrationNet.initialize(TINY, np.random.default_rng(0)), 3.0, 4.0)
		self.assertAlmostEqual(baseline_costs(frame, frame, moving)["warp_length"], 5.0, places=5)


class UnitTestPlanningCost(unittest.TestCase):
	def setUp(self):
		self.frame = np.random.default_rng(5).uniform(size=(16, 16, 3)).astype(np.float32)
		self.predictor = with_constant_head(FlowPredictor.initialize(TINY, BOUNDS, np.random.default_rng(1)), 0.0, 0.0)
		entries = [
			PixelEntry("top", 0, 0, "start", (2, 2), (5, 6), error=1.0),
			PixelEntry("top", 0, 0, "goal", (5, 6), (5, 6), error=3.0),
		]
		self.pixel_set = DesignatedPixelSet.weighted(entries)
		self.actions = np.random.default_rng(6).uniform(-1, 1, size=(5, 3, 4)) * BOUNDS

	def test_static_rollout_costs(self):
		cost = PlanningCost(self.predictor, {"top": self.frame}, self.pixel_set)
		entry_costs = cost.entry_costs(self.actions)
		np.testing.assert_allclose(entry_costs, np.tile([15.0, 0.0], (5, 1)), atol=1e-9)
		np.testing.assert_allclose(cost(self.actions), np.full(5, 0.75 * 15.0), atol=1e-9)
		report = cost.report(self.actions[0])
		self.assertAlmostEqual(report.total, 11.25)
		self.assertEqual(report.keys, [("top", 0, "start"), ("top", 0, "goal")])

	def test_chunking_does_not_change_costs(self):
		whole = PlanningCost(self.predictor, {"top": self.frame}, self.pixel_set, chunk=50)
		chunked = PlanningCost(self.predictor, {"top": self.frame}, self.pixel_set, chunk=2)
		np.testing.assert_allclose(whole(self.actions), chunked(self.actions), atol=1e-12)
		self.assertEqual(chunked.evaluated, 5)

	def test_pixelwise_kind(self):
		cost = PlanningCost(self.predictor, {"top": self.frame}, self.pixel_set, {"top": self.frame}, cost_kind="pixelwise")
		np.testing.assert_allclose(cost(self.actions), np.zeros(5), atol=1e-12)

	def test_warp_length_needs_registration(self):
		with self.assertRaises(ValidationError):
			PlanningCost(self.predictor, {"top": self.frame}, self.pixel_set, {"top": self.frame}, cost_kind="warp_length")
