# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import unittest

import numpy as np

from visual_mpc.planner.cem import cem_optimize, expand_actions, initial_distribution, warm_start
from visual_mpc.settings import CEMConfig
from visual_mpc.utils import PlanningError

BOUNDS = (0.05, 0.05, 0.05, 0.26)


def quadratic(target):
	def cost(actions):
		free = actions[:, ::3]
		return np.sum((free - target) ** 2, axis=(1, 2))

	return cost


class UnitTestCEM(unittest.TestCase):
	def test_twenty_decision_variables(self):
		config = CEMConfig()
		mean, std = initial_distribution(config, BOUNDS)
		self.assertEqual(mean.size, 20)
		np.testing.assert_allclose(std[0], [0.025, 0.025, 0.025, 0.13])
		self.assertEqual(expand_actions(mean, config.action_repeat).shape, (15, 4))

	def test_solves_quadratic(self):
		rng = np.random.default_rng(0)
		target = rng.uniform(-0.003, 0.003, size=(5, 4))
		config = CEMConfig(init_std=(0.005, 0.005, 0.005, 0.005))
		mean, std = initial_distribution(config, BOUNDS)
		result = cem_optimize(quadratic(target), mean, std, config, np.random.default_rng(1), BOUNDS)
		self.assertLess(np.max(np.abs(result.best_free - target)), 1e-2)
		self.assertEqual(result.best.shape, (15, 4))
		self.assertEqual(result.evaluated, 400 + 200 + 200)

	def test_best_so_far_is_monotone(self):
		target = np.full((5, 4), 0.01)
		config = CEMConfig(samples_first=40, samples_later=20, iterations=5)
		mean, std = initial_distribution(config, BOUNDS)
		result = cem_optimize(quadratic(target), mean, std, config, np.random.default_rng(2), BOUNDS)
		self.assertEqual(len(result.history), 5)
		self.assertTrue(all(b <= a for a, b in zip(result.history, result.history[1:])))
		self.assertEqual(result.history[-1], result.best_cost)

	def test_deterministic(self):
		config = CEMConfig(samples_first=30, samples_later=20)
		mean, std = initial_distribution(config, BOUNDS)
		target = np.full((5, 4), -0.02)
		first = cem_optimize(quadratic(target), mean, std, config, np.random.default_rng(3), BOUNDS)
		second = cem_optimize(quadratic(target), mean, std, config, np.random.default_rng(3), BOUNDS)
		np.testing.assert_array_equal(first.best, second.best)
		self.assertEqual(first.history, second.history)

	def test_candidates_respect_bounds(self):
		seen = []

		def cost(actions):
			seen.append(np.max(np.abs(actions), axis=(0, 1)))
			return np.zeros(len(actions))

		config = CEMConfig(samples_first=50, samples_later=50, init_std=(1.0, 1.0, 1.0, 1.0))
		mean, std = initial_distribution(config, BOUNDS)
		cem_optimize(cost, mean, std, config, np.random.default_rng(4), BOUNDS)
		self.assertTrue(all(np.all(m <= np.asarray(BOUNDS) + 1e-12) for m in seen))

	def test_ties_keep_candidate_order(self):
		config = CEMConfig(samples_first=10, samples_later=10, iterations=1)
		mean, std = initial_distribution(config, BOUNDS)
		result = cem_optimize(lambda a: np.zeros(len(a)), mean, std, config, np.random.default_rng(5), BOUNDS)
		first = np.clip(mean + std * np.random.default_rng(5).standard_normal((10, 5, 4))[0], -np.asarray(BOUNDS), BOUNDS)
		np.testing.assert_array_equal(result.best_free, first)

	def test_non_finite_costs(self):
		config = CEMConfig(samples_first=10, samples_later=10, iterations=2)
		mean, std = initial_distribution(config, BOUNDS)

		def partly_nan(actions):
			costs = np.arange(len(actions), dtype=np.float64)
			costs[0] = np.nan
			return costs

		result = cem_optimize(partly_nan, mean, std, config, np.random.default_rng(6), BOUNDS)
		self.assertEqual(result.best_cost, 1.0)
		with self.assertRaises(PlanningError):
			cem_optimize(lambda a: np.full(len(a), np.inf), mean, std, config, np.random.default_rng(6), BOUNDS)


class UnitTestWarmStart(unittest.TestCase):
	def test_shift_rule(self):
		config = CEMConfig()
		prev = np.arange(20, dtype=np.float64).reshape(5, 4) / 1000
		mean, std = warm_start(prev, config, BOUNDS)
		np.testing.assert_array_equal(mean, np.concatenate([prev[1:], prev[-1:]]))
		init = np.asarray(config.std(BOUNDS))
		np.testing.assert_allclose(std[-1] ** 2, init**2)
		np.testing.assert_allclose(std[:-1] ** 2, np.tile(0.25 * init**2, (4, 1)))

	def test_cold_start(self):
		config = CEMConfig()
		mean, std = warm_start(None, config, BOUNDS)
		np.testing.assert_array_equal(mean, np.zeros((5, 4)))
		np.testing.assert_allclose(std, np.tile(config.std(BOUNDS), (5, 1)))
