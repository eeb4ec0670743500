# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import unittest

import numpy as np

from visual_mpc.predictor.pixel_distribution import (
	check_distribution,
	delta_distribution,
	expected_position,
	renormalize,
	warp_distribution,
)
from visual_mpc.utils import ValidationError


class UnitTestExpectedPosition(unittest.TestCase):
	def test_point_mass(self):
		np.testing.assert_array_equal(expected_position(delta_distribution((48, 64), (10, 10))), (10.0, 10.0))

	def test_midpoint(self):
		distribution = np.zeros((48, 64))
		distribution[0, 0] = 0.5
		distribution[0, 2] = 0.5
		# (x=1, y=0) read as (row 0, col 1)
		np.testing.assert_allclose(expected_position(distribution), (0.0, 1.0))

	def test_matches_double_loop(self):
		rng = np.random.default_rng(0)
		distribution = rng.uniform(size=(12, 17))
		distribution /= distribution.sum()
		row = col = 0.0
		for r in range(12):
			for c in range(17):
				row += r * distribution[r, c]
				col += c * distribution[r, c]
		np.testing.assert_allclose(expected_position(distribution), (row, col), rtol=0, atol=1e-9)

	def test_batched(self):
		batch = np.stack([delta_distribution((8, 8), (1, 2)), delta_distribution((8, 8), (5, 7))])
		np.testing.assert_array_equal(expected_position(batch), [[1, 2], [5, 7]])

	def test_all_zero_rejected(self):
		with self.assertRaises(ValidationError):
			expected_position(np.zeros((4, 4)))


class UnitTestDistributions(unittest.TestCase):
	def test_delta_is_clamped_and_rounded(self):
		self.assertEqual(tuple(np.argwhere(delta_distribution((48, 64), (-3.0, 70.2)))[0]), (0, 63))
		self.assertEqual(tuple(np.argwhere(delta_distribution((48, 64), (4.5, 7.49)))[0]), (5, 7))

	def test_unnormalized_rejected(self):
		with self.assertRaises(ValidationError):
			check_distribution(np.full((4, 4), 0.1))
		negative = delta_distribution((4, 4), (1, 1)) * 2
		negative[0, 0] = -1
		with self.assertRaises(ValidationError):
			check_distribution(negative)

	def test_renormalize_keeps_fallback_when_mass_vanishes(self):
		fallback = delta_distribution((4, 4), (2, 2))
		np.testing.assert_array_equal(renormalize(np.zeros((4, 4)), fallback=fallback), fallback)
		np.testing.assert_allclose(renormalize(fallback * 3), fallback)
		with self.assertRaises(ValidationError):
			renormalize(np.zeros((4, 4)))

	def test_constant_flow_moves_point_mass(self):
		distribution = delta_distribution((48, 64), (10, 10))[None, None]
		flow = np.zeros((1, 48, 64, 2))
		flow[..., 0] = -2.0
		warped = warp_distribution(distribution, flow)
		self.assertEqual(tuple(np.argwhere(warped[0, 0] > 0.5)[0]), (10, 12))
		self.assertAlmostEqual(warped.sum(), 1.0, places=12)

	def test_mass_conserved_under_random_flows(self):
		rng = np.random.default_rng(1)
		distribution = rng.uniform(size=(2, 3, 16, 20))
		distribution /= distribution.sum(axis=(-2, -1), keepdims=True)
		for _ in range(15):
			flow = rng.normal(scale=3.0, size=(2, 16, 20, 2))
			distribution = warp_distribution(distribution, flow)
			self.assertTrue(np.all(distribution >= 0))
			np.testing.assert_allclose(distribution.sum(axis=(-2, -1)), 1.0, atol=1e-6)
