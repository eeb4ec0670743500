# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import unittest

import numpy as np

from visual_mpc.numkit.losses import photometric_loss, smoothness_loss
from visual_mpc.utils import ValidationError


class UnitTestPhotometricLoss(unittest.TestCase):
	def test_equal_images_give_eps(self):
		a = np.random.default_rng(0).uniform(0, 1, (4, 4, 3))
		loss, grad = photometric_loss(a, a.copy(), eps=1e-3)
		self.assertAlmostEqual(loss, 1e-3, places=12)
		np.testing.assert_array_equal(grad, 0)

	def test_unit_difference(self):
		loss, _ = photometric_loss(np.array([1.0]), np.array([0.0]), eps=0)
		self.assertEqual(loss, 1.0)

	def test_matches_elementwise_oracle(self):
		rng = np.random.default_rng(1)
		a = rng.uniform(0, 1, (3, 5, 2))
		b = rng.uniform(0, 1, (3, 5, 2))
		expected = 0.0
		for x, y in zip(a.ravel(), b.ravel(), strict=True):
			expected += np.sqrt((x - y) ** 2 + 1e-6)
		expected /= a.size
		self.assertAlmostEqual(photometric_loss(a, b)[0], expected, delta=1e-8)

	def test_shape_mismatch_rejected(self):
		with self.assertRaises(ValidationError):
			photometric_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class UnitTestSmoothnessLoss(unittest.TestCase):
	def test_constant_flow(self):
		flow = np.full((6, 7, 2), 1.5)
		self.assertEqual(smoothness_loss(flow)[0], 0.0)

	def test_single_step(self):
		flow = np.zeros((4, 5, 2))
		flow[0, 0, 0] = 1.0
		# the unit value at (0, 0) differs from its right and lower neighbours
		count = 2 * (3 * 5) + 2 * (4 * 4)
		self.assertAlmostEqual(smoothness_loss(flow)[0], 2 / count)

	def test_single_step_between_two_pixels(self):
		flow = np.zeros((1, 2, 2))
		flow[0, 1, 0] = 1.0
		# one row, two columns: x-differences only, one per channel
		self.assertAlmostEqual(smoothness_loss(flow)[0], 1 / 2)

	def test_linear_ramp(self):
		h, w = 4, 6
		flow = np.zeros((h, w, 2))
		flow[..., 0] = np.arange(w)[None, :]
		count = 2 * (h - 1) * w + 2 * h * (w - 1)
		self.assertAlmostEqual(smoothness_loss(flow)[0], h * (w - 1) / count)
