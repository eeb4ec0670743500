# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import unittest

import numpy as np

from visual_mpc.numkit.kernels import (
	bilinear_resize,
	bilinear_warp,
	conv_forward,
	leaky_relu,
	verification_mode,
)
from visual_mpc.numkit.network import ConvLayer
from visual_mpc.utils import ValidationError


def nested_loop_conv(x, kernel, bias):
	"""Same-padded stride-1 convolution written out element by element"""
	n, h, w, c_in = x.shape
	k = kernel.shape[0]
	pad = k // 2
	c_out = kernel.shape[3]
	out = np.zeros((n, h, w, c_out))
	for b in range(n):
		for r in range(h):
			for c in range(w):
				for o in range(c_out):
					total = bias[o]
					for i in range(k):
						for j in range(k):
							rr, cc = r + i - pad, c + j - pad
							if 0 <= rr < h and 0 <= cc < w:
								total += np.dot(x[b, rr, cc], kernel[i, j, :, o])
					out[b, r, c, o] = total
	return out


class UnitTestBilinearWarp(unittest.TestCase):
	def test_zero_flow_is_exact_identity(self):
		rng = np.random.default_rng(0)
		for shape in ((8, 8, 3), (5, 7, 1), (48, 64, 3)):
			image = rng.uniform(-3, 3, shape).astype(np.float32)
			out = bilinear_warp(image, np.zeros((*shape[:2], 2), dtype=np.float32))
			np.testing.assert_array_equal(out, image)

	def test_midpoint_interpolation(self):
		image = np.array([[[0.0], [1.0]]])
		flow = np.zeros((1, 2, 2))
		flow[0, 0] = (0.5, 0.0)
		out = bilinear_warp(image, flow)
		self.assertAlmostEqual(out[0, 0, 0], 0.5)

	def test_integer_shift_matches_index_oracle(self):
		rng = np.random.default_rng(1)
		image = rng.uniform(0, 1, (8, 8, 2))
		flow = np.zeros((8, 8, 2))
		flow[..., 0] = 2
		out = bilinear_warp(image, flow)
		for r in range(8):
			for c in range(8):
				np.testing.assert_allclose(out[r, c], image[r, min(c + 2, 7)])

	def test_output_within_input_range(self):
		rng = np.random.default_rng(2)
		for _ in range(100):
			image = rng.uniform(-1, 2, (6, 9, 3))
			flow = rng.uniform(-12, 12, (6, 9, 2))
			out = bilinear_warp(image, flow)
			self.assertGreaterEqual(out.min(), image.min() - 1e-12)
			self.assertLessEqual(out.max(), image.max() + 1e-12)

	def test_deterministic(self):
		rng = np.random.default_rng(3)
		image = rng.uniform(0, 1, (2, 8, 8, 3))
		flow = rng.uniform(-3, 3, (2, 8, 8, 2))
		np.testing.assert_array_equal(bilinear_warp(image, flow), bilinear_warp(image.copy(), flow.copy()))

	def test_shape_mismatch_rejected(self):
		with self.assertRaises(ValidationError):
			bilinear_warp(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))


class UnitTestBilinearResize(unittest.TestCase):
	def test_constant_image_stays_constant(self):
		image = np.full((8, 12, 3), 0.37)
		for scale in (0.5, 2):
			out = bilinear_resize(image, scale=scale)
			self.assertEqual(out.shape, (int(8 * scale), int(12 * scale), 3))
			np.testing.assert_allclose(out, 0.37)

	def test_two_by_two_down_to_one(self):
		image = np.array([[[0.0], [0.0]], [[1.0], [1.0]]])
		self.assertAlmostEqual(bilinear_resize(image, scale=0.5)[0, 0, 0], 0.5)

	def test_up_then_down_is_close(self):
		rng = np.random.default_rng(4)
		image = rng.uniform(0, 1, (8, 8, 1))
		restored = bilinear_resize(bilinear_resize(image, scale=2), scale=0.5)
		self.assertLess(np.abs(restored - image).max(), 0.25)

	def test_non_positive_size_rejected(self):
		with self.assertRaises(ValidationError):
			bilinear_resize(np.zeros((1, 1, 3)), scale=0.5)


class UnitTestConvolution(unittest.TestCase):
	def test_identity_kernel(self):
		rng = np.random.default_rng(5)
		x = rng.standard_normal((1, 5, 5, 2))
		kernel = np.zeros((1, 1, 2, 2))
		kernel[0, 0] = np.eye(2)
		out = conv_forward(x, ConvLayer(kernel, np.zeros(2)))
		np.testing.assert_allclose(out, leaky_relu(x))

	def test_zero_kernel_gives_bias(self):
		x = np.random.default_rng(6).standard_normal((1, 4, 4, 3))
		bias = np.array([0.5, -2.0])
		out = conv_forward(x, ConvLayer(np.zeros((3, 3, 3, 2)), bias))
		np.testing.assert_allclose(out[..., 0], 0.5)
		np.testing.assert_allclose(out[..., 1], -0.2)

	def test_matches_nested_loop_oracle(self):
		rng = np.random.default_rng(7)
		with verification_mode():
			for shape, c_out in (((1, 5, 5, 2), 3), ((2, 4, 6, 3), 2), ((1, 3, 3, 1), 1)):
				x = rng.standard_normal(shape)
				kernel = rng.standard_normal((3, 3, shape[-1], c_out))
				bias = rng.standard_normal(c_out)
				layer = ConvLayer(kernel, bias, activation=False)
				np.testing.assert_allclose(conv_forward(x, layer), nested_loop_conv(x, kernel, bias), atol=1e-6)

	def test_channel_mismatch_rejected(self):
		with self.assertRaises(ValidationError):
			conv_forward(np.zeros((1, 4, 4, 3)), ConvLayer(np.zeros((3, 3, 2, 1)), np.zeros(1)))

	def test_even_kernel_rejected(self):
		with self.assertRaises(ValidationError):
			conv_forward(np.zeros((1, 4, 4, 2)), ConvLayer(np.zeros((2, 2, 2, 1)), np.zeros(1)))
