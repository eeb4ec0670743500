# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import unittest

import numpy as np

from visual_mpc.numkit.optimizer import OptimizerConfig, OptimizerState, optimizer_step
from visual_mpc.utils import TrainingDivergedError, ValidationError


class UnitTestOptimizer(unittest.TestCase):
	def test_first_sgd_step(self):
		params = {"p": np.array([0.0])}
		optimizer_step(params, {"p": np.array([10.0])}, OptimizerState(), OptimizerConfig(lr=0.01, momentum=0.9))
		self.assertAlmostEqual(params["p"][0], -0.1)

	def test_sgd_converges_on_quadratic(self):
		params = {"p": np.array([0.0])}
		state = OptimizerState()
		config = OptimizerConfig(lr=0.01, momentum=0.9)
		for _ in range(200):
			optimizer_step(params, {"p": 2 * (params["p"] - 3)}, state, config)
		self.assertLess(abs(params["p"][0] - 3), 1e-3)

	def test_adam_converges_on_quadratic(self):
		params = {"p": np.array([0.0])}
		state = OptimizerState()
		config = OptimizerConfig(rule="adam", lr=0.1)
		for _ in range(500):
			optimizer_step(params, {"p": 2 * (params["p"] - 3)}, state, config)
		self.assertLess(abs(params["p"][0] - 3), 1e-2)

	def test_non_finite_gradient_raises(self):
		params = {"p": np.array([1.0, 2.0])}
		with self.assertRaises(TrainingDivergedError):
			optimizer_step(params, {"p": np.array([np.nan, 0.0])}, OptimizerState(), OptimizerConfig())
		np.testing.assert_array_equal(params["p"], [1.0, 2.0])

	def test_clip_norm_limits_step(self):
		params = {"p": np.array([0.0, 0.0])}
		config = OptimizerConfig(lr=1.0, clip_norm=1.0)
		optimizer_step(params, {"p": np.array([30.0, 40.0])}, OptimizerState(), config)
		np.testing.assert_allclose(params["p"], [-0.6, -0.8])

	def test_gradient_names_must_match(self):
		with self.assertRaises(ValidationError):
			optimizer_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, OptimizerState(), OptimizerConfig())

	def test_invalid_config(self):
		with self.assertRaises(ValidationError):
			OptimizerConfig(rule="rmsprop").validate()
		with self.assertRaises(ValidationError):
			OptimizerConfig(lr=0).validate()
