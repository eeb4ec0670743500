# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import os
import tempfile
import unittest

import numpy as np

from visual_mpc.numkit.checkpoint import load_checkpoint, save_checkpoint
from visual_mpc.numkit.network import ConvParams, EncoderDecoder, init_conv_params
from visual_mpc.utils import CheckpointError


class UnitTestCheckpoint(unittest.TestCase):
	def setUp(self):
		self.tmp = tempfile.TemporaryDirectory()
		self.path = os.path.join(self.tmp.name, "model.ckpt")

	def tearDown(self):
		self.tmp.cleanup()

	def test_network_survives_save_and_load(self):
		params = init_conv_params(7, (4, 6), (6, 4), 2, np.random.default_rng(0), head_scale=0.3)
		save_checkpoint(self.path, params.arrays(), {"architecture": params.architecture(), "steps": 12})
		arrays, metadata = load_checkpoint(self.path)
		self.assertEqual(metadata["steps"], 12)

		restored = ConvParams.from_arrays(arrays, metadata["architecture"])
		for name, array in params.arrays().items():
			np.testing.assert_array_equal(arrays[name], array)
			self.assertEqual(arrays[name].dtype, array.dtype)

		x = np.random.default_rng(1).uniform(0, 1, (1, 8, 8, 7)).astype(np.float32)
		np.testing.assert_array_equal(EncoderDecoder(params).forward(x)[0], EncoderDecoder(restored).forward(x)[0])

	def test_identical_content_gives_identical_bytes(self):
		arrays = {"b": np.arange(4, dtype=np.int64), "a": np.ones((2, 2), dtype=np.float64)}
		save_checkpoint(self.path, arrays, {"k": 1})
		other = os.path.join(self.tmp.name, "other.ckpt")
		save_checkpoint(other, dict(reversed(list(arrays.items()))), {"k": 1})
		with open(self.path, "rb") as f, open(other, "rb") as g:
			self.assertEqual(f.read(), g.read())

	def test_missing_file(self):
		with self.assertRaises(CheckpointError):
			load_checkpoint(os.path.join(self.tmp.name, "absent.ckpt"))

	def test_wrong_magic(self):
		with open(self.path, "wb") as f:
			f.write(b"NOTACKPT" + b"\x00" * 32)
		with self.assertRaises(CheckpointError):
			load_checkpoint(self.path)

	def test_truncated_file(self):
		save_checkpoint(self.path, {"w": np.ones((4, 4), dtype=np.float32)})
		with open(self.path, "rb") as f:
			data = f.read()
		with open(self.path, "wb") as f:
			f.write(data[:-10])
		with self.assertRaises(CheckpointError):
			load_checkpoint(self.path)
