# Copyright (c) 2025, Clapgrow Software and Contributors
# See license.txt

import os
import tempfile
import unittest

import numpy as np
from scipy import stats

from visual_mpc.trajstore.dataset import (
	DatasetIndex,
	sample_pair,
	sample_shift_pair,
	sample_subsequence,
	split_files,
)
from visual_mpc.trajstore.trajectory_record import TrajectoryRecord
from visual_mpc.utils import ValidationError, file_hash


def counting_record(length=15):
	"""Frame t is filled with t / 255 and action t with t, so sampled indices can be read back"""
	frames = np.stack([np.full((8, 8, 3), t / 255.0, dtype=np.float32) for t in range(length)])
	actions = np.repeat(np.arange(length, dtype=np.float64)[:, None], 4, axis=1)
	return TrajectoryRecord(
		index=0,
		seed=0,
		reflex=False,
		frames={"top": frames},
		actions=actions,
		gripper=np.zeros((length, 4)),
		grasp_closed=np.zeros(length, dtype=bool),
	)


def frame_index(frame):
	return int(round(float(frame[0, 0, 0]) * 255))


class UnitTestSamplePair(unittest.TestCase):
	def setUp(self):
		self.record = counting_record()
		self.rng = np.random.default_rng(0)

	def test_zero_gap_gives_identical_frames(self):
		a, b = sample_pair(self.record, 0, self.rng)
		np.testing.assert_array_equal(a, b)

	def test_full_gap_only_starts_at_zero(self):
		for _ in range(20):
			a, b = sample_pair(self.record, 14, self.rng)
			self.assertEqual((frame_index(a), frame_index(b)), (0, 14))

	def test_gap_too_long_rejected(self):
		with self.assertRaises(ValidationError):
			sample_pair(self.record, 15, self.rng)

	def test_start_time_is_uniform(self):
		h = 3
		starts = [frame_index(sample_pair(self.record, h, self.rng)[0]) for _ in range(100_000)]
		counts = np.bincount(starts, minlength=15 - h)
		self.assertEqual(len(counts), 15 - h)
		self.assertGreater(stats.chisquare(counts).pvalue, 0.01)


class UnitTestSampleSubsequence(unittest.TestCase):
	def setUp(self):
		self.record = counting_record()
		self.rng = np.random.default_rng(1)

	def test_longest_window_starts_at_zero(self):
		frames, actions = sample_subsequence(self.record, 14, self.rng)
		self.assertEqual(len(frames), 15)
		self.assertEqual(len(actions), 14)
		self.assertEqual(frame_index(frames[0]), 0)

	def test_actions_align_with_frames(self):
		for _ in range(50):
			frames, actions = sample_subsequence(self.record, 5, self.rng)
			start = frame_index(frames[0])
			self.assertEqual([frame_index(f) for f in frames], list(range(start, start + 6)))
			np.testing.assert_array_equal(actions[:, 0], np.arange(start, start + 5))

	def test_window_too_long_rejected(self):
		with self.assertRaises(ValidationError):
			sample_subsequence(self.record, 15, self.rng)
		with self.assertRaises(ValidationError):
			sample_subsequence(self.record, 5, self.rng, context=2)


class UnitTestShiftPair(unittest.TestCase):
	def test_interior_matches_integer_shift(self):
		rng = np.random.default_rng(2)
		frame = rng.uniform(size=(48, 64, 3)).astype(np.float32)
		for _ in range(10):
			source, target, flow = sample_shift_pair(frame, 4, rng)
			dx, dy = int(flow[0, 0, 0]), int(flow[0, 0, 1])
			self.assertTrue(np.all(flow[..., 0] == dx) and np.all(flow[..., 1] == dy))
			self.assertLessEqual(max(abs(dx), abs(dy)), 4)
			np.testing.assert_array_equal(target[4:-4, 4:-4], source[4 + dy : 44 + dy, 4 + dx : 60 + dx])


class UnitTestDatasetIndex(unittest.TestCase):
	def test_split_keeps_last_files_held_out(self):
		files = [f"traj_{i:06d}.bin" for i in range(20)]
		splits = split_files(files, 0.1)
		self.assertEqual(splits["held_out"], files[-2:])
		self.assertEqual(splits["train"], files[:-2])
		self.assertEqual(split_files(files[:1], 0.1), {"train": files[:1], "held_out": []})

	def test_overlapping_splits_rejected(self):
		with self.assertRaises(ValidationError):
			DatasetIndex(root=".", files=["a", "b"], splits={"train": ["a", "b"], "held_out": ["b"]}, config_hash="x").validate()

	def test_verify_detects_changed_files(self):
		with tempfile.TemporaryDirectory() as root:
			for name in ("a", "b"):
				with open(os.path.join(root, name), "wb") as f:
					f.write(name.encode())
			index = DatasetIndex(
				root=root,
				files=["a", "b"],
				splits={"train": ["a"], "held_out": ["b"]},
				config_hash="abc",
				sha256={name: file_hash(os.path.join(root, name)) for name in ("a", "b")},
			).save()
			loaded = DatasetIndex.load(root)
			self.assertEqual(loaded.as_dict(), index.as_dict())
			self.assertEqual(loaded.verify(), [])
			with open(os.path.join(root, "b"), "wb") as f:
				f.write(b"changed")
			self.assertEqual(loaded.verify(), ["b"])
