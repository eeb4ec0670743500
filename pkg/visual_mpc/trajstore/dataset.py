# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import os
from dataclasses import dataclass, field

import numpy as np

from visual_mpc.numkit.kernels import bilinear_warp
from visual_mpc.trajstore.trajectory_record import read_training_record
from visual_mpc.utils import ValidationError, file_hash, load_json_file, logger, throw, write_json_file

INDEX_FILE = "index"
SPLITS = ("train", "held_out")


@dataclass
class DatasetIndex:
	"""Trajectory files of one collection run, their split tags and the collection config hash"""

	root: str
	files: list
	splits: dict
	config_hash: str
	sha256: dict = field(default_factory=dict)
	summary: dict = field(default_factory=dict)

	def validate(self):
		tagged = [name for split in SPLITS for name in self.splits.get(split, [])]
		if len(tagged) != len(set(tagged)):
			throw("Invalid input: dataset splits overlap")
		if set(tagged) != set(self.files):
			throw("Invalid input: dataset splits do not cover exactly the indexed files")
		return self

	def paths(self, split="train"):
		if split not in SPLITS:
			throw(f"Invalid input: unknown split '{split}', expected one of {SPLITS}")
		return [os.path.join(self.root, name) for name in self.splits.get(split, [])]

	def verify(self):
		"""Recompute file hashes; returns the names that are missing or changed"""
		mismatched = []
		for name in self.files:
			path = os.path.join(self.root, name)
			if not os.path.exists(path) or file_hash(path) != self.sha256.get(name):
				mismatched.append(name)
		if mismatched:
			logger("trajstore").warning(f"{len(mismatched)} trajectory files in {self.root} do not match the index")
		return mismatched

	def as_dict(self):
		return {
			"files": list(self.files),
			"splits": {split: list(self.splits.get(split, [])) for split in SPLITS},
			"config_hash": self.config_hash,
			"sha256": dict(self.sha256),
			"summary": dict(self.summary),
		}

	def save(self):
		write_json_file(os.path.join(self.root, INDEX_FILE), self.as_dict())
		return self

	@classmethod
	def load(cls, root):
		path = os.path.join(root, INDEX_FILE)
		if not os.path.exists(path):
			throw(f"Invalid input: no dataset index at {path}")
		data = load_json_file(path)
		return cls(
			root=root,
			files=data.get("files", []),
			splits=data.get("splits", {}),
			config_hash=data.get("config_hash", ""),
			sha256=data.get("sha256", {}),
			summary=data.get("summary", {}),
		).validate()


def split_files(files, held_out_fraction):
	"""The last `held_out_fraction` of the files (at least one if any are requested) are held out"""
	n_held = int(round(len(files) * held_out_fraction))
	if held_out_fraction > 0 and len(files) > 1:
		n_held = max(1, n_held)
	n_held = min(n_held, len(files) - 1) if len(files) > 1 else 0
	cut = len(files) - n_held
	return {"train": list(files[:cut]), "held_out": list(files[cut:])}


class TrajectoryDataset:
	"""Lazily loaded training records of one split, cached in memory"""

	def __init__(self, index, split="train", views=None):
		self.index = index
		self.split = split
		self.paths = index.paths(split)
		if not self.paths:
			throw(f"Invalid input: split '{split}' of {index.root} is empty")
		self.views = tuple(views) if views else None
		self._records = {}

	def __len__(self):
		return len(self.paths)

	def record(self, i):
		if i not in self._records:
			record = read_training_record(self.paths[i])
			if self.views and not set(self.views) <= set(record.frames):
				throw(f"Invalid input: {self.paths[i]} lacks views {sorted(set(self.views) - set(record.frames))}")
			self._records[i] = record
		return self._records[i]

	def random_record(self, rng):
		return self.record(int(rng.integers(len(self.paths))))

	def random_view(self, record, rng):
		views = self.views or record.views
		return views[int(rng.integers(len(views)))]


def sample_pair(record, h, rng, view="top"):
	"""Two frames of one view `h` steps apart, the first at a uniformly random time"""
	length = record.length
	if h < 0 or h >= length:
		raise ValidationError(f"Invalid input: gap h={h} must be in [0, {length - 1}] for a {length}-step record")
	if view not in record.frames:
		throw(f"Invalid input: record has no view '{view}'")
	t = int(rng.integers(0, length - h))
	frames = record.frames[view]
	return frames[t], frames[t + h]


def sample_subsequence(record, horizon, rng, context=1, view="top"):
	"""
	Contiguous window for predictor training: (frames, actions) with `context + horizon` frames and
	`horizon` actions, where frames[k + 1] is the simulator result of actions[k].
	"""
	if context != 1:
		throw(f"Invalid input: the predictor takes a single context frame, got context={context}")
	length = record.length
	if horizon < 1 or context + horizon > length:
		raise ValidationError(
			f"Invalid input: window of {context} + {horizon} frames does not fit a {length}-step record"
		)
	if view not in record.frames:
		throw(f"Invalid input: record has no view '{view}'")
	start = int(rng.integers(0, length - horizon))
	frames = record.frames[view][start : start + horizon + 1]
	actions = record.actions[start : start + horizon]
	return frames, actions


def shift_flow(shape, shift):
	"""Constant (H, W, 2) flow with column shift dx and row shift dy"""
	height, width = shape
	flow = np.zeros((height, width, 2), dtype=np.float32)
	flow[..., 0] = shift[0]
	flow[..., 1] = shift[1]
	return flow


def sample_shift_pair(frame, max_shift, rng):
	"""
	Synthetic pair with known registration: target(p) = frame(p + s) for an integer shift s, so the true
	target-to-source flow is s everywhere (up to border clamping). Returns (source, target, flow).
	"""
	shift = rng.integers(-max_shift, max_shift + 1, size=2)
	flow = shift_flow(frame.shape[:2], shift)
	target = bilinear_warp(frame.astype(np.float32), flow)
	return frame, target, flow
