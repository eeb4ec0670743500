# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
One trajectory per file, little-endian throughout:

	magic (8 bytes) | u32 version | u32 header length | header JSON | training blocks | ground-truth blocks

The header lists every block as {offset, dtype, shape} relative to the end of the header. Training blocks
(frames as u8, actions, gripper poses, grasp flags) come first and end at `training_end`; the simulator
ground truth follows and is only touched by `read_ground_truth`.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from visual_mpc.sim.renderer import frame_to_u8, u8_to_frame
from visual_mpc.utils import ValidationError, as_json, parse_json, throw

MAGIC = b"VMPCTRAJ"
FORMAT_VERSION = 1
PREAMBLE = struct.Struct("<8sII")
FILE_PATTERN = "traj_%06d.bin"


@dataclass
class GroundTruth:
	"""Simulator annotations for evaluation and the oracle; trainers never read these"""

	object_poses: np.ndarray  # (L, K, 4) x, y, z, theta
	held_object: np.ndarray  # (L,) object id, -1 when nothing is held
	object_pixels: dict = field(default_factory=dict)  # view -> (L, K, 2) row, col


@dataclass
class TrajectoryRecord:
	index: int
	seed: int
	reflex: bool
	frames: dict  # view -> (L, H, W, 3) float32 in [0, 1]
	actions: np.ndarray  # (L, 4); frame k + 1 is the result of action k
	gripper: np.ndarray  # (L, 4)
	grasp_closed: np.ndarray  # (L,) bool
	ground_truth: GroundTruth | None = None

	@property
	def length(self):
		return len(self.actions)

	@property
	def views(self):
		return tuple(sorted(self.frames))

	def validate(self):
		length = self.length
		if length < 1:
			throw("Invalid input: trajectory has no steps")
		for view, frames in self.frames.items():
			if frames.ndim != 4 or frames.shape[0] != length or frames.shape[-1] != 3:
				throw(f"Invalid input: frames for view '{view}' have shape {frames.shape}, expected ({length}, H, W, 3)")
			if frames.min() < 0 or frames.max() > 1:
				throw(f"Invalid input: frames for view '{view}' leave [0, 1]")
		if self.actions.shape != (length, 4) or self.gripper.shape != (length, 4):
			throw("Invalid input: actions and gripper poses must be (L, 4)")
		if self.grasp_closed.shape != (length,):
			throw("Invalid input: grasp flags must have one entry per step")
		truth = self.ground_truth
		if truth is not None:
			if truth.object_poses.shape[0] != length or truth.held_object.shape != (length,):
				throw("Invalid input: ground truth does not cover every step")
			for view, pixels in truth.object_pixels.items():
				if pixels.shape[0] != length or view not in self.frames:
					throw(f"Invalid input: ground-truth pixels for view '{view}' do not match the frames")
		return self


def _training_blocks(record):
	blocks = [(f"frames.{view}", frame_to_u8(record.frames[view])) for view in record.views]
	blocks.append(("actions", np.asarray(record.actions, dtype="<f8")))
	blocks.append(("gripper", np.asarray(record.gripper, dtype="<f8")))
	blocks.append(("grasp_closed", np.asarray(record.grasp_closed, dtype=np.uint8)))
	return blocks


def _truth_blocks(truth):
	if truth is None:
		return []
	blocks = [
		("truth.object_poses", np.asarray(truth.object_poses, dtype="<f8")),
		("truth.held_object", np.asarray(truth.held_object, dtype="<i8")),
	]
	for view in sorted(truth.object_pixels):
		blocks.append((f"truth.pixels.{view}", np.asarray(truth.object_pixels[view], dtype="<f8")))
	return blocks


def encode_record(record):
	"""Serialize a record to bytes; equal records give equal bytes"""
	record.validate()
	layout = {}
	payload = []
	offset = 0
	training = _training_blocks(record)
	for name, array in [*training, *_truth_blocks(record.ground_truth)]:
		data = np.ascontiguousarray(array).tobytes()
		layout[name] = {"offset": offset, "dtype": array.dtype.str, "shape": list(array.shape)}
		payload.append(data)
		offset += len(data)
		if name == training[-1][0]:
			training_end = offset

	header = {
		"index": int(record.index),
		"seed": int(record.seed),
		"reflex": bool(record.reflex),
		"length": record.length,
		"views": list(record.views),
		"blocks": layout,
		"training_end": training_end,
		"has_ground_truth": record.ground_truth is not None,
	}
	header_bytes = as_json(header, indent=None).encode("utf-8")
	return b"".join([PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)), header_bytes, *payload])


def write_record(path, record):
	"""Write atomically; OSError propagates to the caller"""
	data = encode_record(record)
	tmp_path = f"{path}.tmp"
	try:
		with open(tmp_path, "wb") as f:
			f.write(data)
		os.replace(tmp_path, path)
	finally:
		if os.path.exists(tmp_path):
			os.remove(tmp_path)
	return path


def read_header(f, path=""):
	"""Parse the preamble and header of an open trajectory file; returns (header, data start offset)"""
	preamble = f.read(PREAMBLE.size)
	if len(preamble) != PREAMBLE.size:
		throw(f"Invalid input: {path} is too short to be a trajectory file")
	magic, version, header_len = PREAMBLE.unpack(preamble)
	if magic != MAGIC:
		throw(f"Invalid input: {path} is not a trajectory file")
	if version != FORMAT_VERSION:
		throw(f"Invalid input: unsupported trajectory format version {version} in {path}")
	try:
		header = parse_json(f.read(header_len).decode("utf-8"), default=None)
	except ValueError as e:
		throw(f"Invalid input: corrupt header in {path}: {e}")
	if not isinstance(header, dict) or "blocks" not in header:
		throw(f"Invalid input: corrupt header in {path}")
	return header, PREAMBLE.size + header_len


def _block(data, header, name, base=0):
	block = header["blocks"].get(name)
	if block is None:
		throw(f"Invalid input: trajectory block '{name}' missing")
	dtype = np.dtype(block["dtype"])
	count = int(np.prod(block["shape"]))
	start = block["offset"] - base
	if start < 0 or start + count * dtype.itemsize > len(data):
		throw(f"Invalid input: trajectory block '{name}' is truncated")
	return np.frombuffer(data, dtype=dtype, count=count, offset=start).reshape(block["shape"]).copy()


def read_training_record(path):
	"""Frames, actions, gripper poses and grasp flags; the ground-truth byte range is never read"""
	with open(path, "rb") as f:
		header, _ = read_header(f, path)
		data = f.read(header["training_end"])
	frames = {view: u8_to_frame(_block(data, header, f"frames.{view}")) for view in header["views"]}
	return TrajectoryRecord(
		index=header["index"],
		seed=header["seed"],
		reflex=header["reflex"],
		frames=frames,
		actions=_block(data, header, "actions").astype(np.float64),
		gripper=_block(data, header, "gripper").astype(np.float64),
		grasp_closed=_block(data, header, "grasp_closed").astype(bool),
	).validate()


def read_ground_truth(path):
	with open(path, "rb") as f:
		header, start = read_header(f, path)
		if not header.get("has_ground_truth"):
			throw(f"Invalid input: {path} carries no ground truth", ValidationError)
		base = header["training_end"]
		f.seek(start + base)
		data = f.read()
	pixels = {}
	for name in header["blocks"]:
		if name.startswith("truth.pixels."):
			pixels[name.removeprefix("truth.pixels.")] = _block(data, header, name, base).astype(np.float64)
	return GroundTruth(
		object_poses=_block(data, header, "truth.object_poses", base).astype(np.float64),
		held_object=_block(data, header, "truth.held_object", base).astype(np.int64),
		object_pixels=pixels,
	)


def read_record(path):
	"""Training record with its ground truth attached (evaluation and tests)"""
	record = read_training_record(path)
	record.ground_truth = read_ground_truth(path)
	return record.validate()
