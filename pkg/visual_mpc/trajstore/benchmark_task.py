# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import math
import os
from dataclasses import dataclass, field

from visual_mpc.settings import CATEGORIES
from visual_mpc.sim.renderer import export_png, load_png
from visual_mpc.sim.world_state import WorldState
from visual_mpc.utils import ensure_dir, load_json_file, throw, write_json_file

# designated pixels must lie on their object, measured against the projected center
PIXEL_TOLERANCE = 2.0


@dataclass
class BenchmarkTask:
	"""
	One relocation task: start and goal states, goal frames per view and, per (target object, view), the
	designated pixel in the start frame and the goal pixel in the goal frame.
	"""

	task_id: str
	category: str
	scene_seed: int
	start_state: WorldState
	goal_state: WorldState
	targets: tuple
	# view -> list of (row, col), one per target
	start_pixels: dict
	goal_pixels: dict
	goal_frames: dict = field(default_factory=dict)
	reflex: bool = False

	@property
	def views(self):
		return tuple(sorted(self.start_pixels))

	def validate(self, sim=None):
		if self.category not in CATEGORIES:
			throw(f"Invalid input: task category '{self.category}' not in {CATEGORIES}")
		if not self.targets:
			throw(f"Invalid input: task {self.task_id} designates no object")
		if set(self.start_pixels) != set(self.goal_pixels):
			throw(f"Invalid input: task {self.task_id} start and goal pixels cover different views")
		for view in self.views:
			if len(self.start_pixels[view]) != len(self.targets) or len(self.goal_pixels[view]) != len(self.targets):
				throw(f"Invalid input: task {self.task_id} needs one pixel per target in view '{view}'")
		if sim is not None:
			for view in self.views:
				for target, d0, dg in zip(self.targets, self.start_pixels[view], self.goal_pixels[view], strict=True):
					for label, state, pixel in (("designated", self.start_state, d0), ("goal", self.goal_state, dg)):
						expected = sim.object_pixel_position(state, view, target)
						if math.dist(pixel, expected) > PIXEL_TOLERANCE:
							throw(
								f"Invalid input: task {self.task_id} {label} pixel {tuple(pixel)} in view '{view}' is "
								f"{math.dist(pixel, expected):.2f} px from object {target}"
							)
		return self

	def as_dict(self, frame_files=None):
		return {
			"task_id": self.task_id,
			"category": self.category,
			"scene_seed": self.scene_seed,
			"reflex": self.reflex,
			"targets": list(self.targets),
			"start_state": self.start_state.as_dict(),
			"goal_state": self.goal_state.as_dict(),
			"start_pixels": {view: [list(p) for p in pixels] for view, pixels in self.start_pixels.items()},
			"goal_pixels": {view: [list(p) for p in pixels] for view, pixels in self.goal_pixels.items()},
			"goal_frames": dict(frame_files or {}),
		}


def save_task(task, directory, provenance=None):
	"""Task JSON plus one goal PNG per view, referenced from the JSON by file name"""
	ensure_dir(directory)
	frame_files = {}
	for view, frame in sorted(task.goal_frames.items()):
		name = f"{task.task_id}_goal_{view}.png"
		export_png(frame, os.path.join(directory, name))
		frame_files[view] = name
	path = os.path.join(directory, f"{task.task_id}.json")
	write_json_file(path, {**task.as_dict(frame_files), **(provenance or {})})
	return path


def load_task(path):
	data = load_json_file(path)
	directory = os.path.dirname(path)
	missing = [key for key in ("task_id", "category", "start_state", "goal_state", "targets") if key not in data]
	if missing:
		throw(f"Invalid input: task file {path} lacks {missing}")
	goal_frames = {}
	for view, name in data.get("goal_frames", {}).items():
		frame_path = os.path.join(directory, name)
		if not os.path.exists(frame_path):
			throw(f"Invalid input: goal frame {frame_path} referenced by {path} does not exist")
		goal_frames[view] = load_png(frame_path)
	return BenchmarkTask(
		task_id=data["task_id"],
		category=data["category"],
		scene_seed=int(data.get("scene_seed", 0)),
		start_state=WorldState.from_dict(data["start_state"]),
		goal_state=WorldState.from_dict(data["goal_state"]),
		targets=tuple(int(t) for t in data["targets"]),
		start_pixels={view: [tuple(float(v) for v in p) for p in pixels] for view, pixels in data["start_pixels"].items()},
		goal_pixels={view: [tuple(float(v) for v in p) for p in pixels] for view, pixels in data["goal_pixels"].items()},
		goal_frames=goal_frames,
		reflex=bool(data.get("reflex", False)),
	).validate()
