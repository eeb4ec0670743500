# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import math
import os
from dataclasses import dataclass, field

import numpy as np

from visual_mpc.settings import CATEGORIES, VIEWS, SceneSettings
from visual_mpc.sim.geometry import pieces_separation
from visual_mpc.sim.simulator import TabletopSimulator
from visual_mpc.trajstore.benchmark_task import BenchmarkTask, load_task, save_task
from visual_mpc.utils import RejectedConfigurationError, ensure_dir, load_json_file, logger, throw, write_json_file

MAX_TASK_RETRIES = 100
SUITE_FILE = "suite.json"
# object-goal separation as a fraction of the workspace width
LONG_MIN_FRACTION = 0.5
SHORT_MAX_FRACTION = 0.25
SHORT_MIN_FRACTION = 0.125
LIFT_HEIGHT = 0.06
# gripper height above a lifted object it is holding
LIFT_GRASP_OFFSET = 0.01


@dataclass
class BenchmarkSuite:
	category: str
	seed: int
	tasks: list = field(default_factory=list)

	def __len__(self):
		return len(self.tasks)

	def save(self, directory, provenance=None):
		"""Suite index plus one file set per task; `provenance` entries are added to every JSON"""
		ensure_dir(directory)
		files = [os.path.basename(save_task(task, directory, provenance)) for task in self.tasks]
		suite = {"category": self.category, "seed": self.seed, "tasks": files}
		write_json_file(os.path.join(directory, SUITE_FILE), {**suite, **(provenance or {})})
		return directory

	@classmethod
	def load(cls, directory):
		data = load_json_file(os.path.join(directory, SUITE_FILE))
		return cls(data["category"], int(data["seed"]), [load_task(os.path.join(directory, name)) for name in data["tasks"]])


def separation_bounds(category, workspace):
	"""(min, max) start-goal distance of the target's center in the table plane"""
	if category in ("long", "grasp-push"):
		return LONG_MIN_FRACTION * workspace, math.inf
	if category == "short":
		return SHORT_MIN_FRACTION * workspace, SHORT_MAX_FRACTION * workspace
	return 0.0, 0.0


def _goal_clear(sim, goal_obj, others):
	return all(pieces_separation(goal_obj.pieces(), other.pieces()) >= sim.settings.min_gap for other in others)


def _relocation_goal(sim, start, target, rng, category):
	s = sim.settings
	low, high = s.placement_margin, s.workspace - s.placement_margin
	min_sep, max_sep = separation_bounds(category, s.workspace)
	obj = start.object(target)
	others = [o for o in start.objects if o.id != target]
	for _ in range(s.placement_retries):
		x, y = float(rng.uniform(low, high)), float(rng.uniform(low, high))
		separation = math.hypot(x - obj.x, y - obj.y)
		if not (min_sep <= separation <= max_sep):
			continue
		goal_obj = obj.moved(dx=x - obj.x, dy=y - obj.y, dtheta=float(rng.uniform(-math.pi / 4, math.pi / 4)))
		if _goal_clear(sim, goal_obj, others):
			return start.with_object(goal_obj)
	return None


def _lift_goal(sim, start, target):
	obj = start.object(target)
	lifted = obj.moved(dz=LIFT_HEIGHT - obj.z)
	gripper = (obj.x, obj.y, LIFT_HEIGHT + LIFT_GRASP_OFFSET, start.gripper[3])
	return start.with_object(lifted).replace(
		gripper=gripper, grasp_closed=True, held_object=target, grasp_offset=(0.0, 0.0, LIFT_GRASP_OFFSET)
	)


def make_task(sim, category, task_id, scene_seed, views=VIEWS):
	"""One task for a seeded scene, or None when the scene admits no valid goal"""
	rng = np.random.default_rng([int(scene_seed), 1])
	start = sim.reset(scene_seed)
	target = int(rng.integers(len(start.objects)))
	if category == "grasp-lift":
		goal = _lift_goal(sim, start, target)
	else:
		goal = _relocation_goal(sim, start, target, rng, category)
	if goal is None:
		return None
	goal = goal.validate(sim.settings.workspace, sim.settings.z_max)
	task = BenchmarkTask(
		task_id=task_id,
		category=category,
		scene_seed=int(scene_seed),
		start_state=start,
		goal_state=goal,
		targets=(target,),
		start_pixels={view: [sim.object_pixel_position(start, view, target)] for view in views},
		goal_pixels={view: [sim.object_pixel_position(goal, view, target)] for view in views},
		goal_frames=sim.render_views(goal, views),
		reflex=category in ("grasp-lift", "grasp-push"),
	)
	return task.validate(sim)


def generate_suite(category, n_tasks, seed, scene=None, views=VIEWS):
	"""Seeded tasks of one category; scenes that admit no valid goal are redrawn"""
	if category not in CATEGORIES:
		throw(f"Invalid input: suite category must be one of {CATEGORIES}, got '{category}'")
	if n_tasks < 1:
		throw(f"Invalid input: a suite needs at least one task, got {n_tasks}")
	sim = TabletopSimulator(scene or SceneSettings())
	rng = np.random.default_rng([int(seed), CATEGORIES.index(category)])
	tasks = []
	for index in range(n_tasks):
		task = None
		for _ in range(MAX_TASK_RETRIES):
			scene_seed = int(rng.integers(2**31 - 1))
			try:
				task = make_task(sim, category, f"{category}-{index:03d}", scene_seed, views)
			except RejectedConfigurationError:
				task = None
			if task is not None:
				break
		if task is None:
			raise RejectedConfigurationError(
				f"Could not build {category} task {index} in {MAX_TASK_RETRIES} scenes (suite seed {seed})"
			)
		tasks.append(task)
	logger("bench").info(f"Generated {n_tasks} {category} tasks (seed {seed})")
	return BenchmarkSuite(category, int(seed), tasks)
