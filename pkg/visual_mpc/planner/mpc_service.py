# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import csv
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from visual_mpc import hooks
from visual_mpc.cost.planning_cost import DesignatedPixelSet, PixelEntry, PlanningCost
from visual_mpc.numkit.kernels import bilinear_warp
from visual_mpc.planner.cem import cem_optimize, warm_start
from visual_mpc.predictor.predictor_model import SimulatorPredictor
from visual_mpc.regnet.tracking import point_photometric_error, transport_point
from visual_mpc.settings import MODES, MPCSettings, PlannerSettings
from visual_mpc.sim.renderer import export_png
from visual_mpc.sim.simulator import TabletopSimulator
from visual_mpc.utils import (
	CheckpointError,
	ensure_dir,
	get_attr,
	log_error,
	logger,
	throw,
	write_json_file,
	write_provenance,
)

LOG_FILE = "episode_log.csv"
RESULT_FILE = "episode.json"
LOG_COLUMNS = ["step", "estimates", "weights", "entry_costs", "total_cost", "action", "warm_mean", "best_free"]
HEIGHT_TOLERANCE = MPCSettings.height_tolerance


def format_values(values):
	return " ".join(f"{float(v):.6f}" for v in np.asarray(values).ravel())


@dataclass
class PlanningModels:
	predictor: object
	sim: TabletopSimulator
	registration: object = None

	@property
	def action_bounds(self):
		return tuple(float(b) for b in self.sim.action_bounds)


@dataclass
class MPCState:
	"""Everything the controller carries between real steps"""

	mode: str
	start_state: object
	targets: tuple
	start_frames: dict
	goal_frames: dict
	start_pixels: dict
	goal_pixels: dict
	step: int = 0
	prev_best: np.ndarray = None
	# view -> (K, H, W) beliefs carried forward in propagation mode
	beliefs: dict = None

	@classmethod
	def from_task(cls, task, sim, mode):
		if mode not in MODES:
			throw(f"Invalid input: planning mode must be one of {MODES}, got '{mode}'")
		goal_frames = dict(task.goal_frames) or sim.render_views(task.goal_state, task.views)
		return cls(
			mode=mode,
			start_state=task.start_state,
			targets=tuple(task.targets),
			start_frames=sim.render_views(task.start_state, task.views),
			goal_frames=goal_frames,
			start_pixels={view: [tuple(p) for p in pixels] for view, pixels in task.start_pixels.items()},
			goal_pixels={view: [tuple(p) for p in pixels] for view, pixels in task.goal_pixels.items()},
		)

	@property
	def views(self):
		return tuple(sorted(self.start_pixels))


def anchor_kinds(anchors):
	return ("start", "goal") if anchors == "both" else (anchors,)


def initial_entries(state, anchors=("start",)):
	"""Entries at the annotated start pixels, the estimate every mode uses before the first action"""
	return [
		PixelEntry(view, point, target, anchor, state.start_pixels[view][point], state.goal_pixels[view][point])
		for view in state.views
		for anchor in anchors
		for point, target in enumerate(state.targets)
	]


# Belief providers
# ----------------


def registration_beliefs(state, observation, models, world_state, settings):
	"""Register the current frame to the start and goal images and transport the annotated pixels"""
	if models.registration is None:
		raise CheckpointError("Registration mode needs a trained registration checkpoint")
	anchors = anchor_kinds(settings.anchors)
	if state.step == 0:
		return DesignatedPixelSet.weighted(initial_entries(state, anchors), uniform=True)

	entries = []
	for view in state.views:
		current = np.asarray(observation[view], dtype=np.float32)
		references = [state.start_frames[view] if anchor == "start" else state.goal_frames[view] for anchor in anchors]
		flows = models.registration.register(np.stack([current] * len(anchors)), np.stack(references))
		warped = bilinear_warp(np.stack([current] * len(anchors)), flows)
		for a, anchor in enumerate(anchors):
			pixels = state.start_pixels[view] if anchor == "start" else state.goal_pixels[view]
			for point, target in enumerate(state.targets):
				entries.append(
					PixelEntry(
						view,
						point,
						target,
						anchor,
						transport_point(flows[a], pixels[point], settings.neighborhood),
						state.goal_pixels[view][point],
						point_photometric_error(references[a], warped[a], pixels[point]),
					)
				)
	return DesignatedPixelSet.weighted(entries)


def propagation_beliefs(state, observation, models, world_state, settings):
	"""Carry the predictor's one-step beliefs forward without looking at the observation again"""
	entries = initial_entries(state)
	if state.step == 0 or not state.beliefs:
		return DesignatedPixelSet.weighted(entries, uniform=True)
	return DesignatedPixelSet.weighted(entries, priors=state.beliefs, uniform=True).with_estimates_from_priors()


def oracle_beliefs(state, observation, models, world_state, settings):
	"""Designated pixels tracked exactly by the simulator"""
	entries = []
	for entry in initial_entries(state):
		if state.step > 0:
			pixel = models.sim.track_point(state.start_state, world_state, entry.view, entry.target, entry.estimate)
			entry = PixelEntry(entry.view, entry.point, entry.target, entry.anchor, pixel, entry.goal)
		entries.append(entry)
	return DesignatedPixelSet.weighted(entries, uniform=True)


# Control loop
# ------------


@dataclass
class StepRecord:
	step: int
	pixel_set: DesignatedPixelSet
	report: object
	action: np.ndarray
	warm_mean: np.ndarray
	best_free: np.ndarray
	history: list

	def as_row(self):
		estimates = ";".join(
			f"{e.view}/{e.point}/{e.anchor}:{e.estimate[0]:.2f},{e.estimate[1]:.2f}" for e in self.pixel_set.entries
		)
		return [
			self.step,
			estimates,
			format_values(self.pixel_set.weights),
			format_values(self.report.entry_costs),
			f"{self.report.total:.6f}",
			format_values(self.action),
			format_values(self.warm_mean),
			format_values(self.best_free),
		]


def mpc_step(state, observation, models, world_state, settings, rng):
	"""Plan from the current observation; returns the StepRecord whose action is executed next"""
	cem, mpc = settings.cem, settings.mpc
	provider = get_attr(hooks.belief_providers[state.mode])
	pixel_set = provider(state, observation, models, world_state, mpc)

	predictor = models.predictor
	if isinstance(predictor, SimulatorPredictor):
		predictor.sync(world_state, pixel_set.targets(pixel_set.views[0]))
	cost = PlanningCost(
		predictor, observation, pixel_set, state.goal_frames, mpc.cost_kind, models.registration, mpc.rollout_chunk
	)
	mean, std = warm_start(state.prev_best, cem, models.action_bounds)
	result = cem_optimize(cost, mean, std, cem, rng, models.action_bounds)
	report = cost.report(result.best)

	if state.mode == "propagation":
		beliefs = {}
		for view in pixel_set.views:
			frame = observation[view]
			start = pixel_set.distributions(view, frame.shape[:2])
			for _, _, predicted in predictor.iter_rollout(frame, start, result.best[None, :1], view=view):
				beliefs[view] = predicted[0]
		state.beliefs = beliefs

	record = StepRecord(state.step, pixel_set, report, result.best[0].copy(), mean, result.best_free, result.history)
	state.prev_best = result.best_free
	state.step += 1
	return record


def object_distances(sim, state, task):
	"""Per-view pixel, world and height distances of every target's center to its goal"""
	pixels = {
		view: [
			math.dist(sim.object_pixel_position(state, view, t), sim.object_pixel_position(task.goal_state, view, t))
			for t in task.targets
		]
		for view in task.views
	}
	world = [sim.world_distance(state, task.goal_state, t) for t in task.targets]
	heights = [abs(state.object(t).z - task.goal_state.object(t).z) for t in task.targets]
	return pixels, world, heights


def fused_pixel_distance(per_view):
	"""Mean over targets of the worst view; a target counts as placed only when every camera agrees"""
	return float(np.mean(np.max(np.array([per_view[view] for view in sorted(per_view)], dtype=np.float64), axis=0)))


@dataclass
class EpisodeResult:
	task_id: str
	mode: str
	seed: int
	steps: int
	initial_pixel_distance: dict
	final_pixel_distance: dict
	initial_world_distance: list
	final_world_distance: list
	initial_height_error: list = field(default_factory=list)
	final_height_error: list = field(default_factory=list)
	config_hash: str = ""
	failed: bool = False
	reason: str = ""
	runtime: float = 0.0
	records: list = field(default_factory=list, repr=False)
	final_state: object = field(default=None, repr=False)

	@property
	def initial_fused_distance(self):
		return fused_pixel_distance(self.initial_pixel_distance)

	@property
	def pixel_distance(self):
		return fused_pixel_distance(self.final_pixel_distance)

	@property
	def world_distance(self):
		return float(np.mean(self.final_world_distance))

	@property
	def height_error(self):
		return float(max(self.final_height_error, default=0.0))

	def succeeded(self, threshold=15.0, height_tolerance=HEIGHT_TOLERANCE):
		return self.pixel_distance < threshold and self.height_error < height_tolerance

	def as_dict(self):
		"""Deterministic summary; the runtime is kept out"""
		return {
			"task_id": self.task_id,
			"mode": self.mode,
			"seed": self.seed,
			"config_hash": self.config_hash,
			"steps": self.steps,
			"failed": self.failed,
			"reason": self.reason,
			"initial_pixel_distance": self.initial_pixel_distance,
			"final_pixel_distance": self.final_pixel_distance,
			"pixel_distance": self.pixel_distance,
			"initial_world_distance": self.initial_world_distance,
			"final_world_distance": self.final_world_distance,
			"initial_height_error": self.initial_height_error,
			"final_height_error": self.final_height_error,
			"final_state": self.final_state.as_dict() if self.final_state is not None else None,
		}


def write_episode_log(path, records, config_hash=""):
	"""Per-step CSV; a leading `# config_hash: ...` line ties it to the resolved run config"""
	with open(path, "w", newline="", encoding="utf-8") as f:
		write_provenance(f, {"config_hash": config_hash} if config_hash else {})
		writer = csv.writer(f, lineterminator="\n")
		writer.writerow(LOG_COLUMNS)
		for record in records:
			writer.writerow(record.as_row())
	return path


def check_models(models, mode, settings):
	if mode == "registration" and models.registration is None:
		raise CheckpointError("Registration mode needs a trained registration checkpoint")
	if settings.mpc.cost_kind == "warp_length" and models.registration is None:
		raise CheckpointError("The warp_length cost needs a trained registration checkpoint")


def run_episode(task, models, settings=None, mode=None, max_steps=None, seed=None, out_dir=None, config_hash=""):
	"""
	Closed-loop control of the simulator from the task's start state until max_steps.

	A missing checkpoint raises CheckpointError before the first step; any other error during the loop
	ends the episode early and is recorded in the result.
	"""
	settings = (settings or PlannerSettings()).validate()
	mpc = settings.mpc
	mode = mode or mpc.mode
	max_steps = mpc.max_steps if max_steps is None else int(max_steps)
	seed = mpc.seed if seed is None else int(seed)
	predictor_horizon = getattr(models.predictor, "max_horizon", settings.cem.horizon)
	if settings.cem.horizon > predictor_horizon:
		throw(f"Invalid input: planning horizon {settings.cem.horizon} exceeds the predictor horizon {predictor_horizon}")
	check_models(models, mode, settings)

	sim = models.sim
	if sim.reflex_enabled != task.reflex:
		sim = TabletopSimulator(sim.settings, reflex=task.reflex)
		models = PlanningModels(models.predictor, sim, models.registration)
	state = MPCState.from_task(task, sim, mode)
	rng = np.random.default_rng(seed)
	world = task.start_state
	initial_pixels, initial_world, initial_heights = object_distances(sim, world, task)
	records = []
	failed, reason = False, ""
	log = logger("planner")
	log.info(f"Episode {task.task_id}: mode {mode}, {max_steps} steps, seed {seed}")
	if out_dir:
		ensure_dir(out_dir)

	started = time.perf_counter()
	try:
		for t in range(max_steps):
			observation = sim.render_views(world, task.views)
			if out_dir and mpc.dump_frames:
				for view, frame in observation.items():
					export_png(frame, os.path.join(out_dir, f"frame_{t:03d}_{view}.png"))
			record = mpc_step(state, observation, models, world, settings, rng)
			world = sim.step(world, record.action)
			records.append(record)
	except CheckpointError:
		raise
	except Exception as e:
		failed, reason = True, f"{type(e).__name__}: {e}"
		log_error(f"Episode {task.task_id} ({mode}) failed at step {len(records)}: {reason}", "Episode Failed")

	final_pixels, final_world, final_heights = object_distances(sim, world, task)
	result = EpisodeResult(
		task_id=task.task_id,
		mode=mode,
		seed=seed,
		steps=len(records),
		initial_pixel_distance=initial_pixels,
		final_pixel_distance=final_pixels,
		initial_world_distance=initial_world,
		final_world_distance=final_world,
		initial_height_error=initial_heights,
		final_height_error=final_heights,
		config_hash=config_hash,
		failed=failed,
		reason=reason,
		runtime=time.perf_counter() - started,
		records=records,
		final_state=world,
	)
	log.info(
		f"Episode {task.task_id} ({mode}): {result.steps} steps, final distance {result.pixel_distance:.2f}px "
		f"/ {result.world_distance:.4f}m, height error {result.height_error:.4f}m{' (failed)' if failed else ''}"
	)
	if out_dir:
		write_episode_log(os.path.join(out_dir, LOG_FILE), records, config_hash)
		write_json_file(os.path.join(out_dir, RESULT_FILE), result.as_dict())
	return result
