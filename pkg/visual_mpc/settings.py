# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
Typed run settings.

Every section is a dataclass with a `validate()` method. A run config is resolved from the built-in
defaults, then a JSON config file, then `section.key=value` overrides from the command line.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field

from visual_mpc.numkit.optimizer import OptimizerConfig
from visual_mpc.utils import as_json, config_hash, load_json_file, throw

VIEWS = ("top", "oblique")
MODES = ("registration", "propagation", "oracle")
ANCHORS = ("both", "start", "goal")
COST_KINDS = ("pixel_distance", "pixelwise", "warp_length")
CATEGORIES = ("short", "long", "grasp-lift", "grasp-push")


def _check_range(name, value, low=None, high=None):
	if low is not None and value < low:
		throw(f"Invalid input: {name} must be >= {low}, got {value}")
	if high is not None and value > high:
		throw(f"Invalid input: {name} must be <= {high}, got {value}")


def _check_interval(name, interval, low=0.0):
	if len(interval) != 2 or not (low <= interval[0] <= interval[1]):
		throw(f"Invalid input: {name} must be an increasing pair >= {low}, got {interval}")


def _check_views(name, views):
	if not views or any(view not in VIEWS for view in views):
		throw(f"Invalid input: {name} must be a non-empty subset of {VIEWS}, got {views}")


@dataclass
class SceneSettings:
	workspace: float = 0.40
	z_max: float = 0.15
	object_height: float = 0.02
	z_reflex: float = 0.03
	z_release: float = 0.10
	release_dz: float = 0.03
	grasp_radius: float = 0.02
	gripper_size: float = 0.02
	start_pose: tuple = (0.20, 0.20, 0.06, 0.0)
	action_bounds: tuple = (0.05, 0.05, 0.05, 0.26)
	num_objects: int = 2
	leg_length: tuple = (0.05, 0.08)
	leg_width: tuple = (0.015, 0.025)
	min_gap: float = 0.01
	placement_margin: float = 0.05
	placement_retries: int = 200
	reflex_enabled: bool = True
	image_size: tuple = (48, 64)
	pixels_per_meter: float = 110.0
	oblique_elevation: float = 30.0
	background: tuple = (0.45, 0.45, 0.45)

	def validate(self):
		"""Validate scene geometry and thresholds"""
		_check_range("scene.workspace", self.workspace, 0.1)
		_check_range("scene.z_max", self.z_max, self.object_height)
		if not (0 < self.object_height < self.z_reflex < self.z_release < self.z_max):
			throw("Invalid input: scene heights must satisfy 0 < object_height < z_reflex < z_release < z_max")
		_check_range("scene.grasp_radius", self.grasp_radius, 0.0)
		_check_range("scene.gripper_size", self.gripper_size, 1e-3)
		if len(self.action_bounds) != 4 or min(self.action_bounds) <= 0:
			throw(f"Invalid input: scene.action_bounds must be 4 positive values, got {self.action_bounds}")
		if len(self.start_pose) != 4:
			throw("Invalid input: scene.start_pose must be (x, y, z, theta)")
		_check_range("scene.num_objects", self.num_objects, 1)
		_check_interval("scene.leg_length", self.leg_length, 0.01)
		_check_interval("scene.leg_width", self.leg_width, 0.005)
		if self.leg_width[1] >= self.leg_length[0]:
			throw("Invalid input: scene.leg_width must stay below scene.leg_length")
		_check_range("scene.placement_retries", self.placement_retries, 1)
		if len(self.image_size) != 2 or min(self.image_size) < 8:
			throw(f"Invalid input: scene.image_size must be (H, W) of at least 8 pixels, got {self.image_size}")
		_check_range("scene.oblique_elevation", self.oblique_elevation, 1.0, 89.0)
		return self


@dataclass
class CollectSettings:
	n_trajectories: int = 2000
	episode_len: int = 15
	reflex: bool = True
	seed: int = 0
	workers: int = 1
	held_out_fraction: float = 0.1
	smoothing: float = 0.7
	start_height: tuple = (0.0, 0.04)
	views: tuple = VIEWS
	# a second, reflex-free dataset for the push-only predictor; 0 skips it
	push_only_trajectories: int = 0
	push_only_seed: int = 1

	def validate(self):
		_check_range("collect.n_trajectories", self.n_trajectories, 1)
		_check_range("collect.episode_len", self.episode_len, 2)
		_check_range("collect.workers", self.workers, 1)
		_check_range("collect.held_out_fraction", self.held_out_fraction, 0.0, 0.5)
		_check_range("collect.smoothing", self.smoothing, 0.0, 0.99)
		_check_interval("collect.start_height", self.start_height)
		_check_views("collect.views", self.views)
		_check_range("collect.push_only_trajectories", self.push_only_trajectories, 0)
		return self

	def push_only(self):
		"""Settings of the push-only collection: same episodes, reflex off, its own seed"""
		return dataclasses.replace(self, n_trajectories=self.push_only_trajectories, reflex=False, seed=self.push_only_seed)


@dataclass
class NetworkSettings:
	down_widths: tuple = (32, 64, 128)
	up_widths: tuple = (64, 32, 16)
	head_scale: float = 1e-3

	def validate(self):
		if len(self.down_widths) != 3 or len(self.up_widths) != 3:
			throw("Invalid input: network needs 3 downsampling and 3 upsampling layers")
		if min(*self.down_widths, *self.up_widths) < 1:
			throw("Invalid input: network widths must be positive")
		return self


@dataclass
class PredictorSettings:
	network: NetworkSettings = field(default_factory=NetworkSettings)
	optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(rule="adam", lr=1e-3, clip_norm=10.0))
	steps: int = 2000
	batch_size: int = 8
	train_horizon: int = 5
	# longest rollout the predictor accepts
	horizon: int = 15
	seed: int = 0
	log_every: int = 50
	views: tuple = VIEWS

	def validate(self):
		self.network.validate()
		self.optimizer.validate()
		_check_range("predictor.steps", self.steps, 0)
		_check_range("predictor.batch_size", self.batch_size, 1)
		_check_range("predictor.train_horizon", self.train_horizon, 1)
		_check_range("predictor.horizon", self.horizon, self.train_horizon)
		_check_range("predictor.log_every", self.log_every, 1)
		_check_views("predictor.views", self.views)
		return self


@dataclass
class RegistrationSettings:
	network: NetworkSettings = field(default_factory=NetworkSettings)
	optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(rule="adam", lr=1e-3, clip_norm=10.0))
	steps: int = 6000
	ramp_steps: int = 2000
	h_start: int = 1
	h_end: int = 8
	beta: float = 0.1
	batch_size: int = 4
	synthetic_fraction: float = 0.25
	max_shift: int = 8
	neighborhood: int = 5
	seed: int = 0
	log_every: int = 50
	views: tuple = VIEWS

	def validate(self):
		self.network.validate()
		self.optimizer.validate()
		_check_range("registration.steps", self.steps, 0)
		_check_range("registration.ramp_steps", self.ramp_steps, 1)
		_check_range("registration.h_start", self.h_start, 0)
		_check_range("registration.h_end", self.h_end, self.h_start)
		_check_range("registration.beta", self.beta, 0.0)
		_check_range("registration.batch_size", self.batch_size, 1)
		_check_range("registration.synthetic_fraction", self.synthetic_fraction, 0.0, 1.0)
		_check_range("registration.max_shift", self.max_shift, 1)
		if self.neighborhood < 1 or self.neighborhood % 2 == 0:
			throw(f"Invalid input: registration.neighborhood must be odd and positive, got {self.neighborhood}")
		_check_range("registration.log_every", self.log_every, 1)
		_check_views("registration.views", self.views)
		return self


@dataclass
class CEMConfig:
	samples_first: int = 400
	samples_later: int = 200
	elite_frac: float = 0.05
	iterations: int = 3
	horizon: int = 15
	action_repeat: int = 3
	# empty means half of the per-dimension action bound
	init_std: tuple = ()
	warm_start_var_scale: float = 0.25

	@property
	def n_free(self):
		return self.horizon // self.action_repeat

	def elite_count(self, n_samples):
		return max(2, math.ceil(self.elite_frac * n_samples))

	def std(self, action_bounds):
		if self.init_std:
			return tuple(float(s) for s in self.init_std)
		return tuple(0.5 * float(b) for b in action_bounds)

	def validate(self):
		_check_range("cem.samples_first", self.samples_first, 2)
		_check_range("cem.samples_later", self.samples_later, 2)
		_check_range("cem.elite_frac", self.elite_frac, 1e-6, 1.0)
		_check_range("cem.iterations", self.iterations, 1)
		_check_range("cem.horizon", self.horizon, 1)
		_check_range("cem.action_repeat", self.action_repeat, 1)
		if self.horizon % self.action_repeat:
			throw(f"Invalid input: cem.horizon {self.horizon} must be divisible by action_repeat {self.action_repeat}")
		for n_samples in (self.samples_first, self.samples_later):
			if self.elite_count(n_samples) > n_samples:
				throw("Invalid input: cem needs at least 2 elites per iteration")
		if self.init_std and (len(self.init_std) != 4 or min(self.init_std) <= 0):
			throw(f"Invalid input: cem.init_std must be 4 positive values, got {self.init_std}")
		_check_range("cem.warm_start_var_scale", self.warm_start_var_scale, 0.0, 1.0)
		return self


@dataclass
class MPCSettings:
	mode: str = "registration"
	max_steps: int = 120
	success_threshold: float = 15.0
	# meters; a target left off its goal height is not a success at any pixel threshold
	height_tolerance: float = 0.02
	anchors: str = "both"
	cost_kind: str = "pixel_distance"
	neighborhood: int = 5
	# candidates rolled out together per predictor batch
	rollout_chunk: int = 50
	dump_frames: bool = False
	seed: int = 0

	def validate(self):
		if self.mode not in MODES:
			throw(f"Invalid input: mpc.mode must be one of {MODES}, got '{self.mode}'")
		if self.anchors not in ANCHORS:
			throw(f"Invalid input: mpc.anchors must be one of {ANCHORS}, got '{self.anchors}'")
		if self.cost_kind not in COST_KINDS:
			throw(f"Invalid input: mpc.cost_kind must be one of {COST_KINDS}, got '{self.cost_kind}'")
		_check_range("mpc.max_steps", self.max_steps, 0)
		_check_range("mpc.success_threshold", self.success_threshold, 0.0)
		_check_range("mpc.height_tolerance", self.height_tolerance, 0.0)
		_check_range("mpc.rollout_chunk", self.rollout_chunk, 1)
		if self.neighborhood < 1 or self.neighborhood % 2 == 0:
			throw(f"Invalid input: mpc.neighborhood must be odd and positive, got {self.neighborhood}")
		return self


@dataclass
class PlannerSettings:
	cem: CEMConfig = field(default_factory=CEMConfig)
	mpc: MPCSettings = field(default_factory=MPCSettings)

	def validate(self):
		self.cem.validate()
		self.mpc.validate()
		return self


@dataclass
class BenchSettings:
	suites: tuple = ("long", "short")
	n_tasks: dict = field(default_factory=lambda: {"long": 50, "short": 15, "grasp-lift": 10, "grasp-push": 10})
	modes: tuple = MODES
	max_steps: int = 120
	seed: int = 0
	workers: int = 1
	pixel_thresholds: tuple = (1, 2, 3, 5, 7, 10, 15, 20, 25, 30, 40, 50)
	world_thresholds: tuple = (0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2)
	occlusion_scenarios: int = 10
	# modes benchmarked again with the push-only predictor
	push_only_modes: tuple = ("registration",)

	def validate(self):
		if not self.suites or any(suite not in CATEGORIES for suite in self.suites):
			throw(f"Invalid input: bench.suites must be a non-empty subset of {CATEGORIES}, got {self.suites}")
		if not self.modes or any(mode not in MODES for mode in self.modes):
			throw(f"Invalid input: bench.modes must be a non-empty subset of {MODES}, got {self.modes}")
		for suite in self.suites:
			_check_range(f"bench.n_tasks.{suite}", self.n_tasks.get(suite, 0), 1)
		_check_range("bench.max_steps", self.max_steps, 0)
		_check_range("bench.workers", self.workers, 1)
		_check_range("bench.occlusion_scenarios", self.occlusion_scenarios, 0)
		if not self.push_only_modes or any(mode not in MODES for mode in self.push_only_modes):
			throw(
				f"Invalid input: bench.push_only_modes must be a non-empty subset of {MODES}, "
				f"got {self.push_only_modes}"
			)
		return self


@dataclass
class RunConfig:
	seed: int = 0
	scene: SceneSettings = field(default_factory=SceneSettings)
	collect: CollectSettings = field(default_factory=CollectSettings)
	predictor: PredictorSettings = field(default_factory=PredictorSettings)
	registration: RegistrationSettings = field(default_factory=RegistrationSettings)
	planner: PlannerSettings = field(default_factory=PlannerSettings)
	bench: BenchSettings = field(default_factory=BenchSettings)

	def validate(self):
		self.scene.validate()
		self.collect.validate()
		self.predictor.validate()
		self.registration.validate()
		self.planner.validate()
		self.bench.validate()
		if self.predictor.train_horizon >= self.collect.episode_len:
			throw(
				f"Invalid input: predictor.train_horizon ({self.predictor.train_horizon}) must be below "
				f"collect.episode_len ({self.collect.episode_len})"
			)
		if self.planner.cem.horizon > self.predictor.horizon:
			throw(f"Invalid input: cem.horizon ({self.planner.cem.horizon}) exceeds predictor.horizon ({self.predictor.horizon})")
		if self.registration.h_end >= self.collect.episode_len:
			throw(
				f"Invalid input: registration.h_end ({self.registration.h_end}) must be below "
				f"collect.episode_len ({self.collect.episode_len})"
			)
		return self

	def to_dict(self):
		return json.loads(as_json(dataclasses.asdict(self)))

	def hash(self):
		return config_hash(self.to_dict())


def from_dict(cls, data, prefix="", base=None):
	"""Build a settings dataclass from a (partial) dict; unknown keys are rejected, missing keys keep defaults"""
	if not isinstance(data, dict):
		throw(f"Invalid input: '{prefix or cls.__name__}' must be an object, got {type(data).__name__}")
	known = {f.name: f for f in dataclasses.fields(cls)}
	unknown = sorted(set(data) - set(known))
	if unknown:
		throw(f"Invalid input: unknown config keys {[f'{prefix}{key}' for key in unknown]}")

	instance = base if base is not None else cls()
	for name, value in data.items():
		current = getattr(instance, name)
		if dataclasses.is_dataclass(current):
			value = from_dict(type(current), value, prefix=f"{prefix}{name}.", base=current)
		elif isinstance(current, tuple) and isinstance(value, list):
			value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
		elif isinstance(current, dict) and isinstance(value, dict):
			value = {**current, **value}
		setattr(instance, name, value)
	return instance


def _parse_value(text):
	try:
		return json.loads(text)
	except json.JSONDecodeError:
		return text


def apply_override(data, assignment):
	"""Apply one `dotted.key=value` override to a nested config dict; the value is parsed as JSON if possible"""
	if "=" not in assignment:
		throw(f"Invalid input: override '{assignment}' must look like section.key=value")
	path, raw = assignment.split("=", 1)
	keys = [key for key in path.strip().split(".") if key]
	if not keys:
		throw(f"Invalid input: override '{assignment}' has an empty key")
	node = data
	for key in keys[:-1]:
		node = node.setdefault(key, {})
		if not isinstance(node, dict):
			throw(f"Invalid input: override '{assignment}' descends into a non-object value")
	node[keys[-1]] = _parse_value(raw.strip())
	return data


def load_run_config(path=None, overrides=()):
	"""Resolve defaults < config file < overrides into a validated RunConfig"""
	data = load_json_file(path) if path else {}
	for assignment in overrides or ():
		apply_override(data, assignment)
	return from_dict(RunConfig, data).validate()
