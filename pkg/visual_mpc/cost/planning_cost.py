# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from visual_mpc.predictor.pixel_distribution import check_distribution, delta_distribution, expected_position
from visual_mpc.settings import COST_KINDS
from visual_mpc.utils import ValidationError, throw

# photometric errors are floored before inversion
WEIGHT_FLOOR = 1e-4
WEIGHT_TOLERANCE = 1e-9
ANCHOR_KINDS = ("start", "goal")


@lru_cache(maxsize=64)
def _distance_map(shape, goal):
	height, width = shape
	rows = np.arange(height, dtype=np.float64)[:, None] - goal[0]
	cols = np.arange(width, dtype=np.float64)[None, :] - goal[1]
	distances = np.sqrt(rows * rows + cols * cols)
	distances.setflags(write=False)
	return distances


def distance_map(shape, goal):
	"""(H, W) Euclidean distance of every pixel to the goal pixel"""
	return _distance_map(tuple(int(v) for v in shape), (float(goal[0]), float(goal[1])))


def expected_distance(beliefs, goals):
	"""
	Exact expected distance to the goal under each belief map.

	beliefs (..., K, H, W) and goals (K, 2) -> (..., K)
	"""
	beliefs = np.asarray(beliefs, dtype=np.float64)
	goals = np.asarray(goals, dtype=np.float64).reshape(-1, 2)
	if beliefs.shape[-3] != len(goals):
		throw(f"Invalid input: {beliefs.shape[-3]} belief maps for {len(goals)} goal pixels")
	maps = np.stack([distance_map(beliefs.shape[-2:], goal) for goal in goals])
	return np.einsum("...khw,khw->...k", beliefs, maps)


def pixel_cost(distributions, goal):
	"""Sum over the rollout of the expected distance to `goal`; distributions (T, H, W)"""
	distributions = check_distribution(np.asarray(distributions, dtype=np.float64), "P")
	if distributions.ndim == 2:
		distributions = distributions[None]
	return float(expected_distance(distributions[:, None], [goal]).sum())


def weights(errors, floor=WEIGHT_FLOOR):
	"""Inverse-error weights normalized to sum to one; errors below `floor` are raised to it"""
	errors = np.asarray(errors, dtype=np.float64).reshape(-1)
	if errors.size == 0:
		throw("Invalid input: no photometric errors to weight")
	if not np.all(np.isfinite(errors)) or np.any(errors < 0):
		throw(f"Invalid input: photometric errors must be finite and nonnegative, got {errors.tolist()}")
	inverse = 1.0 / np.maximum(errors, floor)
	return inverse / inverse.sum()


def total_cost(entry_weights, entry_costs):
	"""Weighted sum over the last axis of `entry_costs`"""
	entry_weights = np.asarray(entry_weights, dtype=np.float64)
	entry_costs = np.asarray(entry_costs, dtype=np.float64)
	if entry_costs.shape[-1:] != entry_weights.shape:
		throw(f"Invalid input: {entry_costs.shape[-1:]} entry costs for {entry_weights.shape} weights")
	return entry_costs @ entry_weights


@dataclass(frozen=True)
class PixelEntry:
	"""One designated pixel as seen from one view through one registration anchor"""

	view: str
	point: int
	target: int
	anchor: str
	estimate: tuple
	goal: tuple
	error: float = 0.0
	weight: float = 0.0

	@property
	def key(self):
		return (self.view, self.point, self.anchor)


@dataclass
class DesignatedPixelSet:
	entries: list
	# view -> (K, H, W) beliefs replacing point masses at the estimates (predictor propagation)
	priors: dict = field(default_factory=dict)

	@classmethod
	def weighted(cls, entries, priors=None, uniform=False):
		"""Attach inverse-error weights (or equal weights) to entries"""
		entries = list(entries)
		values = weights(np.ones(len(entries)) if uniform else [e.error for e in entries])
		return cls([replace(e, weight=float(w)) for e, w in zip(entries, values, strict=True)], dict(priors or {})).validate()

	def validate(self):
		keys = [e.key for e in self.entries]
		if len(set(keys)) != len(keys):
			throw("Invalid input: designated pixel entries must be unique per (view, point, anchor)")
		if any(e.anchor not in ANCHOR_KINDS for e in self.entries):
			throw(f"Invalid input: entry anchors must be in {ANCHOR_KINDS}")
		values = self.weights
		if np.any(values < 0) or abs(values.sum() - 1.0) > WEIGHT_TOLERANCE:
			raise ValidationError(f"Invalid input: entry weights must be nonnegative and sum to 1, got {values.tolist()}")
		for view, prior in self.priors.items():
			if len(prior) != len(self.indices(view)):
				throw(f"Invalid input: {len(prior)} prior maps for {len(self.indices(view))} entries in view '{view}'")
		return self

	@property
	def weights(self):
		return np.array([e.weight for e in self.entries], dtype=np.float64)

	@property
	def views(self):
		return tuple(dict.fromkeys(e.view for e in self.entries))

	def indices(self, view):
		return [i for i, e in enumerate(self.entries) if e.view == view]

	def targets(self, view):
		return [self.entries[i].target for i in self.indices(view)]

	def goals(self, view):
		return np.array([self.entries[i].goal for i in self.indices(view)], dtype=np.float64)

	def distributions(self, view, shape):
		"""(K, H, W) initial beliefs for the entries of one view"""
		if view in self.priors:
			return np.asarray(self.priors[view], dtype=np.float64)
		return np.stack([delta_distribution(shape, self.entries[i].estimate) for i in self.indices(view)])

	def with_estimates_from_priors(self):
		"""Estimates set to the expected positions of the priors"""
		entries = list(self.entries)
		for view, prior in self.priors.items():
			for i, position in zip(self.indices(view), expected_position(prior), strict=True):
				entries[i] = replace(entries[i], estimate=(float(position[0]), float(position[1])))
		return DesignatedPixelSet(entries, self.priors)


@dataclass
class CostReport:
	entry_costs: np.ndarray
	weights: np.ndarray
	total: float
	keys: list
	cost_kind: str = "pixel_distance"

	def validate(self):
		if abs(float(total_cost(self.weights, self.entry_costs)) - self.total) > WEIGHT_TOLERANCE * max(1.0, abs(self.total)):
			throw("Invalid input: report total does not match its weighted entry costs")
		return self

	def as_dict(self):
		return {
			"cost_kind": self.cost_kind,
			"total": self.total,
			"entries": [
				{"key": list(key), "cost": float(c), "weight": float(w)}
				for key, c, w in zip(self.keys, self.entry_costs, self.weights, strict=True)
			],
		}


def pixelwise_cost(final_frames, goal_frame):
	"""Mean squared error between each predicted final frame (N, H, W, 3) and the goal frame"""
	final_frames = np.asarray(final_frames, dtype=np.float64)
	diff = final_frames - np.asarray(goal_frame, dtype=np.float64)
	return np.mean(diff * diff, axis=(-3, -2, -1))


def warp_length_cost(final_frames, goal_frame, registration):
	"""Mean flow magnitude registering each predicted final frame to the goal frame"""
	final_frames = np.asarray(final_frames, dtype=np.float32)
	goals = np.broadcast_to(np.asarray(goal_frame, dtype=np.float32), final_frames.shape)
	flow = registration.register(final_frames, goals).astype(np.float64)
	return np.mean(np.linalg.norm(flow, axis=-1), axis=(-2, -1))


def baseline_costs(final_frame, goal_frame, registration=None):
	"""The whole-image costs for one predicted final frame"""
	result = {"pixelwise": float(pixelwise_cost(final_frame[None], goal_frame)[0])}
	if registration is not None:
		result["warp_length"] = float(warp_length_cost(final_frame[None], goal_frame, registration)[0])
	return result


class PlanningCost:
	"""
	Scores candidate action sequences (N, T, 4) for one MPC step by rolling out every view's current
	frame with the predictor. `pixel_distance` sums the weighted expected distances of all entries;
	the whole-image kinds average a per-view score of the final predicted frame.
	"""

	def __init__(self, predictor, frames, pixel_set, goal_frames=None, cost_kind="pixel_distance", registration=None, chunk=50):
		if cost_kind not in COST_KINDS:
			throw(f"Invalid input: cost kind must be one of {COST_KINDS}, got '{cost_kind}'")
		if cost_kind == "warp_length" and registration is None:
			throw("Invalid input: the warp_length cost needs a registration network")
		if cost_kind != "pixel_distance":
			missing = [view for view in pixel_set.views if view not in (goal_frames or {})]
			if missing:
				throw(f"Invalid input: the {cost_kind} cost needs goal frames for views {missing}")
		self.predictor = predictor
		self.frames = frames
		self.pixel_set = pixel_set
		self.goal_frames = goal_frames or {}
		self.cost_kind = cost_kind
		self.registration = registration
		self.chunk = int(chunk)
		self.evaluated = 0

	@property
	def keys(self):
		if self.cost_kind == "pixel_distance":
			return [e.key for e in self.pixel_set.entries]
		return [(view, -1, self.cost_kind) for view in self.pixel_set.views]

	@property
	def weights(self):
		if self.cost_kind == "pixel_distance":
			return self.pixel_set.weights
		n_views = len(self.pixel_set.views)
		return np.full(n_views, 1.0 / n_views)

	def _view_costs(self, view, actions):
		frame = self.frames[view]
		beliefs = self.pixel_set.distributions(view, frame.shape[:2])
		goals = self.pixel_set.goals(view)
		costs = np.zeros((len(actions), len(goals)))
		final = None
		for _, frames, predicted in self.predictor.iter_rollout(frame, beliefs, actions, view=view):
			if self.cost_kind == "pixel_distance":
				costs += expected_distance(predicted, goals)
			final = frames
		if self.cost_kind == "pixel_distance":
			return costs
		if final is None:
			final = np.broadcast_to(frame, (len(actions), *frame.shape))
		if self.cost_kind == "pixelwise":
			return pixelwise_cost(final, self.goal_frames[view])[:, None]
		return warp_length_cost(final, self.goal_frames[view], self.registration)[:, None]

	def entry_costs(self, actions):
		"""(N, E) per-entry costs; candidates are evaluated in chunks and reassembled by index"""
		actions = np.asarray(actions, dtype=np.float64)
		if actions.ndim != 3:
			throw(f"Invalid input: candidate actions must be (N, T, 4), got {actions.shape}")
		views = self.pixel_set.views
		columns = len(self.pixel_set.entries) if self.cost_kind == "pixel_distance" else len(views)
		result = np.zeros((len(actions), columns))
		for start in range(0, len(actions), self.chunk):
			chunk = actions[start : start + self.chunk]
			for v, view in enumerate(views):
				costs = self._view_costs(view, chunk)
				if self.cost_kind == "pixel_distance":
					result[start : start + len(chunk), self.pixel_set.indices(view)] = costs
				else:
					result[start : start + len(chunk), v] = costs[:, 0]
		self.evaluated += len(actions)
		return result

	def __call__(self, actions):
		return total_cost(self.weights, self.entry_costs(actions))

	def report(self, actions):
		"""CostReport of a single action sequence (T, 4)"""
		entry_costs = self.entry_costs(np.asarray(actions, dtype=np.float64)[None])[0]
		return CostReport(
			entry_costs=entry_costs,
			weights=self.weights,
			total=float(total_cost(self.weights, entry_costs)),
			keys=self.keys,
			cost_kind=self.cost_kind,
		)
