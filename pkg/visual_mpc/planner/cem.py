# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

from dataclasses import dataclass, field

import numpy as np

from visual_mpc.settings import CEMConfig
from visual_mpc.utils import PlanningError, log_error, logger, throw


@dataclass
class CEMResult:
	best: np.ndarray  # (T, 4) expanded sequence
	best_free: np.ndarray  # (T / action_repeat, 4)
	best_cost: float
	# best-so-far cost after each iteration
	history: list = field(default_factory=list)
	mean: np.ndarray = None
	std: np.ndarray = None
	evaluated: int = 0


def expand_actions(free, action_repeat):
	"""Repeat every free action `action_repeat` times along the time axis"""
	return np.repeat(np.asarray(free, dtype=np.float64), action_repeat, axis=-2)


def initial_distribution(config, action_bounds):
	n_free = config.n_free
	std = np.broadcast_to(np.asarray(config.std(action_bounds), dtype=np.float64), (n_free, 4)).copy()
	return np.zeros((n_free, 4)), std


def warm_start(prev_best, config, action_bounds):
	"""
	Sampling mean and std for the next step: the previous best free actions shifted one slot forward
	with the last slot repeated. Variances shrink by warm_start_var_scale except in the last slot.
	Without a previous best the planner starts cold.
	"""
	mean, std = initial_distribution(config, action_bounds)
	if prev_best is None:
		return mean, std
	prev_best = np.asarray(prev_best, dtype=np.float64)
	if prev_best.shape != mean.shape:
		throw(f"Invalid input: previous best has shape {prev_best.shape}, expected {mean.shape}")
	mean = np.concatenate([prev_best[1:], prev_best[-1:]])
	std[:-1] *= np.sqrt(config.warm_start_var_scale)
	return mean, std


def cem_optimize(cost_fn, mean, std, config, rng, action_bounds):
	"""
	Cross-entropy search over free actions. `cost_fn` maps expanded candidates (N, T, 4) to costs (N,).
	Non-finite costs rank last; ties keep candidate order.
	"""
	config = config or CEMConfig()
	bounds = np.asarray(action_bounds, dtype=np.float64)
	mean = np.asarray(mean, dtype=np.float64)
	std = np.asarray(std, dtype=np.float64)
	best_cost, best_free = np.inf, None
	history = []
	evaluated = 0

	for iteration in range(config.iterations):
		n_samples = config.samples_first if iteration == 0 else config.samples_later
		samples = mean + std * rng.standard_normal((n_samples, *mean.shape))
		samples = np.clip(samples, -bounds, bounds)
		costs = np.asarray(cost_fn(expand_actions(samples, config.action_repeat)), dtype=np.float64).reshape(-1)
		if costs.shape != (n_samples,):
			throw(f"Invalid input: cost function returned {costs.shape} costs for {n_samples} candidates")
		evaluated += n_samples
		finite = np.isfinite(costs)
		if not finite.any():
			message = (
				f"All {n_samples} candidate costs are non-finite in CEM iteration {iteration} "
				f"(mean {np.round(mean, 4).tolist()}, std {np.round(std, 4).tolist()})"
			)
			log_error(message, "Planning Failed")
			raise PlanningError(message)
		costs = np.where(finite, costs, np.inf)

		order = np.argsort(costs, kind="stable")
		elites = samples[order[: config.elite_count(n_samples)]]
		if costs[order[0]] < best_cost:
			best_cost, best_free = float(costs[order[0]]), samples[order[0]].copy()
		history.append(best_cost)
		mean = elites.mean(axis=0)
		std = elites.std(axis=0)
		logger("planner").debug(
			f"CEM iteration {iteration}: {n_samples} samples, elite cost {costs[order[0]]:.4f}, best {best_cost:.4f}"
		)

	return CEMResult(
		best=expand_actions(best_free, config.action_repeat),
		best_free=best_free,
		best_cost=best_cost,
		history=history,
		mean=mean,
		std=std,
		evaluated=evaluated,
	)
