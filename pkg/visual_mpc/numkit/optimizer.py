# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

from dataclasses import dataclass, field

import numpy as np

from visual_mpc.utils import TrainingDivergedError, throw

RULES = ("sgd", "adam")


@dataclass
class OptimizerConfig:
	rule: str = "sgd"
	lr: float = 0.01
	momentum: float = 0.9
	beta1: float = 0.9
	beta2: float = 0.999
	eps: float = 1e-8
	# 0 disables global-norm clipping
	clip_norm: float = 0.0

	def validate(self):
		if self.rule not in RULES:
			throw(f"Invalid input: optimizer rule must be one of {RULES}, got '{self.rule}'")
		if self.lr <= 0:
			throw("Invalid input: learning rate must be positive")
		if not (0 <= self.momentum < 1):
			throw("Invalid input: momentum must be in [0, 1)")
		if self.clip_norm < 0:
			throw("Invalid input: clip_norm must be non-negative")
		return self


@dataclass
class OptimizerState:
	step: int = 0
	velocity: dict = field(default_factory=dict)
	first_moment: dict = field(default_factory=dict)
	second_moment: dict = field(default_factory=dict)


def global_norm(grads):
	return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def optimizer_step(params, grads, state, config):
	"""Update `params` in place from `grads`; the state carries momentum / moment estimates"""
	if set(params) != set(grads):
		throw(f"Invalid input: gradient names {sorted(grads)} do not match parameters {sorted(params)}")
	for name, grad in grads.items():
		if grad.shape != params[name].shape:
			throw(f"Invalid input: gradient for '{name}' has shape {grad.shape}, expected {params[name].shape}")
		if not np.all(np.isfinite(grad)):
			raise TrainingDivergedError(
				f"Non-finite gradient for '{name}' at optimizer step {state.step} "
				f"(nan: {int(np.isnan(grad).sum())}, inf: {int(np.isinf(grad).sum())})"
			)

	scale = 1.0
	if config.clip_norm > 0:
		norm = global_norm(grads)
		if norm > config.clip_norm:
			scale = config.clip_norm / norm

	state.step += 1
	for name in sorted(params):
		param = params[name]
		grad = grads[name] * scale
		if config.rule == "sgd":
			velocity = state.velocity.get(name)
			velocity = grad.copy() if velocity is None else config.momentum * velocity + grad
			state.velocity[name] = velocity
			param -= (config.lr * velocity).astype(param.dtype, copy=False)
		else:
			m = state.first_moment.get(name, np.zeros_like(param))
			v = state.second_moment.get(name, np.zeros_like(param))
			m = config.beta1 * m + (1 - config.beta1) * grad
			v = config.beta2 * v + (1 - config.beta2) * grad * grad
			state.first_moment[name] = m
			state.second_moment[name] = v
			m_hat = m / (1 - config.beta1**state.step)
			v_hat = v / (1 - config.beta2**state.step)
			param -= (config.lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(param.dtype, copy=False)
	return params, state
