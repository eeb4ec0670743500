# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import numpy as np

from visual_mpc.utils import throw

CHARBONNIER_EPS = 1e-3


def photometric_loss(a, b, eps=CHARBONNIER_EPS):
	"""Mean generalized Charbonnier penalty sqrt((a - b)^2 + eps^2); returns (loss, grad w.r.t. a)"""
	a = np.asarray(a)
	b = np.asarray(b)
	if a.shape != b.shape:
		throw(f"Invalid input: photometric loss needs equal shapes, got {a.shape} and {b.shape}")
	diff = a - b
	penalty = np.sqrt(diff * diff + eps * eps)
	loss = float(np.mean(penalty))
	# penalty is only zero when eps = 0 and diff = 0; the subgradient there is 0
	grad = diff / np.where(penalty > 0, penalty, 1) / diff.size
	return loss, grad.astype(a.dtype, copy=False)


def smoothness_loss(flow):
	"""Mean L1 norm of first spatial differences of both flow channels; returns (loss, grad)"""
	flow = np.asarray(flow)
	if flow.ndim not in (3, 4) or flow.shape[-1] != 2:
		throw(f"Invalid input: expected a flow field (..., H, W, 2), got {flow.shape}")
	dy = np.diff(flow, axis=-3)
	dx = np.diff(flow, axis=-2)
	count = dy.size + dx.size
	if count == 0:
		return 0.0, np.zeros_like(flow)
	loss = float((np.abs(dy).sum() + np.abs(dx).sum()) / count)

	sign_y = np.sign(dy) / count
	sign_x = np.sign(dx) / count
	grad = np.zeros_like(flow)
	grad[..., 1:, :, :] += sign_y
	grad[..., :-1, :, :] -= sign_y
	grad[..., :, 1:, :] += sign_x
	grad[..., :, :-1, :] -= sign_x
	return loss, grad
