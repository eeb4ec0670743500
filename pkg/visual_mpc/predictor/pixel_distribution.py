# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""Beliefs over a designated pixel's location: (..., H, W) float64 maps summing to 1."""

import numpy as np

from visual_mpc.numkit.kernels import bilinear_warp
from visual_mpc.utils import ValidationError, throw

MASS_TOLERANCE = 1e-6
# below this total mass a warped map is considered lost
MIN_MASS = 1e-12


def delta_distribution(shape, pixel):
	"""Point mass at the nearest in-bounds pixel to (row, col)"""
	height, width = shape
	row = min(max(int(np.floor(pixel[0] + 0.5)), 0), height - 1)
	col = min(max(int(np.floor(pixel[1] + 0.5)), 0), width - 1)
	distribution = np.zeros((height, width), dtype=np.float64)
	distribution[row, col] = 1.0
	return distribution


def check_distribution(distribution, name="distribution"):
	distribution = np.asarray(distribution)
	if distribution.ndim < 2:
		throw(f"Invalid input: {name} must be (..., H, W), got shape {distribution.shape}")
	if not np.all(np.isfinite(distribution)) or np.any(distribution < 0):
		throw(f"Invalid input: {name} must be finite and nonnegative")
	mass = distribution.sum(axis=(-2, -1))
	if np.any(np.abs(mass - 1.0) > MASS_TOLERANCE):
		throw(f"Invalid input: {name} is not normalized (mass {np.round(mass, 8).tolist()})")
	return distribution


def renormalize(distribution, fallback=None):
	"""Clip to nonnegative and rescale each map to unit mass; maps whose mass vanished take `fallback`"""
	distribution = np.maximum(np.asarray(distribution, dtype=np.float64), 0.0)
	mass = distribution.sum(axis=(-2, -1), keepdims=True)
	lost = mass <= MIN_MASS
	normalized = distribution / np.where(lost, 1.0, mass)
	if np.any(lost):
		if fallback is None:
			raise ValidationError("Invalid input: distribution lost all mass and no fallback was given")
		normalized = np.where(lost, np.broadcast_to(fallback, normalized.shape), normalized)
	return normalized


def warp_distribution(distribution, flow):
	"""
	Push (N, K, H, W) beliefs through the same backward warp as the frames, flow (N, H, W, 2), then
	renormalize; a map that loses all its mass keeps its previous value.
	"""
	distribution = np.asarray(distribution, dtype=np.float64)
	channels_last = np.moveaxis(distribution, 1, -1)
	warped = bilinear_warp(channels_last, np.asarray(flow, dtype=np.float64))
	return renormalize(np.moveaxis(warped, -1, 1), fallback=distribution)


def expected_position(distribution):
	"""Probability-weighted mean (row, col); (..., H, W) -> (..., 2)"""
	distribution = np.asarray(distribution, dtype=np.float64)
	mass = distribution.sum(axis=(-2, -1))
	if np.any(mass <= 0):
		throw("Invalid input: cannot take the expected position of an all-zero map")
	height, width = distribution.shape[-2:]
	rows = np.einsum("...hw,h->...", distribution, np.arange(height, dtype=np.float64)) / mass
	cols = np.einsum("...hw,w->...", distribution, np.arange(width, dtype=np.float64)) / mass
	return np.stack([rows, cols], axis=-1)
