# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import math

import numpy as np

from visual_mpc.utils import throw


def _nearest(value, size):
	return min(max(math.floor(value + 0.5), 0), size - 1)


def transport_point(flow, pixel, neighborhood=5):
	"""
	Move a (row, col) pixel along a flow field: add the per-axis median of the flow over the
	neighborhood window around it (clipped to the image), then round and clamp to the image.
	"""
	flow = np.asarray(flow)
	if flow.ndim != 3 or flow.shape[-1] != 2:
		throw(f"Invalid input: expected an (H, W, 2) flow, got {flow.shape}")
	if neighborhood < 1 or neighborhood % 2 == 0:
		throw(f"Invalid input: neighborhood must be odd and positive, got {neighborhood}")
	height, width = flow.shape[:2]
	row, col = float(pixel[0]), float(pixel[1])
	r, c = _nearest(row, height), _nearest(col, width)
	k = neighborhood // 2
	window = flow[max(r - k, 0) : r + k + 1, max(c - k, 0) : c + k + 1]
	dx = float(np.median(window[..., 0]))
	dy = float(np.median(window[..., 1]))
	return _nearest(row + dy, height), _nearest(col + dx, width)


def transport_points(flow, pixels, neighborhood=5):
	return [transport_point(flow, pixel, neighborhood) for pixel in pixels]


def point_photometric_error(target, warped, pixel):
	"""Euclidean color distance between two frames at the pixel nearest to (row, col)"""
	height, width = np.shape(target)[:2]
	row, col = _nearest(float(pixel[0]), height), _nearest(float(pixel[1]), width)
	diff = np.asarray(target[row, col], dtype=np.float64) - np.asarray(warped[row, col], dtype=np.float64)
	return float(np.sqrt(np.sum(diff * diff)))
