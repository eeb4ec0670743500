# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""Convex-polygon helpers (separating axis tests) used for placement, pushing and grasp release."""

import numpy as np

# penetration below this depth counts as touching, not overlapping
CONTACT_TOLERANCE = 1e-9


def rotation(theta):
	c, s = np.cos(theta), np.sin(theta)
	return np.array([[c, -s], [s, c]])


def transform(points, x, y, theta):
	"""Rotate local (k, 2) points by theta, then translate by (x, y)"""
	return np.asarray(points, dtype=np.float64) @ rotation(theta).T + np.array([x, y])


def rectangle(x0, y0, x1, y1):
	return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def square(x, y, size, theta):
	half = size / 2
	return transform(rectangle(-half, -half, half, half), x, y, theta)


def edge_normals(polygon):
	edges = np.roll(polygon, -1, axis=0) - polygon
	normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
	return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def _axes(p, q):
	return np.concatenate([edge_normals(p), edge_normals(q)])


def separation(p, q):
	"""Largest gap between two convex polygons over their edge normals; negative means penetration depth"""
	axes = _axes(p, q)
	proj_p = p @ axes.T
	proj_q = q @ axes.T
	gaps = np.maximum(proj_q.min(axis=0) - proj_p.max(axis=0), proj_p.min(axis=0) - proj_q.max(axis=0))
	return float(gaps.max())


def overlaps(p, q, tolerance=CONTACT_TOLERANCE):
	return separation(p, q) < -tolerance


def pieces_separation(pieces_a, pieces_b):
	return min(separation(p, q) for p in pieces_a for q in pieces_b)


def pieces_overlap(pieces_a, pieces_b, tolerance=CONTACT_TOLERANCE):
	return pieces_separation(pieces_a, pieces_b) < -tolerance


def sweep_interval(fixed, moving, direction):
	"""
	Open interval (lo, hi) of shifts s for which `moving + s * direction` overlaps `fixed`, or None.

	Both polygons are convex; the overlap set along a line is an interval because it is the intersection of
	per-axis intervals.
	"""
	lo, hi = -np.inf, np.inf
	for axis in _axes(fixed, moving):
		p = fixed @ axis
		q = moving @ axis
		rate = float(direction @ axis)
		if abs(rate) < 1e-15:
			if q.min() < p.max() and q.max() > p.min():
				continue
			return None
		a = (p.min() - q.max()) / rate
		b = (p.max() - q.min()) / rate
		lo = max(lo, min(a, b))
		hi = min(hi, max(a, b))
		if lo >= hi:
			return None
	return lo, hi


def clearing_shift(fixed_pieces, moving_pieces, direction, tolerance=CONTACT_TOLERANCE):
	"""Smallest s >= 0 such that the moving pieces shifted by s * direction overlap none of the fixed pieces"""
	intervals = []
	for p in fixed_pieces:
		for q in moving_pieces:
			interval = sweep_interval(p, q, direction)
			if interval is not None and interval[1] - interval[0] > 2 * tolerance:
				intervals.append(interval)
	s = 0.0
	moved = True
	while moved:
		moved = False
		for lo, hi in intervals:
			if lo + tolerance < s < hi - tolerance:
				s = hi
				moved = True
	return s


def point_in_polygon(point, polygon):
	"""Even-odd rule; points on the boundary may land on either side"""
	x, y = point
	inside = False
	n = len(polygon)
	for i in range(n):
		x0, y0 = polygon[i]
		x1, y1 = polygon[(i + 1) % n]
		if (y0 > y) != (y1 > y):
			cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
			if x < cross:
				inside = not inside
	return inside


def point_polygon_distance(point, polygon):
	"""Distance from a point to a convex polygon, 0 inside"""
	point = np.asarray(point, dtype=np.float64)
	if point_in_polygon(point, polygon):
		return 0.0
	starts = np.asarray(polygon, dtype=np.float64)
	edges = np.roll(starts, -1, axis=0) - starts
	t = np.clip(np.sum((point - starts) * edges, axis=1) / np.sum(edges * edges, axis=1), 0.0, 1.0)
	closest = starts + t[:, None] * edges
	return float(np.min(np.linalg.norm(closest - point, axis=1)))


def point_pieces_distance(point, pieces):
	return min(point_polygon_distance(point, piece) for piece in pieces)
