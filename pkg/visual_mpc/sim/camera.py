# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import math
from dataclasses import dataclass

import numpy as np

from visual_mpc.utils import throw


@dataclass(frozen=True)
class CameraConfig:
	"""
	Affine world -> pixel map for one view.

	row = row0 + (y - center_y) * scale * y_factor - z * scale * z_factor
	col = col0 + (x - center_x) * scale
	"""

	view: str
	height: int
	width: int
	row0: float
	col0: float
	center_x: float
	center_y: float
	scale: float
	y_factor: float = 1.0
	z_factor: float = 0.0

	def project(self, x, y, z=0.0):
		"""World point(s) to (row, col) pixel coordinates"""
		row = self.row0 + (np.asarray(y) - self.center_y) * self.scale * self.y_factor - np.asarray(z) * self.scale * self.z_factor
		col = self.col0 + (np.asarray(x) - self.center_x) * self.scale
		return row, col

	def project_points(self, points, z=0.0):
		"""(k, 2) world xy points at height z to (k, 2) pixel (row, col)"""
		points = np.asarray(points, dtype=np.float64)
		row, col = self.project(points[:, 0], points[:, 1], z)
		return np.stack([row, col], axis=1)

	def unproject(self, pixel, z=0.0):
		"""Inverse of `project` on the plane at height z; returns world (x, y)"""
		row, col = pixel
		x = (col - self.col0) / self.scale + self.center_x
		y = (row - self.row0 + z * self.scale * self.z_factor) / (self.scale * self.y_factor) + self.center_y
		return float(x), float(y)


def build_cameras(settings):
	"""The two fixed views: top-down and an oblique front view at the configured elevation"""
	height, width = settings.image_size
	common = {
		"height": height,
		"width": width,
		"row0": height / 2,
		"col0": width / 2,
		"center_x": settings.workspace / 2,
		"center_y": settings.workspace / 2,
		"scale": settings.pixels_per_meter,
	}
	elevation = math.radians(settings.oblique_elevation)
	return {
		"top": CameraConfig(view="top", **common),
		"oblique": CameraConfig(view="oblique", y_factor=math.sin(elevation), z_factor=math.cos(elevation), **common),
	}


def get_camera(cameras, view):
	if view not in cameras:
		throw(f"Invalid input: unknown camera view '{view}', expected one of {sorted(cameras)}")
	return cameras[view]
