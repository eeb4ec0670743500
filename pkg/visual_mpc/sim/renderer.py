# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import numpy as np
from PIL import Image, ImageDraw

from visual_mpc.sim.geometry import square

OPEN_GRIPPER_COLOR = (255, 255, 255)
CLOSED_GRIPPER_COLOR = (0, 0, 0)
# marker half-size in pixels at the table and its growth per meter of height
MARKER_BASE = 1.5
MARKER_GROWTH = 20.0


def to_u8(color):
	return tuple(int(round(255 * float(c))) for c in color)


def frame_to_u8(frame):
	return np.clip(np.rint(np.asarray(frame) * 255), 0, 255).astype(np.uint8)


def u8_to_frame(data):
	return np.asarray(data, dtype=np.float32) / 255.0


def _pil_points(pixels):
	"""(k, 2) (row, col) pixel coordinates to the (x, y) tuples Pillow expects"""
	return [(float(col), float(row)) for row, col in pixels]


def render(state, camera, settings):
	"""Flat-shaded (H, W, 3) float32 frame in [0, 1]; objects drawn bottom-up by height, gripper on top"""
	image = Image.new("RGB", (camera.width, camera.height), to_u8(settings.background))
	draw = ImageDraw.Draw(image)
	for obj in sorted(state.objects, key=lambda o: (o.z, o.id)):
		draw.polygon(_pil_points(camera.project_points(obj.outline(), obj.z)), fill=to_u8(obj.color))

	x, y, z, theta = state.gripper
	row, col = camera.project(x, y, z)
	half = MARKER_BASE + MARKER_GROWTH * z
	# the marker is a pixel-space square, so it is rotated in image coordinates
	marker = square(float(col), float(row), 2 * half, theta)
	color = CLOSED_GRIPPER_COLOR if state.grasp_closed else OPEN_GRIPPER_COLOR
	draw.polygon([(float(px), float(py)) for px, py in marker], fill=color)
	return u8_to_frame(image)


def export_png(frame, path, scale=1):
	image = Image.fromarray(frame_to_u8(frame))
	if scale != 1:
		image = image.resize((image.width * scale, image.height * scale), Image.NEAREST)
	image.save(path, format="PNG")
	return path


def load_png(path):
	with Image.open(path) as image:
		return u8_to_frame(image.convert("RGB"))
