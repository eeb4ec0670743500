# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import os

import numpy as np
from PIL import Image, ImageDraw

from visual_mpc.numkit.kernels import bilinear_warp
from visual_mpc.regnet.tracking import transport_point
from visual_mpc.sim.renderer import frame_to_u8
from visual_mpc.utils import ensure_dir, logger, throw

START_MARK = (255, 0, 0)
GOAL_MARK = (0, 255, 0)
PADDING = 2


def registration_strip(network, frames, start_frame, goal_frame, start_pixels=(), goal_pixels=(), neighborhood=5):
	"""
	Three rows of frames per time step: I_t, I_t warped toward the start image, I_t warped toward
	the goal image. Returns (rows, marks) where marks[t] lists ((row, col), color) for I_t.
	"""
	frames = np.asarray(frames, dtype=np.float32)
	if frames.ndim != 4:
		throw(f"Invalid input: expected (T, H, W, 3) frames, got {frames.shape}")
	count = frames.shape[0]
	starts = np.repeat(np.asarray(start_frame, dtype=np.float32)[None], count, axis=0)
	goals = np.repeat(np.asarray(goal_frame, dtype=np.float32)[None], count, axis=0)
	to_start = network.register(frames, starts)
	to_goal = network.register(frames, goals)
	rows = [frames, bilinear_warp(frames, to_start), bilinear_warp(frames, to_goal)]
	marks = []
	for t in range(count):
		marks.append(
			[(transport_point(to_start[t], d, neighborhood), START_MARK) for d in start_pixels]
			+ [(transport_point(to_goal[t], d, neighborhood), GOAL_MARK) for d in goal_pixels]
		)
	return rows, marks


def compose_strip(rows, marks=None, scale=3):
	"""Tile a strip into one Pillow image, drawing small crosses at the marked pixels of the first row"""
	n_rows, n_cols = len(rows), rows[0].shape[0]
	height, width = rows[0].shape[1:3]
	cell_h, cell_w = height * scale + PADDING, width * scale + PADDING
	canvas = Image.new("RGB", (n_cols * cell_w, n_rows * cell_h), (0, 0, 0))
	for r, row in enumerate(rows):
		for c in range(n_cols):
			tile = Image.fromarray(frame_to_u8(row[c])).resize((width * scale, height * scale), Image.NEAREST)
			canvas.paste(tile, (c * cell_w, r * cell_h))
	draw = ImageDraw.Draw(canvas)
	for c, column_marks in enumerate(marks or []):
		for (row, col), color in column_marks:
			x = c * cell_w + (col + 0.5) * scale
			y = (row + 0.5) * scale
			draw.line([(x - scale, y), (x + scale, y)], fill=color)
			draw.line([(x, y - scale), (x, y + scale)], fill=color)
	return canvas


def export_strip(path, network, frames, start_frame, goal_frame, start_pixels=(), goal_pixels=(), scale=3, neighborhood=5):
	rows, marks = registration_strip(network, frames, start_frame, goal_frame, start_pixels, goal_pixels, neighborhood)
	directory = os.path.dirname(path)
	if directory:
		ensure_dir(directory)
	compose_strip(rows, marks, scale).save(path, format="PNG")
	logger("registration").info(f"Wrote registration strip of {len(frames)} frames to {path}")
	return path
