# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import colorsys
import dataclasses
import math

import numpy as np

from visual_mpc.settings import SceneSettings
from visual_mpc.sim.camera import build_cameras, get_camera
from visual_mpc.sim.geometry import (
	CONTACT_TOLERANCE,
	clearing_shift,
	pieces_overlap,
	pieces_separation,
	point_pieces_distance,
	rotation,
	square,
)
from visual_mpc.sim.renderer import render
from visual_mpc.sim.world_state import LShape, ObjectState, WorldState
from visual_mpc.utils import RejectedConfigurationError, logger

COLOR_SATURATION = 0.75
COLOR_VALUE = 0.9


def _wrap_angle(theta):
	if -math.pi <= theta < math.pi:
		return theta
	return (theta + math.pi) % (2 * math.pi) - math.pi


class TabletopSimulator:
	"""Quasi-static kinematic tabletop: a 4-DoF gripper pushing and grasping L-shaped objects"""

	def __init__(self, settings=None, reflex=None):
		self.settings = (settings or SceneSettings()).validate()
		self.reflex_enabled = self.settings.reflex_enabled if reflex is None else bool(reflex)
		self.cameras = build_cameras(self.settings)
		self.action_bounds = np.asarray(self.settings.action_bounds, dtype=np.float64)

	# Scenes
	# ------

	def random_shape(self, rng):
		s = self.settings
		return LShape(
			leg_a=float(rng.uniform(*s.leg_length)),
			leg_b=float(rng.uniform(*s.leg_length)),
			width=float(rng.uniform(*s.leg_width)),
		)

	def random_color(self, rng):
		return tuple(float(c) for c in colorsys.hsv_to_rgb(float(rng.uniform()), COLOR_SATURATION, COLOR_VALUE))

	def place_object(self, rng, object_id, placed):
		"""Draw an object pose clear of `placed` by at least `min_gap`; None when retries run out"""
		s = self.settings
		shape = self.random_shape(rng)
		color = self.random_color(rng)
		low, high = s.placement_margin, s.workspace - s.placement_margin
		for _ in range(s.placement_retries):
			candidate = ObjectState(
				id=object_id,
				shape=shape,
				color=color,
				x=float(rng.uniform(low, high)),
				y=float(rng.uniform(low, high)),
				theta=float(rng.uniform(-math.pi, math.pi)),
			)
			if all(pieces_separation(candidate.pieces(), other.pieces()) >= s.min_gap for other in placed):
				return candidate
		return None

	def reset(self, seed, num_objects=None, gripper=None):
		"""Seeded scene: gripper at the canonical raised pose (or `gripper`), objects placed without overlap"""
		num_objects = self.settings.num_objects if num_objects is None else int(num_objects)
		if num_objects < 1:
			raise RejectedConfigurationError(f"Invalid input: need at least one object, got {num_objects}")
		rng = np.random.default_rng(seed)
		objects = []
		for object_id in range(num_objects):
			obj = self.place_object(rng, object_id, objects)
			if obj is None:
				raise RejectedConfigurationError(
					f"Could not place {num_objects} objects without overlap (seed {seed}, "
					f"{self.settings.placement_retries} retries per object)"
				)
			objects.append(obj)
		pose = tuple(float(v) for v in (gripper if gripper is not None else self.settings.start_pose))
		state = WorldState(gripper=pose, objects=tuple(objects))
		return state.validate(self.settings.workspace, self.settings.z_max)

	# Dynamics
	# --------

	def clamp_action(self, action):
		action = np.asarray(action, dtype=np.float64).reshape(4)
		return np.clip(action, -self.action_bounds, self.action_bounds)

	def footprint(self, x, y, theta):
		return square(x, y, self.settings.gripper_size, theta)

	def _at_table(self, z):
		return z < self.settings.object_height

	def _table_objects(self, objects, held):
		return [obj for obj in objects.values() if obj.id != held and self._at_table(obj.z)]

	def _settle_height(self, state, x, y, theta, z_new):
		"""A gripper coming down on top of an object rests on it instead of sinking into it"""
		z_old = state.gripper[2]
		if self._at_table(z_old) or not self._at_table(z_new):
			return z_new
		footprint = [self.footprint(x, y, theta)]
		objects = {obj.id: obj for obj in state.objects}
		for obj in self._table_objects(objects, state.held_object):
			if pieces_overlap(footprint, obj.pieces()):
				return self.settings.object_height
		return z_new

	def _push(self, objects, held, footprint, direction, distance):
		"""
		Resolve penetration by translating objects along `direction`, cascading through object contacts.

		Returns None when an object would have to travel farther than the pusher displacement plus its
		penetration depth (e.g. a rotating gripper wedged against a face parallel to the motion).
		"""
		# pusher name -> pieces; objects join once they have moved
		pushers = {"gripper": [footprint]}
		for _ in range(2 * len(objects) + 2):
			changed = False
			for obj_id in sorted(objects):
				obj = objects[obj_id]
				if obj_id == held or not self._at_table(obj.z):
					continue
				for name, pusher in list(pushers.items()):
					if name == obj_id:
						continue
					pieces = obj.pieces()
					depth = -pieces_separation(pusher, pieces)
					if depth <= CONTACT_TOLERANCE:
						continue
					shift = clearing_shift(pusher, pieces, direction)
					if shift > distance + depth + CONTACT_TOLERANCE:
						return None
					if shift <= 0:
						continue
					obj = obj.moved(dx=shift * direction[0], dy=shift * direction[1])
					objects[obj_id] = obj
					pushers[obj_id] = obj.pieces()
					changed = True
			if not changed:
				break
		return objects

	def _valid(self, objects, held, x, y, z, theta):
		s = self.settings
		for obj in objects.values():
			if not (0 <= obj.x <= s.workspace and 0 <= obj.y <= s.workspace):
				return False
		ordered = [objects[i] for i in sorted(objects)]
		for i, a in enumerate(ordered):
			for b in ordered[i + 1 :]:
				if abs(a.z - b.z) < s.object_height and pieces_overlap(a.pieces(), b.pieces()):
					return False
		footprint = [self.footprint(x, y, theta)]
		for obj in objects.values():
			if obj.id != held and z < obj.z + s.object_height and pieces_overlap(footprint, obj.pieces()):
				return False
		return True

	def _move(self, state, x, y, z, theta, dtheta):
		"""Gripper to (x, y, z, theta) carrying the held object and pushing table objects; None if blocked"""
		gx, gy, gz, _ = state.gripper
		objects = {obj.id: obj for obj in state.objects}
		held = state.held_object
		if held is not None:
			obj = objects[held]
			obj_z = obj.z if z == gz else max(0.0, z - state.grasp_offset[2])
			objects[held] = dataclasses.replace(obj, x=obj.x + (x - gx), y=obj.y + (y - gy), z=obj_z, theta=obj.theta + dtheta)

		displacement = np.array([x - gx, y - gy])
		distance = float(np.hypot(*displacement))
		if self._at_table(gz) and self._at_table(z) and distance > 1e-12:
			objects = self._push(objects, held, self.footprint(x, y, theta), displacement / distance, distance)

		if objects is None or not self._valid(objects, held, x, y, z, theta):
			return None
		return state.replace(gripper=(x, y, z, theta), objects=tuple(objects[obj.id] for obj in state.objects))

	def release(self, state):
		"""Open the gripper; a held object drops to the table unless the drop spot is occupied"""
		if state.held_object is None:
			return state.replace(grasp_closed=False, grasp_offset=(0.0, 0.0, 0.0))
		dropped = dataclasses.replace(state.object(state.held_object), z=0.0)
		for obj in state.objects:
			if obj.id != dropped.id and self._at_table(obj.z) and pieces_overlap(obj.pieces(), dropped.pieces()):
				logger("sim").debug(f"Release of object {dropped.id} refused: drop spot overlaps object {obj.id}")
				return state
		return state.with_object(dropped).replace(grasp_closed=False, held_object=None, grasp_offset=(0.0, 0.0, 0.0))

	def grasp_reflex(self, state):
		"""
		Close the gripper below z_reflex and pick up the nearest object whose body lies within the grasp radius.

		A gripper that closed on nothing opens again once it is raised back to z_reflex.
		"""
		s = self.settings
		gx, gy, gz, _ = state.gripper
		if state.grasp_closed:
			# nothing was caught: reopen at z_reflex so the next descent can grasp again without first
			# climbing past z_release; a held object is only let go through release()
			if state.held_object is None and gz >= s.z_reflex:
				return state.replace(grasp_closed=False)
			return state
		if gz >= s.z_reflex:
			return state
		best = None
		for obj in state.objects:
			distance = point_pieces_distance((gx, gy), obj.pieces())
			if obj.z < s.z_reflex and distance <= s.grasp_radius and (best is None or distance < best[0]):
				best = (distance, obj)
		if best is None:
			return state.replace(grasp_closed=True)
		obj = best[1]
		return state.replace(grasp_closed=True, held_object=obj.id, grasp_offset=(obj.x - gx, obj.y - gy, gz - obj.z))

	def step(self, state, action):
		"""One control step: optional release, motion with pushing / carrying, then the grasp reflex"""
		s = self.settings
		dx, dy, dz, dtheta = (float(v) for v in self.clamp_action(action))
		gx, gy, gz, gtheta = state.gripper

		if state.grasp_closed and dz > s.release_dz and gz > s.z_release:
			state = self.release(state)

		x = min(max(gx + dx, 0.0), s.workspace)
		y = min(max(gy + dy, 0.0), s.workspace)
		theta = _wrap_angle(gtheta + dtheta)
		z = self._settle_height(state, x, y, theta, min(max(gz + dz, 0.0), s.z_max))

		moved = self._move(state, x, y, z, theta, dtheta)
		if moved is None:
			# lateral motion blocked: keep only the height change
			z = self._settle_height(state, gx, gy, gtheta, min(max(gz + dz, 0.0), s.z_max))
			moved = self._move(state, gx, gy, z, gtheta, 0.0) or state

		if self.reflex_enabled:
			moved = self.grasp_reflex(moved)
		return moved

	# Observation
	# -----------

	def camera(self, view):
		return get_camera(self.cameras, view)

	def render(self, state, view="top"):
		return render(state, self.camera(view), self.settings)

	def render_views(self, state, views):
		return {view: self.render(state, view) for view in views}

	def object_pixel_position(self, state, view, object_id):
		"""Projected object center (row, col); the ground-truth measurement used by the oracle and evaluation"""
		obj = state.object(object_id)
		row, col = self.camera(view).project(obj.x, obj.y, obj.z)
		return float(row), float(col)

	def track_point(self, start_state, state, view, object_id, pixel):
		"""Transport a pixel lying on an object in `start_state` rigidly to where that object point is in `state`"""
		camera = self.camera(view)
		start = start_state.object(object_id)
		current = state.object(object_id)
		world = np.array(camera.unproject(pixel, start.z))
		local = rotation(-start.theta) @ (world - start.position)
		moved = rotation(current.theta) @ local + current.position
		row, col = camera.project(moved[0], moved[1], current.z)
		return float(row), float(col)

	def world_distance(self, state, goal_state, object_id):
		"""Euclidean distance of an object's center between two states, height included"""
		a = state.object(object_id)
		b = goal_state.object(object_id)
		return float(math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2))
