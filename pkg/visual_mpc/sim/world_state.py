# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import dataclasses
from dataclasses import dataclass

import numpy as np

from visual_mpc.sim.geometry import rectangle, transform
from visual_mpc.utils import throw


@dataclass(frozen=True)
class LShape:
	"""Two legs of lengths `leg_a` (along local x) and `leg_b` (along local y) sharing a corner, both `width` wide"""

	leg_a: float
	leg_b: float
	width: float

	def _local_pieces(self):
		a, b, w = self.leg_a, self.leg_b, self.width
		return rectangle(0.0, 0.0, a, w), rectangle(0.0, w, w, b)

	def centroid(self):
		a, b, w = self.leg_a, self.leg_b, self.width
		area_1, area_2 = a * w, w * (b - w)
		cx = (area_1 * a / 2 + area_2 * w / 2) / (area_1 + area_2)
		cy = (area_1 * w / 2 + area_2 * (w + b) / 2) / (area_1 + area_2)
		return np.array([cx, cy])

	def pieces(self):
		"""Convex pieces in the body frame, centered on the area centroid"""
		center = self.centroid()
		return [piece - center for piece in self._local_pieces()]

	def outline(self):
		a, b, w = self.leg_a, self.leg_b, self.width
		points = np.array([[0, 0], [a, 0], [a, w], [w, w], [w, b], [0, b]], dtype=np.float64)
		return points - self.centroid()


@dataclass(frozen=True)
class ObjectState:
	id: int
	shape: LShape
	color: tuple
	x: float
	y: float
	z: float = 0.0
	theta: float = 0.0

	@property
	def position(self):
		return np.array([self.x, self.y])

	def pieces(self, dx=0.0, dy=0.0):
		return [transform(piece, self.x + dx, self.y + dy, self.theta) for piece in self.shape.pieces()]

	def outline(self):
		return transform(self.shape.outline(), self.x, self.y, self.theta)

	def moved(self, dx=0.0, dy=0.0, dz=0.0, dtheta=0.0):
		return dataclasses.replace(self, x=self.x + dx, y=self.y + dy, z=self.z + dz, theta=self.theta + dtheta)

	def as_dict(self):
		return {
			"id": self.id,
			"shape": dataclasses.asdict(self.shape),
			"color": list(self.color),
			"x": self.x,
			"y": self.y,
			"z": self.z,
			"theta": self.theta,
		}

	@classmethod
	def from_dict(cls, data):
		return cls(
			id=int(data["id"]),
			shape=LShape(**data["shape"]),
			color=tuple(float(c) for c in data["color"]),
			x=float(data["x"]),
			y=float(data["y"]),
			z=float(data.get("z", 0.0)),
			theta=float(data.get("theta", 0.0)),
		)


@dataclass(frozen=True)
class WorldState:
	"""Gripper pose (x, y, z, theta), grasp flags and the objects on the table; a value, never mutated"""

	gripper: tuple
	objects: tuple
	grasp_closed: bool = False
	held_object: int | None = None
	# held object position minus gripper position (x, y) and gripper z minus object z at grasp time
	grasp_offset: tuple = (0.0, 0.0, 0.0)

	def object(self, object_id):
		for obj in self.objects:
			if obj.id == object_id:
				return obj
		throw(f"Invalid input: unknown object id {object_id}")

	def replace(self, **changes):
		return dataclasses.replace(self, **changes)

	def with_object(self, obj):
		return self.replace(objects=tuple(obj if o.id == obj.id else o for o in self.objects))

	def validate(self, workspace, z_max):
		x, y, z, _ = self.gripper
		if not (0 <= x <= workspace and 0 <= y <= workspace and 0 <= z <= z_max):
			throw(f"Invalid input: gripper pose {self.gripper} outside the workspace")
		for obj in self.objects:
			if not (0 <= obj.x <= workspace and 0 <= obj.y <= workspace):
				throw(f"Invalid input: object {obj.id} center outside the workspace")
		if self.held_object is not None:
			if not self.grasp_closed:
				throw("Invalid input: an object can only be held by a closed gripper")
			self.object(self.held_object)
		return self

	def as_dict(self):
		return {
			"gripper": list(self.gripper),
			"objects": [obj.as_dict() for obj in self.objects],
			"grasp_closed": self.grasp_closed,
			"held_object": self.held_object,
			"grasp_offset": list(self.grasp_offset),
		}

	@classmethod
	def from_dict(cls, data):
		held = data.get("held_object")
		return cls(
			gripper=tuple(float(v) for v in data["gripper"]),
			objects=tuple(ObjectState.from_dict(obj) for obj in data["objects"]),
			grasp_closed=bool(data.get("grasp_closed", False)),
			held_object=None if held is None else int(held),
			grasp_offset=tuple(float(v) for v in data.get("grasp_offset", (0.0, 0.0, 0.0))),
		)
