# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import math
from dataclasses import dataclass

from visual_mpc.utils import throw


@dataclass(frozen=True)
class CurriculumSchedule:
	"""Temporal gap between registered frames, ramped linearly from h_start to h_end over ramp_steps"""

	h_start: int = 1
	h_end: int = 8
	ramp_steps: int = 2000
	total_steps: int = 6000

	def validate(self, episode_len=None):
		if not (0 <= self.h_start <= self.h_end):
			throw(f"Invalid input: curriculum needs 0 <= h_start <= h_end, got {self.h_start}, {self.h_end}")
		if self.ramp_steps < 1:
			throw("Invalid input: curriculum ramp_steps must be positive")
		if episode_len is not None and self.h_end >= episode_len:
			throw(f"Invalid input: curriculum h_end {self.h_end} must be below the episode length {episode_len}")
		return self

	def gap(self, step):
		progress = min(max(step, 0) / self.ramp_steps, 1.0)
		h = math.floor(self.h_start + (self.h_end - self.h_start) * progress + 0.5)
		return min(max(h, self.h_start), self.h_end)

	@classmethod
	def from_settings(cls, settings):
		return cls(settings.h_start, settings.h_end, settings.ramp_steps, settings.steps)
