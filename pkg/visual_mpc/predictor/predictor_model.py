# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
Action-conditioned flow predictor.

Each step maps the previous (predicted) frame and the action, tiled over the image as 4 extra channels
scaled by the action bounds, to one flow field. The flow warps the frame and, unchanged, every
designated-pixel distribution.
"""

import numpy as np

from visual_mpc.numkit.checkpoint import load_checkpoint, save_checkpoint
from visual_mpc.numkit.kernels import bilinear_warp, bilinear_warp_backward
from visual_mpc.numkit.losses import photometric_loss
from visual_mpc.numkit.network import ConvParams, EncoderDecoder, init_conv_params
from visual_mpc.predictor.pixel_distribution import check_distribution, delta_distribution, expected_position, warp_distribution
from visual_mpc.utils import CheckpointError, throw

FRAME_CHANNELS = 3
ACTION_CHANNELS = 4
CHECKPOINT_KIND = "predictor"


def tile_actions(actions, shape, bounds, dtype):
	"""(N, 4) actions -> (N, H, W, 4) planes, each component divided by its bound"""
	scaled = (np.asarray(actions, dtype=np.float64) / bounds).astype(dtype)
	return np.broadcast_to(scaled[:, None, None, :], (scaled.shape[0], *shape, ACTION_CHANNELS))


class FlowPredictor:
	def __init__(self, params, action_bounds, max_horizon=15):
		if params.in_channels != FRAME_CHANNELS + ACTION_CHANNELS or params.out_channels != 2:
			throw(f"Invalid input: predictor needs a 7-channel input and a 2-channel flow head, got {params.architecture()}")
		self.params = params
		self.network = EncoderDecoder(params)
		self.action_bounds = np.asarray(action_bounds, dtype=np.float64)
		self.max_horizon = int(max_horizon)

	@classmethod
	def initialize(cls, network_settings, action_bounds, rng, max_horizon=15, dtype=None):
		params = init_conv_params(
			FRAME_CHANNELS + ACTION_CHANNELS,
			network_settings.down_widths,
			network_settings.up_widths,
			2,
			rng,
			dtype=dtype,
			head_scale=network_settings.head_scale,
		)
		return cls(params, action_bounds, max_horizon)

	@property
	def dtype(self):
		return self.params.layers[0].kernel.dtype

	# Inference
	# ---------

	def flow(self, frames, actions):
		"""(N, H, W, 3) frames and (N, 4) actions -> (N, H, W, 2) flow"""
		frames = np.asarray(frames, dtype=self.dtype)
		x = np.concatenate([frames, tile_actions(actions, frames.shape[1:3], self.action_bounds, self.dtype)], axis=-1)
		return self.network.forward(x)[0]

	def step(self, frames, distributions, actions):
		"""One prediction step for a batch; returns (frames, distributions, flow)"""
		flow = self.flow(frames, actions)
		return bilinear_warp(np.asarray(frames, dtype=self.dtype), flow), warp_distribution(distributions, flow), flow

	def _check_horizon(self, horizon):
		if horizon > self.max_horizon:
			throw(f"Invalid input: horizon {horizon} exceeds the predictor horizon {self.max_horizon}")

	def iter_rollout(self, frame, distributions, actions, view=None):
		"""
		Stream a batched rollout: frame (H, W, 3) or (N, H, W, 3), distributions (K, H, W) or (N, K, H, W),
		actions (N, T, 4). Yields (tau, frames, distributions) for tau = 1..T. The view is ignored: one
		predictor serves every camera.
		"""
		actions = np.asarray(actions, dtype=np.float64)
		if actions.ndim != 3 or actions.shape[-1] != ACTION_CHANNELS:
			throw(f"Invalid input: actions must be (N, T, 4), got {actions.shape}")
		n, horizon = actions.shape[:2]
		self._check_horizon(horizon)
		frame = np.asarray(frame, dtype=self.dtype)
		frames = np.broadcast_to(frame, (n, *frame.shape[-3:])).copy()
		distributions = check_distribution(distributions, "P0")
		beliefs = np.broadcast_to(distributions, (n, *distributions.shape[-3:])).copy()
		for tau in range(horizon):
			frames, beliefs, _ = self.step(frames, beliefs, actions[:, tau])
			yield tau + 1, frames, beliefs

	def predict(self, frame, distributions, actions):
		"""Single rollout: frame (H, W, 3), K distributions, actions (T, 4) -> (frames (T, H, W, 3), P (T, K, H, W))"""
		actions = np.asarray(actions, dtype=np.float64)
		if actions.ndim != 2:
			throw(f"Invalid input: actions must be (T, 4), got {actions.shape}")
		distributions = np.asarray(distributions, dtype=np.float64)
		frames, beliefs = [], []
		for _, f, p in self.iter_rollout(frame, distributions, actions[None]):
			frames.append(f[0])
			beliefs.append(p[0])
		if not frames:
			return np.zeros((0, *np.shape(frame)), dtype=self.dtype), np.zeros((0, *distributions.shape))
		return np.stack(frames), np.stack(beliefs)

	# Training
	# --------

	def loss_and_grads(self, context, targets, actions):
		"""
		Mean photometric loss of a T-step rollout from `context` (B, H, W, 3) against `targets`
		(B, T, H, W, 3) under `actions` (B, T, 4), with gradients by backpropagation through time.
		"""
		context = np.asarray(context, dtype=self.dtype)
		targets = np.asarray(targets, dtype=self.dtype)
		horizon = targets.shape[1]
		if targets.shape[0] != context.shape[0] or actions.shape[:2] != targets.shape[:2]:
			throw("Invalid input: context, targets and actions disagree on batch size or horizon")

		frames = [context]
		steps = []
		loss = 0.0
		loss_grads = []
		for tau in range(horizon):
			previous = frames[-1]
			x = np.concatenate(
				[previous, tile_actions(actions[:, tau], previous.shape[1:3], self.action_bounds, self.dtype)], axis=-1
			)
			flow, cache = self.network.forward(x)
			predicted = bilinear_warp(previous, flow)
			step_loss, grad = photometric_loss(predicted, targets[:, tau])
			loss += step_loss / horizon
			loss_grads.append(grad / horizon)
			steps.append((flow, cache))
			frames.append(predicted)

		grads = {name: np.zeros_like(value) for name, value in self.params.arrays().items()}
		grad_frame = np.zeros_like(context)
		for tau in reversed(range(horizon)):
			flow, cache = steps[tau]
			grad_frame = grad_frame + loss_grads[tau]
			grad_previous, grad_flow = bilinear_warp_backward(frames[tau], flow, grad_frame)
			param_grads, grad_x = self.network.backward(cache, grad_flow)
			for name, value in param_grads.items():
				grads[name] += value
			grad_frame = grad_previous + grad_x[..., :FRAME_CHANNELS]
		return loss, grads

	# Persistence
	# -----------

	def save(self, path, metadata=None):
		meta = {
			"kind": CHECKPOINT_KIND,
			"architecture": self.params.architecture(),
			"action_bounds": self.action_bounds.tolist(),
			"max_horizon": self.max_horizon,
			**(metadata or {}),
		}
		return save_checkpoint(path, self.params.arrays(), meta)

	@classmethod
	def load(cls, path):
		arrays, metadata = load_checkpoint(path)
		if metadata.get("kind") != CHECKPOINT_KIND:
			raise CheckpointError(f"{path} holds a '{metadata.get('kind')}' checkpoint, expected '{CHECKPOINT_KIND}'")
		params = ConvParams.from_arrays(arrays, metadata["architecture"])
		params.metadata = metadata
		return cls(params, metadata["action_bounds"], metadata.get("max_horizon", 15))


class SimulatorPredictor:
	"""
	Perfect model for planner checks: rolls the simulator from a synced state and emits point masses at
	the exactly tracked designated pixels. Frames are rendered from the simulator.
	"""

	def __init__(self, sim, max_horizon=15):
		self.sim = sim
		self.max_horizon = int(max_horizon)
		self.state = None
		self.object_ids = ()

	def sync(self, state, object_ids):
		"""Set the world state rollouts start from and the object each distribution index tracks"""
		self.state = state
		self.object_ids = tuple(object_ids)
		return self

	def iter_rollout(self, frame, distributions, actions, view="top"):
		if self.state is None:
			throw("Invalid input: SimulatorPredictor.sync must be called before rolling out")
		actions = np.asarray(actions, dtype=np.float64)
		n, horizon = actions.shape[:2]
		if horizon > self.max_horizon:
			throw(f"Invalid input: horizon {horizon} exceeds the predictor horizon {self.max_horizon}")
		distributions = check_distribution(distributions, "P0")
		if distributions.ndim == 4:
			distributions = distributions[0]
		if len(distributions) != len(self.object_ids):
			throw(f"Invalid input: {len(distributions)} distributions for {len(self.object_ids)} tracked objects")
		start_pixels = expected_position(distributions)
		shape = distributions.shape[-2:]

		states = [self.state] * n
		for tau in range(horizon):
			states = [self.sim.step(state, actions[i, tau]) for i, state in enumerate(states)]
			frames = np.stack([self.sim.render(state, view) for state in states])
			beliefs = np.stack(
				[
					[
						delta_distribution(shape, self.sim.track_point(self.state, state, view, object_id, pixel))
						for object_id, pixel in zip(self.object_ids, start_pixels, strict=True)
					]
					for state in states
				]
			)
			yield tau + 1, frames, beliefs
