# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import numpy as np

from visual_mpc.numkit.checkpoint import load_checkpoint, save_checkpoint
from visual_mpc.numkit.kernels import as_batch, bilinear_warp, bilinear_warp_backward
from visual_mpc.numkit.losses import photometric_loss, smoothness_loss
from visual_mpc.numkit.network import ConvParams, EncoderDecoder, init_conv_params
from visual_mpc.utils import CheckpointError, throw

FRAME_CHANNELS = 3
CHECKPOINT_KIND = "registration"


class RegistrationNet:
	"""
	Registration network R(current, target) -> flow F with bilinear_warp(current, F) ~ target.

	The two frames are stacked on the channel axis; one network serves every camera view.
	"""

	def __init__(self, params, trained_steps=0):
		if params.in_channels != 2 * FRAME_CHANNELS or params.out_channels != 2:
			throw(f"Invalid input: registration needs a 6-channel input and a 2-channel flow head, got {params.architecture()}")
		self.params = params
		self.network = EncoderDecoder(params)
		self.trained_steps = int(trained_steps)

	@classmethod
	def initialize(cls, network_settings, rng, dtype=None):
		params = init_conv_params(
			2 * FRAME_CHANNELS,
			network_settings.down_widths,
			network_settings.up_widths,
			2,
			rng,
			dtype=dtype,
			head_scale=network_settings.head_scale,
		)
		return cls(params)

	@property
	def dtype(self):
		return self.params.layers[0].kernel.dtype

	def register(self, current, target):
		"""Flow F_{target<-current} for (H, W, 3) frames or (N, H, W, 3) batches"""
		current, batched = as_batch(current)
		target, _ = as_batch(target)
		if current.shape != target.shape or current.shape[-1] != FRAME_CHANNELS:
			throw(f"Invalid input: cannot register frames of shapes {current.shape} and {target.shape}")
		x = np.concatenate([current, target], axis=-1).astype(self.dtype, copy=False)
		flow, _ = self.network.forward(x)
		return flow if batched else flow[0]

	def loss_and_grads(self, frames_a, frames_b, beta=0.1):
		"""
		Bidirectional loss for pairs (B, H, W, 3):

			photometric(warp(b, R(b, a)), a) + photometric(warp(a, R(a, b)), b) + beta * (S(R(b, a)) + S(R(a, b)))

		Returns (loss, parameter gradients, terms) where terms breaks the loss into its parts.
		"""
		frames_a = np.asarray(frames_a, dtype=self.dtype)
		frames_b = np.asarray(frames_b, dtype=self.dtype)
		if frames_a.shape != frames_b.shape or frames_a.ndim != 4:
			throw(f"Invalid input: pair batches must share a (B, H, W, 3) shape, got {frames_a.shape} and {frames_b.shape}")
		n = frames_a.shape[0]
		current = np.concatenate([frames_b, frames_a])
		target = np.concatenate([frames_a, frames_b])
		flow, cache = self.network.forward(np.concatenate([current, target], axis=-1))
		warped = bilinear_warp(current, flow)

		photo_ab, grad_ab = photometric_loss(warped[:n], frames_a)
		photo_ba, grad_ba = photometric_loss(warped[n:], frames_b)
		smooth_ab, smooth_grad_ab = smoothness_loss(flow[:n])
		smooth_ba, smooth_grad_ba = smoothness_loss(flow[n:])
		loss = photo_ab + photo_ba + beta * (smooth_ab + smooth_ba)

		_, grad_flow = bilinear_warp_backward(current, flow, np.concatenate([grad_ab, grad_ba]))
		grad_flow = grad_flow + beta * np.concatenate([smooth_grad_ab, smooth_grad_ba]).astype(grad_flow.dtype)
		grads, _ = self.network.backward(cache, grad_flow)
		terms = {"photometric": photo_ab + photo_ba, "smoothness": smooth_ab + smooth_ba}
		return loss, grads, terms

	def save(self, path, metadata=None):
		meta = {
			"kind": CHECKPOINT_KIND,
			"architecture": self.params.architecture(),
			"trained_steps": self.trained_steps,
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
		return cls(params, metadata.get("trained_steps", 0))


def zero_flow_loss(frames_a, frames_b):
	"""The bidirectional photometric loss of the identity registration"""
	return photometric_loss(frames_b, frames_a)[0] + photometric_loss(frames_a, frames_b)[0]
