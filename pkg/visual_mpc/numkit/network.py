# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

from dataclasses import dataclass, field

import numpy as np

from visual_mpc.numkit.kernels import (
	as_batch,
	bilinear_resize,
	bilinear_resize_backward,
	conv_backward,
	conv_forward,
	default_dtype,
)
from visual_mpc.utils import throw


@dataclass
class ConvLayer:
	kernel: np.ndarray  # (k, k, c_in, c_out)
	bias: np.ndarray  # (c_out,)
	activation: bool = True


@dataclass
class ConvParams:
	"""Layers of an encoder-decoder: n_down conv+downsample, n_up conv+upsample, then a 1x1 head"""

	layers: list
	down_widths: tuple
	up_widths: tuple
	in_channels: int
	out_channels: int
	metadata: dict = field(default_factory=dict)

	def validate(self):
		expected = len(self.down_widths) + len(self.up_widths) + 1
		if len(self.layers) != expected:
			throw(f"Invalid input: {len(self.layers)} layers, architecture declares {expected}")
		for index, layer in enumerate(self.layers):
			if layer.kernel.shape[0] % 2 == 0:
				throw(f"Invalid input: layer {index} kernel size must be odd")
		return self

	def arrays(self):
		"""Named views on the parameter arrays; updating them updates the layers"""
		named = {}
		for index, layer in enumerate(self.layers):
			named[f"layer{index}.kernel"] = layer.kernel
			named[f"layer{index}.bias"] = layer.bias
		return named

	def architecture(self):
		return {
			"in_channels": self.in_channels,
			"out_channels": self.out_channels,
			"down_widths": list(self.down_widths),
			"up_widths": list(self.up_widths),
		}

	@classmethod
	def from_arrays(cls, arrays, architecture):
		n_layers = len(architecture["down_widths"]) + len(architecture["up_widths"]) + 1
		layers = []
		for index in range(n_layers):
			layers.append(
				ConvLayer(
					kernel=arrays[f"layer{index}.kernel"],
					bias=arrays[f"layer{index}.bias"],
					activation=index < n_layers - 1,
				)
			)
		return cls(
			layers=layers,
			down_widths=tuple(architecture["down_widths"]),
			up_widths=tuple(architecture["up_widths"]),
			in_channels=architecture["in_channels"],
			out_channels=architecture["out_channels"],
		).validate()

	def copy(self):
		layers = [ConvLayer(layer.kernel.copy(), layer.bias.copy(), layer.activation) for layer in self.layers]
		return ConvParams(layers, self.down_widths, self.up_widths, self.in_channels, self.out_channels, dict(self.metadata))


def init_conv_params(in_channels, down_widths, up_widths, out_channels, rng, dtype=None, head_scale=1e-3):
	"""He-initialised 3x3 layers and a near-zero 1x1 head, so an untrained network predicts ~zero flow"""
	dtype = dtype or default_dtype()
	layers = []
	channels = in_channels
	for width in (*down_widths, *up_widths):
		std = np.sqrt(2.0 / (9 * channels))
		kernel = (rng.standard_normal((3, 3, channels, width)) * std).astype(dtype)
		layers.append(ConvLayer(kernel=kernel, bias=np.zeros(width, dtype=dtype)))
		channels = width
	head = (rng.standard_normal((1, 1, channels, out_channels)) * head_scale).astype(dtype)
	layers.append(ConvLayer(kernel=head, bias=np.zeros(out_channels, dtype=dtype), activation=False))
	return ConvParams(layers, tuple(down_widths), tuple(up_widths), in_channels, out_channels).validate()


class EncoderDecoder:
	"""Fully convolutional encoder-decoder over ConvParams with a hand-written backward pass"""

	def __init__(self, params):
		self.params = params.validate()
		self.n_down = len(params.down_widths)
		self.n_up = len(params.up_widths)

	def forward(self, x):
		"""Returns (output, cache) for a (N, H, W, C) input; H and W must divide by 2**n_down"""
		x, batched = as_batch(x)
		if x.shape[-1] != self.params.in_channels:
			throw(f"Invalid input: network expects {self.params.in_channels} channels, got {x.shape[-1]}")
		factor = 2**self.n_down
		if x.shape[1] % factor or x.shape[2] % factor:
			throw(f"Invalid input: spatial size {x.shape[1:3]} must be divisible by {factor}")

		cache = []
		h = x
		for index, layer in enumerate(self.params.layers):
			out, pre = conv_forward(h, layer, return_pre=True)
			if index < self.n_down:
				scale = 0.5
			elif index < self.n_down + self.n_up:
				scale = 2
			else:
				scale = None
			cache.append((h, pre, out.shape[1:3]))
			h = bilinear_resize(out, scale=scale) if scale else out
		return (h if batched else h[0]), (cache, batched)

	def backward(self, cache, grad_out):
		"""Returns (parameter gradients keyed like ConvParams.arrays(), gradient w.r.t. the input)"""
		cache, batched = cache
		grad, _ = as_batch(grad_out)
		grads = {}
		for index in reversed(range(len(self.params.layers))):
			layer = self.params.layers[index]
			layer_input, pre, conv_shape = cache[index]
			if index < self.n_down + self.n_up:
				grad = bilinear_resize_backward(grad, conv_shape)
			grad, grad_kernel, grad_bias = conv_backward(layer_input, layer, grad, pre=pre)
			grads[f"layer{index}.kernel"] = grad_kernel.astype(layer.kernel.dtype, copy=False)
			grads[f"layer{index}.bias"] = grad_bias.astype(layer.bias.dtype, copy=False)
		return grads, (grad if batched else grad[0])
