# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
Differentiable image kernels: bilinear warping, bilinear resizing and same-padded convolution.

Images are channels-last, either (H, W, C) or batched (N, H, W, C). Flow fields are (H, W, 2) or
(N, H, W, 2) with channel 0 the column (x) displacement and channel 1 the row (y) displacement, in
the backward-warp convention out(p) = in(p + flow(p)).
"""

from contextlib import contextmanager
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from visual_mpc.utils import throw

LEAKY_SLOPE = 0.1

_precision = {"dtype": np.float32}


def default_dtype():
	"""Working dtype: float32 normally, float64 inside `verification_mode()`"""
	return _precision["dtype"]


@contextmanager
def verification_mode():
	"""Switch the default dtype to float64 for finite-difference checks"""
	previous = _precision["dtype"]
	_precision["dtype"] = np.float64
	try:
		yield
	finally:
		_precision["dtype"] = previous


def as_batch(array, ndim=4):
	"""Add a leading batch axis if missing; returns (array, was_batched)"""
	array = np.asarray(array)
	if array.ndim == ndim:
		return array, True
	if array.ndim == ndim - 1:
		return array[None], False
	throw(f"Invalid input: expected {ndim - 1} or {ndim} dimensions, got shape {array.shape}")


def _restore(array, was_batched):
	return array if was_batched else array[0]


def _check_finite(array, name):
	if not np.all(np.isfinite(array)):
		throw(f"Invalid input: {name} contains non-finite values")


def leaky_relu(x):
	return np.where(x > 0, x, LEAKY_SLOPE * x)


def leaky_relu_grad(x):
	return np.where(x > 0, 1.0, LEAKY_SLOPE).astype(x.dtype)


# Bilinear warp
# -------------


def _sample_coords(flow):
	n, h, w, _ = flow.shape
	cols = np.arange(w, dtype=flow.dtype)[None, None, :]
	rows = np.arange(h, dtype=flow.dtype)[None, :, None]
	x = cols + flow[..., 0]
	y = rows + flow[..., 1]
	x_inside = (x >= 0) & (x <= w - 1)
	y_inside = (y >= 0) & (y <= h - 1)
	x = np.clip(x, 0, w - 1)
	y = np.clip(y, 0, h - 1)
	x0 = np.floor(x).astype(np.intp)
	y0 = np.floor(y).astype(np.intp)
	x1 = np.minimum(x0 + 1, w - 1)
	y1 = np.minimum(y0 + 1, h - 1)
	wx = (x - x0)[..., None]
	wy = (y - y0)[..., None]
	return x0, x1, y0, y1, wx, wy, x_inside, y_inside


def _check_warp_inputs(image, flow):
	if image.shape[:3] != flow.shape[:3] or flow.shape[-1] != 2:
		throw(f"Invalid input: image {image.shape} and flow {flow.shape} do not share H, W")


def bilinear_warp(image, flow):
	"""Backward warp: out(p) = bilinear sample of image at p + flow(p), border-clamped"""
	image, batched = as_batch(image)
	flow, _ = as_batch(flow)
	_check_warp_inputs(image, flow)
	flow = flow.astype(image.dtype, copy=False)

	x0, x1, y0, y1, wx, wy, _, _ = _sample_coords(flow)
	n_idx = np.arange(image.shape[0])[:, None, None]
	top = (1 - wx) * image[n_idx, y0, x0] + wx * image[n_idx, y0, x1]
	bottom = (1 - wx) * image[n_idx, y1, x0] + wx * image[n_idx, y1, x1]
	out = (1 - wy) * top + wy * bottom
	return _restore(out, batched)


def _scatter_add(shape, n_idx, rows, cols, values):
	"""Deterministic scatter-add of (N, H, W, C) values into an (N, H, W, C) buffer"""
	n, h, w, c = shape
	linear = ((n_idx * h + rows) * w + cols).ravel()
	out = np.empty(shape, dtype=values.dtype)
	flat = values.reshape(-1, c)
	for channel in range(c):
		out[..., channel] = np.bincount(linear, weights=flat[:, channel], minlength=n * h * w).reshape(n, h, w)
	return out


def bilinear_warp_backward(image, flow, grad_out):
	"""Gradients of bilinear_warp w.r.t. image and flow"""
	image, batched = as_batch(image)
	flow, _ = as_batch(flow)
	grad_out, _ = as_batch(grad_out)
	_check_warp_inputs(image, flow)
	flow = flow.astype(image.dtype, copy=False)

	x0, x1, y0, y1, wx, wy, x_inside, y_inside = _sample_coords(flow)
	n_idx = np.broadcast_to(np.arange(image.shape[0])[:, None, None], x0.shape)
	i00 = image[n_idx, y0, x0]
	i01 = image[n_idx, y0, x1]
	i10 = image[n_idx, y1, x0]
	i11 = image[n_idx, y1, x1]

	grad_image = np.zeros_like(image)
	for rows, cols, weight in (
		(y0, x0, (1 - wy) * (1 - wx)),
		(y0, x1, (1 - wy) * wx),
		(y1, x0, wy * (1 - wx)),
		(y1, x1, wy * wx),
	):
		grad_image += _scatter_add(image.shape, n_idx, rows, cols, grad_out * weight).astype(image.dtype)

	d_dx = (1 - wy) * (i01 - i00) + wy * (i11 - i10)
	d_dy = (1 - wx) * (i10 - i00) + wx * (i11 - i01)
	grad_flow = np.empty(flow.shape, dtype=image.dtype)
	grad_flow[..., 0] = np.sum(grad_out * d_dx, axis=-1) * x_inside
	grad_flow[..., 1] = np.sum(grad_out * d_dy, axis=-1) * y_inside
	return _restore(grad_image, batched), _restore(grad_flow, batched)


# Bilinear resize
# ---------------


@lru_cache(maxsize=64)
def _resize_matrix(n_in, n_out, dtype_name):
	if n_out <= 0 or n_in <= 0:
		throw(f"Invalid input: cannot resize {n_in} pixels to {n_out}")
	src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
	src = np.clip(src, 0, n_in - 1)
	i0 = np.floor(src).astype(np.intp)
	i1 = np.minimum(i0 + 1, n_in - 1)
	weight = src - i0
	matrix = np.zeros((n_out, n_in), dtype=np.float64)
	rows = np.arange(n_out)
	np.add.at(matrix, (rows, i0), 1 - weight)
	np.add.at(matrix, (rows, i1), weight)
	matrix = matrix.astype(dtype_name)
	matrix.setflags(write=False)
	return matrix


def resized_shape(height, width, scale):
	out_h = int(height * scale)
	out_w = int(width * scale)
	if out_h <= 0 or out_w <= 0:
		throw(f"Invalid input: non-positive target size for {height}x{width} at scale {scale}")
	return out_h, out_w


def bilinear_resize(image, scale=None, size=None):
	"""Bilinear resampling (half-pixel centers) by `scale` (2 or 0.5) or to an explicit `size`"""
	image, batched = as_batch(image)
	_, h, w, _ = image.shape
	out_h, out_w = size if size is not None else resized_shape(h, w, scale)
	dtype_name = np.dtype(image.dtype).name
	rows = _resize_matrix(h, out_h, dtype_name)
	cols = _resize_matrix(w, out_w, dtype_name)
	out = np.einsum("oh,nhwc,pw->nopc", rows, image, cols, optimize=True)
	return _restore(out, batched)


def bilinear_resize_backward(grad_out, input_shape):
	"""Adjoint of bilinear_resize for an input of `input_shape` (H, W) """
	grad_out, batched = as_batch(grad_out)
	h, w = input_shape
	_, out_h, out_w, _ = grad_out.shape
	dtype_name = np.dtype(grad_out.dtype).name
	rows = _resize_matrix(h, out_h, dtype_name)
	cols = _resize_matrix(w, out_w, dtype_name)
	grad = np.einsum("oh,nopc,pw->nhwc", rows, grad_out, cols, optimize=True)
	return _restore(grad, batched)


# Convolution
# -----------


def _windows(x, k):
	pad = k // 2
	padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
	# (N, H, W, C, k, k)
	return sliding_window_view(padded, (k, k), axis=(1, 2))


def _check_layer(x, layer):
	k = layer.kernel.shape[0]
	if layer.kernel.shape[0] != layer.kernel.shape[1] or k % 2 == 0:
		throw(f"Invalid input: kernel must be square with odd size, got {layer.kernel.shape[:2]}")
	if x.shape[-1] != layer.kernel.shape[2]:
		throw(f"Invalid input: {x.shape[-1]} input channels, kernel expects {layer.kernel.shape[2]}")
	return k


def conv_forward(x, layer, return_pre=False):
	"""Stride-1 same-padded convolution + bias, followed by the leaky rectifier if the layer is activated"""
	x, batched = as_batch(x)
	k = _check_layer(x, layer)
	pre = np.tensordot(_windows(x, k), layer.kernel, axes=([3, 4, 5], [2, 0, 1])) + layer.bias
	pre = pre.astype(x.dtype, copy=False)
	out = leaky_relu(pre) if layer.activation else pre
	if return_pre:
		return _restore(out, batched), _restore(pre, batched)
	return _restore(out, batched)


def conv_backward(x, layer, grad_out, pre=None):
	"""Gradients w.r.t. input, kernel and bias; `pre` is the cached pre-activation if available"""
	x, batched = as_batch(x)
	grad_out, _ = as_batch(grad_out)
	k = _check_layer(x, layer)
	if layer.activation:
		if pre is None:
			_, pre = conv_forward(x, layer, return_pre=True)
		pre, _ = as_batch(pre)
		grad_pre = grad_out * leaky_relu_grad(pre)
	else:
		grad_pre = grad_out

	grad_bias = grad_pre.sum(axis=(0, 1, 2))
	grad_kernel = np.tensordot(_windows(x, k), grad_pre, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
	flipped = layer.kernel[::-1, ::-1].transpose(0, 1, 3, 2)
	grad_x = np.tensordot(_windows(grad_pre, k), flipped, axes=([3, 4, 5], [2, 0, 1]))
	return _restore(grad_x.astype(x.dtype, copy=False), batched), grad_kernel, grad_bias
