# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

from dataclasses import dataclass, field

import numpy as np

from visual_mpc.numkit.kernels import (
	bilinear_resize,
	bilinear_resize_backward,
	bilinear_warp,
	bilinear_warp_backward,
	conv_backward,
	conv_forward,
	verification_mode,
)
from visual_mpc.numkit.losses import photometric_loss, smoothness_loss
from visual_mpc.numkit.network import ConvLayer, EncoderDecoder, init_conv_params
from visual_mpc.utils import GradientCheckError, logger, throw

FD_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradCheckReport:
	kernel: str
	tolerance: float
	max_rel_error: float
	per_input: dict = field(default_factory=dict)

	@property
	def passed(self):
		return self.max_rel_error <= self.tolerance

	@property
	def message(self):
		status = "passed" if self.passed else "FAILED"
		details = ", ".join(f"{name}={error:.2e}" for name, error in sorted(self.per_input.items()))
		return f"{self.kernel}: {status} (max rel. error {self.max_rel_error:.2e}, tolerance {self.tolerance:.0e}; {details})"

	def raise_for_failure(self):
		if not self.passed:
			raise GradientCheckError(self.message)
		return self


def numeric_gradient(fn, inputs, name, step=FD_STEP):
	"""Central finite differences of scalar fn(**inputs) w.r.t. inputs[name]"""
	array = inputs[name]
	grad = np.zeros_like(array)
	flat = array.reshape(-1)
	grad_flat = grad.reshape(-1)
	for i in range(flat.size):
		original = flat[i]
		flat[i] = original + step
		plus = fn(**inputs)
		flat[i] = original - step
		minus = fn(**inputs)
		flat[i] = original
		grad_flat[i] = (plus - minus) / (2 * step)
	return grad


def relative_error(analytic, numeric):
	denominator = np.linalg.norm(analytic) + np.linalg.norm(numeric)
	if denominator < 1e-12:
		return 0.0
	return float(np.linalg.norm(analytic - numeric) / denominator)


def grad_check(kernel, fn, inputs, analytic, tolerance=DEFAULT_TOLERANCE, step=FD_STEP):
	"""
	Compare analytic gradients against central differences.

	`fn(**inputs)` returns a scalar; `analytic` maps input names to gradients of that scalar. Inputs must
	be float64 (finite differences are unreliable in single precision).
	"""
	for name, array in inputs.items():
		if name in analytic and array.dtype != np.float64:
			throw(f"Invalid input: gradient check of '{kernel}' needs float64 inputs, '{name}' is {array.dtype}")

	per_input = {}
	for name, grad in analytic.items():
		numeric = numeric_gradient(fn, inputs, name, step=step)
		per_input[name] = relative_error(np.asarray(grad, dtype=np.float64), numeric)

	report = GradCheckReport(
		kernel=kernel, tolerance=tolerance, max_rel_error=max(per_input.values(), default=0.0), per_input=per_input
	)
	if not report.passed:
		logger("numkit").error(report.message)
	return report


def _projected(fn_out, projection):
	"""Reduce a tensor-valued kernel to a scalar with a fixed random projection"""
	return float(np.sum(fn_out * projection))


def check_conv(rng, tolerance=DEFAULT_TOLERANCE):
	x = rng.standard_normal((1, 5, 5, 2))
	kernel = rng.standard_normal((3, 3, 2, 3))
	bias = rng.standard_normal(3)
	projection = rng.standard_normal((1, 5, 5, 3))

	def fn(x, kernel, bias):
		return _projected(conv_forward(x, ConvLayer(kernel, bias)), projection)

	grad_x, grad_kernel, grad_bias = conv_backward(x, ConvLayer(kernel, bias), projection)
	return grad_check(
		"conv_forward",
		fn,
		{"x": x, "kernel": kernel, "bias": bias},
		{"x": grad_x, "kernel": grad_kernel, "bias": grad_bias},
		tolerance,
	)


def check_warp(rng, tolerance=DEFAULT_TOLERANCE):
	image = rng.standard_normal((1, 6, 7, 2))
	# integer part plus a fractional part away from the interpolation kinks
	flow = rng.integers(-2, 2, size=(1, 6, 7, 2)) + rng.uniform(0.2, 0.8, size=(1, 6, 7, 2))
	projection = rng.standard_normal((1, 6, 7, 2))

	def fn(image, flow):
		return _projected(bilinear_warp(image, flow), projection)

	grad_image, grad_flow = bilinear_warp_backward(image, flow, projection)
	return grad_check(
		"bilinear_warp", fn, {"image": image, "flow": flow}, {"image": grad_image, "flow": grad_flow}, tolerance
	)


def check_resize(rng, tolerance=DEFAULT_TOLERANCE):
	reports = []
	for scale, shape in ((0.5, (1, 6, 8, 2)), (2, (1, 3, 4, 2))):
		image = rng.standard_normal(shape)
		out_shape = bilinear_resize(image, scale=scale).shape
		projection = rng.standard_normal(out_shape)

		def fn(image, projection=projection, scale=scale):
			return _projected(bilinear_resize(image, scale=scale), projection)

		grad = bilinear_resize_backward(projection, shape[1:3])
		reports.append(grad_check(f"bilinear_resize(x{scale})", fn, {"image": image}, {"image": grad}, tolerance))
	return reports


def check_photometric(rng, tolerance=1e-6):
	a = rng.uniform(0, 1, (1, 4, 5, 3))
	# differences kept away from zero, where the penalty curvature is ~1/eps
	b = a + rng.choice([-1.0, 1.0], size=a.shape) * rng.uniform(0.05, 0.5, size=a.shape)

	def fn(a):
		return photometric_loss(a, b)[0]

	return grad_check("photometric_loss", fn, {"a": a}, {"a": photometric_loss(a, b)[1]}, tolerance)


def check_smoothness(rng, tolerance=DEFAULT_TOLERANCE):
	flow = rng.standard_normal((1, 5, 6, 2))

	def fn(flow):
		return smoothness_loss(flow)[0]

	return grad_check("smoothness_loss", fn, {"flow": flow}, {"flow": smoothness_loss(flow)[1]}, tolerance)


def check_encoder_decoder(rng, tolerance=DEFAULT_TOLERANCE):
	params = init_conv_params(3, (2, 3, 4), (3, 2, 2), 2, rng, dtype=np.float64, head_scale=0.5)
	network = EncoderDecoder(params)
	x = rng.standard_normal((1, 8, 8, 3))
	projection = rng.standard_normal((1, 8, 8, 2))
	out, cache = network.forward(x)
	grads, grad_x = network.backward(cache, projection)

	def fn(x):
		return _projected(network.forward(x)[0], projection)

	# parameters are checked through the first and last layers to keep the check fast
	first = params.layers[0]
	last = params.layers[-1]

	def fn_first(kernel):
		first.kernel = kernel
		return _projected(network.forward(x)[0], projection)

	def fn_last(kernel):
		last.kernel = kernel
		return _projected(network.forward(x)[0], projection)

	reports = [
		grad_check("encoder_decoder(input)", fn, {"x": x}, {"x": grad_x}, tolerance),
		grad_check("encoder_decoder(layer0)", fn_first, {"kernel": first.kernel}, {"kernel": grads["layer0.kernel"]}, tolerance),
		grad_check(
			"encoder_decoder(head)",
			fn_last,
			{"kernel": last.kernel},
			{"kernel": grads[f"layer{len(params.layers) - 1}.kernel"]},
			tolerance,
		),
	]
	return reports


def check_kernels(seed=0, tolerance=DEFAULT_TOLERANCE):
	"""Run every kernel gradient check in verification mode; returns the list of reports"""
	rng = np.random.default_rng(seed)
	with verification_mode():
		reports = [
			check_conv(rng, tolerance),
			check_warp(rng, tolerance),
			*check_resize(rng, tolerance),
			check_photometric(rng, min(tolerance, 1e-6)),
			check_smoothness(rng, tolerance),
			*check_encoder_decoder(rng, tolerance),
		]
	for report in reports:
		logger("numkit").info(report.message)
	return reports
