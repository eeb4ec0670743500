# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import csv
import math
import os

import numpy as np
from tqdm import tqdm

from visual_mpc.numkit.kernels import bilinear_warp
from visual_mpc.numkit.optimizer import OptimizerState, optimizer_step
from visual_mpc.regnet.curriculum import CurriculumSchedule
from visual_mpc.regnet.registration_model import RegistrationNet, zero_flow_loss
from visual_mpc.regnet.tracking import transport_point
from visual_mpc.settings import RegistrationSettings
from visual_mpc.trajstore.dataset import TrajectoryDataset, sample_pair, sample_shift_pair, shift_flow
from visual_mpc.trajstore.trajectory_record import read_record
from visual_mpc.utils import TrainingDivergedError, ensure_dir, log_error, logger, throw

LOSS_CURVE_FILE = "registration_loss.csv"
CHECKPOINT_FILE = "registration.ckpt"
BACKGROUND_TOLERANCE = 0.05


def sample_pairs(dataset, batch_size, h, rng, synthetic_fraction=0.0, max_shift=8):
	"""(frames_a, frames_b), each (B, H, W, 3); a fraction of the pairs are synthetic shifts of one frame"""
	frames_a, frames_b = [], []
	for _ in range(batch_size):
		record = dataset.random_record(rng)
		view = dataset.random_view(record, rng)
		if rng.uniform() < synthetic_fraction:
			frame = record.frames[view][int(rng.integers(record.length))]
			source, target, _ = sample_shift_pair(frame, max_shift, rng)
		else:
			source, target = sample_pair(record, h, rng, view=view)
		frames_a.append(source)
		frames_b.append(target)
	return np.stack(frames_a), np.stack(frames_b)


def write_loss_curve(path, rows):
	with open(path, "w", newline="", encoding="utf-8") as f:
		writer = csv.writer(f, lineterminator="\n")
		writer.writerow(["step", "h", "loss"])
		for step, h, loss in rows:
			writer.writerow([step, h, f"{loss:.8f}"])
	return path


class RegistrationTrainingService:
	"""Trains the registration network with bidirectional warping and the temporal-gap curriculum"""

	def __init__(self, settings=None, config_hash=""):
		self.settings = (settings or RegistrationSettings()).validate()
		self.schedule = CurriculumSchedule.from_settings(self.settings)
		self.config_hash = config_hash

	def _rngs(self):
		init_seed, sample_seed = np.random.SeedSequence(self.settings.seed).spawn(2)
		return np.random.default_rng(init_seed), np.random.default_rng(sample_seed)

	def train(self, index, out_dir=None, progress=True, network=None):
		s = self.settings
		dataset = TrajectoryDataset(index, "train", views=s.views)
		self.schedule.validate(dataset.record(0).length)
		init_rng, rng = self._rngs()
		if network is None:
			network = RegistrationNet.initialize(s.network, init_rng)
		params = network.params.arrays()
		state = OptimizerState()
		curve = []
		log = logger("registration")
		log.info(
			f"Training registration for {s.steps} steps (h {s.h_start}->{s.h_end} over {s.ramp_steps}, "
			f"synthetic {s.synthetic_fraction:.2f}, seed {s.seed})"
		)

		for step in tqdm(range(s.steps), desc="train-registration", disable=not progress):
			h = self.schedule.gap(step)
			frames_a, frames_b = sample_pairs(dataset, s.batch_size, h, rng, s.synthetic_fraction, s.max_shift)
			loss, grads, terms = network.loss_and_grads(frames_a, frames_b, s.beta)
			if not math.isfinite(loss):
				recent = ", ".join(f"{v:.5f}" for _, _, v in curve[-5:])
				message = f"Registration loss became {loss} at step {step}, h={h} (recent losses: {recent or 'none'})"
				log_error(message, "Registration Training Diverged")
				raise TrainingDivergedError(message)
			try:
				optimizer_step(params, grads, state, s.optimizer)
			except TrainingDivergedError as e:
				log_error(f"Registration training diverged at step {step}: {e}", "Registration Training Diverged")
				raise
			network.trained_steps += 1
			curve.append((step, h, loss))
			if step % s.log_every == 0 or step == s.steps - 1:
				log.info(
					f"registration step {step} h={h}: loss {loss:.5f} "
					f"(photometric {terms['photometric']:.5f}, smoothness {terms['smoothness']:.5f})"
				)

		if out_dir:
			ensure_dir(out_dir)
			write_loss_curve(os.path.join(out_dir, LOSS_CURVE_FILE), curve)
			network.save(
				os.path.join(out_dir, CHECKPOINT_FILE),
				{"config_hash": self.config_hash, "steps": s.steps, "seed": s.seed, "dataset_hash": index.config_hash},
			)
		return network, curve


def train_registration(index, settings=None, out_dir=None, config_hash="", progress=False):
	return RegistrationTrainingService(settings, config_hash).train(index, out_dir, progress)


def object_mask(frame, background, margin=0):
	"""Pixels that differ from the background color, excluding a border of `margin` pixels"""
	diff = np.abs(np.asarray(frame, dtype=np.float64) - np.asarray(background, dtype=np.float64))
	mask = np.any(diff > BACKGROUND_TOLERANCE, axis=-1)
	if margin > 0:
		mask[:margin] = False
		mask[-margin:] = False
		mask[:, :margin] = False
		mask[:, -margin:] = False
	return mask


def known_shift_error(network, frame, shift, background):
	"""
	Median distance between the registered flow and a known integer shift over object pixels.
	The target is `frame` sampled at p + shift, so the exact answer is `shift` everywhere.
	"""
	frame = np.asarray(frame, dtype=np.float32)
	target = bilinear_warp(frame, shift_flow(frame.shape[:2], shift))
	mask = object_mask(target, background, margin=int(max(abs(shift[0]), abs(shift[1]))))
	if not mask.any():
		throw("Invalid input: the frame holds no object pixels to measure the shift on")
	flow = network.register(frame, target).astype(np.float64)
	error = np.linalg.norm(flow[mask] - np.asarray(shift, dtype=np.float64), axis=-1)
	return float(np.median(error))


def self_registration_magnitude(network, frames):
	"""Mean flow magnitude when each frame is registered to itself"""
	frames = np.asarray(frames)
	flow = network.register(frames, frames).astype(np.float64)
	return float(np.mean(np.linalg.norm(flow, axis=-1)))


def _held_out_records(index, split):
	paths = index.paths(split)
	if not paths:
		throw(f"Invalid input: split '{split}' of {index.root} is empty")
	return [read_record(path) for path in paths]


def tracking_errors(network, index, max_gap=8, n_pairs=50, neighborhood=5, seed=0, split="held_out", view="top"):
	"""
	Pixel distance between transported start positions and simulator ground truth.
	For a pair (I_0, I_t) the flow register(I_t, I_0) carries gt_0 to the prediction of gt_t.
	Returns {gap: [errors]}.
	"""
	records = [r for r in _held_out_records(index, split) if r.ground_truth is not None]
	if not records:
		throw(f"Invalid input: split '{split}' has no ground truth to track against")
	rng = np.random.default_rng(seed)
	errors = {}
	for _ in range(n_pairs):
		record = records[int(rng.integers(len(records)))]
		gap = int(rng.integers(1, min(max_gap, record.length - 1) + 1))
		start = int(rng.integers(0, record.length - gap))
		pixels = record.ground_truth.object_pixels[view]
		k = int(rng.integers(pixels.shape[1]))
		frames = record.frames[view]
		flow = network.register(frames[start + gap], frames[start])
		predicted = transport_point(flow, pixels[start, k], neighborhood)
		errors.setdefault(gap, []).append(float(np.hypot(*(np.asarray(predicted) - pixels[start + gap, k]))))
	return errors


def held_out_losses(network, index, h=8, n_pairs=20, beta=0.1, seed=0, split="held_out", views=("top",)):
	"""The trained bidirectional loss next to the zero-flow baseline on held-out pairs"""
	dataset = TrajectoryDataset(index, split, views=views)
	rng = np.random.default_rng(seed)
	frames_a, frames_b = sample_pairs(dataset, n_pairs, h, rng)
	model, _, terms = network.loss_and_grads(frames_a, frames_b, beta)
	return {"model": model, "model_photometric": terms["photometric"], "zero_flow": zero_flow_loss(frames_a, frames_b)}


def evaluate_registration(network, index, settings=None, background=(0.45, 0.45, 0.45), seed=0, n_pairs=50):
	"""Tracking, known-shift, baseline and self-registration diagnostics for a trained network"""
	s = settings or RegistrationSettings()
	records = _held_out_records(index, "held_out")
	frame = records[0].frames["top"][0]
	errors = tracking_errors(network, index, s.h_end, n_pairs, s.neighborhood, seed)
	all_errors = [e for values in errors.values() for e in values]
	losses = held_out_losses(network, index, min(s.h_end, records[0].length - 1), beta=s.beta, seed=seed)
	result = {
		"tracking_median_px": float(np.median(all_errors)),
		"tracking_by_gap": {gap: float(np.median(values)) for gap, values in sorted(errors.items())},
		"known_shift_median_px": known_shift_error(network, frame, (4, 0), background),
		"self_registration_px": self_registration_magnitude(network, np.stack([r.frames["top"][0] for r in records])),
		**losses,
	}
	logger("registration").info(
		f"Registration: tracking median {result['tracking_median_px']:.2f}px, known shift "
		f"{result['known_shift_median_px']:.2f}px, loss {result['model']:.5f} vs zero-flow {result['zero_flow']:.5f}"
	)
	return result
