# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import csv
import math
import os

import numpy as np
from tqdm import tqdm

from visual_mpc.numkit.optimizer import OptimizerState, optimizer_step
from visual_mpc.predictor.predictor_model import FlowPredictor
from visual_mpc.settings import PredictorSettings
from visual_mpc.trajstore.dataset import TrajectoryDataset, sample_subsequence
from visual_mpc.utils import TrainingDivergedError, ensure_dir, log_error, logger

LOSS_CURVE_FILE = "predictor_loss.csv"
CHECKPOINT_FILE = "predictor.ckpt"


def sample_batch(dataset, batch_size, horizon, rng):
	"""(context (B, H, W, 3), targets (B, T, H, W, 3), actions (B, T, 4)) from random records and views"""
	contexts, targets, actions = [], [], []
	for _ in range(batch_size):
		record = dataset.random_record(rng)
		view = dataset.random_view(record, rng)
		frames, window_actions = sample_subsequence(record, horizon, rng, view=view)
		contexts.append(frames[0])
		targets.append(frames[1:])
		actions.append(window_actions)
	return np.stack(contexts), np.stack(targets), np.stack(actions)


def write_loss_curve(path, rows):
	with open(path, "w", newline="", encoding="utf-8") as f:
		writer = csv.writer(f, lineterminator="\n")
		writer.writerow(["step", "loss"])
		for step, loss in rows:
			writer.writerow([step, f"{loss:.8f}"])
	return path


class PredictorTrainingService:
	"""Trains the flow predictor on dataset subsequences and writes its checkpoint and loss curve"""

	def __init__(self, settings=None, action_bounds=(0.05, 0.05, 0.05, 0.26), config_hash=""):
		self.settings = (settings or PredictorSettings()).validate()
		self.action_bounds = tuple(action_bounds)
		self.config_hash = config_hash

	def _rngs(self):
		init_seed, sample_seed = np.random.SeedSequence(self.settings.seed).spawn(2)
		return np.random.default_rng(init_seed), np.random.default_rng(sample_seed)

	def train(self, index, out_dir=None, progress=True, predictor=None):
		"""Returns (predictor, loss curve rows); deterministic given the seed and the dataset"""
		s = self.settings
		dataset = TrajectoryDataset(index, "train", views=s.views)
		init_rng, rng = self._rngs()
		if predictor is None:
			predictor = FlowPredictor.initialize(s.network, self.action_bounds, init_rng, max_horizon=s.horizon)
		params = predictor.params.arrays()
		state = OptimizerState()
		curve = []
		log = logger("predictor")
		log.info(f"Training predictor for {s.steps} steps (batch {s.batch_size}, horizon {s.train_horizon}, seed {s.seed})")

		for step in tqdm(range(s.steps), desc="train-predictor", disable=not progress):
			context, targets, actions = sample_batch(dataset, s.batch_size, s.train_horizon, rng)
			loss, grads = predictor.loss_and_grads(context, targets, actions)
			if not math.isfinite(loss):
				recent = ", ".join(f"{v:.5f}" for _, v in curve[-5:])
				message = f"Predictor loss became {loss} at step {step} (recent losses: {recent or 'none'})"
				log_error(message, "Predictor Training Diverged")
				raise TrainingDivergedError(message)
			try:
				optimizer_step(params, grads, state, s.optimizer)
			except TrainingDivergedError as e:
				log_error(f"Predictor training diverged at step {step}: {e}", "Predictor Training Diverged")
				raise
			curve.append((step, loss))
			if step % s.log_every == 0 or step == s.steps - 1:
				log.info(f"predictor step {step}: loss {loss:.5f}")

		if out_dir:
			ensure_dir(out_dir)
			write_loss_curve(os.path.join(out_dir, LOSS_CURVE_FILE), curve)
			predictor.save(
				os.path.join(out_dir, CHECKPOINT_FILE),
				{"config_hash": self.config_hash, "steps": s.steps, "seed": s.seed, "dataset_hash": index.config_hash},
			)
		return predictor, curve


def train_predictor(index, settings=None, action_bounds=(0.05, 0.05, 0.05, 0.26), out_dir=None, config_hash="", progress=False):
	return PredictorTrainingService(settings, action_bounds, config_hash).train(index, out_dir, progress)


def window_errors(predictor, context, targets, actions):
	"""Mean squared per-pixel error of the model rollout and of repeating the context frame"""
	uniform = np.full((1, *context.shape[:2]), 1.0 / (context.shape[0] * context.shape[1]))
	predicted, _ = predictor.predict(context, uniform, actions)
	model = float(np.mean(np.square(predicted.astype(np.float64) - targets)))
	copy_last = float(np.mean(np.square(context.astype(np.float64)[None] - targets)))
	return model, copy_last


def evaluate_predictor(predictor, index, n_windows=100, horizon=5, seed=0, split="held_out", views=("top",)):
	"""Model versus copy-last-frame error averaged over random windows of the held-out split"""
	dataset = TrajectoryDataset(index, split, views=views)
	rng = np.random.default_rng(seed)
	model_errors, baseline_errors = [], []
	for _ in range(n_windows):
		record = dataset.random_record(rng)
		view = dataset.random_view(record, rng)
		frames, actions = sample_subsequence(record, horizon, rng, view=view)
		model, copy_last = window_errors(predictor, frames[0], frames[1:], actions)
		model_errors.append(model)
		baseline_errors.append(copy_last)
	result = {
		"windows": n_windows,
		"model_l2": float(np.mean(model_errors)),
		"copy_last_l2": float(np.mean(baseline_errors)),
	}
	logger("predictor").info(
		f"Predictor on {n_windows} {split} windows: model {result['model_l2']:.6f}, copy-last {result['copy_last_l2']:.6f}"
	)
	return result
