# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import csv
import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from visual_mpc.planner.mpc_service import HEIGHT_TOLERANCE, PlanningModels, run_episode
from visual_mpc.predictor.predictor_model import FlowPredictor, SimulatorPredictor
from visual_mpc.regnet.registration_model import RegistrationNet
from visual_mpc.settings import CATEGORIES, MODES, PlannerSettings, SceneSettings
from visual_mpc.sim.simulator import TabletopSimulator
from visual_mpc.utils import (
	config_hash,
	ensure_dir,
	file_hash,
	log_error,
	logger,
	read_provenance_csv,
	throw,
	write_provenance,
)

RESULT_COLUMNS = [
	"task_id",
	"category",
	"mode",
	"seed",
	"steps",
	"failed",
	"reason",
	"initial_pixel_distance",
	"pixel_distance",
	"world_distance",
	"height_error",
	"log_dir",
]
EPISODES_DIR = "episodes"


@dataclass(frozen=True)
class ModelPaths:
	"""Checkpoints a worker process loads; an empty predictor path plans with the simulator itself"""

	predictor: str = ""
	registration: str = ""

	def hashes(self):
		return {
			name: file_hash(path)[:12] if path else ""
			for name, path in (("predictor", self.predictor), ("registration", self.registration))
		}


def load_models(paths, scene=None, horizon=15):
	sim = TabletopSimulator(scene or SceneSettings())
	predictor = FlowPredictor.load(paths.predictor) if paths.predictor else SimulatorPredictor(sim, horizon)
	registration = RegistrationNet.load(paths.registration) if paths.registration else None
	return PlanningModels(predictor, sim, registration)


# per-process cache, filled on first use in each worker; keyed on checkpoint contents
_WORKER_MODELS = {}


def _worker_models(paths, scene, horizon):
	key = (paths, tuple(sorted(paths.hashes().items())), config_hash(dataclasses.asdict(scene)), horizon)
	if key not in _WORKER_MODELS:
		_WORKER_MODELS[key] = load_models(paths, scene, horizon)
	return _WORKER_MODELS[key]


@dataclass
class ResultRow:
	task_id: str
	category: str
	mode: str
	seed: int
	steps: int
	failed: bool
	reason: str
	initial_pixel_distance: float
	pixel_distance: float
	world_distance: float
	height_error: float = 0.0
	log_dir: str = ""
	runtime: float = 0.0

	def succeeded(self, threshold=15.0, height_tolerance=HEIGHT_TOLERANCE):
		return self.pixel_distance < threshold and self.height_error < height_tolerance

	def as_row(self):
		return [
			self.task_id,
			self.category,
			self.mode,
			self.seed,
			self.steps,
			int(self.failed),
			self.reason,
			f"{self.initial_pixel_distance:.6f}",
			f"{self.pixel_distance:.6f}",
			f"{self.world_distance:.6f}",
			f"{self.height_error:.6f}",
			self.log_dir,
		]


@dataclass
class ResultTable:
	"""One row per (task, mode), ordered by task index then mode"""

	rows: list = field(default_factory=list)
	provenance: dict = field(default_factory=dict)

	def __len__(self):
		return len(self.rows)

	@property
	def modes(self):
		return tuple(dict.fromkeys(row.mode for row in self.rows))

	@property
	def categories(self):
		return tuple(dict.fromkeys(row.category for row in self.rows))

	def select(self, mode=None, category=None):
		return [
			row
			for row in self.rows
			if (mode is None or row.mode == mode) and (category is None or row.category == category)
		]

	def distances(self, mode, metric="pixel", category=None):
		attribute = "pixel_distance" if metric == "pixel" else "world_distance"
		return np.array([getattr(row, attribute) for row in self.select(mode, category)], dtype=np.float64)

	def extend(self, other):
		keys = {(row.task_id, row.mode) for row in self.rows}
		for row in other.rows:
			if (row.task_id, row.mode) in keys:
				throw(f"Invalid input: duplicate result row for task {row.task_id} in mode {row.mode}")
			self.rows.append(row)
		self.provenance.update(other.provenance)
		return self

	def write(self, path, provenance=None):
		"""CSV with one leading `# key: value` line per provenance entry"""
		provenance = {**self.provenance, **(provenance or {})}
		with open(path, "w", newline="", encoding="utf-8") as f:
			write_provenance(f, provenance)
			writer = csv.writer(f, lineterminator="\n")
			writer.writerow(RESULT_COLUMNS)
			for row in self.rows:
				writer.writerow(row.as_row())
		return path

	@classmethod
	def read(cls, path):
		provenance, records = read_provenance_csv(path)
		rows = []
		for record in records:
			rows.append(
				ResultRow(
					task_id=record["task_id"],
					category=record["category"],
					mode=record["mode"],
					seed=int(record["seed"]),
					steps=int(record["steps"]),
					failed=record["failed"] == "1",
					reason=record["reason"],
					initial_pixel_distance=float(record["initial_pixel_distance"]),
					pixel_distance=float(record["pixel_distance"]),
					world_distance=float(record["world_distance"]),
					height_error=float(record["height_error"]),
					log_dir=record["log_dir"],
				)
			)
		return cls(rows, provenance)


def episode_seeds(suite, seed):
	"""One seed per task, shared by every mode so the modes see the same sampling noise"""
	children = np.random.SeedSequence([int(seed), CATEGORIES.index(suite.category)]).spawn(len(suite))
	return [int(child.generate_state(1)[0]) for child in children]


def _episode_job(job):
	task, mode, models, planner, max_steps, seed, out_dir, scene, run_hash = job
	if isinstance(models, ModelPaths):
		models = _worker_models(models, scene, planner.cem.horizon)
	log_dir = os.path.join(out_dir, EPISODES_DIR, task.task_id, mode) if out_dir else None
	result = run_episode(
		task, models, planner, mode=mode, max_steps=max_steps, seed=seed, out_dir=log_dir, config_hash=run_hash
	)
	return ResultRow(
		task_id=task.task_id,
		category=task.category,
		mode=mode,
		seed=seed,
		steps=result.steps,
		failed=result.failed,
		reason=result.reason,
		initial_pixel_distance=result.initial_fused_distance,
		pixel_distance=result.pixel_distance,
		world_distance=result.world_distance,
		height_error=result.height_error,
		log_dir=os.path.relpath(log_dir, out_dir) if log_dir else "",
		runtime=result.runtime,
	)


class BenchmarkService:
	"""
	Runs every (task, mode) episode of a suite. With more than one worker the episodes run in a process
	pool; workers load the checkpoints themselves when given ModelPaths.
	"""

	def __init__(self, planner=None, scene=None, workers=1, seed=0, config_hash=""):
		self.planner = (planner or PlannerSettings()).validate()
		self.scene = scene or SceneSettings()
		self.workers = int(workers)
		self.seed = int(seed)
		self.config_hash = config_hash
		if self.workers < 1:
			throw(f"Invalid input: bench workers must be at least 1, got {workers}")

	def jobs(self, suite, modes, models, max_steps, out_dir=None):
		seeds = episode_seeds(suite, self.seed)
		return [
			(task, mode, models, self.planner, max_steps, seeds[i], out_dir, self.scene, self.config_hash)
			for i, task in enumerate(suite.tasks)
			for mode in modes
		]

	def _run_jobs(self, jobs, progress):
		bar = tqdm(total=len(jobs), desc="bench", unit="episode", disable=not progress)
		try:
			if self.workers == 1:
				for job in jobs:
					yield _episode_job(job)
					bar.update()
			else:
				with ProcessPoolExecutor(max_workers=self.workers) as executor:
					for row in executor.map(_episode_job, jobs):
						yield row
						bar.update()
		finally:
			bar.close()

	def run(self, suite, modes, models, max_steps=120, out_dir=None, progress=False):
		modes = tuple(modes)
		if not modes or any(mode not in MODES for mode in modes):
			throw(f"Invalid input: benchmark modes must be a non-empty subset of {MODES}, got {modes}")
		if not len(suite):
			throw(f"Invalid input: the {suite.category} suite has no tasks")
		if out_dir:
			ensure_dir(out_dir)
		jobs = self.jobs(suite, modes, models, int(max_steps), out_dir)
		log = logger("bench")
		log.info(
			f"Benchmarking {len(suite)} {suite.category} tasks x {len(modes)} modes, {max_steps} steps, "
			f"{self.workers} workers"
		)
		try:
			rows = list(self._run_jobs(jobs, progress))
		except Exception as e:
			log_error(f"Benchmark of the {suite.category} suite stopped: {e}", "Benchmark Error")
			raise

		failed = sum(row.failed for row in rows)
		if failed:
			log.warning(f"{failed} of {len(rows)} {suite.category} episodes failed; their final distances are kept")
		provenance = {"bench_seed": self.seed, f"{suite.category}_suite_seed": suite.seed}
		if self.config_hash:
			provenance["config_hash"] = self.config_hash
		if isinstance(models, ModelPaths):
			provenance.update({f"{name}_hash": value for name, value in models.hashes().items()})
		return ResultTable(rows, provenance)


def run_benchmark(
	suite,
	modes,
	models,
	max_steps=120,
	planner=None,
	scene=None,
	workers=1,
	seed=0,
	out_dir=None,
	progress=False,
	config_hash="",
):
	"""Episodes for every (task, mode); `models` is a PlanningModels or ModelPaths"""
	service = BenchmarkService(planner, scene, workers, seed, config_hash)
	return service.run(suite, modes, models, max_steps, out_dir, progress)
