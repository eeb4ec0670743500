# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
Pipeline stages.

Each stage is a method listed in hooks.pipeline_stages taking a PipelineContext and returning the
artifacts it wrote. A finished stage leaves `<stage>.done.json` holding its stage hash; the next run
skips it while the hash still matches.
"""

import dataclasses
import os
from dataclasses import dataclass

from visual_mpc import hooks
from visual_mpc.bench.benchmark_service import ModelPaths, ResultTable, load_models, run_benchmark
from visual_mpc.bench.occlusion import occlusion_study
from visual_mpc.bench.report import report, success_curves
from visual_mpc.bench.suite import generate_suite
from visual_mpc.predictor import training_service as predictor_training
from visual_mpc.regnet import training_service as registration_training
from visual_mpc.settings import RunConfig
from visual_mpc.trajstore.collection_service import CollectionService
from visual_mpc.trajstore.dataset import INDEX_FILE, DatasetIndex
from visual_mpc.utils import (
	StageError,
	VisualMPCError,
	config_hash,
	ensure_dir,
	get_attr,
	load_json_file,
	log_error,
	logger,
	write_json_file,
)

LOCK_FILE = ".pipeline.lock"
DONE_SUFFIX = ".done.json"
SNAPSHOT_FILE = "config_snapshot.json"
DATASET_DIR = "dataset"
PUSH_DATASET_DIR = "dataset_push"
PREDICTOR_DIR = "predictor"
PUSH_PREDICTOR_DIR = "predictor_push"
REGISTRATION_DIR = "registration"
BENCH_DIR = "bench"
SUITES_DIR = "suites"
PUSH_ONLY_DIR = "push_only"
OCCLUSION_FILE = "occlusion.csv"
OCCLUSION_SUMMARY_FILE = "occlusion.json"

# config sections each stage depends on, besides the stages it requires
STAGE_SECTIONS = {
	"collect": ("scene", "collect"),
	"train-predictor": ("predictor",),
	"train-registration": ("registration",),
	"collect-push": ("scene", "collect"),
	"train-predictor-push": ("predictor",),
	"bench": ("scene", "planner", "bench"),
}


@dataclass
class PipelineContext:
	config: RunConfig
	out_dir: str
	progress: bool = False
	# explicit directories for the single-stage commands; empty means the pipeline layout
	dataset_path: str = ""
	predictor_path: str = ""
	registration_path: str = ""

	@property
	def dataset_dir(self):
		return self.dataset_path or os.path.join(self.out_dir, DATASET_DIR)

	@property
	def push_dataset_dir(self):
		return os.path.join(self.out_dir, PUSH_DATASET_DIR)

	@property
	def predictor_dir(self):
		return self.predictor_path or os.path.join(self.out_dir, PREDICTOR_DIR)

	@property
	def push_predictor_dir(self):
		return os.path.join(self.out_dir, PUSH_PREDICTOR_DIR)

	@property
	def registration_dir(self):
		return self.registration_path or os.path.join(self.out_dir, REGISTRATION_DIR)

	@property
	def bench_dir(self):
		return os.path.join(self.out_dir, BENCH_DIR)

	@property
	def predictor_checkpoint(self):
		return os.path.join(self.predictor_dir, predictor_training.CHECKPOINT_FILE)

	@property
	def push_predictor_checkpoint(self):
		return os.path.join(self.push_predictor_dir, predictor_training.CHECKPOINT_FILE)

	@property
	def push_only(self):
		return self.config.collect.push_only_trajectories > 0

	@property
	def registration_checkpoint(self):
		return os.path.join(self.registration_dir, registration_training.CHECKPOINT_FILE)

	@property
	def config_hash(self):
		return self.config.hash()

	def dataset_index(self, stage, dataset_dir=None, producer="collect"):
		dataset_dir = dataset_dir or self.dataset_dir
		if not os.path.exists(os.path.join(dataset_dir, INDEX_FILE)):
			raise StageError(stage, f"no dataset at {dataset_dir}; run the {producer} stage first")
		return DatasetIndex.load(dataset_dir)

	def checkpoint(self, stage, path, producer):
		if not os.path.exists(path):
			raise StageError(stage, f"missing checkpoint {path}; run the {producer} stage first")
		return path


def write_snapshot(config, out_dir):
	ensure_dir(out_dir)
	path = os.path.join(out_dir, SNAPSHOT_FILE)
	write_json_file(path, {"config": config.to_dict(), "config_hash": config.hash()})
	return path


# Stages
# ------


def run_collect_stage(ctx):
	config = ctx.config
	index = CollectionService(config.scene, config.collect).collect(ctx.dataset_dir, progress=ctx.progress)
	return {"index": os.path.join(ctx.dataset_dir, INDEX_FILE), "dataset_hash": index.config_hash}


def run_push_collect_stage(ctx):
	"""Reflex-free trajectories for the push-only predictor"""
	if not ctx.push_only:
		logger("pipeline").info("No push-only dataset requested (collect.push_only_trajectories is 0)")
		return {}
	config = ctx.config
	index = CollectionService(config.scene, config.collect.push_only()).collect(ctx.push_dataset_dir, progress=ctx.progress)
	return {"index": os.path.join(ctx.push_dataset_dir, INDEX_FILE), "dataset_hash": index.config_hash}


def train_predictor(ctx, index, out_dir):
	config = ctx.config
	service = predictor_training.PredictorTrainingService(config.predictor, config.scene.action_bounds, ctx.config_hash)
	predictor, _ = service.train(index, out_dir, progress=ctx.progress)
	evaluation = predictor_training.evaluate_predictor(
		predictor, index, horizon=config.predictor.train_horizon, seed=config.predictor.seed, views=config.predictor.views
	)
	write_json_file(os.path.join(out_dir, "evaluation.json"), evaluation)
	return {"checkpoint": os.path.join(out_dir, predictor_training.CHECKPOINT_FILE)}


def run_predictor_stage(ctx):
	return train_predictor(ctx, ctx.dataset_index("train-predictor"), ctx.predictor_dir)


def run_push_predictor_stage(ctx):
	if not ctx.push_only:
		logger("pipeline").info("No push-only predictor to train (collect.push_only_trajectories is 0)")
		return {}
	index = ctx.dataset_index("train-predictor-push", ctx.push_dataset_dir, "collect-push")
	return train_predictor(ctx, index, ctx.push_predictor_dir)


def run_registration_stage(ctx):
	config = ctx.config
	index = ctx.dataset_index("train-registration")
	service = registration_training.RegistrationTrainingService(config.registration, ctx.config_hash)
	network, _ = service.train(index, ctx.registration_dir, progress=ctx.progress)
	evaluation = registration_training.evaluate_registration(
		network, index, config.registration, background=config.scene.background, seed=config.registration.seed
	)
	write_json_file(os.path.join(ctx.registration_dir, "evaluation.json"), evaluation)
	return {"checkpoint": ctx.registration_checkpoint}


def bench_predictor(ctx, suites, models, modes, out_dir, provenance):
	"""Every suite under one set of checkpoints, reported into `out_dir`"""
	config, bench = ctx.config, ctx.config.bench
	table = ResultTable(provenance=dict(provenance))
	for suite in suites:
		table.extend(
			run_benchmark(
				suite,
				modes,
				models,
				bench.max_steps,
				planner=config.planner,
				scene=config.scene,
				workers=bench.workers,
				seed=bench.seed,
				out_dir=out_dir,
				progress=ctx.progress,
				config_hash=ctx.config_hash,
			)
		)
	mpc = config.planner.mpc
	curves = success_curves(table, bench.pixel_thresholds, bench.world_thresholds, mpc.height_tolerance)
	return report(table, curves, out_dir, provenance, mpc.success_threshold, mpc.height_tolerance)


def run_bench_stage(ctx):
	"""
	Benchmark the reflex predictor in every mode, then, when a push-only dataset was collected, the
	push-only predictor in `bench.push_only_modes` under `bench/push_only`. Every file written here
	carries the config hash.
	"""
	config, bench = ctx.config, ctx.config.bench
	models = ModelPaths(
		ctx.checkpoint("bench", ctx.predictor_checkpoint, "train-predictor"),
		ctx.checkpoint("bench", ctx.registration_checkpoint, "train-registration"),
	)
	provenance = {"config_hash": ctx.config_hash, **{f"{k}_hash": v for k, v in models.hashes().items()}}
	suites = []
	for category in bench.suites:
		suite = generate_suite(category, bench.n_tasks[category], bench.seed, config.scene)
		suite.save(os.path.join(ctx.bench_dir, SUITES_DIR, category), {"config_hash": ctx.config_hash})
		suites.append(suite)
	paths = bench_predictor(ctx, suites, models, bench.modes, ctx.bench_dir, provenance)

	if ctx.push_only:
		push_models = ModelPaths(
			ctx.checkpoint("bench", ctx.push_predictor_checkpoint, "train-predictor-push"), models.registration
		)
		push_provenance = {**provenance, "predictor_hash": push_models.hashes()["predictor"], "predictor": "push-only"}
		push_paths = bench_predictor(
			ctx, suites, push_models, bench.push_only_modes, os.path.join(ctx.bench_dir, PUSH_ONLY_DIR), push_provenance
		)
		paths.update({f"push_only_{name}": path for name, path in push_paths.items()})

	if bench.occlusion_scenarios:
		loaded = load_models(models, config.scene, config.planner.cem.horizon)
		study = occlusion_study(
			loaded.registration,
			loaded.predictor,
			config.scene,
			bench.occlusion_scenarios,
			bench.seed,
			neighborhood=config.planner.mpc.neighborhood,
		)
		paths["occlusion"] = study.write(os.path.join(ctx.bench_dir, OCCLUSION_FILE), provenance)
		write_json_file(os.path.join(ctx.bench_dir, OCCLUSION_SUMMARY_FILE), {**study.as_dict(), **provenance})
	return paths


# Pipeline
# --------


class PipelineLock:
	"""Exclusive lock file: one pipeline run per output directory"""

	def __init__(self, out_dir):
		self.path = os.path.join(out_dir, LOCK_FILE)
		self.fd = None

	def __enter__(self):
		ensure_dir(os.path.dirname(self.path) or ".")
		try:
			self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
		except FileExistsError:
			raise StageError("pipeline", f"{self.path} exists; another run is writing to this directory") from None
		os.write(self.fd, str(os.getpid()).encode("ascii"))
		return self

	def __exit__(self, *exc):
		os.close(self.fd)
		os.remove(self.path)
		return False


def stage_table(names=None):
	stages = hooks.pipeline_stages
	if names:
		unknown = sorted(set(names) - {stage["name"] for stage in stages})
		if unknown:
			raise StageError("pipeline", f"unknown stages {unknown}")
		stages = [stage for stage in stages if stage["name"] in names]
	return stages


def stage_hashes(config):
	"""Hash of every stage over its config sections and the hashes of the stages it requires"""
	sections = dataclasses.asdict(config)
	hashes = {}
	for stage in hooks.pipeline_stages:
		name = stage["name"]
		hashes[name] = config_hash(
			{
				"stage": name,
				"sections": {section: sections[section] for section in STAGE_SECTIONS[name]},
				"requires": {required: hashes[required] for required in stage["requires"]},
			}
		)
	return hashes


def marker_path(out_dir, stage):
	return os.path.join(out_dir, f"{stage}{DONE_SUFFIX}")


def is_done(out_dir, stage, stage_hash):
	path = marker_path(out_dir, stage)
	return os.path.exists(path) and load_json_file(path).get("stage_hash") == stage_hash


def run_stage(ctx, stage, stage_hash):
	name = stage["name"]
	log = logger("pipeline")
	log.info(f"Running stage {name} ({stage_hash})")
	try:
		artifacts = get_attr(stage["method"])(ctx)
	except StageError:
		raise
	except (VisualMPCError, OSError, FloatingPointError) as e:
		log_error(f"Stage {name} failed: {e}", "Pipeline Stage Failed")
		raise StageError(name, f"{type(e).__name__}: {e}") from e
	write_json_file(
		marker_path(ctx.out_dir, name),
		{"stage": name, "stage_hash": stage_hash, "config_hash": ctx.config_hash, "artifacts": artifacts},
	)
	return artifacts


def run_pipeline(config, out_dir, force=False, stages=None, progress=False):
	"""
	Run the stages in order under the directory lock. Finished stages whose hash still matches are skipped
	unless `force`; a failing stage stops the run and keeps the outputs of earlier stages.
	Returns {stage: "done" | "skipped"}.
	"""
	config = config.validate()
	ctx = PipelineContext(config, out_dir, progress)
	hashes = stage_hashes(config)
	status = {}
	with PipelineLock(out_dir):
		write_snapshot(config, out_dir)
		for stage in stage_table(stages):
			name = stage["name"]
			if not force and is_done(out_dir, name, hashes[name]):
				logger("pipeline").info(f"Skipping stage {name}: outputs match {hashes[name]}")
				status[name] = "skipped"
				continue
			run_stage(ctx, stage, hashes[name])
			status[name] = "done"
	logger("pipeline").info(f"Pipeline in {out_dir} finished: {status}")
	return status
