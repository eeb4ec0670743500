# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
Command-line entry point.

Every sub-command resolves a RunConfig (defaults < --config file < --set overrides < command flags),
writes config_snapshot.json next to its outputs and returns an exit status: 0 on success, 1 on a
domain error, 2 on a usage error.
"""

import argparse
import csv
import glob
import os
import sys

import numpy as np

from visual_mpc import hooks
from visual_mpc.bench.benchmark_service import ModelPaths, load_models
from visual_mpc.bench.suite import generate_suite, make_task
from visual_mpc.numkit.grad_check import check_kernels
from visual_mpc.planner.mpc_service import LOG_FILE, run_episode
from visual_mpc.regnet.registration_model import RegistrationNet
from visual_mpc.regnet.visualization import export_strip
from visual_mpc.settings import CATEGORIES, MODES, VIEWS, load_run_config
from visual_mpc.sim.renderer import load_png
from visual_mpc.sim.simulator import TabletopSimulator
from visual_mpc.tasks import (
	PipelineContext,
	bench_predictor,
	run_collect_stage,
	run_pipeline,
	run_predictor_stage,
	run_registration_stage,
	write_snapshot,
)
from visual_mpc.trajstore.benchmark_task import load_task, save_task
from visual_mpc.utils import (
	VisualMPCError,
	get_attr,
	get_output_root,
	log_error,
	logger,
	read_provenance_csv,
	throw,
	write_provenance,
)

STRIP_FILE = "registration_strip_{view}.png"
LAMBDA_FILE = "lambda.csv"
TASK_DIR = "task"


# Parser
# ------


def _common(parser, default_out):
	parser.add_argument("--config", help="JSON config file layered over the built-in defaults")
	parser.add_argument(
		"--set",
		dest="overrides",
		action="append",
		default=[],
		metavar="KEY=VALUE",
		help="dotted config override, e.g. planner.cem.iterations=2 (repeatable)",
	)
	parser.add_argument("--out", help=f"output directory (default: $VISUAL_MPC_OUTPUT_ROOT/{default_out})")
	parser.add_argument("--quiet", action="store_true", help="disable progress bars")
	parser.set_defaults(default_out=default_out)


def build_parser():
	parser = argparse.ArgumentParser(prog="visual-mpc", description=hooks.app_description)
	sub = parser.add_subparsers(dest="command", required=True, metavar="command")

	p = sub.add_parser("collect", help="collect random-policy trajectories into a dataset")
	_common(p, "dataset")
	p.add_argument("--n", type=int, help="number of trajectories")
	p.add_argument("--len", type=int, dest="episode_len", help="steps per trajectory")
	p.add_argument("--reflex", action=argparse.BooleanOptionalAction, default=None, help="grasp reflex on or off")
	p.add_argument("--seed", type=int, help="collection seed")
	p.add_argument("--workers", type=int, help="worker processes")

	for name, help_text in (
		("train-predictor", "train the action-conditioned flow predictor"),
		("train-registration", "train the registration network"),
	):
		p = sub.add_parser(name, help=help_text)
		_common(p, name.split("-", 1)[1])
		p.add_argument("--dataset", required=True, help="dataset directory written by collect")
		p.add_argument("--steps", type=int, help="optimizer steps")
		p.add_argument("--seed", type=int, help="training seed")

	p = sub.add_parser("run-task", help="run one closed-loop episode")
	_common(p, "episode")
	p.add_argument("--task", help="task JSON file; without it a task is generated from --category/--scene-seed")
	p.add_argument("--category", choices=CATEGORIES, default="short")
	p.add_argument("--scene-seed", type=int, default=0)
	p.add_argument("--mode", choices=MODES, help="belief provider")
	p.add_argument("--predictor", default="", help="predictor checkpoint (default: plan with the simulator)")
	p.add_argument("--registration", default="", help="registration checkpoint")
	p.add_argument("--max-steps", type=int)
	p.add_argument("--seed", type=int, help="planner seed")
	p.add_argument("--dump-frames", action="store_true", default=None, help="write every observed frame as PNG")

	p = sub.add_parser("bench", help="run benchmark suites and write the report")
	_common(p, "bench")
	p.add_argument("--suite", action="append", choices=CATEGORIES, help="suite category (repeatable)")
	p.add_argument("--modes", nargs="+", choices=MODES)
	p.add_argument("--n-tasks", type=int, help="tasks per suite")
	p.add_argument("--predictor", default="", help="predictor checkpoint (default: plan with the simulator)")
	p.add_argument("--registration", default="", help="registration checkpoint")
	p.add_argument("--max-steps", type=int)
	p.add_argument("--workers", type=int)
	p.add_argument("--seed", type=int, help="suite and episode seed")

	p = sub.add_parser("visualize", help="registration strips and weight-over-time CSV for an episode")
	_common(p, "visualize")
	p.add_argument("--episode", required=True, help="episode directory written by run-task or bench")
	p.add_argument("--task", help="task JSON (default: the copy run-task keeps in the episode directory)")
	p.add_argument("--registration", default="", help="registration checkpoint for the warped strips")
	p.add_argument("--view", choices=VIEWS, default="top")
	p.add_argument("--frames", type=int, default=8, help="frames per strip")

	p = sub.add_parser("pipeline", help="collect, train both networks and benchmark from one config")
	_common(p, "pipeline")
	p.add_argument("--force", action="store_true", help="re-run stages whose outputs are up to date")
	p.add_argument("--stages", nargs="+", help="run only these stages")

	p = sub.add_parser("grad-check", help="finite-difference gradient checks of every kernel")
	_common(p, "grad-check")
	p.add_argument("--seed", type=int, default=0)
	p.add_argument("--tolerance", type=float, default=1e-4)
	return parser


def flag_overrides(args, mapping):
	"""`section.key=value` overrides for the flags that were given"""
	overrides = []
	for attr, key in mapping.items():
		value = getattr(args, attr, None)
		if value is None:
			continue
		if isinstance(value, bool):
			value = "true" if value else "false"
		elif isinstance(value, (list, tuple)):
			value = "[" + ",".join(f'"{v}"' for v in value) + "]"
		overrides.append(f"{key}={value}")
	return overrides


def resolve(args, mapping=None, extra=()):
	"""(config, out_dir) for a parsed command line; the snapshot is written before any work starts"""
	config = load_run_config(args.config, [*args.overrides, *flag_overrides(args, mapping or {}), *extra])
	out_dir = args.out or os.path.join(get_output_root(), args.default_out)
	write_snapshot(config, out_dir)
	return config, out_dir


# Commands
# --------


def collect(args):
	config, out_dir = resolve(
		args,
		{
			"n": "collect.n_trajectories",
			"episode_len": "collect.episode_len",
			"reflex": "collect.reflex",
			"seed": "collect.seed",
			"workers": "collect.workers",
		},
	)
	artifacts = run_collect_stage(PipelineContext(config, out_dir, not args.quiet, dataset_path=out_dir))
	print(f"Dataset index: {artifacts['index']}")
	return 0


def train_predictor(args):
	config, out_dir = resolve(args, {"steps": "predictor.steps", "seed": "predictor.seed"})
	ctx = PipelineContext(config, out_dir, not args.quiet, dataset_path=args.dataset, predictor_path=out_dir)
	print(f"Checkpoint: {run_predictor_stage(ctx)['checkpoint']}")
	return 0


def train_registration(args):
	config, out_dir = resolve(args, {"steps": "registration.steps", "seed": "registration.seed"})
	ctx = PipelineContext(config, out_dir, not args.quiet, dataset_path=args.dataset, registration_path=out_dir)
	print(f"Checkpoint: {run_registration_stage(ctx)['checkpoint']}")
	return 0


def run_task(args):
	config, out_dir = resolve(
		args,
		{
			"mode": "planner.mpc.mode",
			"max_steps": "planner.mpc.max_steps",
			"seed": "planner.mpc.seed",
			"dump_frames": "planner.mpc.dump_frames",
		},
	)
	sim = TabletopSimulator(config.scene)
	if args.task:
		task = load_task(args.task)
	else:
		task = make_task(sim, args.category, f"{args.category}-seed{args.scene_seed}", args.scene_seed)
		if task is None:
			throw(f"Invalid input: scene {args.scene_seed} admits no {args.category} goal; try another --scene-seed")
	save_task(task, os.path.join(out_dir, TASK_DIR), {"config_hash": config.hash()})
	models = load_models(ModelPaths(args.predictor, args.registration), config.scene, config.planner.cem.horizon)
	result = run_episode(task, models, config.planner, out_dir=out_dir, config_hash=config.hash())
	mpc = config.planner.mpc
	succeeded = result.succeeded(mpc.success_threshold, mpc.height_tolerance)
	print(
		f"{task.task_id} ({result.mode}): {result.steps} steps, final distance {result.pixel_distance:.2f}px / "
		f"{result.world_distance:.4f}m, height error {result.height_error:.4f}m, "
		f"{'success' if succeeded else 'no success'}"
		f"{', failed: ' + result.reason if result.failed else ''}"
	)
	return 1 if result.failed else 0


def bench(args):
	config, out_dir = resolve(
		args,
		{
			"suite": "bench.suites",
			"modes": "bench.modes",
			"max_steps": "bench.max_steps",
			"workers": "bench.workers",
			"seed": "bench.seed",
		},
		[] if args.n_tasks is None else [f"bench.n_tasks.{category}={args.n_tasks}" for category in CATEGORIES],
	)
	b = config.bench
	models = ModelPaths(args.predictor, args.registration)
	provenance = {"config_hash": config.hash(), **{f"{k}_hash": v for k, v in models.hashes().items()}}
	suites = [generate_suite(category, b.n_tasks[category], b.seed, config.scene) for category in b.suites]
	ctx = PipelineContext(config, out_dir, not args.quiet)
	paths = bench_predictor(ctx, suites, models, b.modes, out_dir, provenance)
	with open(paths["summary"], encoding="utf-8") as f:
		print(f.read(), end="")
	return 0


def read_weights(log_path):
	"""Per-step registration weights from an episode log: (entry keys, [(step, weights)], provenance)"""
	provenance, records = read_provenance_csv(log_path)
	keys, rows = None, []
	for record in records:
		step_keys = [item.split(":", 1)[0] for item in record["estimates"].split(";") if item]
		if keys is None:
			keys = step_keys
		elif step_keys != keys:
			throw(f"Invalid input: entry set changes at step {record['step']} of {log_path}")
		rows.append((int(record["step"]), [float(v) for v in record["weights"].split()]))
	return keys or [], rows, provenance


def write_weights(path, keys, rows, provenance=None):
	with open(path, "w", newline="", encoding="utf-8") as f:
		write_provenance(f, provenance or {})
		writer = csv.writer(f, lineterminator="\n")
		writer.writerow(["step", *keys])
		for step, values in rows:
			writer.writerow([step, *(f"{v:.6f}" for v in values)])
	return path


def _find_task(episode_dir, task_path):
	if task_path:
		return load_task(task_path)
	candidates = sorted(glob.glob(os.path.join(episode_dir, TASK_DIR, "*.json")))
	if not candidates:
		throw(f"Invalid input: no task copy in {episode_dir}; pass --task")
	return load_task(candidates[0])


def visualize(args):
	config, out_dir = resolve(args)
	log_path = os.path.join(args.episode, LOG_FILE)
	if not os.path.exists(log_path):
		throw(f"Invalid input: {args.episode} has no {LOG_FILE}")
	keys, rows, provenance = read_weights(log_path)
	written = [write_weights(os.path.join(out_dir, LAMBDA_FILE), keys, rows, provenance)]

	frame_paths = sorted(glob.glob(os.path.join(args.episode, f"frame_*_{args.view}.png")))
	if args.registration and frame_paths:
		task = _find_task(args.episode, args.task)
		network = RegistrationNet.load(args.registration)
		picks = np.unique(np.linspace(0, len(frame_paths) - 1, min(args.frames, len(frame_paths))).round().astype(int))
		frames = np.stack([load_png(frame_paths[i]) for i in picks])
		start_frame = load_png(frame_paths[0])
		goal_frame = task.goal_frames[args.view]
		written.append(
			export_strip(
				os.path.join(out_dir, STRIP_FILE.format(view=args.view)),
				network,
				frames,
				start_frame,
				goal_frame,
				task.start_pixels[args.view],
				task.goal_pixels[args.view],
				neighborhood=config.planner.mpc.neighborhood,
			)
		)
	elif args.registration:
		logger("registration").warning(f"No {args.view} frames in {args.episode}; run the episode with --dump-frames")
	for path in written:
		print(path)
	return 0


def pipeline(args):
	config, out_dir = resolve(args)
	status = run_pipeline(config, out_dir, force=args.force, stages=args.stages, progress=not args.quiet)
	for stage, state in status.items():
		print(f"{stage}: {state}")
	return 0


def grad_check(args):
	resolve(args)
	reports = check_kernels(args.seed, args.tolerance)
	for report_ in reports:
		print(report_.message)
	return 0 if all(r.passed for r in reports) else 1


# Dispatch
# --------


def dispatch(argv=None):
	"""Parse and run one sub-command; returns the exit status"""
	parser = build_parser()
	try:
		args = parser.parse_args(argv)
	except SystemExit as e:
		return e.code if isinstance(e.code, int) else 2
	try:
		return get_attr(hooks.cli_commands[args.command])(args)
	except (VisualMPCError, OSError) as e:
		log_error(f"visual-mpc {args.command} failed: {e}", "Command Failed")
		print(f"error: {e}", file=sys.stderr)
		return 1


def main():
	sys.exit(dispatch())
