# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from tqdm import tqdm

from visual_mpc.settings import CollectSettings, SceneSettings
from visual_mpc.sim.geometry import pieces_overlap
from visual_mpc.sim.simulator import TabletopSimulator
from visual_mpc.trajstore.dataset import INDEX_FILE, DatasetIndex, split_files
from visual_mpc.trajstore.trajectory_record import FILE_PATTERN, GroundTruth, TrajectoryRecord, write_record
from visual_mpc.utils import VisualMPCError, config_hash, ensure_dir, file_hash, log_error, logger


def smoothed_random_actions(rng, length, bounds, smoothing):
	"""a_0 = u_0, a_k = smoothing * a_{k-1} + (1 - smoothing) * u_k with u_k uniform within the bounds"""
	bounds = np.asarray(bounds, dtype=np.float64)
	raw = rng.uniform(-1.0, 1.0, size=(length, len(bounds))) * bounds
	actions = np.empty_like(raw)
	actions[0] = raw[0]
	for k in range(1, length):
		actions[k] = smoothing * actions[k - 1] + (1 - smoothing) * raw[k]
	return actions


def random_start_pose(sim, state, rng, start_height):
	"""Uniform gripper pose low over the table; a gripper starting inside an object rests on top of it"""
	s = sim.settings
	x, y = (float(v) for v in rng.uniform(0.0, s.workspace, size=2))
	z = float(rng.uniform(*start_height))
	theta = float(rng.uniform(-np.pi, np.pi))
	if z < s.object_height:
		footprint = [sim.footprint(x, y, theta)]
		if any(pieces_overlap(footprint, obj.pieces()) for obj in state.objects):
			z = s.object_height
	return (x, y, z, theta)


def run_collection_episode(sim, scene_seed, policy_seed, settings):
	"""Roll the smoothed random policy for one episode; returns a record with ground truth attached"""
	rng = np.random.default_rng(policy_seed)
	state = sim.reset(seed=scene_seed)
	state = state.replace(gripper=random_start_pose(sim, state, rng, settings.start_height))
	actions = smoothed_random_actions(rng, settings.episode_len, sim.action_bounds, settings.smoothing)

	frames = {view: [] for view in settings.views}
	pixels = {view: [] for view in settings.views}
	gripper, grasp, poses, held = [], [], [], []
	for action in actions:
		for view in settings.views:
			frames[view].append(sim.render(state, view))
			pixels[view].append([sim.object_pixel_position(state, view, obj.id) for obj in state.objects])
		gripper.append(state.gripper)
		grasp.append(state.grasp_closed)
		poses.append([(obj.x, obj.y, obj.z, obj.theta) for obj in state.objects])
		held.append(-1 if state.held_object is None else state.held_object)
		state = sim.step(state, action)

	return TrajectoryRecord(
		index=0,
		seed=int(scene_seed),
		reflex=sim.reflex_enabled,
		frames={view: np.stack(frames[view]).astype(np.float32) for view in settings.views},
		actions=actions,
		gripper=np.asarray(gripper, dtype=np.float64),
		grasp_closed=np.asarray(grasp, dtype=bool),
		ground_truth=GroundTruth(
			object_poses=np.asarray(poses, dtype=np.float64),
			held_object=np.asarray(held, dtype=np.int64),
			object_pixels={view: np.asarray(pixels[view], dtype=np.float64) for view in settings.views},
		),
	)


def episode_flags(truth):
	"""(held, pushed): whether any object was grasped, whether any object not held was displaced"""
	held = bool(np.any(truth.held_object >= 0))
	poses = truth.object_poses
	pushed = False
	for k in range(1, len(poses)):
		moved = np.any(np.abs(poses[k] - poses[k - 1]) > 1e-9, axis=1)
		for object_id in np.nonzero(moved)[0]:
			if truth.held_object[k - 1] != object_id and truth.held_object[k] != object_id:
				pushed = True
	return held, pushed


def _collect_job(job):
	"""Worker entry point: one episode written to one file"""
	scene, settings, out_dir, index, scene_seed, policy_seed = job
	sim = TabletopSimulator(scene, reflex=settings.reflex)
	record = run_collection_episode(sim, scene_seed, policy_seed, settings)
	record.index = index
	name = FILE_PATTERN % index
	path = write_record(os.path.join(out_dir, name), record)
	held, pushed = episode_flags(record.ground_truth)
	return {"file": name, "sha256": file_hash(path), "seed": int(scene_seed), "held": held, "pushed": pushed}


class CollectionService:
	"""Autonomous data collection: random-policy episodes written as trajectory files plus an index"""

	def __init__(self, scene=None, settings=None):
		self.scene = (scene or SceneSettings()).validate()
		self.settings = (settings or CollectSettings()).validate()

	def config_hash(self):
		return config_hash({"scene": dataclasses.asdict(self.scene), "collect": dataclasses.asdict(self.settings)})

	def jobs(self, out_dir):
		children = np.random.SeedSequence(self.settings.seed).spawn(self.settings.n_trajectories)
		jobs = []
		for index, child in enumerate(children):
			scene_seed, policy_seed = (int(v) for v in child.generate_state(2))
			jobs.append((self.scene, self.settings, out_dir, index, scene_seed, policy_seed))
		return jobs

	def _run_jobs(self, jobs, progress):
		bar = tqdm(total=len(jobs), desc="collect", unit="traj", disable=not progress)
		try:
			if self.settings.workers == 1:
				for job in jobs:
					yield _collect_job(job)
					bar.update()
			else:
				with ProcessPoolExecutor(max_workers=self.settings.workers) as executor:
					for result in executor.map(_collect_job, jobs, chunksize=4):
						yield result
						bar.update()
		finally:
			bar.close()

	def _cleanup(self, out_dir, jobs):
		for name in [FILE_PATTERN % job[3] for job in jobs] + [INDEX_FILE]:
			for path in (os.path.join(out_dir, name), os.path.join(out_dir, f"{name}.tmp")):
				if os.path.exists(path):
					os.remove(path)

	def collect(self, out_dir, progress=True):
		"""Collect `n_trajectories` episodes into `out_dir`; the same seed gives byte-identical files"""
		ensure_dir(out_dir)
		settings = self.settings
		jobs = self.jobs(out_dir)
		logger("trajstore").info(
			f"Collecting {settings.n_trajectories} trajectories x {settings.episode_len} steps into {out_dir} "
			f"(reflex {'on' if settings.reflex else 'off'}, seed {settings.seed}, {settings.workers} workers)"
		)
		try:
			results = list(self._run_jobs(jobs, progress))
			files = [result["file"] for result in results]
			index = DatasetIndex(
				root=out_dir,
				files=files,
				splits=split_files(files, settings.held_out_fraction),
				config_hash=self.config_hash(),
				sha256={result["file"]: result["sha256"] for result in results},
				summary=self.summarize(results),
			).validate()
			index.save()
		except OSError as e:
			log_error(f"Collection into {out_dir} failed: {e}", "Collection Error")
			self._cleanup(out_dir, jobs)
			raise VisualMPCError(f"Collection aborted, partial dataset removed: {e}")

		summary = index.summary
		logger("trajstore").info(
			f"Collected {len(index.files)} trajectories: hold fraction {summary['hold_fraction']:.3f}, "
			f"push fraction {summary['push_fraction']:.3f}"
		)
		return index

	def summarize(self, results):
		n = max(len(results), 1)
		return {
			"n_trajectories": len(results),
			"episode_len": self.settings.episode_len,
			"reflex": self.settings.reflex,
			"seed": self.settings.seed,
			"views": list(self.settings.views),
			"hold_fraction": sum(result["held"] for result in results) / n,
			"push_fraction": sum(result["pushed"] for result in results) / n,
			"episode_seeds": [result["seed"] for result in results],
		}


def collect(n_trajectories, episode_len, reflex_enabled, seed, out_dir, scene=None, settings=None, progress=False):
	"""Collect a dataset; `settings` supplies the remaining collection options"""
	settings = dataclasses.replace(
		settings or CollectSettings(),
		n_trajectories=n_trajectories,
		episode_len=episode_len,
		reflex=bool(reflex_enabled),
		seed=seed,
	)
	return CollectionService(scene, settings).collect(out_dir, progress=progress)
