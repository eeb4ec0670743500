# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
Benchmark reporting: success-versus-threshold curves per mode and the files a benchmark run leaves
behind. Every file starts with the run's provenance (`# key: value` lines in the CSVs), so each one
can be traced back to its resolved config. `results.csv`, `curves.csv` and `runtimes.csv` are
deterministic apart from the measured runtimes; only the timestamp line of `summary.txt` changes
between reruns.
"""

import csv
import os

import numpy as np

from visual_mpc.planner.mpc_service import HEIGHT_TOLERANCE
from visual_mpc.utils import ensure_dir, logger, now, throw, write_provenance

RESULTS_FILE = "results.csv"
CURVES_FILE = "curves.csv"
SUMMARY_FILE = "summary.txt"
RUNTIMES_FILE = "runtimes.csv"
CURVE_COLUMNS = ["metric", "category", "mode", "threshold", "fraction"]
METRICS = ("pixel", "world")
SUCCESS_THRESHOLD = 15.0


def success_fraction(distances, threshold):
	distances = np.asarray(distances, dtype=np.float64)
	if distances.size == 0:
		return 0.0
	return float(np.count_nonzero(distances < threshold)) / distances.size


def pixel_success_fraction(rows, threshold, height_tolerance=HEIGHT_TOLERANCE):
	if not rows:
		return 0.0
	return sum(row.succeeded(threshold, height_tolerance) for row in rows) / len(rows)


def success_curve(table, thresholds, metric="pixel", category=None, height_tolerance=HEIGHT_TOLERANCE):
	"""
	mode -> [(threshold, fraction of tasks that succeed at it)], thresholds ascending.

	A pixel success needs the fused multi-view distance below the threshold and every target within
	`height_tolerance` of its goal height; a world success needs the 3D distance below the threshold.
	"""
	if not len(table):
		throw("Invalid input: cannot build success curves from an empty result table")
	if metric not in METRICS:
		throw(f"Invalid input: curve metric must be one of {METRICS}, got '{metric}'")
	thresholds = sorted(float(t) for t in thresholds)
	if not thresholds:
		throw("Invalid input: success curves need at least one threshold")
	curves = {}
	for mode in table.modes:
		if metric == "pixel":
			rows = table.select(mode, category)
			curves[mode] = [(t, pixel_success_fraction(rows, t, height_tolerance)) for t in thresholds]
		else:
			curves[mode] = [(t, success_fraction(table.distances(mode, metric, category), t)) for t in thresholds]
	return curves


def success_curves(table, pixel_thresholds, world_thresholds, height_tolerance=HEIGHT_TOLERANCE):
	"""(metric, category) -> curves for every suite in the table"""
	curves = {}
	for category in table.categories:
		curves[("pixel", category)] = success_curve(table, pixel_thresholds, "pixel", category, height_tolerance)
		curves[("world", category)] = success_curve(table, world_thresholds, "world", category)
	return curves


def write_curves(path, curves, provenance=None):
	with open(path, "w", newline="", encoding="utf-8") as f:
		write_provenance(f, provenance or {})
		writer = csv.writer(f, lineterminator="\n")
		writer.writerow(CURVE_COLUMNS)
		for (metric, category), by_mode in curves.items():
			for mode, points in by_mode.items():
				for threshold, fraction in points:
					writer.writerow([metric, category, mode, f"{threshold:g}", f"{fraction:.6f}"])
	return path


def write_runtimes(path, table, provenance=None):
	with open(path, "w", newline="", encoding="utf-8") as f:
		write_provenance(f, provenance or {})
		writer = csv.writer(f, lineterminator="\n")
		writer.writerow(["task_id", "mode", "runtime_s"])
		for row in table.rows:
			writer.writerow([row.task_id, row.mode, f"{row.runtime:.3f}"])
	return path


def summary_lines(table, provenance=None, threshold=SUCCESS_THRESHOLD, height_tolerance=HEIGHT_TOLERANCE):
	provenance = {**table.provenance, **(provenance or {})}
	lines = ["Visual MPC benchmark", f"generated: {now()}"]
	lines += [f"{key}: {provenance[key]}" for key in sorted(provenance)]
	lines += [
		"",
		f"Success rate (fused distance over all views < {threshold:g} px, height error < {height_tolerance:g} m)",
		f"{'suite':<12}{'mode':<14}{'tasks':>6}{'success':>9}{'mean px':>9}{'mean m':>9}{'failed':>8}",
	]
	for category in table.categories:
		for mode in table.modes:
			rows = table.select(mode, category)
			if not rows:
				continue
			pixels = table.distances(mode, "pixel", category)
			world = table.distances(mode, "world", category)
			rate = pixel_success_fraction(rows, threshold, height_tolerance)
			lines.append(
				f"{category:<12}{mode:<14}{len(rows):>6}{rate:>9.3f}"
				f"{pixels.mean():>9.2f}{world.mean():>9.4f}{sum(row.failed for row in rows):>8}"
			)
	failures = [row for row in table.rows if row.failed]
	if failures:
		lines += ["", "Failed episodes"]
		lines += [f"{row.task_id} {row.mode}: {row.reason}" for row in failures]
	return lines


def report(table, curves, out_dir, provenance=None, threshold=SUCCESS_THRESHOLD, height_tolerance=HEIGHT_TOLERANCE):
	"""Write results, curves, runtimes and the human-readable summary; returns the written paths"""
	if not table.modes:
		throw("Invalid input: a benchmark report needs at least one mode")
	ensure_dir(out_dir)
	provenance = {**table.provenance, **(provenance or {})}
	paths = {
		"results": table.write(os.path.join(out_dir, RESULTS_FILE), provenance),
		"curves": write_curves(os.path.join(out_dir, CURVES_FILE), curves, provenance),
		"runtimes": write_runtimes(os.path.join(out_dir, RUNTIMES_FILE), table, provenance),
	}
	lines = summary_lines(table, provenance, threshold, height_tolerance)
	paths["summary"] = os.path.join(out_dir, SUMMARY_FILE)
	with open(paths["summary"], "w", encoding="utf-8") as f:
		f.write("\n".join(lines) + "\n")
	logger("bench").info(f"Wrote benchmark report for {len(table)} episodes to {out_dir}")
	return paths
