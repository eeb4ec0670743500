# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import csv
import hashlib
import importlib
import json
import logging
import os
import sys
from datetime import datetime

import numpy as np

LOG_ROOT = "visual_mpc"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
OUTPUT_ROOT_ENV = "VISUAL_MPC_OUTPUT_ROOT"
LOG_LEVEL_ENV = "VISUAL_MPC_LOG_LEVEL"
PROVENANCE_PREFIX = "# "

_configured = False


class VisualMPCError(Exception):
	"""Base class for all errors raised by the app"""


class ValidationError(VisualMPCError):
	"""Rejected input"""


class RejectedConfigurationError(ValidationError):
	"""Simulator could not build the requested scene"""


class CheckpointError(VisualMPCError):
	pass


class TrainingDivergedError(VisualMPCError):
	pass


class PlanningError(VisualMPCError):
	pass


class GradientCheckError(VisualMPCError):
	pass


class StageError(VisualMPCError):
	"""A pipeline stage failed; carries the stage name"""

	def __init__(self, stage, message):
		super().__init__(f"Stage '{stage}' failed: {message}")
		self.stage = stage


def logger(name=None):
	"""Get the app logger, or a namespaced child logger for a module"""
	global _configured
	root = logging.getLogger(LOG_ROOT)
	if not _configured:
		handler = logging.StreamHandler(sys.stderr)
		handler.setFormatter(logging.Formatter(LOG_FORMAT))
		root.addHandler(handler)
		root.setLevel(os.environ.get(LOG_LEVEL_ENV, "INFO").upper())
		root.propagate = False
		_configured = True
	if not name:
		return root
	return root.getChild(name)


def log_error(message, title="Error"):
	"""Log an error with the traceback of the exception being handled, if any"""
	logger().error(f"{title}: {message}", exc_info=sys.exc_info()[0] is not None)


def throw(message, exc=ValidationError):
	"""Raise `exc` with `message`"""
	raise exc(message)


def get_attr(method_path):
	"""Resolve a dotted path such as `visual_mpc.tasks.run_collect_stage` to the object it names"""
	module_name, _, attr = method_path.rpartition(".")
	if not module_name:
		throw(f"Invalid input: '{method_path}' is not a dotted method path")
	return getattr(importlib.import_module(module_name), attr)


def _default(obj):
	if isinstance(obj, np.ndarray):
		return obj.tolist()
	if isinstance(obj, np.integer):
		return int(obj)
	if isinstance(obj, np.floating):
		return float(obj)
	if isinstance(obj, (set, frozenset)):
		return sorted(obj)
	raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def as_json(obj, indent=1):
	"""Stable JSON dump: sorted keys, numpy values converted"""
	return json.dumps(obj, indent=indent, sort_keys=True, default=_default)


def parse_json(text, default=None):
	"""Parse JSON text; dicts and lists pass through untouched"""
	if isinstance(text, (dict, list)):
		return text
	if text is None or text == "":
		return {} if default is None else default
	return json.loads(text)


def load_json_file(path):
	with open(path, encoding="utf-8") as f:
		return parse_json(f.read())


def write_json_file(path, obj):
	"""Write JSON atomically so readers never see a half-written file"""
	tmp_path = f"{path}.tmp"
	with open(tmp_path, "w", encoding="utf-8") as f:
		f.write(as_json(obj))
		f.write("\n")
	os.replace(tmp_path, path)


def write_provenance(f, provenance):
	"""Leading `# key: value` lines of a CSV, keys sorted"""
	for key in sorted(provenance):
		f.write(f"{PROVENANCE_PREFIX}{key}: {provenance[key]}\n")


def read_provenance_csv(path):
	"""(provenance, rows) of a CSV that may start with `# key: value` lines"""
	provenance, lines = {}, []
	with open(path, newline="", encoding="utf-8") as f:
		for line in f:
			if line.startswith(PROVENANCE_PREFIX) and not lines:
				key, _, value = line[len(PROVENANCE_PREFIX) :].partition(":")
				provenance[key.strip()] = value.strip()
			else:
				lines.append(line)
	return provenance, list(csv.DictReader(lines))


def config_hash(config):
	"""Short SHA-256 over the canonical JSON of a resolved config"""
	canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_default)
	return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def file_hash(path, chunk_size=1 << 20):
	digest = hashlib.sha256()
	with open(path, "rb") as f:
		for chunk in iter(lambda: f.read(chunk_size), b""):
			digest.update(chunk)
	return digest.hexdigest()


def now():
	return datetime.now().strftime("%Y-%m-%d %H:%M:%S")


def get_output_root(default="outputs"):
	"""Output root: environment override, else `default`"""
	return os.environ.get(OUTPUT_ROOT_ENV) or default


def ensure_dir(path):
	os.makedirs(path, exist_ok=True)
	return path
