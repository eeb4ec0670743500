# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

import os

CONFIG_DIR = os.path.dirname(os.path.abspath(__file__))


def shipped_config_path(name):
	"""Absolute path of a config shipped with the app, e.g. `desk.json`"""
	return os.path.join(CONFIG_DIR, name)
