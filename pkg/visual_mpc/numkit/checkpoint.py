# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

"""
Binary parameter checkpoints, little-endian throughout:

	magic (8 bytes) | u32 version | u32 metadata length | metadata JSON | u32 entry count
	per entry: u16 name length | name | u8 dtype code | u8 ndim | ndim x u32 dims | raw values
"""

import os
import struct

import numpy as np

from visual_mpc.utils import CheckpointError, as_json, parse_json

MAGIC = b"VMPCCKPT"
FORMAT_VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
DTYPE_CODES = {dtype.str: code for code, dtype in DTYPES.items()}


def _dtype_code(array):
	key = array.dtype.newbyteorder("<").str
	if key not in DTYPE_CODES:
		raise CheckpointError(f"Unsupported dtype {array.dtype} in checkpoint")
	return DTYPE_CODES[key]


def save_checkpoint(path, arrays, metadata=None):
	"""Write named arrays plus a JSON metadata block; entries are stored in name order"""
	meta = as_json(metadata or {}, indent=None).encode("utf-8")
	chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
	for name in sorted(arrays):
		array = np.ascontiguousarray(arrays[name])
		code = _dtype_code(array)
		encoded = name.encode("utf-8")
		chunks.append(struct.pack("<H", len(encoded)))
		chunks.append(encoded)
		chunks.append(struct.pack("<BB", code, array.ndim))
		chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
		chunks.append(array.astype(DTYPES[code], copy=False).tobytes())

	tmp_path = f"{path}.tmp"
	try:
		with open(tmp_path, "wb") as f:
			f.write(b"".join(chunks))
		os.replace(tmp_path, path)
	except OSError as e:
		if os.path.exists(tmp_path):
			os.remove(tmp_path)
		raise CheckpointError(f"Could not write checkpoint {path}: {e}")
	return path


def load_checkpoint(path):
	"""Returns (arrays, metadata)"""
	if not os.path.exists(path):
		raise CheckpointError(f"Checkpoint not found: {path}")
	with open(path, "rb") as f:
		data = f.read()

	if data[:8] != MAGIC:
		raise CheckpointError(f"{path} is not a checkpoint file")
	arrays = {}
	try:
		version, meta_len = struct.unpack_from("<II", data, 8)
		if version != FORMAT_VERSION:
			raise CheckpointError(f"Unsupported checkpoint version {version} in {path}")
		offset = 16
		metadata = parse_json(data[offset : offset + meta_len].decode("utf-8"), default=None)
		if not isinstance(metadata, dict):
			raise CheckpointError(f"Corrupt checkpoint {path}: unreadable metadata")
		offset += meta_len
		(count,) = struct.unpack_from("<I", data, offset)
		offset += 4

		for _ in range(count):
			(name_len,) = struct.unpack_from("<H", data, offset)
			offset += 2
			name = data[offset : offset + name_len].decode("utf-8")
			offset += name_len
			code, ndim = struct.unpack_from("<BB", data, offset)
			offset += 2
			shape = struct.unpack_from(f"<{ndim}I", data, offset)
			offset += 4 * ndim
			dtype = DTYPES[code]
			size = int(np.prod(shape)) * dtype.itemsize
			arrays[name] = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape).copy()
			offset += size
	except (struct.error, KeyError, ValueError) as e:
		raise CheckpointError(f"Corrupt checkpoint {path}: {e}")
	return arrays, metadata
