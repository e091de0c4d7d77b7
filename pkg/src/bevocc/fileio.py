"""Binary fixture formats and checkpoint directories.

FTEN  tensor:   b"FTEN" | u32 version=1 | u32 ndim | ndim*u32 dims | float32 LE data
OCCG  grid:     b"OCCG" | u32 version=1 | u32 W, H, Z, num_classes | W*H*Z u8 labels,
                index = (z*H + y)*W + x
Checkpoint:     directory with ``manifest.json`` {"version": 1, "params": {name: file}}
                and one FTEN file per parameter.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

FTEN_MAGIC = b"FTEN"
OCCG_MAGIC = b"OCCG"
VERSION = 1


def write_ften(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim == 0 or any(s <= 0 for s in arr.shape):
        raise ValueError(f"FTEN requires positive dims, got shape {arr.shape}")
    header = FTEN_MAGIC + struct.pack(f"<II{arr.ndim}I", VERSION, arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_ften(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise DataFormatError(path, len(data), "truncated FTEN header")
    if data[:4] != FTEN_MAGIC:
        raise DataFormatError(path, 0, f"bad magic {data[:4]!r}, expected b'FTEN'")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataFormatError(path, 4, f"unsupported FTEN version {version}")
    off = 12
    if ndim == 0 or len(data) < off + 4 * ndim:
        raise DataFormatError(path, 8, f"invalid or truncated dims (ndim={ndim})")
    dims = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    if any(d == 0 for d in dims):
        raise DataFormatError(path, 12, f"zero dimension in {dims}")
    count = int(np.prod(dims))
    if len(data) != off + 4 * count:
        raise DataFormatError(path, off, f"payload is {len(data) - off} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(dims)


def write_occg(path, labels, num_classes):
    """Write labels shaped ``[Z, H, W]`` (x fastest)."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 3:
        raise ValueError(f"OCCG labels must be [Z,H,W], got {labels.shape}")
    z, h, w = labels.shape
    header = OCCG_MAGIC + struct.pack("<IIIII", VERSION, w, h, z, num_classes)
    Path(path).write_bytes(header + labels.tobytes())


def read_occg(path):
    """Return ``(labels[Z,H,W] uint8, num_classes)``."""
    data = Path(path).read_bytes()
    if len(data) < 24:
        raise DataFormatError(path, len(data), "truncated OCCG header")
    if data[:4] != OCCG_MAGIC:
        raise DataFormatError(path, 0, f"bad magic {data[:4]!r}, expected b'OCCG'")
    version, w, h, z, num_classes = struct.unpack_from("<IIIII", data, 4)
    if version != VERSION:
        raise DataFormatError(path, 4, f"unsupported OCCG version {version}")
    if min(w, h, z) == 0:
        raise DataFormatError(path, 8, f"zero dimension W={w} H={h} Z={z}")
    if not 1 <= num_classes <= 256:
        raise DataFormatError(path, 20, f"num_classes={num_classes} outside 1..256")
    count = w * h * z
    if len(data) != 24 + count:
        raise DataFormatError(path, 24, f"payload is {len(data) - 24} bytes, expected {count}")
    labels = np.frombuffer(data, dtype=np.uint8, offset=24).reshape(z, h, w).copy()
    bad = np.flatnonzero(labels.reshape(-1) >= num_classes)
    if bad.size:
        raise DataFormatError(path, 24 + int(bad[0]), f"label {labels.reshape(-1)[bad[0]]} >= num_classes {num_classes}")
    return labels, num_classes


def save_checkpoint(directory, params):
    """Write ``{name: ndarray}`` as FTEN files plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for i, name in enumerate(sorted(params)):
        fname = f"{i:04d}.ften"
        write_ften(directory / fname, params[name])
        manifest[name] = fname
    text = json.dumps({"version": VERSION, "params": manifest}, indent=2, sort_keys=True)
    (directory / "manifest.json").write_text(text + "\n")


def load_checkpoint(directory):
    directory = Path(directory)
    mpath = directory / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(mpath, e.pos, f"invalid JSON: {e.msg}") from None
    if manifest.get("version") != VERSION or not isinstance(manifest.get("params"), dict):
        raise DataFormatError(mpath, 0, "manifest must have version=1 and a 'params' object")
    return {name: read_ften(directory / fname) for name, fname in manifest["params"].items()}
