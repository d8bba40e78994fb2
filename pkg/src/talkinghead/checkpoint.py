"""Flat-parameter checkpoints: manifest.json plus one raw float32 blob.

The manifest is a JSON list of {name, shape, dtype, offset, blob} entries
sorted by name; tensors live back to back in little-endian float32 inside
the named blob file.  Round trips are bitwise, and subtrees can be loaded
by dotted-prefix filter (the stage-2 workflow loads "motion." on top of a
stage-1 checkpoint without touching anything else).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import CheckpointCorruptionError, CheckpointError

BLOB_NAME = "params.bin"


def save_checkpoint(params: dict, ckpt_dir) -> None:
    """Write params (name -> float array) as manifest.json + params.bin."""
    os.makedirs(ckpt_dir, exist_ok=True)
    manifest = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(np.asarray(params[name], dtype="<f4"))
        raw = arr.tobytes()
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "f32",
            "offset": offset,
            "blob": BLOB_NAME,
        })
        chunks.append(raw)
        offset += len(raw)
    with open(os.path.join(ckpt_dir, BLOB_NAME), "wb") as f:
        f.write(b"".join(chunks))
    with open(os.path.join(ckpt_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")


def load_checkpoint(ckpt_dir, prefix: str | None = None) -> dict:
    """Read parameters back; prefix filters to names starting with it.

    Raises CheckpointCorruptionError naming the parameter whose bytes run
    past the end of its blob.
    """
    manifest_path = os.path.join(ckpt_dir, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint manifest {manifest_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"manifest {manifest_path} is not valid JSON: {e}") from e
    if not isinstance(manifest, list):
        raise CheckpointError(f"manifest {manifest_path} must be a list of entries")

    blobs = {}
    params = {}
    for entry in manifest:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            dtype = entry["dtype"]
            offset = int(entry["offset"])
            blob_name = entry["blob"]
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"malformed manifest entry {entry!r}") from e
        if dtype != "f32":
            raise CheckpointError(f"parameter {name!r}: unsupported dtype {dtype!r}")
        if prefix is not None and not name.startswith(prefix):
            continue
        if blob_name not in blobs:
            blob_path = os.path.join(ckpt_dir, blob_name)
            try:
                with open(blob_path, "rb") as f:
                    blobs[blob_name] = f.read()
            except OSError as e:
                raise CheckpointError(f"cannot read checkpoint blob {blob_path}: {e}") from e
        raw = blobs[blob_name]
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + nbytes > len(raw):
            raise CheckpointCorruptionError(
                f"parameter {name!r}: needs bytes [{offset}, {offset + nbytes}) "
                f"but blob {blob_name!r} holds {len(raw)}")
        arr = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset)
        params[name] = arr.reshape(shape).copy()
    return params
