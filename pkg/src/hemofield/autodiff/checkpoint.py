"""Checkpoint directories: ``model.json`` manifest plus ``weights.bin`` (float32, little-endian)."""

import json
from pathlib import Path

import numpy as np

DTYPE_TAG = "float32-le"


def save_checkpoint(directory, module, meta):
    """Write every parameter and buffer of ``module`` in manifest order.

    ``meta`` is any JSON-serialisable dict (architecture, config, ...); the
    tensor table is added under ``"tensors"``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = []
    offset = 0
    chunks = []
    for name, arr in module.state_arrays():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(meta)
    manifest["dtype"] = DTYPE_TAG
    manifest["tensors"] = table
    (directory / "weights.bin").write_bytes(b"".join(chunks))
    (directory / "model.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return directory


def read_manifest(directory):
    return json.loads((Path(directory) / "model.json").read_text())


def load_weights(directory, module):
    """Copy stored values into ``module`` (which must have the same layout)."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest.get("dtype") != DTYPE_TAG:
        raise ValueError(f"unsupported weight dtype {manifest.get('dtype')!r}")
    blob = (directory / "weights.bin").read_bytes()
    live = dict(module.state_arrays())
    if set(live) != {t["name"] for t in manifest["tensors"]}:
        raise ValueError("checkpoint tensor names do not match the model")
    for t in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f4", count=t["nbytes"] // 4, offset=t["offset"])
        target = live[t["name"]]
        if list(target.shape) != t["shape"]:
            raise ValueError(f"shape mismatch for {t['name']}: {target.shape} vs {t['shape']}")
        target[...] = arr.reshape(t["shape"]).astype(np.float64)
    return manifest
