"""Checkpoint persistence: a JSON tensor manifest plus a contiguous little-endian
float32 payload. Round trips are bit-exact because parameters are stored float32."""

from __future__ import annotations

import json

import numpy as np


class CheckpointError(ValueError):
    """Inconsistent manifest/payload pair."""


def save_checkpoint(params, tag: str, stem, config_digest: str = "") -> None:
    """Write <stem>.json (manifest) and <stem>.bin (payload)."""
    names = sorted(params.keys())
    tensors = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name!r} contains non-finite values")
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "f32",
            "offset": offset,
        })
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "stage": tag,
        "config_digest": config_digest,
        "payload_bytes": offset,
        "tensors": tensors,
    }
    with open(f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(f"{stem}.bin", "wb") as fh:
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(stem):
    """Read a checkpoint pair; returns (params, manifest). Validates sizes and
    offset contiguity before touching any tensor."""
    with open(f"{stem}.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(f"{stem}.bin", "rb") as fh:
        payload = fh.read()
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"payload is {len(payload)} bytes but manifest declares {manifest['payload_bytes']}"
        )
    params = {}
    expected_offset = 0
    for entry in manifest["tensors"]:
        if entry["dtype"] != "f32":
            raise CheckpointError(f"unsupported dtype {entry['dtype']!r} for {entry['name']!r}")
        if entry["offset"] != expected_offset:
            raise CheckpointError(
                f"tensor {entry['name']!r} offset {entry['offset']} is not contiguous "
                f"(expected {expected_offset})"
            )
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = 4 * n
        raw = payload[expected_offset : expected_offset + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"payload truncated inside tensor {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        expected_offset += nbytes
    if expected_offset != manifest["payload_bytes"]:
        raise CheckpointError("manifest tensors do not cover the declared payload")
    return params, manifest
