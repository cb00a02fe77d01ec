"""Portable weight format: a JSON manifest plus a raw float32 blob.

The manifest lists every parameter in layer order with its shape and byte
offset into the blob; ``checksum`` is the CRC32 of the blob.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import CorruptWeightsError
from .networks import NETWORK_KINDS, NetworkModel, build_network

MANIFEST_FORMAT = "coughcam-weights/1"


def save_weights(model: NetworkModel) -> tuple[bytes, dict]:
    if model.weights is None:
        raise ValueError("model has no weights to save")
    parts = []
    params = []
    offset = 0
    for name, shape, _ in model.param_specs():
        raw = np.ascontiguousarray(model.weights[name], dtype="<f4").tobytes()
        params.append({"name": name, "shape": list(shape), "offset": offset})
        parts.append(raw)
        offset += len(raw)
    blob = b"".join(parts)
    manifest = {
        "format": MANIFEST_FORMAT,
        "kind": model.kind,
        "in_channels": model.in_channels,
        "dtype": "float32-le",
        "params": params,
        "checksum": zlib.crc32(blob),
        "feature_spec": model.feature_spec,
        "channel_stats": [list(p) for p in model.channel_stats] if model.channel_stats else None,
    }
    return blob, manifest


def load_weights(kind: str, blob: bytes, manifest: dict) -> NetworkModel:
    if manifest.get("kind") != kind:
        raise CorruptWeightsError(f"manifest is for {manifest.get('kind')!r}, requested {kind!r}")
    if kind not in NETWORK_KINDS:
        raise CorruptWeightsError(f"unknown network kind {kind!r}")
    if zlib.crc32(blob) != manifest.get("checksum"):
        raise CorruptWeightsError("weight blob checksum mismatch (truncated or corrupted)")
    model = build_network(kind, int(manifest.get("in_channels", 3)))
    expected = {name: tuple(shape) for name, shape, _ in model.param_specs()}
    listed = [p["name"] for p in manifest["params"]]
    if len(listed) != len(set(listed)) or set(listed) != set(expected):
        raise CorruptWeightsError("manifest parameter list does not match the network layout")
    weights = {}
    for p in manifest["params"]:
        shape = tuple(p["shape"])
        if shape != expected[p["name"]]:
            raise CorruptWeightsError(f"{p['name']}: manifest shape {shape} != expected {expected[p['name']]}")
        n = int(np.prod(shape))
        start = int(p["offset"])
        if start < 0 or start + 4 * n > len(blob):
            raise CorruptWeightsError(f"{p['name']}: blob too short")
        weights[p["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=start).reshape(shape)
    stats = manifest.get("channel_stats")
    model = model.with_weights(weights)
    return replace(
        model,
        feature_spec=manifest.get("feature_spec"),
        channel_stats=tuple(tuple(s) for s in stats) if stats else None,
    )


def write_weight_files(model: NetworkModel, manifest_path, blob_path=None) -> tuple[Path, Path]:
    manifest_path = Path(manifest_path)
    blob_path = Path(blob_path) if blob_path else manifest_path.with_suffix(".bin")
    blob, manifest = save_weights(model)
    manifest["blob"] = blob_path.name
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path, blob_path


def read_weight_files(manifest_path, blob_path=None, kind: str | None = None) -> NetworkModel:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptWeightsError(f"{manifest_path}: invalid manifest JSON") from exc
    if blob_path is None:
        blob_path = manifest_path.parent / manifest.get("blob", manifest_path.with_suffix(".bin").name)
    return load_weights(kind or manifest.get("kind"), Path(blob_path).read_bytes(), manifest)
