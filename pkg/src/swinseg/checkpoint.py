"""Binary checkpoint format: named tensors with a config header.

Layout (all integers little-endian, fixed regardless of host):

    bytes 0..3   magic "SWUN"
    bytes 4..5   format version (u16)
    u32 n        config JSON length, then n bytes of UTF-8 JSON
    u32 m        manifest JSON length, then m bytes of UTF-8 JSON
    payload      tensor data, 32-bit little-endian floats

The manifest is a list of {name, shape, dtype, offset} entries; offsets are
byte positions into the payload and must be non-overlapping and in-bounds.
Save followed by load reproduces every float32 tensor bit-exactly and the
config field-exactly.  Saving float64 parameters downcasts to float32.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .tensor import Tensor

MAGIC = b"SWUN"
FORMAT_VERSION = 1
_DTYPE_TAG = "f32"


class CheckpointError(Exception):
    """Base class for checkpoint format violations."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ManifestOverlapError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def build_manifest(params: dict[str, np.ndarray]) -> tuple[list[dict], int]:
    """Assign contiguous payload offsets; returns (entries, payload size)."""
    entries = []
    offset = 0
    for name, arr in params.items():
        nbytes = int(arr.size) * 4
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": _DTYPE_TAG, "offset": offset})
        offset += nbytes
    return entries, offset


def _as_arrays(params) -> dict[str, np.ndarray]:
    out = {}
    for name, t in params.items():
        out[name] = t.data if isinstance(t, Tensor) else np.asarray(t)
    return out


def save_checkpoint(path, cfg: ModelConfig, params) -> None:
    """Write config and named parameter tensors; see module docstring."""
    arrays = _as_arrays(params)
    manifest, payload_size = build_manifest(arrays)
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    man_bytes = json.dumps(manifest).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    buf.write(struct.pack("<I", len(man_bytes)))
    buf.write(man_bytes)
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = buf.getvalue()
    assert len(data) == 14 + len(cfg_bytes) + len(man_bytes) + payload_size
    if hasattr(path, "write"):
        path.write(data)
    else:
        Path(path).write_bytes(data)


def _read_exact(data: bytes, pos: int, n: int, what: str) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise TruncatedPayloadError(f"checkpoint truncated while reading {what}")
    return data[pos:pos + n], pos + n


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Read a checkpoint back into (config, name -> float32 array)."""
    if hasattr(path, "read"):
        data = path.read()
    else:
        data = Path(path).read_bytes()
    magic, pos = _read_exact(data, 0, 4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    raw, pos = _read_exact(data, pos, 2, "version")
    version = struct.unpack("<H", raw)[0]
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"format version {version} unsupported (expected {FORMAT_VERSION})")
    raw, pos = _read_exact(data, pos, 4, "config length")
    n, = struct.unpack("<I", raw)
    raw, pos = _read_exact(data, pos, n, "config")
    try:
        cfg = ModelConfig.from_dict(json.loads(raw.decode()))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"unreadable config header: {e}") from e
    raw, pos = _read_exact(data, pos, 4, "manifest length")
    m, = struct.unpack("<I", raw)
    raw, pos = _read_exact(data, pos, m, "manifest")
    try:
        manifest = json.loads(raw.decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"unreadable manifest: {e}") from e

    payload = data[pos:]
    spans = []
    params: dict[str, np.ndarray] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        if entry.get("dtype") != _DTYPE_TAG:
            raise CheckpointError(f"unsupported dtype tag {entry.get('dtype')!r} "
                                  f"for tensor {entry['name']!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        start = int(entry["offset"])
        end = start + nbytes
        if start < 0 or end > len(payload):
            raise TruncatedPayloadError(
                f"tensor {entry['name']!r} spans [{start}, {end}) outside "
                f"payload of {len(payload)} bytes")
        spans.append((start, end, entry["name"]))
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                            offset=start)
        params[entry["name"]] = arr.reshape(shape).astype(np.float32)
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ManifestOverlapError(
                f"tensors {n0!r} and {n1!r} overlap in the payload")
    return cfg, params


def checkpoint_param_count(path) -> int:
    """Total scalar count across all tensors in the manifest."""
    _, params = load_checkpoint(path)
    return int(sum(a.size for a in params.values()))


def load_model(path, dtype=np.float32):
    """Reconstruct a :class:`swinseg.model.SwinUnet` from a checkpoint."""
    from .model import SwinUnet

    cfg, params = load_checkpoint(path)
    model = SwinUnet(cfg, rng=None, dtype=dtype)
    model.load_state(params)
    return model


def ensure_config_matches(expected: ModelConfig, actual: ModelConfig) -> None:
    """Raise ConfigMismatchError naming the first differing field."""
    for f in fields(ModelConfig):
        a, b = getattr(expected, f.name), getattr(actual, f.name)
        if a != b:
            raise ConfigMismatchError(
                f"config field {f.name!r} differs: expected {a!r}, "
                f"checkpoint has {b!r}")
