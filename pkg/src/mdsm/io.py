"""Dataset ingestion, checkpoint persistence, deterministic writers.

Checkpoint layout (all multi-byte integers little-endian):

    magic   b"MDSM1"
    u32     header length in bytes
    bytes   header: UTF-8 JSON {"step", "config", "manifest"}
            manifest = [[name, [dims...]], ...] in parameter order
    bytes   payload: float64 values, manifest order, C order
    8 bytes checksum: first 8 bytes of SHA-256 over the payload

The header is covered by the manifest/config cross-check rather than the
checksum, so a corrupted payload raises a corruption error while an
edited architecture raises a compatibility error.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .energy import EnergyNet, NetConfig
from .errors import (CompatibilityError, ConfigError, CorruptionError,
                     FormatError)

__all__ = [
    "load_dataset",
    "load_csv",
    "load_idx_images",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_net",
    "write_matrix_csv",
    "write_json",
]

_MAGIC = b"MDSM1"
_IDX_IMAGE_MAGIC = 2051


def load_csv(path: str) -> np.ndarray:
    """CSV of floats, one row per line, as a [N, d] float64 array."""
    try:
        data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise FormatError(f"{path}: no rows")
    return np.ascontiguousarray(data)


def load_idx_images(path: str) -> np.ndarray:
    """IDX image file as rows of flattened pixels rescaled to [0, 1].

    Layout: big-endian u32 magic 2051, then N, rows, cols, then N*rows*cols
    unsigned bytes.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated IDX header ({len(blob)} bytes)")
    magic = int.from_bytes(blob[0:4], "big")
    if magic != _IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{path}: IDX magic {magic:#010x}, expected {_IDX_IMAGE_MAGIC:#010x}")
    n = int.from_bytes(blob[4:8], "big")
    rows = int.from_bytes(blob[8:12], "big")
    cols = int.from_bytes(blob[12:16], "big")
    expected = 16 + n * rows * cols
    if len(blob) < expected:
        raise FormatError(
            f"{path}: payload holds {len(blob) - 16} bytes, expected {n * rows * cols}")
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} trailing bytes")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=16)
    return pixels.astype(np.float64).reshape(n, rows * cols) / 255.0


def load_dataset(path: str, kind: str) -> np.ndarray:
    if kind == "csv2d":
        return load_csv(path)
    if kind == "idx-images":
        return load_idx_images(path)
    raise ConfigError(f"unknown dataset kind {kind!r} (csv2d or idx-images)")


@dataclass
class Checkpoint:
    step: int
    config: dict
    params: dict


def save_checkpoint(net: EnergyNet, step: int, config: dict, path: str) -> None:
    """Write the net's parameters plus a config echo; see module docstring.

    The net section of the embedded config is taken from the net itself so
    a checkpoint always describes its own architecture.
    """
    header_config = dict(config)
    header_config["net"] = {"input_dim": net.config.input_dim,
                            "hidden_dims": list(net.config.hidden_dims),
                            "seed": net.config.seed}
    manifest = [[name, list(t.shape)] for name, t in net.parameters()]
    header = json.dumps({"step": int(step), "config": header_config,
                         "manifest": manifest}, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in net.parameters())
    checksum = hashlib.sha256(payload).digest()[:8]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(header).to_bytes(4, "little"))
        f.write(header)
        f.write(payload)
        f.write(checksum)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:5] != _MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:5]!r}, expected {_MAGIC!r}")
    if len(blob) < 9:
        raise FormatError(f"{path}: truncated before header length")
    header_len = int.from_bytes(blob[5:9], "little")
    header_end = 9 + header_len
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[9:header_end].decode("utf-8"))
        step = int(header["step"])
        config = header["config"]
        manifest = [(str(n), tuple(int(d) for d in s)) for n, s in header["manifest"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc

    net_section = config.get("net", {})
    try:
        net_config = NetConfig(input_dim=int(net_section["input_dim"]),
                               hidden_dims=tuple(net_section["hidden_dims"]),
                               seed=int(net_section.get("seed", 0)))
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"{path}: header config lacks a valid net section: {exc}") from exc
    if manifest != net_config.param_shapes():
        raise CompatibilityError(
            f"{path}: parameter manifest does not match the header net config")

    n_values = sum(int(np.prod(s, dtype=np.int64)) for _, s in manifest)
    payload_end = header_end + 8 * n_values
    if len(blob) < payload_end + 8:
        raise FormatError(f"{path}: truncated payload")
    if len(blob) > payload_end + 8:
        raise FormatError(f"{path}: {len(blob) - payload_end - 8} trailing bytes")
    payload = blob[header_end:payload_end]
    if hashlib.sha256(payload).digest()[:8] != blob[payload_end:payload_end + 8]:
        raise CorruptionError(f"{path}: payload checksum mismatch")

    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params = {}
    offset = 0
    for name, shape in manifest:
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return Checkpoint(step=step, config=config, params=params)


def restore_net(checkpoint: Checkpoint) -> EnergyNet:
    """Rebuild an EnergyNet with the checkpoint's exact parameters."""
    section = checkpoint.config["net"]
    net = EnergyNet(NetConfig(input_dim=int(section["input_dim"]),
                              hidden_dims=tuple(section["hidden_dims"]),
                              seed=int(section.get("seed", 0))))
    for name, value in checkpoint.params.items():
        net.set_param(name, Tensor(value))
    return net


def write_matrix_csv(path: str, array, header: str = "") -> None:
    """Deterministic CSV dump: %.17g round-trips float64 exactly."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    np.savetxt(path, arr, fmt="%.17g", delimiter=",", header=header, comments="")


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")
