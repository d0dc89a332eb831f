"""Binary checkpoint format, clip cache, PGM rasters, and loss traces.

Checkpoint layout ("FDTC"): magic bytes, u32 LE version, u32 LE entry
count; per entry a u16 LE name length, UTF-8 name, u8 ndim, u32 LE dims,
then the float64 LE payload in row-major order. Readers reject unknown
magic or version.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import ConfigError

MAGIC = b"FDTC"
VERSION = 1


class CheckpointError(ConfigError):
    """Malformed or incompatible checkpoint file."""


def write_checkpoint(path, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.astype("<f8").tobytes(order="C"))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0]
                          for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            payload = f.read(8 * size)
            if len(payload) != 8 * size:
                raise CheckpointError(f"{path}: truncated entry {name!r}")
            entries[name] = np.frombuffer(
                payload, dtype="<f8").reshape(shape).copy()
        return entries


def write_clip(path, clip: np.ndarray) -> None:
    """Cache one pixel clip (T, P, P) in the checkpoint container."""
    write_checkpoint(path, {"clip": clip})


def read_clip(path) -> np.ndarray:
    entries = read_checkpoint(path)
    if "clip" not in entries:
        raise CheckpointError(f"{path}: no clip entry")
    return entries["clip"]


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM (P5), input rescaled to the full gray range."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    span = hi - lo if hi > lo else 1.0
    gray = np.round((img - lo) / span * 255.0).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def frame_strip(video: np.ndarray, pad: int = 1) -> np.ndarray:
    """Lay the frames of a (T, H, W) video side by side for eyeballing."""
    t, h, w = video.shape
    strip = np.full((h, t * (w + pad) - pad), video.min())
    for i in range(t):
        strip[:, i * (w + pad):i * (w + pad) + w] = video[i]
    return strip


def write_loss_trace(path, trace) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("step,loss,grad_norm,ema_delta\n")
        for row in trace:
            f.write(f"{row.step},{row.loss:.12g},{row.grad_norm:.12g},"
                    f"{row.ema_delta:.12g}\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
