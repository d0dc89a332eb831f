"""Dense f64 matrix kernels and the video-token container.

Everything downstream (attention variants, blocks, diffusion, cost model)
is built on these kernels. All values are immutable after construction,
stored row-major in float64, and every public operation leaves only finite
entries behind. Matmuls route through a single kernel so an active
KernelCounter sees every multiply-add and every buffer allocation.
"""
from __future__ import annotations

import threading
import weakref
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Shape disagreement between operands."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericError(ArithmeticError):
    """Non-finite value produced where the contract forbids it."""


# ---------------------------------------------------------------------------
# kernel instrumentation

@dataclass
class KernelCounter:
    """Counts matmul FLOPs (2*m*k*n per product) and live buffer bytes."""

    flops: int = 0
    live_bytes: int = 0
    peak_live_bytes: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def on_matmul(self, m: int, k: int, n: int) -> None:
        self.flops += 2 * m * k * n

    def on_alloc(self, nbytes: int) -> None:
        with self._lock:
            self.live_bytes += nbytes
            if self.live_bytes > self.peak_live_bytes:
                self.peak_live_bytes = self.live_bytes

    def on_free(self, nbytes: int) -> None:
        with self._lock:
            self.live_bytes -= nbytes


_ACTIVE_COUNTER: KernelCounter | None = None


@contextmanager
def count_kernels():
    """Enable FLOPs and live-byte accounting for Mats created in this scope."""
    global _ACTIVE_COUNTER
    prev = _ACTIVE_COUNTER
    counter = KernelCounter()
    _ACTIVE_COUNTER = counter
    try:
        yield counter
    finally:
        _ACTIVE_COUNTER = prev


# ---------------------------------------------------------------------------
# Mat

class Mat:
    """Immutable 2-D float64 matrix, row-major.

    Construction validates finiteness; internal results produced by the
    kernels below skip the copy but still register with the active counter.
    """

    __slots__ = ("a", "__weakref__")

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim != 2:
            raise DimensionError(f"Mat requires 2-D data, got ndim={arr.ndim}")
        _check_finite(arr)
        object.__setattr__(self, "a", arr)
        arr.flags.writeable = False
        _register(self)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Mat":
        """Adopt a freshly computed C-contiguous float64 array."""
        m = object.__new__(cls)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr)
        object.__setattr__(m, "a", arr)
        arr.flags.writeable = False
        _register(m)
        return m

    @property
    def rows(self) -> int:
        return self.a.shape[0]

    @property
    def cols(self) -> int:
        return self.a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape

    @property
    def data(self) -> np.ndarray:
        return self.a

    def __repr__(self) -> str:
        return f"Mat({self.rows}x{self.cols})"


def _check_finite(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite entries in matrix")


def _register(m: Mat) -> None:
    counter = _ACTIVE_COUNTER
    if counter is not None:
        nbytes = m.a.nbytes
        counter.on_alloc(nbytes)
        weakref.finalize(m, counter.on_free, nbytes)


def zeros(rows: int, cols: int) -> Mat:
    return Mat._wrap(np.zeros((rows, cols)))


def eye(n: int) -> Mat:
    return Mat._wrap(np.eye(n))


# ---------------------------------------------------------------------------
# kernels

def matmul(a: Mat, b: Mat) -> Mat:
    if a.cols != b.rows:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} x {b.shape}")
    counter = _ACTIVE_COUNTER
    if counter is not None:
        counter.on_matmul(a.rows, a.cols, b.cols)
    return Mat._wrap(a.a @ b.a)


def transpose(a: Mat) -> Mat:
    return Mat._wrap(np.ascontiguousarray(a.a.T))


def add(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return Mat._wrap(a.a + b.a)


def sub(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return Mat._wrap(a.a - b.a)


def hadamard(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return Mat._wrap(a.a * b.a)


def scale(a: Mat, s: float) -> Mat:
    return Mat._wrap(a.a * float(s))


def softmax_rows(a: Mat) -> Mat:
    """Row-wise softmax with max-subtraction for overflow safety."""
    x = a.a
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return Mat._wrap(e / e.sum(axis=1, keepdims=True))


def frobenius(a: Mat, b: Mat) -> float:
    if a.shape != b.shape:
        raise DimensionError(
            f"frobenius shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a.a * b.a))


def split_grid(a: Mat, m: int, n: int) -> list[list[Mat]]:
    """Contiguous (m, n) block partition, row-major block order."""
    if m < 1 or n < 1 or a.rows % m != 0 or a.cols % n != 0:
        raise DimensionError(
            f"cannot split {a.shape} into ({m}, {n}) blocks")
    br, bc = a.rows // m, a.cols // n
    return [
        [Mat._wrap(np.ascontiguousarray(a.a[i * br:(i + 1) * br,
                                            j * bc:(j + 1) * bc]))
         for j in range(n)]
        for i in range(m)
    ]


def concat_grid(blocks: list[list[Mat]]) -> Mat:
    """Inverse of split_grid; round-trip is bit-exact."""
    if not blocks or not blocks[0]:
        raise DimensionError("concat_grid requires a non-empty block grid")
    rows = [np.concatenate([b.a for b in row], axis=1) for row in blocks]
    return Mat._wrap(np.concatenate(rows, axis=0))


# ---------------------------------------------------------------------------
# video container

class VideoTokens:
    """T frames of N tokens with D features each; frames share (N, D)."""

    __slots__ = ("frames",)

    def __init__(self, frames) -> None:
        frames = tuple(frames)
        if len(frames) < 1:
            raise DimensionError("VideoTokens requires T >= 1 frames")
        shape = frames[0].shape
        for f in frames:
            if f.shape != shape:
                raise DimensionError(
                    f"frame shape mismatch: {f.shape} vs {shape}")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "VideoTokens":
        if arr.ndim != 3:
            raise DimensionError("expected (T, N, D) array")
        return cls([Mat(arr[t]) for t in range(arr.shape[0])])

    def to_array(self) -> np.ndarray:
        return np.stack([f.a for f in self.frames])

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def N(self) -> int:
        return self.frames[0].rows

    @property
    def D(self) -> int:
        return self.frames[0].cols

    def __repr__(self) -> str:
        return f"VideoTokens(T={self.T}, N={self.N}, D={self.D})"
