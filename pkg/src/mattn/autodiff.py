"""Tape-based reverse-mode differentiation over Mat values.

A Var wraps one Mat and remembers how it was produced; backward() walks the
graph in reverse topological order and accumulates gradients as float64
arrays. Forward values go through the core kernels, so FLOPs and live-byte
counters see real work; vector-Jacobian products use raw numpy.

Inside a `no_grad()` scope ops compute values only and retain no parents,
which lets inference-time temporaries die as soon as refcounts drop (the
benchmark relies on this for honest peak-memory numbers).
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from . import core
from .core import DimensionError, Mat

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Var:
    __slots__ = ("m", "parents", "vjp", "grad", "name", "trainable",
                 "__weakref__")

    def __init__(self, m: Mat, parents=(), vjp=None, name: str = "",
                 trainable: bool = False) -> None:
        self.m = m
        if _GRAD_ENABLED:
            self.parents = tuple(parents)
            self.vjp = vjp
        else:
            self.parents = ()
            self.vjp = None
        self.grad: np.ndarray | None = None
        self.name = name
        self.trainable = trainable

    @property
    def value(self) -> np.ndarray:
        return self.m.a

    @property
    def shape(self) -> tuple[int, int]:
        return self.m.shape

    def set_value(self, arr: np.ndarray) -> None:
        """Replace the stored matrix (optimizer updates, FD perturbation)."""
        self.m = Mat(np.array(arr, dtype=np.float64))

    def __repr__(self) -> str:
        tag = self.name or "var"
        return f"Var({tag}, {self.shape[0]}x{self.shape[1]})"


def param(values, name: str = "") -> Var:
    return Var(Mat(values), name=name, trainable=True)


def const(values, name: str = "") -> Var:
    m = values if isinstance(values, Mat) else Mat(values)
    return Var(m, name=name)


def _make(value: Mat, parents, vjp) -> Var:
    return Var(value, parents=parents, vjp=vjp)


# ---------------------------------------------------------------------------
# ops

def matmul(x: Var, y: Var) -> Var:
    out = core.matmul(x.m, y.m)

    def vjp(g):
        return [g @ y.value.T, x.value.T @ g]

    return _make(out, (x, y), vjp)


def add(x: Var, y: Var) -> Var:
    out = core.add(x.m, y.m)
    return _make(out, (x, y), lambda g: [g, g])


def sub(x: Var, y: Var) -> Var:
    out = core.sub(x.m, y.m)
    return _make(out, (x, y), lambda g: [g, -g])


def mul(x: Var, y: Var) -> Var:
    out = core.hadamard(x.m, y.m)
    return _make(out, (x, y), lambda g: [g * y.value, g * x.value])


def smul(x: Var, c: float) -> Var:
    c = float(c)
    out = core.scale(x.m, c)
    return _make(out, (x,), lambda g: [g * c])


def scalar_mul(x: Var, s: Var) -> Var:
    """Multiply a matrix by a 1x1 Var."""
    if s.shape != (1, 1):
        raise DimensionError(f"scalar_mul expects 1x1 gate, got {s.shape}")
    sv = float(s.value[0, 0])
    out = core.scale(x.m, sv)

    def vjp(g):
        return [g * sv, np.array([[float(np.sum(g * x.value))]])]

    return _make(out, (x, s), vjp)


def add_rowvec(x: Var, v: Var) -> Var:
    if v.shape != (1, x.shape[1]):
        raise DimensionError(
            f"add_rowvec mismatch: {x.shape} + {v.shape}")
    out = Mat._wrap(x.value + v.value)

    def vjp(g):
        return [g, g.sum(axis=0, keepdims=True)]

    return _make(out, (x, v), vjp)


def mul_rowvec(x: Var, v: Var) -> Var:
    if v.shape != (1, x.shape[1]):
        raise DimensionError(
            f"mul_rowvec mismatch: {x.shape} * {v.shape}")
    out = Mat._wrap(x.value * v.value)

    def vjp(g):
        return [g * v.value, (g * x.value).sum(axis=0, keepdims=True)]

    return _make(out, (x, v), vjp)


def transpose(x: Var) -> Var:
    out = core.transpose(x.m)
    return _make(out, (x,), lambda g: [np.ascontiguousarray(g.T)])


def reshape(x: Var, rows: int, cols: int) -> Var:
    if rows * cols != x.shape[0] * x.shape[1]:
        raise DimensionError(
            f"cannot reshape {x.shape} to ({rows}, {cols})")
    out = Mat._wrap(x.value.reshape(rows, cols).copy())
    r0, c0 = x.shape
    return _make(out, (x,), lambda g: [g.reshape(r0, c0)])


def concat_rows(xs: list[Var]) -> Var:
    out = Mat._wrap(np.concatenate([x.value for x in xs], axis=0))
    sizes = [x.shape[0] for x in xs]

    def vjp(g):
        grads, i = [], 0
        for s in sizes:
            grads.append(g[i:i + s])
            i += s
        return grads

    return _make(out, tuple(xs), vjp)


def concat_cols(xs: list[Var]) -> Var:
    out = Mat._wrap(np.concatenate([x.value for x in xs], axis=1))
    sizes = [x.shape[1] for x in xs]

    def vjp(g):
        grads, i = [], 0
        for s in sizes:
            grads.append(g[:, i:i + s])
            i += s
        return grads

    return _make(out, tuple(xs), vjp)


def slice_rows(x: Var, i0: int, i1: int) -> Var:
    out = Mat._wrap(np.ascontiguousarray(x.value[i0:i1]))
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[i0:i1] = g
        return [full]

    return _make(out, (x,), vjp)


def slice_cols(x: Var, j0: int, j1: int) -> Var:
    out = Mat._wrap(np.ascontiguousarray(x.value[:, j0:j1]))
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, j0:j1] = g
        return [full]

    return _make(out, (x,), vjp)


def softmax_rows(x: Var) -> Var:
    out = core.softmax_rows(x.m)
    p = out.a

    def vjp(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return [p * (g - dot)]

    return _make(out, (x,), vjp)


def sigmoid(x: Var) -> Var:
    s = 1.0 / (1.0 + np.exp(-x.value))
    out = Mat._wrap(s)
    return _make(out, (x,), lambda g: [g * s * (1.0 - s)])


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Var) -> Var:
    """Smooth GELU (tanh form)."""
    v = x.value
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    out = Mat._wrap(0.5 * v * (1.0 + t))

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        dv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * dinner
        return [g * dv]

    return _make(out, (x,), vjp)


def layernorm_rows(x: Var, eps: float = 1e-6) -> Var:
    """Per-row normalization to zero mean, unit variance (no affine)."""
    v = x.value
    d = v.shape[1]
    mu = v.mean(axis=1, keepdims=True)
    xc = v - mu
    var = (xc ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Mat._wrap(y)

    def vjp(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        return [inv * (g - gm - y * gy)]

    return _make(out, (x,), vjp)


def sum_all(x: Var) -> Var:
    out = Mat._wrap(np.array([[float(np.sum(x.value))]]))
    shape = x.shape

    def vjp(g):
        return [np.full(shape, float(g[0, 0]))]

    return _make(out, (x,), vjp)


def mean_all(x: Var) -> Var:
    n = x.shape[0] * x.shape[1]
    return smul(sum_all(x), 1.0 / n)


def l1_normalize_rows(x: Var, eps: float = 1e-12) -> Var:
    """Divide each row by its absolute sum; rows below eps pass through."""
    v = x.value
    s = np.abs(v).sum(axis=1, keepdims=True)
    live = s >= eps
    safe = np.where(live, s, 1.0)
    y = np.where(live, v / safe, v)
    out = Mat._wrap(y)

    def vjp(g):
        dot = (g * v).sum(axis=1, keepdims=True)
        gn = g / safe - np.sign(v) * dot / safe ** 2
        return [np.where(live, gn, g)]

    return _make(out, (x,), vjp)


def l2_normalize_rows(x: Var, eps: float = 1e-12) -> Var:
    """Divide each row by its Euclidean norm; rows below eps pass through."""
    v = x.value
    s = np.sqrt((v ** 2).sum(axis=1, keepdims=True))
    live = s >= eps
    safe = np.where(live, s, 1.0)
    y = np.where(live, v / safe, v)
    out = Mat._wrap(y)

    def vjp(g):
        dot = (g * v).sum(axis=1, keepdims=True)
        gn = g / safe - v * dot / safe ** 3
        return [np.where(live, gn, g)]

    return _make(out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward

def backward(out: Var, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """Accumulate gradients of `out` (seeded by `seed`) into Var.grad.

    Returns the full id->gradient map; Vars reached by the sweep get their
    .grad attribute set (replacing any previous value).
    """
    if seed is None:
        seed = np.ones(out.shape)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != out.shape:
        raise DimensionError(
            f"seed shape {seed.shape} != output shape {out.shape}")

    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): seed}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for p, pg in zip(node.parents, node.vjp(g)):
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
    for node in order:
        node.grad = grads.get(id(node))
    return grads


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
