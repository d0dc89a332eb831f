"""Attention variants over video tokens.

Four mechanisms share one substrate:

* matrix attention — each frame acts as a matrix; queries/keys/values are
  produced by row-weight (U) and column-weight (W) maps plus bias, and
  frames attend to each other through scaled Frobenius similarities;
* spatial attention — scaled dot-product attention inside each frame;
* local temporal attention — dot-product attention across frames at each
  fixed spatial index, parameters shared over positions;
* full 3D attention — dot-product attention over all T*N tokens jointly.

Everything is written over autodiff Vars, so analytic gradients for every
parameter and input come from the same graph the forward pass builds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import core
from .core import ConfigError, DimensionError, Mat

U_NORM_MODES = ("none", "softmax", "l1", "l2")


# ---------------------------------------------------------------------------
# row-weight normalization

def normalize_row_weights(U: Mat, mode: str) -> Mat:
    """Normalize mixing weights along the token (N) axis per output column."""
    if mode == "none":
        return U
    x = U.a
    if mode == "softmax":
        shifted = x - x.max(axis=0, keepdims=True)
        e = np.exp(shifted)
        return Mat._wrap(e / e.sum(axis=0, keepdims=True))
    if mode == "l1":
        s = np.abs(x).sum(axis=0, keepdims=True)
        live = s >= 1e-12
        return Mat._wrap(np.where(live, x / np.where(live, s, 1.0), x))
    if mode == "l2":
        s = np.sqrt((x ** 2).sum(axis=0, keepdims=True))
        live = s >= 1e-12
        return Mat._wrap(np.where(live, x / np.where(live, s, 1.0), x))
    raise ConfigError(f"unknown u_norm mode: {mode!r}")


def _normalized_u(U: ad.Var, mode: str) -> ad.Var:
    """Var-level normalization; gradients flow through it."""
    if mode == "none":
        return U
    ut = ad.transpose(U)
    if mode == "softmax":
        ut = ad.softmax_rows(ut)
    elif mode == "l1":
        ut = ad.l1_normalize_rows(ut)
    elif mode == "l2":
        ut = ad.l2_normalize_rows(ut)
    else:
        raise ConfigError(f"unknown u_norm mode: {mode!r}")
    return ad.transpose(ut)


# ---------------------------------------------------------------------------
# parameter containers

@dataclass
class MatrixLinear:
    """One (U, W, B) triple mapping an N x D frame to N_out x D_out."""

    U: ad.Var
    W: ad.Var
    B: ad.Var
    u_norm: str = "none"

    def __post_init__(self):
        if self.u_norm not in U_NORM_MODES:
            raise ConfigError(f"unknown u_norm mode: {self.u_norm!r}")
        if self.B.shape != (self.U.shape[1], self.W.shape[1]):
            raise ConfigError(
                f"bias shape {self.B.shape} inconsistent with "
                f"U {self.U.shape} / W {self.W.shape}")

    @property
    def out_shape(self) -> tuple[int, int]:
        return (self.U.shape[1], self.W.shape[1])

    def params(self) -> list[tuple[str, ad.Var]]:
        return [("U", self.U), ("W", self.W), ("B", self.B)]


@dataclass
class MatrixAttnParams:
    proj_q: MatrixLinear
    proj_k: MatrixLinear
    proj_v: MatrixLinear
    proj_o: MatrixLinear
    heads_m: int = 1
    heads_n: int = 1

    def __post_init__(self):
        nqk, dqk = self.proj_q.out_shape
        if self.proj_k.out_shape != (nqk, dqk):
            raise ConfigError(
                f"proj_q/proj_k output shapes differ: "
                f"{self.proj_q.out_shape} vs {self.proj_k.out_shape}")
        nv, dv = self.proj_v.out_shape
        if self.heads_m < 1 or nqk % self.heads_m or nv % self.heads_m:
            raise ConfigError(
                f"heads_m={self.heads_m} must divide N_qk={nqk} and N_v={nv}")
        if self.heads_n < 1 or dqk % self.heads_n or dv % self.heads_n:
            raise ConfigError(
                f"heads_n={self.heads_n} must divide D_qk={dqk} and D_v={dv}")

    @property
    def n_qk(self) -> int:
        return self.proj_q.out_shape[0]

    @property
    def d_qk(self) -> int:
        return self.proj_q.out_shape[1]

    @property
    def n_v(self) -> int:
        return self.proj_v.out_shape[0]

    @property
    def d_v(self) -> int:
        return self.proj_v.out_shape[1]

    def params(self) -> list[tuple[str, ad.Var]]:
        out = []
        for tag, proj in (("q", self.proj_q), ("k", self.proj_k),
                          ("v", self.proj_v), ("o", self.proj_o)):
            out.extend((f"{tag}.{n}", v) for n, v in proj.params())
        return out


@dataclass
class TokenAttnParams:
    """Shared q/k/v/out projections for token-level dot-product attention.

    Used verbatim by spatial, local temporal, and full 3D attention; the
    collapse identities between those variants hold because all three run
    through the same kernel with the same parameter layout.
    """

    W_q: ad.Var
    W_k: ad.Var
    W_v: ad.Var
    W_o: ad.Var

    def __post_init__(self):
        d, dh = self.W_q.shape
        if self.W_k.shape != (d, dh) or self.W_v.shape != (d, dh):
            raise ConfigError("q/k/v projections must share (D, D_h) shape")
        if self.W_o.shape != (dh, d):
            raise ConfigError(
                f"output projection must be (D_h, D), got {self.W_o.shape}")

    @property
    def d_h(self) -> int:
        return self.W_q.shape[1]

    def params(self) -> list[tuple[str, ad.Var]]:
        return [("W_q", self.W_q), ("W_k", self.W_k),
                ("W_v", self.W_v), ("W_o", self.W_o)]


@dataclass
class FrameSimilarity:
    S: Mat


# ---------------------------------------------------------------------------
# initializers

def make_matrix_linear(rng: np.random.Generator, n: int, d: int,
                       n_out: int, d_out: int,
                       u_norm: str = "none") -> MatrixLinear:
    return MatrixLinear(
        U=ad.param(rng.normal(0.0, 1.0 / np.sqrt(n), (n, n_out)), "U"),
        W=ad.param(rng.normal(0.0, 1.0 / np.sqrt(d), (d, d_out)), "W"),
        B=ad.param(np.zeros((n_out, d_out)), "B"),
        u_norm=u_norm,
    )


def make_matrix_attn_params(rng: np.random.Generator, n: int, d: int,
                            n_qk: int, n_v: int,
                            d_qk: int | None = None, d_v: int | None = None,
                            heads_m: int = 1, heads_n: int = 1,
                            u_norm: str = "none") -> MatrixAttnParams:
    d_qk = d if d_qk is None else d_qk
    d_v = d if d_v is None else d_v
    return MatrixAttnParams(
        proj_q=make_matrix_linear(rng, n, d, n_qk, d_qk, u_norm),
        proj_k=make_matrix_linear(rng, n, d, n_qk, d_qk, u_norm),
        proj_v=make_matrix_linear(rng, n, d, n_v, d_v, u_norm),
        proj_o=make_matrix_linear(rng, n_v, d_v, n, d, u_norm),
        heads_m=heads_m,
        heads_n=heads_n,
    )


def make_token_attn_params(rng: np.random.Generator, d: int,
                           d_h: int) -> TokenAttnParams:
    s_in = 1.0 / np.sqrt(d)
    s_out = 1.0 / np.sqrt(d_h)
    return TokenAttnParams(
        W_q=ad.param(rng.normal(0.0, s_in, (d, d_h)), "W_q"),
        W_k=ad.param(rng.normal(0.0, s_in, (d, d_h)), "W_k"),
        W_v=ad.param(rng.normal(0.0, s_in, (d, d_h)), "W_v"),
        W_o=ad.param(rng.normal(0.0, s_out, (d_h, d)), "W_o"),
    )


# ---------------------------------------------------------------------------
# forward passes

def project_frame(z: ad.Var, p: MatrixLinear) -> ad.Var:
    """U_hat^T z W + B with the projection's own row-weight normalization."""
    if z.shape[0] != p.U.shape[0] or z.shape[1] != p.W.shape[0]:
        raise DimensionError(
            f"frame {z.shape} does not match projection "
            f"U {p.U.shape} / W {p.W.shape}")
    u_hat = _normalized_u(p.U, p.u_norm)
    out = ad.matmul(ad.matmul(ad.transpose(u_hat), z), p.W)
    return ad.add(out, p.B)


def _flatten_frames(frames: list[ad.Var]) -> ad.Var:
    """Stack frames as rows of a T x (rows*cols) matrix."""
    return ad.concat_rows(
        [ad.reshape(f, 1, f.shape[0] * f.shape[1]) for f in frames])


def frame_similarity_scores(q: list[ad.Var], k: list[ad.Var]) -> ad.Var:
    """T x T scaled Frobenius similarities as one matmul (counted FLOPs)."""
    shape = q[0].shape
    for f in list(q) + list(k):
        if f.shape != shape:
            raise DimensionError(
                f"similarity frame shape mismatch: {f.shape} vs {shape}")
    qf = _flatten_frames(q)
    kf = _flatten_frames(k)
    scale = 1.0 / np.sqrt(shape[0] * shape[1])
    return ad.smul(ad.matmul(qf, ad.transpose(kf)), scale)


def frame_similarity(q_frames: list[Mat], k_frames: list[Mat]) -> FrameSimilarity:
    """Mat-level entry point returning the similarity container."""
    q = [ad.const(m) for m in q_frames]
    k = [ad.const(m) for m in k_frames]
    with ad.no_grad():
        s = frame_similarity_scores(q, k)
    return FrameSimilarity(S=s.m)


def matrix_attention(frames: list[ad.Var], p: MatrixAttnParams) -> list[ad.Var]:
    """Multi-head matrix attention; output frames keep the input (N, D)."""
    t_len = len(frames)
    q = [project_frame(z, p.proj_q) for z in frames]
    k = [project_frame(z, p.proj_k) for z in frames]
    v = [project_frame(z, p.proj_v) for z in frames]

    m, n = p.heads_m, p.heads_n
    nqk_h, dqk_h = p.n_qk // m, p.d_qk // n
    nv_h, dv_h = p.n_v // m, p.d_v // n

    # head (i, j) output per frame, assembled back by block concatenation
    head_out = [[[None] * n for _ in range(m)] for _ in range(t_len)]
    for i in range(m):
        for j in range(n):
            qh = [ad.slice_cols(ad.slice_rows(f, i * nqk_h, (i + 1) * nqk_h),
                                j * dqk_h, (j + 1) * dqk_h) for f in q]
            kh = [ad.slice_cols(ad.slice_rows(f, i * nqk_h, (i + 1) * nqk_h),
                                j * dqk_h, (j + 1) * dqk_h) for f in k]
            vh = [ad.slice_cols(ad.slice_rows(f, i * nv_h, (i + 1) * nv_h),
                                j * dv_h, (j + 1) * dv_h) for f in v]
            weights = ad.softmax_rows(frame_similarity_scores(qh, kh))
            vflat = _flatten_frames(vh)
            u = ad.matmul(weights, vflat)
            for t in range(t_len):
                head_out[t][i][j] = ad.reshape(
                    ad.slice_rows(u, t, t + 1), nv_h, dv_h)

    out = []
    for t in range(t_len):
        rows = [ad.concat_cols(head_out[t][i]) for i in range(m)]
        u_t = ad.concat_rows(rows)
        out.append(project_frame(u_t, p.proj_o))
    return out


def _dot_attention(x: ad.Var, p: TokenAttnParams) -> ad.Var:
    """Scaled dot-product attention over the rows of x."""
    if x.shape[1] != p.W_q.shape[0]:
        raise DimensionError(
            f"token width {x.shape[1]} != projection input {p.W_q.shape[0]}")
    q = ad.matmul(x, p.W_q)
    k = ad.matmul(x, p.W_k)
    v = ad.matmul(x, p.W_v)
    scores = ad.smul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(p.d_h))
    weights = ad.softmax_rows(scores)
    return ad.matmul(ad.matmul(weights, v), p.W_o)


def spatial_attention(frames: list[ad.Var], p: TokenAttnParams) -> list[ad.Var]:
    """Dot-product attention independently inside each frame."""
    return [_dot_attention(f, p) for f in frames]


def local_temporal_attention(frames: list[ad.Var],
                             p: TokenAttnParams) -> list[ad.Var]:
    """Attention across frames at each spatial index, parameters shared."""
    t_len = len(frames)
    n_tok = frames[0].shape[0]
    per_pos = []
    for pos in range(n_tok):
        x = ad.concat_rows([ad.slice_rows(f, pos, pos + 1) for f in frames])
        per_pos.append(_dot_attention(x, p))
    return [
        ad.concat_rows([ad.slice_rows(per_pos[pos], t, t + 1)
                        for pos in range(n_tok)])
        for t in range(t_len)
    ]


def full3d_attention(frames: list[ad.Var], p: TokenAttnParams) -> list[ad.Var]:
    """Joint attention over the flattened T*N token sequence."""
    n_tok = frames[0].shape[0]
    x = ad.concat_rows(frames)
    y = _dot_attention(x, p)
    return [ad.slice_rows(y, t * n_tok, (t + 1) * n_tok)
            for t in range(len(frames))]


# ---------------------------------------------------------------------------
# gradients

def backward(outputs: list[ad.Var], upstreams: list[np.ndarray],
             wrt: list[ad.Var]) -> list[np.ndarray | None]:
    """Reverse-mode gradients of sum_t <outputs[t], upstreams[t]>.

    Seeding the sum with 1 makes each output's contribution exactly the
    supplied upstream gradient, so the returned values are the standard
    vector-Jacobian products for every requested Var.
    """
    if len(outputs) != len(upstreams):
        raise DimensionError("one upstream gradient per output required")
    terms = [ad.sum_all(ad.mul(o, ad.const(np.asarray(u, dtype=np.float64))))
             for o, u in zip(outputs, upstreams)]
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    ad.backward(total)
    return [w.grad for w in wrt]
