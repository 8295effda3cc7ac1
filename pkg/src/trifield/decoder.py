"""Shared latent table and the cross-attention decoder heads.

The scene is stored as a learnable table of latent rows. Task heads decode
geometric query embeddings against that table with one multi-head
cross-attention layer (queries from the embeddings, keys and values from
the latents), a GeLU on the attended features, and a single linear output
map. Output activations fix the ranges: sigmoid for colors, ReLU for
density, and an affine sigmoid for depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor

HEAD_OUTPUT_DIMS = {"radiance": 4, "light": 3, "depth": 1}


def init_latent(n_rows: int, dim: int, seed: int, dtype=np.float64) -> Tensor:
    """Learnable latent table, entries i.i.d. normal with std 1/sqrt(dim)."""
    if n_rows < 1 or dim < 1:
        raise ValueError(f"latent table dims must be >= 1, got {n_rows}x{dim}")
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n_rows, dim)) / math.sqrt(dim)
    return Tensor(values.astype(dtype), requires_grad=True)


def _linear_params(rng, fan_in: int, fan_out: int, dtype):
    w = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
    return Tensor(w.astype(dtype), requires_grad=True), Tensor(
        np.zeros(fan_out, dtype=dtype), requires_grad=True
    )


@dataclass
class DecoderHead:
    """Projections for one task head. ``kind`` picks the output activation."""

    kind: str
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    w_out: Tensor
    b_out: Tensor
    n_heads: int = 2
    dropout_rate: float = 0.1

    def parameters(self):
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv,
                self.w_out, self.b_out]


def make_decoder_head(
    kind: str,
    query_dim: int,
    latent_dim: int,
    seed: int,
    n_heads: int = 2,
    dropout_rate: float = 0.1,
    dtype=np.float64,
    density_bias: float = 0.0,
) -> DecoderHead:
    """Build a head with attention width equal to the query width.

    ``density_bias`` offsets the raw density channel of a radiance head so
    fresh models render non-empty space.
    """
    if kind not in HEAD_OUTPUT_DIMS:
        raise ValueError(f"unknown head kind {kind!r}, expected one of "
                         f"{sorted(HEAD_OUTPUT_DIMS)}")
    if query_dim % n_heads != 0:
        raise ValueError(
            f"query width {query_dim} not divisible by {n_heads} heads"
        )
    rng = np.random.default_rng(seed)
    wq, bq = _linear_params(rng, query_dim, query_dim, dtype)
    wk, bk = _linear_params(rng, latent_dim, query_dim, dtype)
    wv, bv = _linear_params(rng, latent_dim, query_dim, dtype)
    w_out, b_out = _linear_params(rng, query_dim, HEAD_OUTPUT_DIMS[kind], dtype)
    if kind == "radiance" and density_bias:
        b_out.data[3] = density_bias
    return DecoderHead(kind, wq, bq, wk, bk, wv, bv, w_out, b_out,
                       n_heads=n_heads, dropout_rate=dropout_rate)


def cross_attend(
    queries,
    latents: Tensor,
    head: DecoderHead,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention of queries over the latents.

    Returns (N_q, C_q) features: per head, softmax(Q K^T / sqrt(d)) V, heads
    concatenated, then GeLU. Dropout (train mode only) zeroes attention
    weights at ``head.dropout_rate`` with inverted scaling.
    """
    q_in = queries if isinstance(queries, Tensor) else Tensor(
        np.asarray(queries, dtype=latents.data.dtype)
    )
    c_q = head.wq.data.shape[0]
    if q_in.data.ndim != 2 or q_in.data.shape[1] != c_q:
        raise ValueError(
            f"query width mismatch: got {q_in.data.shape}, head expects (N, {c_q})"
        )
    if latents.data.shape[1] != head.wk.data.shape[0]:
        raise ValueError(
            f"latent width mismatch: got {latents.data.shape}, head expects "
            f"(N_l, {head.wk.data.shape[0]})"
        )
    if training and head.dropout_rate > 0 and rng is None:
        raise ValueError("training-mode attention dropout needs an rng")

    q = q_in @ head.wq + head.bq     # (N, C)
    k = latents @ head.wk + head.bk  # (L, C)
    v = latents @ head.wv + head.bv  # (L, C)

    h = head.n_heads
    d = c_q // h
    scale = 1.0 / math.sqrt(d)
    feats = []
    for i in range(h):
        sl = slice(i * d, (i + 1) * d)
        scores = (q[:, sl] @ tt.transpose(k[:, sl])) * scale  # (N, L)
        attn = tt.softmax(scores)
        if training and head.dropout_rate > 0:
            keep = (rng.random(attn.data.shape) >= head.dropout_rate)
            attn = attn * (keep / (1.0 - head.dropout_rate))
        feats.append(attn @ v[:, sl])
    return tt.gelu(tt.concatenate(feats, axis=1))


def _head_output(queries, latents, head, training, rng) -> Tensor:
    feats = cross_attend(queries, latents, head, training=training, rng=rng)
    return feats @ head.w_out + head.b_out


def decode_radiance(vol_queries, latents, head, training=False, rng=None):
    """Volumetric queries -> (colors (N, 3) in [0,1], densities (N,) >= 0)."""
    out = _head_output(vol_queries, latents, head, training, rng)
    colors = tt.sigmoid(out[:, 0:3])
    density = tt.relu(out[:, 3])
    return colors, density


def decode_light(ray_queries, latents, head, training=False, rng=None) -> Tensor:
    """Ray queries -> per-ray color (N, 3) in [0, 1]."""
    return tt.sigmoid(_head_output(ray_queries, latents, head, training, rng))


def decode_depth(
    ray_queries, latents, head, d_min: float, d_max: float,
    training=False, rng=None,
) -> Tensor:
    """Ray queries -> per-ray depth (N,) strictly inside (d_min, d_max)."""
    if not d_min < d_max:
        raise ValueError(f"need d_min < d_max, got [{d_min}, {d_max}]")
    raw = _head_output(ray_queries, latents, head, training, rng)
    return d_min + (d_max - d_min) * tt.sigmoid(raw[:, 0])
