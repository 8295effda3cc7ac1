"""Volumetric compositing and image rendering from any head.

Compositing follows the standard front-to-back accumulated-transmittance
recurrence: with intervals delta_k between consecutive sample depths (the
last interval runs to the scene far bound), transmittance
T_k = exp(-sum_{k'<k} sigma_k' delta_k') and weight
w_k = T_k (1 - exp(-sigma_k delta_k)). Weights plus the residual
transmittance always sum to one.

Depth-field guidance draws volumetric samples from a Gaussian centered on
the depth-field prediction, cutting query counts once the field is
trustworthy. Renderers report their exact decoder query counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .decoder import decode_depth, decode_light, decode_radiance
from .geometry import Camera, linspace_depths, make_ray_embedding, make_vol_embedding
from .model import SceneModel
from .tensor import Tensor, no_grad


@dataclass
class SamplingConfig:
    """Per-ray sample budget: uniform samples, guided samples, guidance
    noise, and optional stratified jitter of the uniform bins."""

    k_ray: int
    k_dfg: int = 0
    sigma_g: float = 0.1
    jitter: bool = False

    def __post_init__(self):
        if self.k_ray < 0 or self.k_dfg < 0 or self.k_ray + self.k_dfg < 1:
            raise ValueError(
                f"need k_ray + k_dfg >= 1, got k_ray={self.k_ray}, k_dfg={self.k_dfg}"
            )


@dataclass
class CompositeResult:
    color: Tensor      # (N, 3)
    depth: Tensor      # (N,)
    weights: Tensor    # (N, K)
    residual: Tensor   # (N,)


@dataclass
class RenderResult:
    color: Tensor            # (N, 3)
    depth: Tensor            # (N,)
    n_queries: int           # exact decoder query count
    queries_per_pixel: int


def composite(colors, densities, depths, d_max: float) -> CompositeResult:
    """Alpha-composite per-sample colors and densities along each ray.

    colors (N, K, 3) and densities (N, K) may be tracked tensors; depths
    (N, K) are constant sample positions and must be strictly increasing
    per ray. The final interval is clamped to d_max - z_K (never negative).
    """
    z = np.asarray(depths if not isinstance(depths, Tensor) else depths.data)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] > 1 and np.any(np.diff(z, axis=1) <= 0):
        raise ValueError("composite requires strictly increasing depths per ray")
    col = colors if isinstance(colors, Tensor) else Tensor(colors)
    den = densities if isinstance(densities, Tensor) else Tensor(densities)
    if np.any(den.data < 0):
        raise ValueError("composite requires non-negative densities")
    if col.data.ndim == 2:
        col = tt.reshape(col, (1,) + col.data.shape)
    if den.data.ndim == 1:
        den = tt.reshape(den, (1, den.data.shape[0]))

    last = np.clip(d_max - z[:, -1:], 0.0, None)
    delta = np.concatenate([np.diff(z, axis=1), last], axis=1)  # (N, K)
    delta = delta.astype(den.data.dtype)

    sd = den * delta
    acc = tt.cumsum(sd, axis=1)                 # inclusive prefix sums
    trans = tt.exp(-(acc - sd))                 # T_k, with T_1 = 1
    weights = trans * (1.0 - tt.exp(-sd))
    residual = tt.exp(-acc[:, -1])
    zc = z.astype(den.data.dtype)
    color = (weights.reshape(weights.shape + (1,)) * col).sum(axis=1)
    depth = (weights * zc).sum(axis=1)
    return CompositeResult(color, depth, weights, residual)


def _enforce_increasing(z: np.ndarray, eps: float) -> np.ndarray:
    """Nudge sorted depth rows so every step is at least ``eps``."""
    for k in range(1, z.shape[1]):
        np.maximum(z[:, k], z[:, k - 1] + eps, out=z[:, k])
    return z


def dfg_sample_depths(
    depth_hint,
    k_dfg: int,
    sigma_g: float,
    d_min: float,
    d_max: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Guided sample depths: N(depth_hint, sigma_g) draws, clamped to the
    scene range, sorted ascending, duplicates nudged apart by 1e-6."""
    if k_dfg < 1:
        raise ValueError("k_dfg must be >= 1")
    hint = np.atleast_1d(np.asarray(depth_hint, dtype=np.float64))
    draws = hint[:, None] + sigma_g * rng.standard_normal((hint.shape[0], k_dfg))
    draws = np.clip(draws, d_min, d_max)
    draws.sort(axis=1)
    return _enforce_increasing(draws, 1e-6)


def _uniform_depths(n: int, cfg: SamplingConfig, d_min, d_max, rng) -> np.ndarray:
    z = linspace_depths(d_min, d_max, cfg.k_ray)
    z = np.broadcast_to(z, (n, cfg.k_ray)).copy()
    if cfg.jitter and cfg.k_ray > 1:
        if rng is None:
            raise ValueError("stratified jitter needs an rng")
        half = 0.5 * (z[:, 1] - z[:, 0])
        z += (rng.random((n, cfg.k_ray)) - 0.5) * 2.0 * half[:, None]
        z.sort(axis=1)
        z = np.clip(z, d_min, d_max)
    return z


def render_volumetric(
    model: SceneModel,
    camera: Camera,
    pixels,
    sampling: SamplingConfig,
    rng: np.random.Generator | None = None,
    depth_hint=None,
    training: bool = False,
) -> RenderResult:
    """Render color and depth for the given pixels via the radiance head.

    Uniform depths (optionally jittered) and guided depths are merged into
    one sorted set per ray before compositing. When guidance is active and
    no ``depth_hint`` is supplied, the depth field is queried (untracked)
    for one.
    """
    px = np.atleast_2d(np.asarray(pixels))
    n = px.shape[0]
    parts = []
    if sampling.k_ray > 0:
        parts.append(_uniform_depths(n, sampling, model.d_min, model.d_max, rng))
    if sampling.k_dfg > 0:
        if depth_hint is None:
            with no_grad():
                ray_q = model.asarray(make_ray_embedding(camera, px, model.embed))
                hint = decode_depth(
                    ray_q, model.latents_for("depth"), model.heads["depth"],
                    model.d_min, model.d_max,
                )
            depth_hint = hint.data
        if rng is None:
            raise ValueError("depth-field guidance needs an rng")
        parts.append(
            dfg_sample_depths(
                depth_hint, sampling.k_dfg, sampling.sigma_g,
                model.d_min, model.d_max, rng,
            )
        )
    z = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
    z.sort(axis=1)
    z = _enforce_increasing(z, 1e-6)

    k = z.shape[1]
    queries = model.asarray(make_vol_embedding(camera, px, z, model.embed))
    colors, density = decode_radiance(
        queries, model.latents_for("radiance"), model.heads["radiance"],
        training=training, rng=rng,
    )
    comp = composite(
        tt.reshape(colors, (n, k, 3)), tt.reshape(density, (n, k)), z, model.d_max
    )
    return RenderResult(comp.color, comp.depth, n_queries=n * k, queries_per_pixel=k)


def render_light_depth(
    model: SceneModel,
    camera: Camera,
    pixels,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Single-query color and depth for the given pixels, one decode of the
    light head and one of the depth head per pixel.

    Returns (colors (N, 3), depths (N,), n_queries) with n_queries = 2 N.
    """
    px = np.atleast_2d(np.asarray(pixels))
    queries = model.asarray(make_ray_embedding(camera, px, model.embed))
    colors = decode_light(
        queries, model.latents_for("light"), model.heads["light"],
        training=training, rng=rng,
    )
    depths = decode_depth(
        queries, model.latents_for("depth"), model.heads["depth"],
        model.d_min, model.d_max, training=training, rng=rng,
    )
    return colors, depths, 2 * px.shape[0]
