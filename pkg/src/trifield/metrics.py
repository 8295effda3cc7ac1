"""Depth and image-quality metrics with median ground-truth scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import ssim
from .tensor import no_grad


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float   # fraction with max(p/g, g/p) < 1.25
    delta2: float   # ... < 1.25^2
    delta3: float   # ... < 1.25^3

    def as_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rmse": self.rmse,
            "rmse_log": self.rmse_log,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
        }


def median_scale(pred, gt, mask=None) -> np.ndarray:
    """Rescale predicted depth by median(gt) / median(pred) over the mask.

    Removes the global scale ambiguity of self-supervised depth before
    metric computation; a constant-factor miscalibration cancels exactly.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    m = np.ones(g.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    m = m & (g > 0)
    if not np.any(m):
        raise ValueError("median_scale: empty mask")
    med_p = np.median(p[m])
    if med_p == 0:
        raise ValueError("median_scale: predicted median is zero")
    return p * (np.median(g[m]) / med_p)


def depth_metrics(pred, gt, mask=None, d_min: float = None, d_max: float = None) -> DepthMetrics:
    """Standard depth error set over masked pixels.

    Callers apply median scaling first. Ground truth is clamped to
    [d_min, d_max] when given; pixels that are non-positive on either side
    after clamping are excluded.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    m = np.ones(g.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if d_min is not None or d_max is not None:
        g = np.clip(g, d_min, d_max)
    m = m & (g > 0) & (p > 0)
    if not np.any(m):
        raise ValueError("depth_metrics: no valid pixels")
    p, g = p[m], g[m]
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


def psnr(pred, gt) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; a perfect
    reconstruction reports +inf."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"psnr shape mismatch: {p.shape} vs {g.shape}")
    mse = float(np.mean((p - g) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def ssim_metric(pred, gt, window: int = 3) -> float:
    """Mean structural similarity between two (H, W, 3) images."""
    with no_grad():
        return float(ssim(pred, gt, window=window).mean().data)
