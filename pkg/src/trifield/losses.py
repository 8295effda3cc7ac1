"""Training objectives: view synthesis, multi-view photometric warping with
auto-masking and minimum reprojection, and the virtual-camera loss.

The photometric pipeline warps each target pixel into a context view using
its predicted depth and the relative camera transform, resamples the
context image bilinearly at the warped coordinates, and compares target and
synthesized images with an SSIM + L1 mix. Gradients reach the depth through
the warped coordinates.

Coordinate conventions: warping operates on continuous image coordinates
where pixel centers sit at (u + 0.5, v + 0.5); bilinear sampling operates
in array-index space where integer coordinates hit pixels exactly. The
pipeline converts between the two by the half-pixel shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .geometry import Camera
from .sampling import SubView
from .tensor import Tensor, as_tensor

_INVALID_LOSS = 1e6  # sentinel so invalid warps never win the per-pixel min


@dataclass
class LossConfig:
    alpha_p: float = 0.1         # photometric weight
    alpha_v: float = 0.5         # virtual-camera loss weight
    alpha: float = 0.85          # SSIM share inside the photometric term
    ssim_window: int = 3
    use_automask: bool = True
    use_min_reprojection: bool = True

    def __post_init__(self):
        if self.alpha_p < 0 or self.alpha_v < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def view_synthesis_loss(predicted, target) -> Tensor:
    """Mean squared error between a predicted and a target image."""
    pred = as_tensor(predicted)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.data.shape != tgt.shape:
        raise ValueError(
            f"image shape mismatch: predicted {pred.data.shape} vs target {tgt.shape}"
        )
    diff = pred - tgt.astype(pred.data.dtype)
    return (diff * diff).mean()


def warp_coordinates(target_camera: Camera, context_camera: Camera, uv, depth):
    """Project target-view coordinates with depth into the context view.

    For homogeneous pixel coordinates [u, v, 1] with predicted depth d, the
    context-frame coordinates satisfy
    d' [u', v', 1]^T = K_c R (K_t^-1 [u, v, 1]^T d + t), where [R | t] is
    the relative transform T_c T_t^-1. Returns (u', v', d'); callers must
    treat d' <= 0 (behind the context camera) as invalid.

    ``uv`` is a constant (N, 2) array in continuous pixel coordinates;
    ``depth`` may be a tracked tensor, and gradients flow into it.
    """
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    d = depth if isinstance(depth, Tensor) else Tensor(depth)
    if np.any(d.data <= 0):
        raise ValueError("warp_coordinates requires positive depths")
    rel = context_camera.extrinsics @ np.linalg.inv(target_camera.extrinsics)
    R, t = rel[:3, :3], rel[:3, 3]
    K_t_inv = np.linalg.inv(target_camera.intrinsics)
    K_c = context_camera.intrinsics
    M = K_c @ R @ K_t_inv  # maps d * [u, v, 1] directly
    b = K_c @ t

    ones = np.ones((uv.shape[0], 1))
    homog = np.concatenate([uv, ones], axis=1).astype(d.data.dtype)  # (N, 3)
    lifted = homog @ M.T.astype(d.data.dtype)                        # (N, 3)
    dflat = tt.reshape(d, (d.data.size, 1))
    proj = dflat * lifted + b.astype(d.data.dtype)                   # (N, 3)
    d_new = proj[:, 2]
    u_new = proj[:, 0] / d_new
    v_new = proj[:, 1] / d_new
    return u_new, v_new, d_new


def synthesize_view(context_image, x, y):
    """Bilinearly sample ``context_image`` at array-index coordinates.

    ``x`` (columns) and ``y`` (rows) may be tracked tensors; integer
    coordinates return exact pixel values. Returns (samples (N, 3),
    valid (N,) bool) where invalid marks coordinates outside the image.
    Gradients flow into the coordinates, not the image.
    """
    img = np.asarray(context_image.data if isinstance(context_image, Tensor)
                     else context_image)
    h, w = img.shape[0], img.shape[1]
    xt = x if isinstance(x, Tensor) else Tensor(x)
    yt = y if isinstance(y, Tensor) else Tensor(y)

    xd, yd = xt.data, yt.data
    valid = (xd >= 0) & (xd <= w - 1) & (yd >= 0) & (yd <= h - 1)
    x0 = np.clip(np.floor(xd), 0, w - 2).astype(np.int64) if w > 1 else np.zeros_like(xd, dtype=np.int64)
    y0 = np.clip(np.floor(yd), 0, h - 2).astype(np.int64) if h > 1 else np.zeros_like(yd, dtype=np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    fx = xt - x0.astype(xd.dtype)
    fy = yt - y0.astype(yd.dtype)
    n = xd.size
    fx = tt.reshape(fx, (n, 1))
    fy = tt.reshape(fy, (n, 1))

    c00 = img[y0, x0].astype(xd.dtype)
    c10 = img[y0, x1].astype(xd.dtype)
    c01 = img[y1, x0].astype(xd.dtype)
    c11 = img[y1, x1].astype(xd.dtype)

    one = 1.0
    out = (
        (one - fx) * (one - fy) * c00
        + fx * (one - fy) * c10
        + (one - fx) * fy * c01
        + fx * fy * c11
    )
    return out, valid


def _reflect_pad_indices(n: int, pad: int) -> np.ndarray:
    idx = np.arange(-pad, n + pad)
    return np.abs(idx) * (idx < n) + (2 * (n - 1) - idx) * (idx >= n)


def _box_filter(img: Tensor, window: int) -> Tensor:
    """Mean filter with reflect padding, same output size. img is (H, W, C)."""
    h, w = img.data.shape[0], img.data.shape[1]
    pad = window // 2
    rows = _reflect_pad_indices(h, pad)
    cols = _reflect_pad_indices(w, pad)
    padded = img[rows][:, cols]
    total = None
    for dy in range(window):
        for dx in range(window):
            tile = padded[dy : dy + h, dx : dx + w]
            total = tile if total is None else total + tile
    return total * (1.0 / (window * window))


def ssim(a, b, window: int = 3, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> Tensor:
    """Per-pixel structural similarity over local windows, averaged across
    channels. Inputs are (H, W, C) images in [0, 1]; output is (H, W) in
    [-1, 1] up to floating-point rounding of the local variances."""
    if window % 2 != 1 or window < 1:
        raise ValueError(f"ssim window must be odd and positive, got {window}")
    at = as_tensor(a)
    bt = as_tensor(b)
    if at.data.shape != bt.data.shape:
        raise ValueError(f"ssim shape mismatch: {at.data.shape} vs {bt.data.shape}")
    mu_a = _box_filter(at, window)
    mu_b = _box_filter(bt, window)
    var_a = _box_filter(at * at, window) - mu_a * mu_a
    var_b = _box_filter(bt * bt, window) - mu_b * mu_b
    cov = _box_filter(at * bt, window) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean(axis=2)


def photometric_loss(target, synthesized, mask=None, alpha: float = 0.85) -> Tensor:
    """Per-pixel photometric error map on (H, W, 3) images:
    alpha * (1 - SSIM) / 2 + (1 - alpha) * L1, channel-averaged, optionally
    zeroed by a constant mask."""
    tgt = as_tensor(target)
    syn = as_tensor(synthesized)
    if tgt.data.shape != syn.data.shape:
        raise ValueError(
            f"photometric shapes differ: {tgt.data.shape} vs {syn.data.shape}"
        )
    l1 = tt.absolute(tgt - syn).mean(axis=2)
    loss = (1.0 - alpha) * l1
    if alpha > 0:
        sim = ssim(tgt, syn)
        loss = loss + alpha * 0.5 * (1.0 - sim)
    if mask is not None:
        loss = loss * np.asarray(mask, dtype=loss.data.dtype)
    return loss


def _context_losses(subview: SubView, contexts, depth: Tensor, alpha: float):
    """Warped per-pixel loss maps and their validity masks, one per context."""
    h, w = subview.shape
    centers = subview.pixels_sub.astype(np.float64) + 0.5  # sub-camera coords
    target = subview.image
    dflat = tt.reshape(depth, (h * w,))
    maps, valids = [], []
    for image, cam in contexts:
        u2, v2, d2 = warp_coordinates(subview.camera, cam, centers, dflat)
        ih, iw = image.shape[0], image.shape[1]
        synth, inside = synthesize_view(image, u2 - 0.5, v2 - 0.5)
        valid = inside & (d2.data > 0)
        loss_map = photometric_loss(
            target, tt.reshape(synth, (h, w, 3)), alpha=alpha
        )
        vm = valid.reshape(h, w)
        vmf = vm.astype(loss_map.data.dtype)
        maps.append(loss_map * vmf + _INVALID_LOSS * (1.0 - vmf))
        valids.append(vm)
    return maps, valids


def _identity_losses(subview: SubView, contexts, alpha: float):
    """Unwarped per-pixel losses: target versus each raw context sampled at
    the target's own full-resolution pixel positions."""
    h, w = subview.shape
    maps = []
    for image, _cam in contexts:
        u = subview.pixels[:, 0]
        v = subview.pixels[:, 1]
        ctx = np.asarray(image)[v, u].reshape(h, w, 3)
        with tt.no_grad():
            m = photometric_loss(subview.image, ctx, alpha=alpha)
        maps.append(m.data)
    return maps


def multi_context_photometric(
    subview: SubView,
    contexts,
    depth: Tensor,
    config: LossConfig,
) -> Tensor:
    """Masked mean of the per-pixel minimum reprojection loss.

    ``contexts`` is a sequence of (image, Camera) at full resolution; the
    target lives in ``subview`` (strided image, sub-camera, pixel map).
    Minimum reprojection takes the per-pixel minimum across contexts;
    auto-masking drops pixels whose best unwarped context already matches
    the target at least as well as the best warp. Pixels with no valid warp
    are dropped too. The mean over an empty surviving set is zero.
    """
    if len(contexts) == 0:
        raise ValueError("multi_context_photometric needs at least one context")
    maps, valids = _context_losses(subview, contexts, depth, config.alpha)
    if config.use_min_reprojection or len(maps) == 1:
        best = maps[0]
        for m in maps[1:]:
            best = tt.minimum(best, m)
    else:
        count = np.maximum(sum(v.astype(np.float64) for v in valids), 1.0)
        total = maps[0] * valids[0]
        for m, v in zip(maps[1:], valids[1:]):
            total = total + m * v
        best = total * (1.0 / count).astype(total.data.dtype)

    keep = np.logical_or.reduce(valids)
    if config.use_automask:
        idmaps = _identity_losses(subview, contexts, config.alpha)
        unwarped = np.minimum.reduce(idmaps)
        keep = keep & (unwarped > best.data)

    n_kept = int(keep.sum())
    if n_kept == 0:
        return Tensor(np.zeros((), dtype=best.data.dtype))
    masked = best * keep.astype(best.data.dtype)
    return masked.sum() * (1.0 / n_kept)


def virtual_loss(radiance_rgb, radiance_depth, light_rgb, field_depth) -> Tensor:
    """Supervise single-query field predictions against volumetric renders
    at a virtual pose: mean |log D_r - log D_d| plus mean (I_r - I_l)^2.

    The volumetric inputs are pseudo-labels; they are detached here, so no
    gradient ever reaches the radiance branch through this loss.
    """
    i_r = as_tensor(radiance_rgb).detach()
    d_r = as_tensor(radiance_depth).detach()
    i_l = as_tensor(light_rgb)
    d_d = as_tensor(field_depth)
    if np.any(d_r.data <= 0) or np.any(d_d.data <= 0):
        raise ValueError("virtual_loss requires positive depths on both sides")
    if i_r.data.shape != i_l.data.shape or d_r.data.shape != d_d.data.shape:
        raise ValueError(
            f"virtual_loss shape mismatch: colors {i_r.data.shape} vs "
            f"{i_l.data.shape}, depths {d_r.data.shape} vs {d_d.data.shape}"
        )
    depth_term = tt.absolute(tt.log(d_r) - tt.log(d_d)).mean()
    diff = i_r - i_l
    return depth_term + (diff * diff).mean()


@dataclass
class LossComponents:
    """Raw (unweighted) loss terms assembled by one training step."""

    view_synthesis: Tensor | None = None      # MSE on volumetric colors
    photometric_vol: Tensor | None = None     # warp loss on volumetric depth
    photometric_field: Tensor | None = None   # warp loss on depth-field depth
    light_mse: Tensor | None = None           # MSE on light-field colors
    virtual: Tensor | None = None             # virtual-camera loss


def total_loss(components: LossComponents, alpha_p_eff: float, alpha_v: float) -> Tensor:
    """Weighted sum of the step's loss terms.

    total = L_s + alpha_p_eff * (L_p_vol + L_p_field) + L_light + alpha_v * L_v
    where absent terms contribute nothing; with alpha_p_eff == 0 the
    photometric terms vanish entirely.
    """
    terms = []
    if components.view_synthesis is not None:
        terms.append(components.view_synthesis)
    if alpha_p_eff > 0:
        if components.photometric_vol is not None:
            terms.append(alpha_p_eff * components.photometric_vol)
        if components.photometric_field is not None:
            terms.append(alpha_p_eff * components.photometric_field)
    if components.light_mse is not None:
        terms.append(components.light_mse)
    if components.virtual is not None and alpha_v > 0:
        terms.append(alpha_v * components.virtual)
    if not terms:
        raise ValueError("total_loss needs at least one component")
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
