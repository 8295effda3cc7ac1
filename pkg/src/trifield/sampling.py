"""Strided ray sampling for dense-image losses, and virtual-camera draws.

A strided subview selects the regular pixel grid (o_h + a*s_h, o_w + b*s_w)
and adjusts the intrinsics so rays through the sub-camera's pixel centers
coincide exactly with the full-resolution rays through the selected pixels.
That ray equality is the normative definition of the adjustment; under the
half-pixel-center convention it works out to

    fx' = fx / s_w,  cx' = (cx - o_w + 0.5 * (s_w - 1)) / s_w

and likewise for rows. Dense losses (SSIM windows) then apply to the small
image while context images stay at full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, camera_origin, look_at_extrinsics


@dataclass(frozen=True)
class StrideSpec:
    """Strides and offsets of a regular pixel sub-grid."""

    s_h: int
    s_w: int
    o_h: int = 0
    o_w: int = 0

    def __post_init__(self):
        if self.s_h < 1 or self.s_w < 1:
            raise ValueError(f"strides must be >= 1, got {self.s_h}x{self.s_w}")
        if not (0 <= self.o_h < self.s_h and 0 <= self.o_w < self.s_w):
            raise ValueError(
                f"offsets ({self.o_h}, {self.o_w}) outside stride range "
                f"({self.s_h}, {self.s_w})"
            )


@dataclass
class SubView:
    """A strided view of one frame: sub-camera, sub-image, and the map back
    to full-resolution pixel coordinates."""

    camera: Camera
    image: np.ndarray       # (h, w, 3)
    pixels: np.ndarray      # (h*w, 2) full-resolution integer (u, v)
    pixels_sub: np.ndarray  # (h*w, 2) sub-view integer (u, v)
    shape: tuple            # (h, w)
    gt_depth: np.ndarray | None = None


def strided_subview(
    camera: Camera, image, spec: StrideSpec, gt_depth=None
) -> SubView:
    """Select the strided pixel grid and build the matching sub-camera.

    The sub-image has resolution floor((H - o_h) / s_h) x
    floor((W - o_w) / s_w). Context images are never downsampled; only the
    target passes through here.
    """
    img = np.asarray(image)
    hh, ww = camera.height, camera.width
    if img.shape[0] != hh or img.shape[1] != ww:
        raise ValueError(
            f"image {img.shape[:2]} does not match camera {hh}x{ww}"
        )
    h = (hh - spec.o_h) // spec.s_h
    w = (ww - spec.o_w) // spec.s_w
    if h < 1 or w < 1:
        raise ValueError(
            f"stride spec {spec} selects an empty grid on a {hh}x{ww} image"
        )
    rows = spec.o_h + np.arange(h) * spec.s_h
    cols = spec.o_w + np.arange(w) * spec.s_w
    sub_image = img[np.ix_(rows, cols)]
    sub_depth = None if gt_depth is None else np.asarray(gt_depth)[np.ix_(rows, cols)]

    K = camera.intrinsics
    K_sub = np.array(
        [
            [K[0, 0] / spec.s_w, 0.0, (K[0, 2] - spec.o_w + 0.5 * (spec.s_w - 1)) / spec.s_w],
            [0.0, K[1, 1] / spec.s_h, (K[1, 2] - spec.o_h + 0.5 * (spec.s_h - 1)) / spec.s_h],
            [0.0, 0.0, 1.0],
        ]
    )
    sub_camera = Camera(K_sub, camera.extrinsics, width=w, height=h)

    uu_full, vv_full = np.meshgrid(cols, rows)  # raster order
    pixels = np.stack([uu_full.ravel(), vv_full.ravel()], axis=1)
    uu_sub, vv_sub = np.meshgrid(np.arange(w), np.arange(h))
    pixels_sub = np.stack([uu_sub.ravel(), vv_sub.ravel()], axis=1)
    return SubView(sub_camera, sub_image, pixels, pixels_sub, (h, w), sub_depth)


@dataclass(frozen=True)
class VirtualCameraSpec:
    """Noise scale and look-at distance for virtual-view augmentation."""

    sigma_v: float = 0.25
    look_distance: float = 5.0

    def __post_init__(self):
        if self.sigma_v < 0:
            raise ValueError(f"sigma_v must be >= 0, got {self.sigma_v}")
        if self.look_distance <= 0:
            raise ValueError("look_distance must be positive")


def sample_virtual_camera(
    base: Camera, spec: VirtualCameraSpec, rng: np.random.Generator
) -> Camera:
    """A randomly perturbed copy of ``base``.

    The position is the base origin plus isotropic Gaussian noise; the
    camera looks at a point on the base optical axis at ``look_distance``,
    itself perturbed by the same noise scale. Orientation comes from a
    roll-free look-at; intrinsics are copied. Degenerate draws (position on
    top of the target, or view parallel to the up axis) are resampled.
    """
    origin = camera_origin(base)
    forward = base.forward
    for _ in range(64):
        position = origin + spec.sigma_v * rng.standard_normal(3)
        target = origin + spec.look_distance * forward + spec.sigma_v * rng.standard_normal(3)
        try:
            T = look_at_extrinsics(position, target)
        except ValueError:
            continue
        return Camera(base.intrinsics.copy(), T, base.width, base.height)
    raise ValueError("could not sample a non-degenerate virtual camera")
