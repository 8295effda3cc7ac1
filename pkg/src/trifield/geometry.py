"""Pinhole cameras, ray generation, depth sampling, and Fourier embeddings.

Conventions, fixed once for the whole package:
  * camera frame is x right, y down, z forward (the camera looks along +z);
  * extrinsics T are the 4x4 world-to-camera rigid transform, so the camera
    center in world coordinates is the translation part of T^-1;
  * pixel (u, v) means column u, row v, and rays pass through the pixel
    center (u + 0.5, v + 0.5).

Everything here is pure numpy; geometric embeddings are constants with
respect to the tape (no learnable quantity enters them).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORLD_UP = np.array([0.0, -1.0, 0.0])  # y points down


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus world-to-camera extrinsics."""

    intrinsics: np.ndarray  # 3x3, zero skew
    extrinsics: np.ndarray  # 4x4 rigid world-to-camera
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        T = np.asarray(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {K.shape}")
        if T.shape != (4, 4):
            raise ValueError(f"extrinsics must be 4x4, got {T.shape}")
        R = T[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("extrinsic rotation is not orthonormal")
        if not np.isclose(np.linalg.det(R), 1.0, atol=1e-9):
            raise ValueError("extrinsic rotation must have determinant +1")
        if not (np.allclose(T[3], [0, 0, 0, 1]) and K[0, 1] == 0):
            raise ValueError("extrinsics last row must be [0 0 0 1] and skew zero")
        fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={fx}, fy={fy}")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError(
                f"principal point ({cx}, {cy}) outside image {self.width}x{self.height}"
            )
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", T)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:3, 3]

    @property
    def origin(self) -> np.ndarray:
        return camera_origin(self)

    @property
    def forward(self) -> np.ndarray:
        """World-frame direction of the camera z axis."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def project(self, points: np.ndarray):
        """World points (N, 3) -> pixel coordinates (N, 2) and camera-frame
        depth (N,). Pixel coordinates use the half-pixel center convention."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cam = pts @ self.rotation.T + self.translation
        z = cam[:, 2]
        uvw = cam @ self.intrinsics.T
        uv = uvw[:, :2] / z[:, None]
        return uv, z


def camera_origin(camera: Camera) -> np.ndarray:
    """Camera center in world coordinates (translation part of T^-1)."""
    R = camera.rotation
    t = camera.translation
    return -R.T @ t


def look_at_extrinsics(position, target, up=WORLD_UP) -> np.ndarray:
    """World-to-camera 4x4 for a camera at ``position`` looking at ``target``.

    Roll is zeroed against ``up``. Raises if position and target coincide or
    the view direction is parallel to ``up``.
    """
    p = np.asarray(position, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    fwd = g - p
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("look-at target coincides with camera position")
    fwd = fwd / norm
    right = np.cross(fwd, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise ValueError("view direction is parallel to the up vector")
    right = right / rnorm
    down = np.cross(fwd, right)
    R_pose = np.stack([right, down, fwd], axis=1)  # camera axes as columns
    T = np.eye(4)
    T[:3, :3] = R_pose.T
    T[:3, 3] = -R_pose.T @ p
    return T


@dataclass(frozen=True)
class EmbeddingConfig:
    """Fourier frequency counts for origin / ray / point embeddings.

    Frequencies are equally spaced in [1, max_freq / 2]; a single-frequency
    band uses frequency 1.
    """

    m_origin: int = 16
    m_ray: int = 16
    m_point: int = 16
    max_freq: float = 64.0

    def frequencies(self, m: int) -> np.ndarray:
        if m < 1:
            raise ValueError("frequency count must be >= 1")
        if m == 1:
            return np.array([1.0])
        return np.linspace(1.0, self.max_freq / 2.0, m)

    def width(self, dims: int, m: int) -> int:
        return dims * (1 + 2 * m)

    @property
    def ray_query_width(self) -> int:
        return self.width(3, self.m_origin) + self.width(3, self.m_ray)

    @property
    def vol_query_width(self) -> int:
        return self.width(3, self.m_origin) + self.width(3, self.m_point)


@dataclass
class RayBundle:
    """Rays through selected pixels of one camera. Directions are unit."""

    origin: np.ndarray      # (3,)
    directions: np.ndarray  # (N, 3)
    pixels: np.ndarray      # (N, 2) integer (u, v)
    camera_id: int = 0


def pixel_rays(camera: Camera, pixels, camera_id: int = 0) -> RayBundle:
    """World-space unit rays through the centers of the given pixels.

    ``pixels`` is an (N, 2) array of integer (u, v) = (column, row) pairs
    inside the image bounds.
    """
    px = np.atleast_2d(np.asarray(pixels))
    if px.shape[1] != 2:
        raise ValueError(f"pixels must be (N, 2), got {px.shape}")
    u, v = px[:, 0], px[:, 1]
    if np.any(u < 0) or np.any(u >= camera.width) or np.any(v < 0) or np.any(v >= camera.height):
        raise ValueError("pixel coordinates outside image bounds")
    KR = camera.intrinsics @ camera.rotation
    try:
        KR_inv = np.linalg.inv(KR)
    except np.linalg.LinAlgError as e:
        raise ValueError("singular K*R, camera cannot generate rays") from e
    homog = np.stack(
        [u + 0.5, v + 0.5, np.ones_like(u, dtype=np.float64)], axis=1
    )
    dirs = homog @ KR_inv.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return RayBundle(camera_origin(camera), dirs, px, camera_id)


def full_pixel_grid(camera: Camera) -> np.ndarray:
    """All (u, v) pixel pairs of the camera, row-major raster order."""
    vv, uu = np.mgrid[0 : camera.height, 0 : camera.width]
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def linspace_depths(d_min: float, d_max: float, k: int) -> np.ndarray:
    """K depth values linearly spanning [d_min, d_max]; K=1 gives the
    midpoint."""
    if k < 1:
        raise ValueError("depth sample count must be >= 1")
    if not (0 < d_min < d_max):
        raise ValueError(f"need 0 < d_min < d_max, got [{d_min}, {d_max}]")
    if k == 1:
        return np.array([(d_min + d_max) / 2.0])
    return np.linspace(d_min, d_max, k)


def points_along_ray(origin, directions, depths) -> np.ndarray:
    """x = origin + z * direction, broadcast over rays and depth samples.

    directions (N, 3) with depths (N, K) -> (N, K, 3); a single (3,)
    direction with (K,) depths -> (K, 3).
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    z = np.asarray(depths, dtype=np.float64)
    if d.ndim == 1:
        return o + z[..., None] * d
    return o + z[..., None] * d[:, None, :]


def fourier_encode(x, m: int, max_freq: float = 64.0) -> np.ndarray:
    """Per scalar dimension emit [x, sin(f1 pi x), cos(f1 pi x), ...,
    sin(fM pi x), cos(fM pi x)], concatenated across dimensions.

    Input (..., D) maps to (..., D * (1 + 2 m)).
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("fourier_encode requires finite inputs")
    scalar_in = arr.ndim == 0
    if scalar_in:
        arr = arr.reshape(1)
    if m == 1:
        freqs = np.array([1.0])
    else:
        freqs = np.linspace(1.0, max_freq / 2.0, m)
    ang = arr[..., None] * (np.pi * freqs)  # (..., D, M)
    sc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., D, M, 2)
    sc = sc.reshape(*arr.shape, 2 * m)
    out = np.concatenate([arr[..., None], sc], axis=-1)  # (..., D, 1 + 2M)
    return out.reshape(*arr.shape[:-1], arr.shape[-1] * (1 + 2 * m))


def make_ray_embedding(camera: Camera, pixels, config: EmbeddingConfig) -> np.ndarray:
    """Query rows for ray-indexed decoding: encode(origin) ++ encode(dir).

    One row per pixel, width 3*(1+2*m_origin) + 3*(1+2*m_ray).
    """
    bundle = pixel_rays(camera, pixels)
    n = bundle.directions.shape[0]
    e_o = fourier_encode(bundle.origin, config.m_origin, config.max_freq)
    e_r = fourier_encode(bundle.directions, config.m_ray, config.max_freq)
    return np.concatenate([np.tile(e_o, (n, 1)), e_r], axis=1)


def make_vol_embedding(
    camera: Camera, pixels, depths, config: EmbeddingConfig
) -> np.ndarray:
    """Query rows for volumetric decoding: encode(origin) ++ encode(point).

    ``depths`` is (N, K) per-pixel sample depths (or (K,), shared). Rows are
    ordered pixel-major: all K samples of pixel 0, then pixel 1, ...
    """
    bundle = pixel_rays(camera, pixels)
    n = bundle.directions.shape[0]
    z = np.asarray(depths, dtype=np.float64)
    if z.ndim == 1:
        z = np.broadcast_to(z, (n, z.shape[0]))
    if z.shape[0] != n:
        raise ValueError(f"depths rows {z.shape[0]} != pixel count {n}")
    k = z.shape[1]
    pts = points_along_ray(bundle.origin, bundle.directions, z)  # (N, K, 3)
    e_x = fourier_encode(pts.reshape(n * k, 3), config.m_point, config.max_freq)
    e_o = fourier_encode(bundle.origin, config.m_origin, config.max_freq)
    return np.concatenate([np.tile(e_o, (n * k, 1)), e_x], axis=1)
