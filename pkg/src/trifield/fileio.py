"""Binary PPM images, PFM float maps, and ASCII PLY point clouds."""

from __future__ import annotations

import numpy as np

from .geometry import Camera, full_pixel_grid, pixel_rays


def write_ppm(path, image) -> None:
    """8-bit binary PPM (P6) from an (H, W, 3) float image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"write_ppm expects (H, W, 3), got {img.shape}")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P6":
            raise ValueError(f"not a binary PPM file (magic {magic!r})")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(x) for x in line.split())
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.astype(np.float64).reshape(h, w, 3) / maxval


def write_pfm(path, values) -> None:
    """Grayscale PFM with little-endian scale -1.0. Rows are written
    bottom-to-top per the PFM convention."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"write_pfm expects a 2-d map, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(arr[::-1].tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM file")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 4), dtype=dtype)
    return data.reshape(h, w)[::-1].copy()


def write_ply(path, points, colors) -> None:
    """ASCII PLY with one vertex per point: x y z and 8-bit r g b."""
    pts = np.asarray(points, dtype=np.float64)
    col = np.round(np.clip(np.asarray(colors), 0.0, 1.0) * 255.0).astype(np.uint8)
    if pts.shape[0] != col.shape[0]:
        raise ValueError(f"{pts.shape[0]} points but {col.shape[0]} colors")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for p, c in zip(pts, col):
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}\n")


def export_point_cloud(path, camera: Camera, image, depth, mask=None) -> int:
    """Lift a rendered RGB-D frame to a world-space point cloud and write it
    as PLY. Returns how many vertices were written (pixels with valid
    depth)."""
    img = np.asarray(image).reshape(-1, 3)
    z = np.asarray(depth, dtype=np.float64).reshape(-1)
    valid = z > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool).reshape(-1)
    bundle = pixel_rays(camera, full_pixel_grid(camera))
    # z is camera-frame depth; scale rays so their forward component matches
    fwd = bundle.directions @ camera.forward
    t = np.zeros_like(z)
    t[valid] = z[valid] / fwd[valid]
    points = bundle.origin + t[:, None] * bundle.directions
    write_ply(path, points[valid], img[valid])
    return int(valid.sum())
