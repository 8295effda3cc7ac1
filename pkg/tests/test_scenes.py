"""Synthetic box scenes: analytic RGB-D, intersection oracle, file format."""

import numpy as np
import pytest

from trifield.geometry import Camera, camera_origin, full_pixel_grid, pixel_rays
from trifield.losses import LossConfig, multi_context_photometric, synthesize_view, warp_coordinates
from trifield.sampling import StrideSpec, strided_subview
from trifield.scenes import (
    BoxSceneConfig,
    Scene,
    SceneFormatError,
    WallTexture,
    generate_box_scene,
    load_scene,
    ray_box_depth,
    ray_box_exit,
    save_scene,
    shade_points,
)
from trifield.tensor import Tensor, reset_graph

DESK = BoxSceneConfig()


def small_config(**kw):
    kw.setdefault("n_train", 3)
    kw.setdefault("n_test", 1)
    kw.setdefault("height", 24)
    kw.setdefault("width", 32)
    kw.setdefault("focal", 28.0)
    return BoxSceneConfig(**kw)


# -- intersection oracle -------------------------------------------------------


def test_axis_ray_depth():
    d = ray_box_depth([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], (2.0, 2.0, 3.0))
    assert d == pytest.approx(3.0)


def test_diagonal_ray_z_depth():
    # 45 degrees in xz toward the wall at x=2: z-depth 2, euclidean 2*sqrt(2)
    inv = 1.0 / np.sqrt(2.0)
    d = ray_box_depth([0.0, 0.0, 0.0], [inv, 0.0, inv], (2.0, 5.0, 5.0))
    assert d == pytest.approx(2.0)


def test_origin_outside_rejected():
    with pytest.raises(ValueError, match="outside"):
        ray_box_depth([3.0, 0.0, 0.0], [0.0, 0.0, 1.0], (2.0, 2.0, 2.0))


def test_exit_points_lie_on_box_faces():
    rng = np.random.default_rng(0)
    half = np.array([1.0, 1.2, 0.8])
    origin = rng.uniform(-0.5, 0.5, 3)
    dirs = rng.normal(size=(10_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, face = ray_box_exit(origin, dirs, half)
    pts = origin + t[:, None] * dirs
    residual = np.min(np.abs(np.abs(pts) - half), axis=1)
    assert np.max(residual) < 1e-9
    assert np.all(np.abs(pts) <= half + 1e-9)


def test_unit_direction_required():
    with pytest.raises(ValueError, match="unit"):
        ray_box_depth([0.0, 0.0, 0.0], [0.0, 0.0, 2.0], (1.0, 1.0, 1.0))


# -- generation -----------------------------------------------------------------


def test_center_camera_wall_depth():
    # camera at the box center looking straight at the wall 2m ahead: the
    # center-pixel z-depth equals the wall distance by the depth convention
    cfg = small_config(half_extents=(1.5, 1.5, 2.0), cluster_center=(0, 0, 0),
                       position_jitter=0.0, angle_jitter_deg=0.0)
    scene = generate_box_scene(cfg, seed=1)
    depth = scene.frames[0].gt_depth
    np.testing.assert_allclose(depth[cfg.height // 2, cfg.width // 2], 2.0, atol=1e-6)


def test_scene_deterministic_per_seed():
    a = generate_box_scene(small_config(), seed=7)
    b = generate_box_scene(small_config(), seed=7)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.gt_depth, fb.gt_depth)
        assert np.array_equal(fa.camera.extrinsics, fb.camera.extrinsics)
    c = generate_box_scene(small_config(), seed=8)
    assert not np.array_equal(a.frames[0].image, c.frames[0].image)


def test_scene_splits_and_ranges():
    scene = generate_box_scene(small_config(), seed=2)
    assert len(scene.split_frames("train")) == 3
    assert len(scene.split_frames("test")) == 1
    for f in scene.frames:
        assert np.all(f.gt_depth >= scene.d_min)
        assert np.all(f.gt_depth <= scene.d_max)
        assert np.all((f.image >= 0) & (f.image <= 1))


def test_cluster_center_outside_room_rejected():
    with pytest.raises(ValueError, match="outside"):
        generate_box_scene(small_config(cluster_center=(5.0, 0, 0)), seed=0)


def test_warp_with_gt_depth_reproduces_other_frame():
    scene = generate_box_scene(
        small_config(height=48, width=64, focal=56.0), seed=3
    )
    fa, fb = scene.frames[0], scene.frames[1]
    h, w = fa.image.shape[:2]
    grid = full_pixel_grid(fa.camera).astype(np.float64) + 0.5
    depth = Tensor(fa.gt_depth.astype(np.float64).reshape(-1))
    u2, v2, d2 = warp_coordinates(fa.camera, fb.camera, grid, depth)
    synth, valid = synthesize_view(fb.image, u2 - 0.5, v2 - 0.5)
    valid &= d2.data > 0
    err = np.abs(synth.data - fa.image.reshape(-1, 3)).mean(axis=1)
    # convex room, continuous texture: no occlusions, interpolation error only
    assert valid.mean() > 0.5
    assert np.quantile(err[valid], 0.999) < 1e-2
    reset_graph()


def test_epipolar_consistency_all_pairs():
    scene = generate_box_scene(small_config(height=32, width=48, focal=36.0), seed=4)
    frames = scene.frames
    for i in range(len(frames)):
        for j in range(len(frames)):
            if i == j:
                continue
            fa, fb = frames[i], frames[j]
            grid = full_pixel_grid(fa.camera).astype(np.float64) + 0.5
            depth = Tensor(fa.gt_depth.astype(np.float64).reshape(-1))
            u2, v2, d2 = warp_coordinates(fa.camera, fb.camera, grid, depth)
            synth, valid = synthesize_view(fb.image, u2 - 0.5, v2 - 0.5)
            valid &= d2.data > 0
            err = np.abs(synth.data - fa.image.reshape(-1, 3)).mean(axis=1)
            assert np.quantile(err[valid], 0.99) < 1e-2
            reset_graph()


def test_gt_warp_drives_photometric_loss_small():
    scene = generate_box_scene(
        small_config(height=48, width=64, focal=56.0), seed=5
    )
    fa = scene.frames[0]
    contexts = [(f.image, f.camera) for f in scene.frames[1:3]]
    sub = strided_subview(fa.camera, fa.image, StrideSpec(1, 1, 0, 0))
    depth = Tensor(fa.gt_depth.astype(np.float64))
    cfg = LossConfig(use_automask=False)
    loss = multi_context_photometric(sub, contexts, depth, cfg)
    assert float(loss.data) < 1e-3
    reset_graph()


def test_per_wall_texture_override():
    red = WallTexture(color_a=(1, 0, 0), color_b=(1, 0, 0), noise_amp=0.0)
    cfg = small_config(textures={"z+": red})
    pts = np.array([[0.0, 0.0, 1.25]])
    color = shade_points(pts, np.array([5]), cfg)  # face index 5 is z+
    np.testing.assert_allclose(color[0], [1, 0, 0])


# -- container format ----------------------------------------------------------


def test_scene_roundtrip_bit_exact(tmp_path):
    scene = generate_box_scene(small_config(), seed=6)
    path = tmp_path / "scene.dlrs"
    save_scene(scene, path)
    loaded = load_scene(path)
    assert loaded.d_min == scene.d_min and loaded.d_max == scene.d_max
    assert len(loaded.frames) == len(scene.frames)
    for fa, fb in zip(scene.frames, loaded.frames):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.gt_depth, fb.gt_depth)
        assert np.array_equal(fa.camera.extrinsics, fb.camera.extrinsics)
        assert np.array_equal(fa.camera.intrinsics, fb.camera.intrinsics)
        assert fa.split == fb.split
    # double round-trip: identical bytes
    path2 = tmp_path / "scene2.dlrs"
    save_scene(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_scene_file_corruption_detected(tmp_path):
    scene = generate_box_scene(small_config(), seed=6)
    path = tmp_path / "scene.dlrs"
    save_scene(scene, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(SceneFormatError, match="checksum"):
        load_scene(path)


def test_scene_file_truncation_detected(tmp_path):
    scene = generate_box_scene(small_config(), seed=6)
    path = tmp_path / "scene.dlrs"
    save_scene(scene, path)
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(SceneFormatError):
        load_scene(path)


def test_scene_file_bad_magic(tmp_path):
    path = tmp_path / "junk.dlrs"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(SceneFormatError, match="magic"):
        load_scene(path)


def test_scene_file_version_gate(tmp_path):
    scene = generate_box_scene(small_config(), seed=6)
    path = tmp_path / "scene.dlrs"
    save_scene(scene, path)
    raw = bytearray(path.read_bytes())
    import struct, zlib

    struct.pack_into("<H", raw, 4, 99)  # bump major version
    payload = bytes(raw[:-4])
    raw[-4:] = struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    path.write_bytes(bytes(raw))
    with pytest.raises(SceneFormatError, match="version"):
        load_scene(path)
