"""View synthesis, warping, SSIM, multi-context photometric, virtual loss."""

import numpy as np
import pytest

from trifield import tensor as tt
from trifield.geometry import Camera
from trifield.losses import (
    LossComponents,
    LossConfig,
    multi_context_photometric,
    photometric_loss,
    ssim,
    synthesize_view,
    total_loss,
    view_synthesis_loss,
    virtual_loss,
    warp_coordinates,
)
from trifield.sampling import StrideSpec, strided_subview
from trifield.tensor import Tensor, finite_difference, gradient, reset_graph


def make_camera(R=None, t=None, K=None, w=8, h=8):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    if K is None:
        K = np.array([[4.0, 0, w / 2], [0, 4.0, h / 2], [0, 0, 1.0]])
    return Camera(K, T, w, h)


def random_rotation(rng, scale=0.2):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-scale, scale)
    K = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def scalar_ssim_oracle(a, b, c1=0.01**2, c2=0.03**2):
    """3x3 sliding-window SSIM with reflect padding, plain loops."""
    h, w, ch = a.shape
    out = np.zeros((h, w))

    def reflect(i, n):
        if i < 0:
            return -i
        if i >= n:
            return 2 * (n - 1) - i
        return i

    for y in range(h):
        for x in range(w):
            per_channel = []
            for c in range(ch):
                wa, wb = [], []
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        wa.append(a[reflect(y + dy, h), reflect(x + dx, w), c])
                        wb.append(b[reflect(y + dy, h), reflect(x + dx, w), c])
                wa, wb = np.array(wa), np.array(wb)
                mu_a, mu_b = wa.mean(), wb.mean()
                var_a = (wa * wa).mean() - mu_a**2
                var_b = (wb * wb).mean() - mu_b**2
                cov = (wa * wb).mean() - mu_a * mu_b
                per_channel.append(
                    (2 * mu_a * mu_b + c1) * (2 * cov + c2)
                    / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
                )
            out[y, x] = np.mean(per_channel)
    return out


# -- view synthesis loss ---------------------------------------------------------


def test_mse_identical_is_zero():
    img = np.random.default_rng(0).uniform(size=(4, 4, 3))
    assert float(view_synthesis_loss(Tensor(img), img).data) == 0.0


def test_mse_zeros_vs_ones():
    assert float(
        view_synthesis_loss(Tensor(np.zeros((3, 3, 3))), np.ones((3, 3, 3))).data
    ) == pytest.approx(1.0)


def test_mse_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="mismatch"):
        view_synthesis_loss(Tensor(np.zeros((2, 2, 3))), np.zeros((3, 3, 3)))


def test_mse_gradient_check():
    rng = np.random.default_rng(1)
    target = rng.uniform(size=(3, 3, 3))
    pred = Tensor(rng.uniform(size=(3, 3, 3)), requires_grad=True)
    analytic = gradient(view_synthesis_loss(pred, target), pred)
    numeric = finite_difference(
        lambda p: view_synthesis_loss(p, target), pred, 1e-6
    )
    err = np.max(np.abs(analytic.data - numeric.data) / (np.abs(numeric.data) + 1e-8))
    assert err < 1e-4
    reset_graph()


# -- warping -----------------------------------------------------------------------


def test_warp_identity_pose():
    cam = make_camera()
    uv = np.array([[2.5, 3.5], [0.5, 0.5]])
    d = Tensor([1.7, 3.2])
    u2, v2, d2 = warp_coordinates(cam, cam, uv, d)
    np.testing.assert_allclose(u2.data, uv[:, 0], atol=1e-12)
    np.testing.assert_allclose(v2.data, uv[:, 1], atol=1e-12)
    np.testing.assert_allclose(d2.data, d.data, atol=1e-12)


def test_warp_pure_translation_arithmetic():
    # identity intrinsics, context shifted 4m along z: pixel (2,0) at depth 4
    # lands at (1,0) with doubled depth
    K = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    target = Camera(K, np.eye(4), 4, 4)
    T_ctx = np.eye(4)
    T_ctx[:3, 3] = [0, 0, 4.0]
    context = Camera(K, T_ctx, 4, 4)
    u2, v2, d2 = warp_coordinates(target, context, np.array([[2.0, 0.0]]), Tensor([4.0]))
    assert d2.data[0] == pytest.approx(8.0)
    assert u2.data[0] == pytest.approx(1.0)
    assert v2.data[0] == pytest.approx(0.0)


def test_warp_matches_lift_transform_project_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        target = make_camera(
            R=random_rotation(rng), t=rng.normal(size=3) * 0.2, w=16, h=16,
            K=np.array([[7.0, 0, 8.0], [0, 6.0, 8.0], [0, 0, 1.0]]),
        )
        context = make_camera(
            R=random_rotation(rng), t=rng.normal(size=3) * 0.2, w=16, h=16,
            K=np.array([[9.0, 0, 7.5], [0, 8.0, 8.5], [0, 0, 1.0]]),
        )
        uv = rng.uniform(0, 16, size=(5, 2))
        depth = rng.uniform(1.0, 5.0, size=5)
        u2, v2, d2 = warp_coordinates(target, context, uv, Tensor(depth))
        # oracle: lift to target camera frame, move to world, then project
        K_t_inv = np.linalg.inv(target.intrinsics)
        for i in range(5):
            p_cam_t = K_t_inv @ np.array([uv[i, 0], uv[i, 1], 1.0]) * depth[i]
            R_t, t_t = target.rotation, target.translation
            p_world = R_t.T @ (p_cam_t - t_t)
            uv_p, z_p = context.project(p_world[None, :])
            assert abs(u2.data[i] - uv_p[0, 0]) < 1e-9
            assert abs(v2.data[i] - uv_p[0, 1]) < 1e-9
            assert abs(d2.data[i] - z_p[0]) < 1e-9


def test_warp_rejects_non_positive_depth():
    cam = make_camera()
    with pytest.raises(ValueError, match="positive"):
        warp_coordinates(cam, cam, np.array([[1.0, 1.0]]), Tensor([0.0]))


# -- bilinear sampling --------------------------------------------------------------


def test_bilinear_integer_coordinates_exact():
    rng = np.random.default_rng(3)
    img = rng.uniform(size=(5, 6, 3))
    out, valid = synthesize_view(img, Tensor([2.0, 0.0]), Tensor([3.0, 4.0]))
    assert valid.all()
    np.testing.assert_allclose(out.data[0], img[3, 2], atol=1e-15)
    np.testing.assert_allclose(out.data[1], img[4, 0], atol=1e-15)


def test_bilinear_halfway_average():
    img = np.zeros((2, 2, 3))
    img[0, 0] = [0.2, 0.4, 0.6]
    img[0, 1] = [0.4, 0.6, 0.8]
    out, valid = synthesize_view(img, Tensor([0.5]), Tensor([0.0]))
    np.testing.assert_allclose(out.data[0], [0.3, 0.5, 0.7], atol=1e-15)


def test_bilinear_outside_is_invalid():
    img = np.zeros((4, 4, 3))
    _, valid = synthesize_view(img, Tensor([-0.1, 3.5, 1.0]), Tensor([1.0, 1.0, 4.2]))
    np.testing.assert_array_equal(valid, [False, False, False])


def test_bilinear_gradient_through_coordinates():
    rng = np.random.default_rng(4)
    img = rng.uniform(size=(6, 6, 3))
    x = Tensor(rng.uniform(0.5, 4.4, size=4), requires_grad=True)
    y = Tensor(rng.uniform(0.5, 4.4, size=4), requires_grad=True)

    def loss_fn(ts):
        out, _ = synthesize_view(img, ts[0], ts[1])
        return (out * out).sum()

    analytic = gradient(loss_fn([x, y]), [x, y])
    numeric = finite_difference(loss_fn, [x, y], 1e-6)
    for a, n in zip(analytic, numeric):
        err = np.max(np.abs(a.data - n.data) / (np.abs(n.data) + 1e-8))
        assert err < 1e-4
    reset_graph()


# -- SSIM ---------------------------------------------------------------------------


def test_ssim_self_is_one():
    img = np.random.default_rng(5).uniform(size=(6, 7, 3))
    out = ssim(img, img)
    np.testing.assert_allclose(out.data, 1.0, atol=1e-9)


def test_ssim_symmetric():
    rng = np.random.default_rng(6)
    a, b = rng.uniform(size=(5, 5, 3)), rng.uniform(size=(5, 5, 3))
    np.testing.assert_allclose(ssim(a, b).data, ssim(b, a).data, atol=1e-12)


def test_ssim_constant_images_closed_form():
    c1, c2 = 0.01**2, 0.03**2
    mu_a, mu_b = 0.3, 0.8
    a = np.full((4, 4, 3), mu_a)
    b = np.full((4, 4, 3), mu_b)
    expect = (2 * mu_a * mu_b + c1) * c2 / ((mu_a**2 + mu_b**2 + c1) * c2)
    np.testing.assert_allclose(ssim(a, b).data, expect, atol=1e-12)


def test_ssim_matches_scalar_sliding_window_oracle():
    rng = np.random.default_rng(7)
    a = rng.uniform(size=(8, 8, 3))
    b = np.clip(a + rng.normal(scale=0.1, size=(8, 8, 3)), 0, 1)
    np.testing.assert_allclose(ssim(a, b).data, scalar_ssim_oracle(a, b), atol=1e-10)


def test_ssim_rejects_even_window():
    with pytest.raises(ValueError, match="odd"):
        ssim(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), window=2)


# -- photometric loss ------------------------------------------------------------------


def test_photometric_identical_zero():
    img = np.random.default_rng(8).uniform(size=(6, 6, 3))
    out = photometric_loss(img, img, alpha=0.85)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_photometric_alpha_zero_pure_l1():
    rng = np.random.default_rng(9)
    a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
    out = photometric_loss(a, b, alpha=0.0)
    np.testing.assert_allclose(out.data, np.abs(a - b).mean(axis=2), atol=1e-12)


def test_photometric_matches_composed_oracle():
    rng = np.random.default_rng(10)
    a = rng.uniform(size=(8, 8, 3))
    b = np.clip(a + rng.normal(scale=0.2, size=(8, 8, 3)), 0, 1)
    out = photometric_loss(a, b, alpha=0.85)
    expect = 0.85 * (1 - scalar_ssim_oracle(a, b)) / 2 + 0.15 * np.abs(a - b).mean(axis=2)
    np.testing.assert_allclose(out.data, expect, atol=1e-10)


def test_photometric_bounds():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = rng.uniform(size=(5, 5, 3))
        b = rng.uniform(size=(5, 5, 3))
        out = photometric_loss(a, b, alpha=0.85).data
        assert np.all(out >= -1e-12) and np.all(out <= 1.0 + 1e-12)


# -- multi-context ---------------------------------------------------------------------


def _subview_of(camera, image, stride=1):
    return strided_subview(camera, image, StrideSpec(stride, stride, 0, 0))


def test_multi_context_identity_pose_zero():
    rng = np.random.default_rng(12)
    img = rng.uniform(size=(8, 8, 3))
    cam = make_camera()
    sub = _subview_of(cam, img)
    depth = Tensor(np.full((8, 8), 2.0), requires_grad=True)
    cfg = LossConfig()
    loss = multi_context_photometric(sub, [(img, cam)], depth, cfg)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)
    reset_graph()


def test_multi_context_requires_contexts():
    cam = make_camera()
    sub = _subview_of(cam, np.zeros((8, 8, 3)))
    with pytest.raises(ValueError, match="context"):
        multi_context_photometric(sub, [], Tensor(np.ones((8, 8))), LossConfig())


def test_automask_drops_static_pixels():
    # identical target and context with identity pose: unwarped loss 0 is
    # never beaten, every pixel is masked, the loss is exactly zero
    rng = np.random.default_rng(13)
    img = rng.uniform(size=(8, 8, 3))
    cam = make_camera()
    sub = _subview_of(cam, img)
    bad_depth = Tensor(np.full((8, 8), 1.3))  # wrong depth, same image
    cfg = LossConfig()
    loss = multi_context_photometric(sub, [(img, cam)], bad_depth, cfg)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)


def test_min_reprojection_selects_best_context():
    # context A = correct warp source; context B = garbage. the per-pixel
    # min must match the single-good-context loss exactly.
    rng = np.random.default_rng(14)
    img = rng.uniform(size=(8, 8, 3))
    cam = make_camera()
    sub = _subview_of(cam, img)
    depth = Tensor(np.full((8, 8), 2.0))
    garbage = rng.uniform(size=(8, 8, 3))
    cfg = LossConfig(use_automask=False)
    good = multi_context_photometric(sub, [(img, cam)], depth, cfg)
    both = multi_context_photometric(sub, [(img, cam), (garbage, cam)], depth, cfg)
    np.testing.assert_allclose(both.data, good.data, atol=1e-12)


def test_min_reprojection_per_pixel_exhaustive_oracle():
    # two shifted contexts; verify the min loss map pixel by pixel
    rng = np.random.default_rng(15)
    h = w = 8
    img = rng.uniform(size=(h, w, 3))
    cam = make_camera()
    sub = _subview_of(cam, img)
    depth = Tensor(np.full((h, w), 2.0))
    ctx_a = np.clip(img + rng.normal(scale=0.05, size=img.shape), 0, 1)
    ctx_b = np.clip(img + rng.normal(scale=0.3, size=img.shape), 0, 1)
    cfg = LossConfig(use_automask=False)
    combined = multi_context_photometric(sub, [(ctx_a, cam), (ctx_b, cam)], depth, cfg)
    la = photometric_loss(img, ctx_a, alpha=cfg.alpha).data
    lb = photometric_loss(img, ctx_b, alpha=cfg.alpha).data
    expect = np.minimum(la, lb).mean()
    np.testing.assert_allclose(float(combined.data), expect, atol=1e-12)


def test_photometric_gradient_reaches_depth():
    rng = np.random.default_rng(16)
    # textured context, shifted camera: gradient w.r.t. depth is nonzero
    img = rng.uniform(size=(12, 12, 3))
    cam_t = make_camera(w=12, h=12)
    cam_c = make_camera(t=[0.3, 0.0, 0.0], w=12, h=12)
    sub = _subview_of(cam_t, img)
    cfg = LossConfig(use_automask=False)
    depth = Tensor(np.full((12, 12), 2.0), requires_grad=True)

    def loss_fn(d):
        return multi_context_photometric(sub, [(img, cam_c)], d, cfg)

    analytic = gradient(loss_fn(depth), depth)
    assert np.any(analytic.data != 0)
    numeric = finite_difference(loss_fn, depth, 1e-4)
    denom = np.abs(numeric.data) + 1e-6
    assert np.max(np.abs(analytic.data - numeric.data) / denom) < 2e-3
    reset_graph()


# -- virtual loss -----------------------------------------------------------------------


def test_virtual_loss_identical_zero():
    rng = np.random.default_rng(17)
    img = rng.uniform(size=(5, 3))
    d = rng.uniform(1, 4, size=5)
    out = virtual_loss(Tensor(img), Tensor(d), Tensor(img), Tensor(d))
    assert float(out.data) == pytest.approx(0.0, abs=1e-12)


def test_virtual_loss_log_ratio_term():
    d = np.full(6, 2.0)
    img = np.zeros((6, 3))
    out = virtual_loss(Tensor(img), Tensor(d), Tensor(img), Tensor(d * np.e))
    assert float(out.data) == pytest.approx(1.0, rel=1e-12)


def test_virtual_loss_detaches_radiance_side():
    rng = np.random.default_rng(18)
    r_img = Tensor(rng.uniform(size=(4, 3)), requires_grad=True)
    r_d = Tensor(rng.uniform(1, 3, size=4), requires_grad=True)
    l_img = Tensor(rng.uniform(size=(4, 3)), requires_grad=True)
    f_d = Tensor(rng.uniform(1, 3, size=4), requires_grad=True)
    loss = virtual_loss(r_img, r_d, l_img, f_d)
    g_r_img, g_r_d, g_l, g_f = gradient(loss, [r_img, r_d, l_img, f_d])
    np.testing.assert_array_equal(g_r_img.data, 0.0)
    np.testing.assert_array_equal(g_r_d.data, 0.0)
    assert np.any(g_l.data != 0)
    assert np.any(g_f.data != 0)
    reset_graph()


def test_virtual_loss_rejects_non_positive_depth():
    with pytest.raises(ValueError, match="positive"):
        virtual_loss(
            Tensor(np.zeros((2, 3))), Tensor([1.0, -0.5]),
            Tensor(np.zeros((2, 3))), Tensor([1.0, 1.0]),
        )


# -- total loss --------------------------------------------------------------------------


def test_total_loss_zero_alpha_p_drops_photometric():
    comps = LossComponents(
        view_synthesis=Tensor(1.0),
        photometric_vol=Tensor(100.0),
        photometric_field=Tensor(100.0),
        light_mse=Tensor(2.0),
        virtual=Tensor(4.0),
    )
    out = total_loss(comps, alpha_p_eff=0.0, alpha_v=0.5)
    assert float(out.data) == pytest.approx(1.0 + 2.0 + 0.5 * 4.0)


def test_total_loss_all_zero():
    comps = LossComponents(
        view_synthesis=Tensor(0.0), photometric_vol=Tensor(0.0),
        photometric_field=Tensor(0.0), light_mse=Tensor(0.0), virtual=Tensor(0.0),
    )
    assert float(total_loss(comps, 0.1, 0.5).data) == 0.0


def test_total_loss_linearity():
    comps = LossComponents(
        view_synthesis=Tensor(1.0), photometric_vol=Tensor(2.0),
        photometric_field=Tensor(3.0), light_mse=Tensor(4.0), virtual=Tensor(5.0),
    )
    out = total_loss(comps, alpha_p_eff=0.08, alpha_v=0.5)
    assert float(out.data) == pytest.approx(1 + 0.08 * (2 + 3) + 4 + 0.5 * 5)
