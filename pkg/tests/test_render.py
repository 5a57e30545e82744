import numpy as np
import pytest

from oracles import raymarch_render
from splatplan.errors import BehindCamera
from splatplan.geometry import (
    CameraIntrinsics,
    GaussianPrimitive,
    Pose,
    SplatModel,
    apply_rigid_transform,
    logit,
    look_at,
    quat_to_matrix,
)
from splatplan.render import RenderConfig, project_gaussian, render

OPAQUE = 40.0  # sigmoid(40) rounds to 1.0 in float64


def axis_camera(dist=2.0, size=65):
    # odd size puts a pixel center exactly on the optical axis
    intr = CameraIntrinsics(size, size, 100.0, 100.0, size / 2.0, size / 2.0)
    pose = look_at((0, 0, dist), (0, 0, 0), up=(0, 1, 0))
    return pose, intr


def on_axis_primitive(depth_from_cam, color, opacity_logit, scale=0.1, cam_dist=2.0):
    return GaussianPrimitive(
        (0, 0, cam_dist - depth_from_cam), (scale,) * 3, (1, 0, 0, 0), opacity_logit, color
    )


def random_scene(rng, n=10):
    prims = []
    for _ in range(n):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        prims.append(
            GaussianPrimitive(
                mean=rng.uniform(-0.25, 0.25, 3),
                scale=rng.uniform(0.04, 0.09, 3),
                rotation=q,
                opacity_logit=float(logit(rng.uniform(0.3, 0.9))),
                color=rng.uniform(0, 1, 3),
            )
        )
    return SplatModel.from_primitives(prims)


# -------------------------------------------------------------- trivial cases

def test_single_opaque_splat_center_pixel():
    pose, intr = axis_camera()
    model = SplatModel.from_primitives([on_axis_primitive(2.0, (0.3, 0.6, 0.9), OPAQUE)])
    out = render(model, pose, intr)
    c = intr.height // 2
    np.testing.assert_allclose(out.color[c, c], (0.3, 0.6, 0.9), atol=1e-9)
    prof = out.profile(c, c)
    assert len(prof) == 1
    assert prof.weights[0] == pytest.approx(1.0, abs=1e-12)
    assert prof.depths[0] == pytest.approx(2.0, abs=1e-9)


def test_two_aligned_primitives_alpha_half():
    pose, intr = axis_camera()
    half = float(logit(0.5))
    c1, c2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    model = SplatModel.from_primitives(
        [on_axis_primitive(1.5, c1, half), on_axis_primitive(2.5, c2, half)]
    )
    out = render(model, pose, intr)
    c = intr.height // 2
    np.testing.assert_allclose(out.color[c, c], 0.5 * c1 + 0.25 * c2, atol=1e-9)
    prof = out.profile(c, c)
    np.testing.assert_allclose(prof.weights, [0.5, 0.25], atol=1e-9)
    prof.validate()


def test_empty_model():
    pose, intr = axis_camera()
    out = render(None, pose, intr)
    assert np.all(out.color == 0)
    assert np.all(out.alpha == 0)
    assert np.all(out.profile_lengths() == 0)


def test_behind_camera_entries_skipped():
    pose, intr = axis_camera(dist=2.0)
    model = SplatModel.from_primitives(
        [
            on_axis_primitive(2.0, (1, 0, 0), OPAQUE),
            on_axis_primitive(-1.0, (0, 1, 0), OPAQUE),  # behind the camera
        ]
    )
    out = render(model, pose, intr)
    c = intr.height // 2
    np.testing.assert_allclose(out.color[c, c], (1, 0, 0), atol=1e-9)


# ------------------------------------------------------------ project_gaussian

def test_project_isotropic_footprint():
    pose, intr = axis_camera(dist=2.0)
    p = GaussianPrimitive((0, 0, 0), (1, 1, 1), (1, 0, 0, 0), 0.0, (1, 1, 1))
    mean2d, cov2d, depth = project_gaussian(p, pose, intr)
    assert depth == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(cov2d, np.diag([2500.0, 2500.0]), rtol=1e-9)  # (fx/z)^2


def test_project_behind_camera_raises():
    pose, intr = axis_camera(dist=2.0)
    p = GaussianPrimitive((0, 0, 3.0), (1, 1, 1), (1, 0, 0, 0), 0.0, (1, 1, 1))
    with pytest.raises(BehindCamera):
        project_gaussian(p, pose, intr)


def test_project_principal_point():
    pose, intr = axis_camera(dist=2.0)
    p = GaussianPrimitive((0, 0, 0), (0.1, 0.1, 0.1), (1, 0, 0, 0), 0.0, (1, 1, 1))
    mean2d, _, _ = project_gaussian(p, pose, intr)
    np.testing.assert_allclose(mean2d, (intr.cx, intr.cy), atol=1e-12)


def test_eigen_floor_applied():
    pose, intr = axis_camera(dist=2.0)
    p = GaussianPrimitive((0, 0, 0), (1e-4, 1e-4, 1e-4), (1, 0, 0, 0), 0.0, (1, 1, 1))
    _, cov2d, _ = project_gaussian(p, pose, intr)
    assert np.linalg.eigvalsh(cov2d).min() >= 0.3 - 1e-12


# -------------------------------------------------------------- ray-march oracle

def test_render_matches_raymarch_oracle():
    intr = CameraIntrinsics(64, 64, 100.0, 100.0, 32.0, 32.0)
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        model = random_scene(rng, n=10)
        eye = rng.uniform(-0.5, 0.5, 3) + np.array([0, 0, 2.2])
        pose = look_at(eye, (0, 0, 0), up=(0, 1, 0))
        ours = render(model, pose, intr)
        oracle = raymarch_render(model, pose, intr, step=1e-3)
        assert np.max(np.abs(ours.color - oracle)) < 2e-2


# ------------------------------------------------------------------ invariants

def test_weight_transmittance_identity():
    intr = CameraIntrinsics(32, 32, 50.0, 50.0, 16.0, 16.0)
    rng = np.random.default_rng(42)
    model = random_scene(rng, n=12)
    pose = look_at((0.3, -0.4, 2.0), (0, 0, 0), up=(0, 1, 0))
    out = render(model, pose, intr)
    np.testing.assert_allclose(out.alpha + out.transmittance, 1.0, atol=1e-9)
    assert np.all(out.alpha <= 1.0 + 1e-12)


def test_permutation_invariance():
    intr = CameraIntrinsics(32, 32, 50.0, 50.0, 16.0, 16.0)
    rng = np.random.default_rng(8)
    model = random_scene(rng, n=10)
    perm = rng.permutation(10)
    shuffled = SplatModel(
        model.means[perm], model.scales[perm], model.rotations[perm],
        model.opacity_logits[perm], model.colors[perm],
    )
    pose = look_at((0.2, 0.1, 2.0), (0, 0, 0), up=(0, 1, 0))
    a = render(model, pose, intr)
    b = render(shuffled, pose, intr)
    np.testing.assert_allclose(a.color, b.color, atol=1e-9)
    np.testing.assert_allclose(a.depth, b.depth, atol=1e-9)
    np.testing.assert_allclose(a.alpha, b.alpha, atol=1e-9)
    np.testing.assert_allclose(a.entry_depths, b.entry_depths, atol=1e-9)
    np.testing.assert_allclose(a.entry_weights, b.entry_weights, atol=1e-9)


def test_rigid_invariance():
    intr = CameraIntrinsics(32, 32, 50.0, 50.0, 16.0, 16.0)
    rng = np.random.default_rng(9)
    model = random_scene(rng, n=8)
    pose = look_at((0.1, -0.2, 2.1), (0, 0, 0), up=(0, 1, 0))
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    motion = Pose(quat_to_matrix(q), rng.uniform(-1, 1, 3))
    a = render(model, pose, intr)
    b = render(apply_rigid_transform(model, motion), motion.compose(pose), intr)
    np.testing.assert_allclose(a.color, b.color, atol=1e-6)
    np.testing.assert_allclose(a.alpha, b.alpha, atol=1e-6)


def test_profiles_sorted_and_valid():
    intr = CameraIntrinsics(32, 32, 50.0, 50.0, 16.0, 16.0)
    rng = np.random.default_rng(10)
    model = random_scene(rng, n=15)
    pose = look_at((0, 0.3, 2.0), (0, 0, 0), up=(0, 1, 0))
    out = render(model, pose, intr)
    checked = 0
    for row in range(0, 32, 5):
        for col in range(0, 32, 5):
            prof = out.profile(row, col)
            if len(prof):
                prof.validate()
                checked += 1
    assert checked > 0


def test_min_weight_prunes_profiles_not_alpha():
    pose, intr = axis_camera()
    half = float(logit(0.5))
    model = SplatModel.from_primitives(
        [on_axis_primitive(1.5, (1, 0, 0), OPAQUE), on_axis_primitive(2.5, (0, 1, 0), half)]
    )
    out = render(model, pose, intr, RenderConfig(min_weight=0.01))
    c = intr.height // 2
    prof = out.profile(c, c)
    assert len(prof) == 1  # the fully occluded entry has weight 0 < min_weight
    assert out.alpha[c, c] == pytest.approx(1.0, abs=1e-12)


def test_printed_difference_weight_form():
    pose, intr = axis_camera()
    half = float(logit(0.5))
    model = SplatModel.from_primitives(
        [on_axis_primitive(1.5, (1, 0, 0), half), on_axis_primitive(2.5, (0, 1, 0), half)]
    )
    out = render(model, pose, intr, RenderConfig(weight_form="printed_difference"))
    c = intr.height // 2
    prof = out.profile(c, c)
    # blend weights are (0.5, 0.25); printed differences are (0.5-1, 0.25-0.5)
    np.testing.assert_allclose(prof.weights, [-0.5, -0.25], atol=1e-9)
