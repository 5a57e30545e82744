import numpy as np
import pytest

from splatplan.closed_loop import (
    Abort,
    Accept,
    ClosedLoopConfig,
    Correction,
    StateDescriptor,
    correct,
    discrepancy,
)
from splatplan.geometry import Pose, look_at, quat_to_matrix
from splatplan.simworld import NoiseConfig
from scipy.spatial.transform import Rotation

KAPPA_R = 0.65


def descriptor(pose, frac=0.95, omega=0.02):
    return StateDescriptor(
        camera_pose=pose, object_transform=Pose.identity(),
        captured_view_uncertainty=omega, target_visible_fraction=frac,
    )


def camera_at(angle_z_deg=0.0, offset=(0.0, 0.0, 0.0)):
    base = look_at((0.6, 0.1, 0.3), (0, 0, 0.1))
    r = Rotation.from_rotvec([0, 0, np.radians(angle_z_deg)]).as_matrix()
    return Pose(r @ base.rotation, base.translation + np.asarray(offset))


# ---------------------------------------------------------------- discrepancy

def test_identical_states():
    d = descriptor(camera_at())
    rot, trans, gap = discrepancy(d, d)
    assert rot == pytest.approx(0.0, abs=1e-5)  # arccos resolution near identity
    assert trans == 0.0
    assert gap == 0.0


def test_rotation_about_z_10deg():
    a = descriptor(camera_at(angle_z_deg=10.0))
    b = descriptor(camera_at())
    rot, trans, gap = discrepancy(a, b)
    assert rot == pytest.approx(10.0, abs=1e-6)
    assert trans == pytest.approx(0.0, abs=1e-12)


def test_visibility_gap_arithmetic():
    a = descriptor(camera_at(), frac=0.5)
    b = descriptor(camera_at(), frac=0.9)
    _, _, gap = discrepancy(a, b)
    assert gap == pytest.approx(0.4)
    # gap floors at zero when actual exceeds desired
    _, _, gap2 = discrepancy(b, a)
    assert gap2 == 0.0


# --------------------------------------------------------------------- correct

def test_accept_within_tolerances():
    cfg = ClosedLoopConfig()
    desired = descriptor(camera_at())
    actual = descriptor(camera_at(angle_z_deg=1.0, offset=(0.005, 0, 0)), frac=0.88)
    out = correct(actual, descriptor(camera_at(), frac=0.9), 1, cfg, KAPPA_R)
    assert isinstance(out, Accept)


def test_abort_after_max_attempts():
    cfg = ClosedLoopConfig(max_attempts=3)
    desired = descriptor(camera_at())
    actual = descriptor(camera_at(angle_z_deg=15.0))
    out = correct(actual, desired, 3, cfg, KAPPA_R)
    assert isinstance(out, Abort)
    assert out.diagnostics["rotation_error_deg"] == pytest.approx(15.0, abs=1e-6)


def test_correction_reasons():
    cfg = ClosedLoopConfig()
    desired = descriptor(camera_at(), frac=0.9)
    pose_off = descriptor(camera_at(angle_z_deg=8.0))
    out = correct(pose_off, desired, 1, cfg, KAPPA_R)
    assert isinstance(out, Correction) and out.reason == "pose_error"
    hidden = descriptor(camera_at(), frac=0.3)
    out2 = correct(hidden, desired, 1, cfg, KAPPA_R)
    assert isinstance(out2, Correction) and out2.reason == "target_not_visible"


def test_correction_contracts_noiselessly():
    cfg = ClosedLoopConfig()
    desired = descriptor(camera_at(), frac=0.9)
    actual_pose = camera_at(angle_z_deg=12.0, offset=(0.05, -0.02, 0.01))
    out = correct(descriptor(actual_pose), desired, 1, cfg, KAPPA_R)
    assert isinstance(out, Correction)
    corrected = out.pose_delta.compose(actual_pose)
    rot, trans, _ = discrepancy(descriptor(corrected), desired)
    assert rot == pytest.approx(0.0, abs=1e-5)
    assert trans == pytest.approx(0.0, abs=1e-9)


def test_attempts_monotone_and_validated():
    cfg = ClosedLoopConfig()
    desired = descriptor(camera_at())
    actual = descriptor(camera_at(angle_z_deg=30.0))
    with pytest.raises(ValueError):
        correct(actual, desired, 0, cfg, KAPPA_R)


def test_clamp_keeps_camera_out_of_occupancy():
    from splatplan.voxel import build_field
    from test_voxel import box_truth

    truth = box_truth()
    field = build_field(truth, cell_size=0.1, margin=0.4)
    # desired pose sits inside the object: the correction must clamp to free space
    inside = look_at(truth.centroid + (0.01, 0.0, 0.02), truth.centroid + (1, 0, 0))
    desired = descriptor(inside)
    actual = descriptor(camera_at(angle_z_deg=20.0))
    out = correct(actual, desired, 1, ClosedLoopConfig(), KAPPA_R, voxel_field=field)
    assert isinstance(out, Correction)
    target = out.pose_delta.compose(actual.camera_pose)
    idx = tuple(field.cell_index(target.translation))
    assert field.occupancy[idx] == 0


# --------------------------------------------------- Monte-Carlo noise contract

def run_trials(closed_loop: bool, n=100, max_attempts=3):
    """Simulate camera moves under the proportional actuation-noise model."""
    cfg = ClosedLoopConfig(max_attempts=max_attempts)
    noise = NoiseConfig(rot_sigma_deg=3.0, trans_sigma_m=0.01, rot_ref_deg=90.0,
                        trans_ref_m=KAPPA_R)
    accepted = 0
    for trial in range(n):
        rng = np.random.default_rng([7, trial])
        start = camera_at(angle_z_deg=120.0, offset=(0.4, 0.3, -0.1))
        desired_pose = camera_at()
        desired = descriptor(desired_pose, frac=0.9)
        current = start
        for attempt in range(1, max_attempts + 1):
            rot_cmd = current.geodesic_angle_deg(desired_pose)
            trans_cmd = float(np.linalg.norm(desired_pose.translation - current.translation))
            sr, st = noise.effective_sigmas(rot_cmd, trans_cmd)
            wobble = Rotation.from_rotvec(rng.normal(0, np.radians(sr), 3)).as_matrix()
            achieved = Pose(wobble @ desired_pose.rotation,
                            desired_pose.translation + rng.normal(0, st, 3))
            actual = descriptor(achieved, frac=0.95)
            out = correct(actual, desired, attempt, cfg, KAPPA_R)
            if isinstance(out, Accept):
                accepted += 1
                break
            if isinstance(out, Abort) or not closed_loop:
                break
            current = achieved
    return accepted / n


def test_closed_loop_beats_open_loop():
    closed = run_trials(closed_loop=True)
    open_loop = run_trials(closed_loop=False, max_attempts=1)
    assert closed > 0.95
    assert open_loop < 0.60
