"""Reconstruction-training stand-in: degraded model state, capture-driven
repair, actuation noise, and per-state metrics.

The degrade/repair surrogate replaces splat optimization: degraded primitives
are fogged copies of their pristine counterparts (displaced along the surface
normal, weakened, inflated); capturing a view repairs the primitives it sees by
interpolating them back toward pristine. The planning signals (entropy
concentration, view uncertainty) respond to this state exactly as they would to
reconstruction progress, but deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import CameraIntrinsics, GroundTruth, Pose, SplatModel, logit, sigmoid
from .metrics import MetricsRecord, chamfer_suite, psnr, ssim
from .render import RenderConfig, RenderOutput, render

REPAIR_PER_VIEW = 0.5
VISIBILITY_WEIGHT_GATE = 1e-3
VISIBILITY_ANGLE_DEG = 70.0


@dataclass(frozen=True)
class DegradationSpec:
    levels: dict  # region label -> level in [0, 1]
    sigma_pos: float = 0.04
    sigma_opacity: float = 0.3
    removal: float = 1.0

    def __post_init__(self):
        for lab, lv in self.levels.items():
            if not (0.0 <= float(lv) <= 1.0):
                raise ValueError(f"level for {lab!r} must be in [0, 1]")


@dataclass(frozen=True)
class NoiseConfig:
    """Actuation noise. Sigmas apply to full-scale actions and shrink
    proportionally with the commanded motion, so corrective micro-moves are
    correspondingly precise."""

    rot_sigma_deg: float = 3.0
    trans_sigma_m: float = 0.01
    rot_ref_deg: float = 90.0
    trans_ref_m: float = 0.5
    enabled: bool = True

    def effective_sigmas(self, command_rot_deg: float, command_trans_m: float):
        if not self.enabled:
            return 0.0, 0.0
        rot = self.rot_sigma_deg * min(1.0, abs(command_rot_deg) / self.rot_ref_deg)
        trans = self.trans_sigma_m * min(1.0, abs(command_trans_m) / self.trans_ref_m)
        return rot, trans


def visible_fraction(points: np.ndarray, normals: np.ndarray | None, pose: Pose,
                     intrinsics: CameraIntrinsics, centroid=None) -> float:
    """Fraction of surface points unoccluded in a view.

    A point counts as visible when it projects inside the image in front of the
    camera and its outward normal faces the camera (backfaces are occluded by
    the object body). Without normals, the direction from the centroid stands
    in for them.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cam = (pts - pose.translation) @ pose.rotation
    z = cam[:, 2]
    ok = z > 1e-6
    zs = np.where(ok, z, 1.0)
    u = intrinsics.fx * cam[:, 0] / zs + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / zs + intrinsics.cy
    ok &= (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    if normals is None:
        if centroid is None:
            centroid = pts.mean(axis=0)
        normals = pts - np.asarray(centroid, dtype=float)
        normals = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    to_cam = pose.translation - pts
    ok &= np.sum(to_cam * normals, axis=1) > 0.0
    return float(ok.mean())


def region_coverage(truth: GroundTruth, captured_poses, intrinsics: CameraIntrinsics) -> dict:
    """Per-region fraction of ground-truth points visible from any captured pose."""
    seen = np.zeros(truth.surface_points.shape[0], dtype=bool)
    for pose in captured_poses:
        pts = truth.surface_points
        cam = (pts - pose.translation) @ pose.rotation
        z = cam[:, 2]
        ok = z > 1e-6
        zs = np.where(ok, z, 1.0)
        u = intrinsics.fx * cam[:, 0] / zs + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / zs + intrinsics.cy
        ok &= (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
        if truth.normals is not None:
            to_cam = pose.translation - pts
            ok &= np.sum(to_cam * truth.normals, axis=1) > 0.0
        seen |= ok
    labels = np.asarray(truth.region_labels)
    return {lab: float(seen[labels == lab].mean()) for lab in sorted(set(truth.region_labels))}


def degrade(pristine: SplatModel, truth: GroundTruth, spec: DegradationSpec, seed: int):
    """Fog a pristine model per region: returns (degraded model, repair_state).

    With probability removal*level a primitive is displaced along its normal
    (inward excursions are capped at about the shell thickness so fog never
    sinks unobservably deep into solid geometry), its opacity multiplied by
    U(0.2, 0.6) (plus logit jitter), and its scale inflated by (1 + level);
    fogged primitives start at repair 1 - level.
    """
    rng = np.random.default_rng(seed)
    means = pristine.means.copy()
    scales = pristine.scales.copy()
    logits = pristine.opacity_logits.copy()
    repair = np.ones(len(pristine))
    normals = truth.normals if truth.normals is not None else None
    inward_cap = 0.01
    for i, lab in enumerate(truth.region_labels):
        level = float(spec.levels.get(lab, 0.0))
        if level <= 0.0:
            continue
        if rng.uniform() >= spec.removal * level:
            continue
        n = normals[i] if normals is not None else np.array([0.0, 0.0, 1.0])
        means[i] = means[i] + n * max(rng.normal(0.0, level * spec.sigma_pos), -inward_cap)
        weakened = sigmoid(logits[i]) * rng.uniform(0.2, 0.6)
        logits[i] = float(logit(np.clip(weakened, 1e-4, 1 - 1e-4))) + rng.normal(0.0, spec.sigma_opacity)
        scales[i] = scales[i] * (1.0 + level)
        repair[i] = 1.0 - level
    model = pristine.replace(means=means, scales=scales, opacity_logits=logits)
    return model, repair


def _lerp_models(degraded: SplatModel, pristine: SplatModel, fractions: np.ndarray) -> SplatModel:
    f = fractions[:, None]
    return pristine.replace(
        means=(1.0 - f) * degraded.means + f * pristine.means,
        scales=(1.0 - f) * degraded.scales + f * pristine.scales,
        rotations=pristine.rotations,  # degradation leaves orientation untouched
        opacity_logits=(1.0 - fractions) * degraded.opacity_logits
        + fractions * pristine.opacity_logits,
        colors=pristine.colors,
    )


class SimWorld:
    """Single-owner mutable world: ground truth, pristine reference, degraded
    current model, object pose, and the seeded actuation-noise stream."""

    def __init__(self, truth: GroundTruth, pristine: SplatModel, degraded: SplatModel,
                 repair_state: np.ndarray, support_height: float, seed: int,
                 noise: NoiseConfig = NoiseConfig()):
        if len(pristine) != len(degraded):
            raise ValueError("pristine and degraded must have equal primitive counts")
        self.truth = truth
        self.pristine = pristine
        self.degraded = degraded
        self.repair_state = np.asarray(repair_state, dtype=float).copy()
        self.current = _lerp_models(degraded, pristine, self.repair_state)
        self.object_pose = Pose.identity()
        self.support_height = float(support_height)
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng([seed, 0xC0FFEE])
        self.noise = noise
        self._reference_renders = {}

    @classmethod
    def from_scene(cls, scene_config, noise: NoiseConfig = NoiseConfig()) -> "SimWorld":
        from .scenes import make_object

        pristine, truth = make_object(scene_config.object_kind)
        spec = DegradationSpec(
            levels=dict(scene_config.degradation_levels),
            sigma_pos=scene_config.sigma_pos,
            sigma_opacity=scene_config.sigma_opacity,
            removal=scene_config.removal,
        )
        degraded, repair = degrade(pristine, truth, spec, scene_config.seed)
        return cls(truth, pristine, degraded, repair, scene_config.support_height,
                   scene_config.seed, noise)

    # ------------------------------------------------------------- capture

    def capture(self, view: Pose, intrinsics: CameraIntrinsics,
                config: RenderConfig = RenderConfig()) -> RenderOutput:
        """Render the current model, then repair what the view actually saw.

        A primitive is repaired when some pixel blended it above the weight
        gate and its outward normal faces the camera within the angle gate.
        """
        rv = render(self.current, view, intrinsics, config)
        seen = rv.max_weight_per_primitive > VISIBILITY_WEIGHT_GATE
        normals = self.truth.normals
        if normals is not None:
            to_cam = view.translation - self.current.means
            to_cam = to_cam / np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-12)
            cosang = np.sum(to_cam * normals, axis=1)
            seen &= cosang > np.cos(np.radians(VISIBILITY_ANGLE_DEG))
        if np.any(seen):
            self.repair_state = np.minimum(self.repair_state + REPAIR_PER_VIEW * seen, 1.0)
            self.current = _lerp_models(self.degraded, self.pristine, self.repair_state)
        return rv

    # ---------------------------------------------------------- actuation

    def draw_actuation_noise(self, expected: Pose) -> Pose:
        """Perturb an object transform with command-proportional noise."""
        rot_cmd = expected.geodesic_angle_deg(Pose.identity())
        trans_cmd = float(np.linalg.norm(expected.translation))
        return self._noisy(expected, rot_cmd, trans_cmd)

    def execute_camera_move(self, current: Pose, target: Pose) -> Pose:
        """Move the camera toward a target pose; returns the achieved pose."""
        rot_cmd = current.geodesic_angle_deg(target)
        trans_cmd = float(np.linalg.norm(target.translation - current.translation))
        return self._noisy(target, rot_cmd, trans_cmd)

    def _noisy(self, target: Pose, rot_cmd_deg: float, trans_cmd_m: float) -> Pose:
        rot_sigma, trans_sigma = self.noise.effective_sigmas(rot_cmd_deg, trans_cmd_m)
        if rot_sigma == 0.0 and trans_sigma == 0.0:
            return target
        rotvec = self.rng.normal(0.0, np.radians(rot_sigma), 3)
        dt = self.rng.normal(0.0, trans_sigma, 3)
        wobble = Rotation.from_rotvec(rotvec).as_matrix()
        return Pose(wobble @ target.rotation, target.translation + dt)

    def settled_transform(self, transform: Pose) -> Pose:
        """Compose a vertical settle so the moved object rests on the table."""
        moved = transform.transform_points(self.truth.surface_points)
        lift = self.support_height - float(moved[:, 2].min())
        settle = Pose(np.eye(3), (0.0, 0.0, lift))
        return settle.compose(transform)

    def apply_object_transform(self, transform: Pose) -> None:
        """Apply one rigid motion to model, ground truth, and pose bookkeeping."""
        from .geometry import apply_rigid_transform

        self.pristine = apply_rigid_transform(self.pristine, transform)
        self.degraded = apply_rigid_transform(self.degraded, transform)
        self.current = _lerp_models(self.degraded, self.pristine, self.repair_state)
        self.truth = self.truth.transformed(transform)
        self.object_pose = transform.compose(self.object_pose)
        self._reference_renders.clear()

    # ------------------------------------------------------------- metrics

    def _reference(self, key, views, intrinsics, config):
        if key not in self._reference_renders:
            self._reference_renders[key] = [
                render(self.pristine, v, intrinsics, config).color for v in views
            ]
        return self._reference_renders[key]

    def world_metrics(self, test_views, intrinsics: CameraIntrinsics,
                      tau_f: float | None = None,
                      config: RenderConfig = RenderConfig()) -> MetricsRecord:
        """Image metrics against pristine renders plus geometric metrics against
        the ground-truth surface sample."""
        if not test_views:
            raise ValueError("need at least one test view")
        if tau_f is None:
            tau_f = 0.005 * 2.0 * self.truth.bbox_half_diagonal
        key = (len(test_views), intrinsics.width, intrinsics.height)
        refs = self._reference(key, test_views, intrinsics, config)
        psnrs, ssims = [], []
        for view, ref in zip(test_views, refs):
            img = render(self.current, view, intrinsics, config).color
            psnrs.append(psnr(img, ref))
            ssims.append(ssim(img, ref))
        accuracy, completeness, chamfer, fscore, per_region = chamfer_suite(
            self.current.means, self.truth.surface_points, tau_f,
            truth_labels=self.truth.region_labels,
        )
        return MetricsRecord(
            psnr=float(np.mean(psnrs)), ssim=float(np.mean(ssims)),
            accuracy=accuracy, completeness=completeness, chamfer=chamfer,
            fscore=fscore, fscore_threshold=tau_f, per_region_completeness=per_region,
        )

    # --------------------------------------------------------- persistence

    def save(self, directory) -> None:
        from .ply import save_ground_truth, save_splat_model

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_splat_model(directory / "pristine.ply", self.pristine)
        save_splat_model(directory / "degraded.ply", self.degraded)
        save_ground_truth(directory / "truth.ply", self.truth)
        np.savez(
            directory / "state.npz",
            repair_state=self.repair_state,
            normals=self.truth.normals if self.truth.normals is not None else np.zeros((0, 3)),
        )
        meta = {
            "support_height": self.support_height,
            "seed": self.rng_seed,
            "object_pose": self.object_pose.matrix().tolist(),
            "noise": {
                "rot_sigma_deg": self.noise.rot_sigma_deg,
                "trans_sigma_m": self.noise.trans_sigma_m,
                "rot_ref_deg": self.noise.rot_ref_deg,
                "trans_ref_m": self.noise.trans_ref_m,
                "enabled": self.noise.enabled,
            },
        }
        with open(directory / "world.json", "w") as f:
            json.dump(meta, f, indent=2)

    @classmethod
    def load(cls, directory) -> "SimWorld":
        from .ply import load_ground_truth, load_splat_model

        directory = Path(directory)
        with open(directory / "world.json") as f:
            meta = json.load(f)
        pristine = load_splat_model(directory / "pristine.ply")
        degraded = load_splat_model(directory / "degraded.ply")
        truth = load_ground_truth(directory / "truth.ply")
        with np.load(directory / "state.npz") as state:
            repair = state["repair_state"]
            normals = state["normals"]
        if normals.shape[0] == truth.surface_points.shape[0]:
            truth = GroundTruth(
                truth.surface_points, truth.region_labels, normals=normals
            )
        noise = NoiseConfig(**meta["noise"])
        world = cls(truth, pristine, degraded, repair, meta["support_height"],
                    meta["seed"], noise)
        world.object_pose = Pose.from_matrix(np.array(meta["object_pose"]))
        return world
