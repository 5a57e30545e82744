"""Geometric foundations: splat primitives, object models, poses, intrinsics, ground truth.

Conventions used throughout the package:

* World frame is right-handed with +z up; the support table is a z = const plane.
* ``Pose`` is a rigid transform ``x -> R x + t``. Camera poses are
  camera-to-world with OpenCV axes: camera +x right, +y down, +z forward.
* Quaternions are stored ``(w, x, y, z)`` and kept unit-norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLookAt

_QUAT_NORM_TOL = 1e-9
_ROT_DET_TOL = 1e-9


def _as_vec3(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(v)}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def quat_canonical_sign(q) -> np.ndarray:
    """Negate the quaternion if its first nonzero component is negative (exact op)."""
    q = np.asarray(q, dtype=float).reshape(4)
    for v in q:
        if v > 0:
            return q
        if v < 0:
            return -q
    raise ValueError("zero quaternion")


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = float(np.linalg.norm(q))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("zero or non-finite quaternion")
    return quat_canonical_sign(q / n)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix for a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
    return quat_normalize(q)


def quat_multiply(a, b) -> np.ndarray:
    # raw Hamilton product with canonical sign; no renormalization so that
    # multiplying by the identity is bit-exact
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return quat_canonical_sign(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_slerp(a, b, t: float) -> np.ndarray:
    """Spherical interpolation between unit quaternions, shortest arc."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b, dot = -b, -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sa = np.sin((1.0 - t) * theta) / np.sin(theta)
    sb = np.sin(t * theta) / np.sin(theta)
    return quat_normalize(sa * a + sb * b)


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R x + t (also used as a camera-to-world pose)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = _as_vec3(self.translation, "translation")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError(f"rotation determinant {np.linalg.det(r):.9f} != 1")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation is not orthonormal")
        r = r.copy()
        t = t.copy()
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat(q, t) -> "Pose":
        return Pose(quat_to_matrix(quat_normalize(q)), t)

    @property
    def quat(self) -> np.ndarray:
        return matrix_to_quat(self.rotation)

    @property
    def forward(self) -> np.ndarray:
        """Camera gaze direction (+z column) when used as a camera pose."""
        return self.rotation[:, 2]

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform_point(self, p) -> np.ndarray:
        return self.rotation @ _as_vec3(p, "point") + self.translation

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation

    def rotate_vectors(self, vecs: np.ndarray) -> np.ndarray:
        return np.asarray(vecs, dtype=float) @ self.rotation.T

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return Pose(m[:3, :3], m[:3, 3])

    def geodesic_angle_deg(self, other: "Pose") -> float:
        """Geodesic angle between the two rotations, in degrees."""
        r = self.rotation.T @ other.rotation
        c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(c)))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose with the forward (+z) axis pointing from eye to target.

    Raises DegenerateLookAt when eye == target or up is parallel to the gaze.
    """
    eye = _as_vec3(eye, "eye")
    target = _as_vec3(target, "target")
    up = _as_vec3(up, "up")
    gaze = target - eye
    n = np.linalg.norm(gaze)
    if n < 1e-12:
        raise DegenerateLookAt("eye coincides with target")
    forward = gaze / n
    un = np.linalg.norm(up)
    if un < 1e-12:
        raise DegenerateLookAt("up vector is zero")
    upn = up / un
    if abs(float(np.dot(forward, upn))) > 1.0 - 1e-9:
        raise DegenerateLookAt("up vector is parallel to the gaze direction")
    right = np.cross(forward, upn)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.column_stack([right, down, forward])
    return Pose(r, eye)


def look_at_or_fallback(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """look_at that swaps in a perpendicular up axis when the given one degenerates."""
    try:
        return look_at(eye, target, up)
    except DegenerateLookAt:
        return look_at(eye, target, (0.0, 1.0, 0.0) if abs(up[1]) < 0.9 else (1.0, 0.0, 0.0))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One splat: center, per-axis extents, orientation, opacity source, constant RGB."""

    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        mean = _as_vec3(self.mean, "mean")
        scale = _as_vec3(self.scale, "scale")
        if np.any(scale <= 0):
            raise ValueError("scale components must be positive")
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > _QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {np.linalg.norm(q):.12f} != 1")
        q = quat_canonical_sign(q)
        color = _as_vec3(self.color, "color")
        if np.any(color < 0) or np.any(color > 1):
            raise ValueError("color must be in [0, 1]")
        for arr, name in ((mean, "mean"), (scale, "scale"), (q, "rotation"), (color, "color")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "opacity_logit", float(self.opacity_logit))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


def covariance(primitive: GaussianPrimitive) -> np.ndarray:
    """3x3 covariance R diag(scale^2) R^T of a primitive."""
    r = quat_to_matrix(primitive.rotation)
    return r @ np.diag(primitive.scale**2) @ r.T


class SplatModel:
    """Ordered collection of Gaussian primitives, stored as arrays.

    Arrays are column stores over the primitive list: means (n,3), scales (n,3),
    rotations (n,4) unit quaternions, opacity_logits (n,), colors (n,3).
    """

    def __init__(self, means, scales, rotations, opacity_logits, colors, object_id: str = "object"):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        scales = np.atleast_2d(np.asarray(scales, dtype=float))
        rotations = np.atleast_2d(np.asarray(rotations, dtype=float))
        opacity_logits = np.atleast_1d(np.asarray(opacity_logits, dtype=float))
        colors = np.atleast_2d(np.asarray(colors, dtype=float))
        n = means.shape[0]
        if n == 0:
            raise ValueError("SplatModel must contain at least one primitive")
        if means.shape != (n, 3) or scales.shape != (n, 3) or colors.shape != (n, 3):
            raise ValueError("means, scales, colors must be (n, 3)")
        if rotations.shape != (n, 4) or opacity_logits.shape != (n,):
            raise ValueError("rotations must be (n, 4) and opacity_logits (n,)")
        if np.any(scales <= 0):
            raise ValueError("scale components must be positive")
        norms = np.linalg.norm(rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > _QUAT_NORM_TOL):
            raise ValueError("rotations must be unit quaternions")
        rotations = np.array([quat_canonical_sign(q) for q in rotations])
        if np.any(colors < 0) or np.any(colors > 1):
            raise ValueError("colors must be in [0, 1]")
        self.means = means
        self.scales = scales
        self.rotations = rotations
        self.opacity_logits = opacity_logits
        self.colors = colors
        self.object_id = str(object_id)
        for a in (self.means, self.scales, self.rotations, self.opacity_logits, self.colors):
            a.setflags(write=False)

    @classmethod
    def from_primitives(cls, primitives, object_id: str = "object") -> "SplatModel":
        prims = list(primitives)
        if not prims:
            raise ValueError("SplatModel must contain at least one primitive")
        return cls(
            np.array([p.mean for p in prims]),
            np.array([p.scale for p in prims]),
            np.array([p.rotation for p in prims]),
            np.array([p.opacity_logit for p in prims]),
            np.array([p.color for p in prims]),
            object_id=object_id,
        )

    def __len__(self) -> int:
        return self.means.shape[0]

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.means[i], self.scales[i], quat_normalize(self.rotations[i]),
            self.opacity_logits[i], self.colors[i],
        )

    @property
    def primitives(self):
        return [self.primitive(i) for i in range(len(self))]

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def rotation_matrices(self) -> np.ndarray:
        """(n, 3, 3) rotation matrices of all primitives."""
        w, x, y, z = self.rotations.T
        m = np.empty((len(self), 3, 3))
        m[:, 0, 0] = 1 - 2 * (y * y + z * z)
        m[:, 0, 1] = 2 * (x * y - w * z)
        m[:, 0, 2] = 2 * (x * z + w * y)
        m[:, 1, 0] = 2 * (x * y + w * z)
        m[:, 1, 1] = 1 - 2 * (x * x + z * z)
        m[:, 1, 2] = 2 * (y * z - w * x)
        m[:, 2, 0] = 2 * (x * z - w * y)
        m[:, 2, 1] = 2 * (y * z + w * x)
        m[:, 2, 2] = 1 - 2 * (x * x + y * y)
        return m

    def covariances(self) -> np.ndarray:
        """(n, 3, 3) world-frame covariances."""
        r = self.rotation_matrices()
        s2 = self.scales**2
        return np.einsum("nij,nj,nkj->nik", r, s2, r)

    def replace(self, **kwargs) -> "SplatModel":
        fields = dict(
            means=self.means, scales=self.scales, rotations=self.rotations,
            opacity_logits=self.opacity_logits, colors=self.colors, object_id=self.object_id,
        )
        fields.update(kwargs)
        return SplatModel(**fields)


def apply_rigid_transform(model: SplatModel, transform: Pose) -> SplatModel:
    """Move every primitive by the rigid motion; scales, opacities, colors unchanged."""
    means = transform.transform_points(model.means)
    rot = transform.quat
    rotations = np.array([quat_multiply(rot, q) for q in model.rotations])
    return model.replace(means=means, rotations=rotations)


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("width and height must be >= 8")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("fx and fy must be positive")

    @staticmethod
    def square(size: int, fov_deg: float = 45.0) -> "CameraIntrinsics":
        """Square pinhole camera with the given horizontal field of view."""
        f = size / (2.0 * np.tan(np.radians(fov_deg) / 2.0))
        return CameraIntrinsics(size, size, f, f, size / 2.0, size / 2.0)


REGION_LABELS = ("bottom", "top", "side:+x", "side:-x", "side:+y", "side:-y")


class GroundTruth:
    """Sampled true surface with per-point region labels and an axis-aligned bbox.

    ``normals`` (optional) are outward unit normals used for visibility gating in
    the simulator; PLY round trips drop them.
    """

    def __init__(self, surface_points, region_labels, bbox_min=None, bbox_max=None, normals=None):
        pts = np.atleast_2d(np.asarray(surface_points, dtype=float))
        if pts.shape[0] == 0 or pts.shape[1] != 3:
            raise ValueError("surface_points must be a non-empty (n, 3) array")
        labels = list(region_labels)
        if len(labels) != pts.shape[0]:
            raise ValueError("labels must cover every point")
        bmin = pts.min(axis=0) if bbox_min is None else _as_vec3(bbox_min, "bbox_min")
        bmax = pts.max(axis=0) if bbox_max is None else _as_vec3(bbox_max, "bbox_max")
        if np.any(pts < bmin - 1e-9) or np.any(pts > bmax + 1e-9):
            raise ValueError("all points must lie inside the bbox")
        self.surface_points = pts
        self.region_labels = labels
        self.bbox_min = bmin
        self.bbox_max = bmax
        if normals is not None:
            normals = np.atleast_2d(np.asarray(normals, dtype=float))
            if normals.shape != pts.shape:
                raise ValueError("normals must match surface_points shape")
            norms = np.linalg.norm(normals, axis=1, keepdims=True)
            normals = normals / np.maximum(norms, 1e-12)
        self.normals = normals
        for a in (self.surface_points, self.bbox_min, self.bbox_max):
            a.setflags(write=False)
        if self.normals is not None:
            self.normals.setflags(write=False)

    @property
    def centroid(self) -> np.ndarray:
        return self.surface_points.mean(axis=0)

    @property
    def bbox_half_diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox_max - self.bbox_min) / 2.0)

    def label_set(self):
        return sorted(set(self.region_labels))

    def points_of(self, label: str) -> np.ndarray:
        mask = np.array([l == label for l in self.region_labels])
        return self.surface_points[mask]

    def region_centroid(self, label: str) -> np.ndarray:
        pts = self.points_of(label)
        if pts.shape[0] == 0:
            raise ValueError(f"no points labeled {label!r}")
        return pts.mean(axis=0)

    def transformed(self, transform: Pose) -> "GroundTruth":
        pts = transform.transform_points(self.surface_points)
        normals = None if self.normals is None else transform.rotate_vectors(self.normals)
        return GroundTruth(pts, list(self.region_labels), normals=normals)
