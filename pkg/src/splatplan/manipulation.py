"""Interactive manipulation planning: action-scored cells, greedy trajectory
extraction, spline smoothing, and kinematic execution.

The supported action is a topple: push the object near the top of one face so
it rotates ~90 degrees about the far bottom edge, exposing its contact face.
The trajectory is planned over the voxel field: cells are scored by proximity
to the ideal straight push path, a greedy walk extracts waypoints, and a
Catmull-Rom spline resamples them into an even end-effector trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NoPath, SimCollision, UnknownRegionLabel
from .geometry import Pose
from .voxel import OCC_FREE, VoxelField

TOPPLE_ANGLE_DEG = 90.0
_START_FLOOR = 0.5
_STEP_FLOOR = 0.1


@dataclass
class ManipulationPlan:
    kind: str  # "topple_to_expose"
    contact_point: np.ndarray
    push_direction: np.ndarray
    trajectory: np.ndarray  # (n, 3) resampled end-effector waypoints
    expected_transform: Pose
    cell_size: float

    def validate(self) -> None:
        if len(self.trajectory) < 2:
            raise ValueError("trajectory needs at least two waypoints")
        steps = np.linalg.norm(np.diff(self.trajectory, axis=0), axis=1)
        if np.any(steps <= 1e-12):
            raise ValueError("waypoints must be pairwise distinct")
        if np.any(steps > self.cell_size + 1e-9):
            raise ValueError("waypoint spacing must stay within one cell")
        angle = self.expected_transform.geodesic_angle_deg(Pose.identity())
        if abs(angle - TOPPLE_ANGLE_DEG) > 5.0:
            raise ValueError(f"expected transform rotates {angle:.2f} deg, not ~90")

    @property
    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.trajectory, axis=0), axis=1).sum())

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "x", "y", "z"])
            for i, p in enumerate(self.trajectory):
                writer.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])


def topple_geometry(bbox_min, bbox_max, push_direction):
    """Contact point, pre-contact point, pivot, and expected rigid transform.

    The contact sits at the center of the upper third of the face opposite the
    push direction; the pre-contact point is one bbox width behind it; the
    pivot is the bottom edge farthest along the push direction.
    """
    bmin = np.asarray(bbox_min, dtype=float)
    bmax = np.asarray(bbox_max, dtype=float)
    d = np.asarray(push_direction, dtype=float)
    d = d / np.linalg.norm(d)
    center = (bmin + bmax) / 2.0
    half = (bmax - bmin) / 2.0
    extent_d = float(2.0 * abs(half @ np.abs(d)))
    height = bmax[2] - bmin[2]
    contact = center - d * (extent_d / 2.0)
    contact[2] = bmin[2] + height * 5.0 / 6.0  # center of the upper third
    pre_contact = contact - d * extent_d
    pivot = center + d * (extent_d / 2.0)
    pivot[2] = bmin[2]
    axis = np.cross([0.0, 0.0, 1.0], d)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(axis * np.radians(TOPPLE_ANGLE_DEG)).as_matrix()
    expected = Pose(rot, pivot - rot @ pivot)
    return contact, pre_contact, pivot, expected


def score_action_cells(field: VoxelField, truth, region: str,
                       push_direction=(1.0, 0.0, 0.0)) -> VoxelField:
    """Score every cell by proximity to the ideal push segment.

    phi_a(p) = exp(-dist(p, segment)^2 / (2 sigma^2)) with sigma one cell size;
    zero on object and support cells. The segment endpoints are stored on the
    returned field for the trajectory search.
    """
    if region not in field.labels:
        raise UnknownRegionLabel(f"label {region!r} not in field labels {field.labels}")
    contact, pre_contact, _pivot, _expected = topple_geometry(
        field.object_bbox[0], field.object_bbox[1], push_direction
    )
    out = field.copy()
    centers = out.cell_centers().reshape(-1, 3)
    a, b = pre_contact, contact
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((centers - a) @ ab) / denom, 0.0, 1.0)
    nearest = a + t[:, None] * ab
    dist2 = np.sum((centers - nearest) ** 2, axis=1)
    sigma = out.cell_size
    phi = np.exp(-dist2 / (2.0 * sigma**2)).reshape(out.dims)
    phi[out.occupancy != OCC_FREE] = 0.0
    out.phi_a = phi
    out.action_segment = (pre_contact.copy(), contact.copy())
    return out


_TERMINAL_MARGIN_CELLS = 1.75  # lattice-alignment slack between contact and last free cell

_NEIGHBOR_OFFSETS = np.array(
    [
        (i, j, k)
        for i in (-1, 0, 1)
        for j in (-1, 0, 1)
        for k in (-1, 0, 1)
        if (i, j, k) != (0, 0, 0)
    ]
)


def greedy_trajectory(field: VoxelField) -> np.ndarray:
    """Walk from the pre-contact end toward the contact cell over high-score cells.

    Starts at the highest-scoring cell nearest the pre-contact end, repeatedly
    steps to the best-scoring 26-neighbor that strictly advances along the push
    segment (by at least half a cell, so the end-effector always makes forward
    progress), and stops within one cell of the contact point.
    """
    if field.action_segment is None:
        raise ValueError("field has no action segment; run score_action_cells first")
    if np.nanmax(field.phi_a) <= _START_FLOOR:
        raise ValueError("no cell scores above the start threshold")
    pre, contact = field.action_segment
    direction = (contact - pre) / np.linalg.norm(contact - pre)
    centers = field.cell_centers()
    s = (centers - pre) @ direction
    s_contact = float((contact - pre) @ direction)

    viable = (field.occupancy == OCC_FREE) & (np.nan_to_num(field.phi_a, nan=0.0) > 0.0)
    strong = viable & (field.phi_a > _START_FLOOR)
    s_min = s[strong].min()
    start_band = strong & (s <= s_min + field.cell_size / 2.0)
    masked = np.where(start_band, field.phi_a, -np.inf)
    current = np.unravel_index(np.argmax(masked), field.dims)

    waypoints = [centers[current]]
    visited = {current}
    dims = np.array(field.dims)
    terminal_s = s_contact - _TERMINAL_MARGIN_CELLS * field.cell_size
    for _ in range(int(np.sum(dims)) * 3):
        if s[current] >= terminal_s:
            break
        best = None
        best_phi = _STEP_FLOOR
        for off in _NEIGHBOR_OFFSETS:
            nb = tuple(np.array(current) + off)
            if any(v < 0 for v in nb) or any(nb[i] >= dims[i] for i in range(3)):
                continue
            if nb in visited or field.occupancy[nb] != OCC_FREE:
                continue
            if s[nb] < s[current] + field.cell_size / 2.0:
                continue
            phi = field.phi_a[nb]
            if np.isnan(phi) or phi <= best_phi:
                continue
            best, best_phi = nb, phi
        if best is None:
            raise NoPath("no advancing neighbor exceeds the step threshold")
        current = best
        visited.add(current)
        waypoints.append(centers[current])
    else:
        raise NoPath("trajectory search exceeded the step budget")
    if len(waypoints) < 2:
        raise NoPath("trajectory degenerated to a single cell")
    return np.array(waypoints)


def smooth(waypoints, spacing: float) -> np.ndarray:
    """Catmull-Rom interpolation resampled at uniform arc-length spacing.

    Endpoints are preserved exactly; two waypoints degrade to a straight line.
    """
    pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("need at least two waypoints")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    padded = np.vstack([pts[0], pts, pts[-1]])
    dense = []
    ts = np.linspace(0.0, 1.0, 33)[:-1]
    for i in range(1, len(padded) - 2):
        p0, p1, p2, p3 = padded[i - 1], padded[i], padded[i + 1], padded[i + 2]
        for t in ts:
            t2, t3 = t * t, t * t * t
            dense.append(
                0.5
                * (
                    (2 * p1)
                    + (-p0 + p2) * t
                    + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                    + (-p0 + 3 * p1 - 3 * p2 + p3) * t3
                )
            )
    dense.append(pts[-1])
    dense = np.array(dense)
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    n_out = max(int(round(total / spacing)), 1) + 1
    targets = np.linspace(0.0, total, n_out)
    out = np.column_stack([np.interp(targets, arc, dense[:, i]) for i in range(3)])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def plan_topple(field: VoxelField, truth, region: str,
                push_direction=(1.0, 0.0, 0.0)) -> ManipulationPlan:
    """Score, search, and smooth a full topple plan for the given region."""
    scored = score_action_cells(field, truth, region, push_direction)
    raw = greedy_trajectory(scored)
    contact = scored.action_segment[1]
    raw = np.vstack([raw, contact])  # finish exactly at the contact point
    trajectory = smooth(raw, spacing=field.cell_size / 2.0)
    _contact, _pre, _pivot, expected = topple_geometry(
        field.object_bbox[0], field.object_bbox[1], push_direction
    )
    d = np.asarray(push_direction, dtype=float)
    plan = ManipulationPlan(
        kind="topple_to_expose",
        contact_point=contact,
        push_direction=d / np.linalg.norm(d),
        trajectory=trajectory,
        expected_transform=expected,
        cell_size=field.cell_size,
    )
    plan.validate()
    return plan


def execute_manipulation(world, plan: ManipulationPlan) -> Pose:
    """Apply the planned topple to the simulated world with actuation noise.

    Raises SimCollision when the trajectory enters object or support occupancy
    before the contact point. The world settles the object back onto the table
    and applies the identical transform to splat model and ground truth; the
    achieved transform is returned for closed-loop comparison.
    """
    bmin, bmax = world.truth.bbox_min, world.truth.bbox_max
    eps = 1e-9
    for p in plan.trajectory[:-1]:
        inside = np.all(p > bmin + eps) and np.all(p < bmax - eps)
        if inside or p[2] < world.support_height - eps:
            raise SimCollision(f"trajectory point {p} intersects occupancy before contact")
    achieved = world.draw_actuation_noise(plan.expected_transform)
    achieved = world.settled_transform(achieved)
    world.apply_object_transform(achieved)
    return achieved
