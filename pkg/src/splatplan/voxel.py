"""Object-centered voxel lattice carrying uncertainty, target, observability and
action attributes, plus sparse sphere sampling and nearest-neighbor fill."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import SampleOutsideField, TooManyCells, UnknownRegionLabel
from .geometry import CameraIntrinsics, GroundTruth, Pose, SplatModel, look_at_or_fallback
from .render import RenderConfig, render
from .uncertainty import UncertaintyConfig, projected_hull_mask, view_uncertainty

OCC_FREE, OCC_OBJECT, OCC_SUPPORT = 0, 1, 2
OBS_UNKNOWN, OBS_OBSERVABLE, OBS_OCCLUDED = 0, 1, 2

MAX_CELLS = 10_000_000

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class UncertaintySample:
    """One sphere sample: position, look-at orientation, measured uncertainty."""

    position: np.ndarray
    orientation: Pose
    omega: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        if not (0.0 <= self.omega <= 1.0):
            raise ValueError("omega must be in [0, 1]")


class VoxelField:
    """Integer lattice over the task space. Value semantics: operations copy."""

    def __init__(self, origin, cell_size, dims, labels, object_bbox, centroid,
                 support_height, region_centroids):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.cell_size = float(cell_size)
        self.dims = tuple(int(d) for d in dims)
        if any(d < 4 for d in self.dims):
            raise ValueError("dims must each be >= 4")
        self.labels = list(labels)
        self.object_bbox = (
            np.asarray(object_bbox[0], dtype=float),
            np.asarray(object_bbox[1], dtype=float),
        )
        self.centroid = np.asarray(centroid, dtype=float).reshape(3)
        self.support_height = float(support_height)
        self.region_centroids = {k: np.asarray(v, dtype=float) for k, v in region_centroids.items()}
        self.occupancy = np.zeros(self.dims, dtype=np.uint8)
        self.phi_omega = np.full(self.dims, np.nan)
        self.phi_t = np.full(self.dims, -1, dtype=np.int8)
        self.phi_o = np.zeros(self.dims, dtype=np.uint8)
        self.phi_a = np.full(self.dims, np.nan)
        self.action_segment = None  # (pre_contact, contact) set by manipulation scoring

    # ------------------------------------------------------------- geometry

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) world positions of cell centers (memoized, read-only)."""
        if getattr(self, "_centers", None) is None:
            axes = [
                self.origin[i] + (np.arange(self.dims[i]) + 0.5) * self.cell_size
                for i in range(3)
            ]
            gx, gy, gz = np.meshgrid(*axes, indexing="ij")
            centers = np.stack([gx, gy, gz], axis=-1)
            centers.setflags(write=False)
            self._centers = centers
        return self._centers

    def cell_index(self, position) -> np.ndarray:
        pos = np.asarray(position, dtype=float)
        idx = np.floor((pos - self.origin) / self.cell_size).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.dims)):
            raise SampleOutsideField(f"position {pos} lies outside the lattice")
        return idx

    def contains(self, position) -> bool:
        pos = np.asarray(position, dtype=float)
        idx = np.floor((pos - self.origin) / self.cell_size).astype(int)
        return bool(np.all(idx >= 0) and np.all(idx < np.array(self.dims)))

    def cell_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.cell_size

    def copy(self) -> "VoxelField":
        out = VoxelField(
            self.origin, self.cell_size, self.dims, self.labels, self.object_bbox,
            self.centroid, self.support_height, self.region_centroids,
        )
        out._centers = getattr(self, "_centers", None)  # shared: read-only geometry
        out.occupancy = self.occupancy.copy()
        out.phi_omega = self.phi_omega.copy()
        out.phi_t = self.phi_t.copy()
        out.phi_o = self.phi_o.copy()
        out.phi_a = self.phi_a.copy()
        out.action_segment = None if self.action_segment is None else (
            self.action_segment[0].copy(), self.action_segment[1].copy()
        )
        return out

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownRegionLabel(f"label {label!r} not in {self.labels}") from None

    def free_mask(self) -> np.ndarray:
        return self.occupancy == OCC_FREE


def _compute_occupancy(field: VoxelField) -> None:
    centers = field.cell_centers()
    occ = np.zeros(field.dims, dtype=np.uint8)
    support = centers[..., 2] < field.support_height
    occ[support] = OCC_SUPPORT
    bmin, bmax = field.object_bbox
    lo = centers - field.cell_size / 2.0
    hi = centers + field.cell_size / 2.0
    intersects = np.all(lo < bmax, axis=-1) & np.all(hi > bmin, axis=-1)
    occ[intersects & ~support] = OCC_OBJECT
    field.occupancy = occ


def build_field(truth: GroundTruth, cell_size: float, margin: float,
                support_height: float | None = None) -> VoxelField:
    """Lattice covering the object's bbox dilated by ``margin``.

    Cells below the support plane are marked support, cells intersecting the
    bbox object, the rest free; attributes start unset.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if margin < 2 * cell_size:
        raise ValueError("margin must be >= 2 * cell_size")
    lo = truth.bbox_min - margin
    hi = truth.bbox_max + margin
    dims = np.ceil((hi - lo) / cell_size - 1e-9).astype(int)
    if int(np.prod(dims)) > MAX_CELLS:
        raise TooManyCells(f"{int(np.prod(dims))} cells exceed the {MAX_CELLS} budget")
    if support_height is None:
        support_height = float(truth.bbox_min[2])
    centroids = {lab: truth.region_centroid(lab) for lab in truth.label_set()}
    field = VoxelField(
        origin=lo, cell_size=cell_size, dims=dims, labels=truth.label_set(),
        object_bbox=(truth.bbox_min.copy(), truth.bbox_max.copy()),
        centroid=truth.centroid, support_height=support_height, region_centroids=centroids,
    )
    _compute_occupancy(field)
    return field


def fibonacci_sphere(count: int) -> np.ndarray:
    """(count, 3) unit directions on a Fibonacci lattice."""
    i = np.arange(count)
    z = 1.0 - 2.0 * (i + 0.5) / count
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def sphere_positions(centroid, radius: float, count: int, support_height: float) -> np.ndarray:
    """Fibonacci-sphere positions; points below the support plane are pushed to
    the circle where the sphere meets the plane (azimuth kept, radius exact)."""
    centroid = np.asarray(centroid, dtype=float)
    pos = centroid + radius * fibonacci_sphere(count)
    below = pos[:, 2] < support_height
    if np.any(below):
        dz = support_height - centroid[2]
        rho = np.sqrt(max(radius**2 - dz**2, 0.0))
        off = pos[below] - centroid
        az = np.arctan2(off[:, 1], off[:, 0])
        pos[below, 0] = centroid[0] + rho * np.cos(az)
        pos[below, 1] = centroid[1] + rho * np.sin(az)
        pos[below, 2] = support_height
    return pos


def sample_sphere(model: SplatModel, truth: GroundTruth, radius: float, count: int,
                  intrinsics: CameraIntrinsics, xi_t: float,
                  support_height: float | None = None,
                  render_config: RenderConfig = RenderConfig(),
                  uncertainty_config: UncertaintyConfig = UncertaintyConfig()):
    """Render the model from sparse sphere samples and measure each view's uncertainty."""
    if count < 6:
        raise ValueError("count must be >= 6")
    if radius <= truth.bbox_half_diagonal:
        raise ValueError("radius must exceed the bbox half-diagonal")
    if support_height is None:
        support_height = float(truth.bbox_min[2])
    centroid = truth.centroid
    samples = []
    for pos in sphere_positions(centroid, radius, count, support_height):
        pose = look_at_or_fallback(pos, centroid)
        rv = render(model, pose, intrinsics, render_config)
        mask = projected_hull_mask(truth.surface_points, pose, intrinsics)
        um = view_uncertainty(rv, xi_t, object_mask=mask, config=uncertainty_config)
        samples.append(UncertaintySample(pos, pose, um.ratio))
    return samples


@njit(cache=True)
def _nearest_index_kernel(centers, points):
    """(m,) index of the nearest point per center; first point wins exact ties."""
    m = centers.shape[0]
    n = points.shape[0]
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        best = 0
        best_d = np.inf
        for j in range(n):
            dx = centers[i, 0] - points[j, 0]
            dy = centers[i, 1] - points[j, 1]
            dz = centers[i, 2] - points[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best_d:
                best_d = d
                best = j
        out[i] = best
    return out


@njit(cache=True)
def _min_dist_kernel(centers, points):
    """(m,) Euclidean distance from each center to its nearest point."""
    m = centers.shape[0]
    n = points.shape[0]
    out = np.empty(m)
    for i in range(m):
        best = np.inf
        for j in range(n):
            dx = centers[i, 0] - points[j, 0]
            dy = centers[i, 1] - points[j, 1]
            dz = centers[i, 2] - points[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


def scatter_and_fill(field: VoxelField, samples) -> VoxelField:
    """Write sample uncertainties into their cells, then fill every remaining
    free cell with the omega of the nearest sample (ties: lowest sample index)."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    out = field.copy()
    free = out.free_mask()
    taken = np.zeros(out.dims, dtype=bool)
    for s in samples:
        idx = tuple(out.cell_index(s.position))
        if free[idx] and not taken[idx]:
            out.phi_omega[idx] = s.omega
            taken[idx] = True

    remaining = free & ~taken
    if np.any(remaining):
        centers = np.ascontiguousarray(out.cell_centers()[remaining])
        pos = np.ascontiguousarray(np.array([s.position for s in samples]))
        omegas = np.array([s.omega for s in samples])
        nearest = _nearest_index_kernel(centers, pos)
        out.phi_omega[remaining] = omegas[nearest]
    out.phi_omega[~free] = np.nan
    return out


def entry_face_codes(origins: np.ndarray, target, bmin, bmax) -> np.ndarray:
    """Slab-test entry faces for rays origin->target against an AABB.

    Returns (m,) int codes: axis*2 + (0 for the min face, 1 for the max face),
    or -1 when the ray misses the box. Vectorized over origins.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.asarray(target, dtype=float) - o
    bmin = np.asarray(bmin, dtype=float)
    bmax = np.asarray(bmax, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (bmin - o) / d
        t1 = (bmax - o) / d
    tlo = np.minimum(t0, t1)
    thi = np.maximum(t0, t1)
    parallel = np.abs(d) < 1e-15
    inside_slab = (o >= bmin) & (o <= bmax)
    tlo[parallel] = -np.inf
    thi[parallel] = np.inf
    miss_parallel = np.any(parallel & ~inside_slab, axis=1)
    t_enter = tlo.max(axis=1)
    t_exit = thi.min(axis=1)
    axis = np.argmax(tlo, axis=1)
    hit = (t_enter <= t_exit) & (t_enter >= 0) & ~miss_parallel & np.isfinite(t_enter)
    d_axis = np.take_along_axis(d, axis[:, None], axis=1)[:, 0]
    min_face = d_axis > 0  # entering through the min face when moving up the axis
    codes = axis * 2 + np.where(min_face, 0, 1)
    return np.where(hit, codes, -1)


_FACE_CODE_LABELS = {
    4: "bottom", 5: "top",
    1: "side:+x", 0: "side:-x",
    3: "side:+y", 2: "side:-y",
}


def ray_bbox_entry_face(origin, target, bmin, bmax):
    """Label of the bbox face through which the ray origin->target enters, or None."""
    code = int(entry_face_codes(np.asarray(origin, dtype=float)[None], target, bmin, bmax)[0])
    return _FACE_CODE_LABELS.get(code)


@njit(cache=True)
def _segments_blocked_kernel(starts, ends, origin, cell_size, d0, d1, d2, occ,
                             skip_near_end, step):
    m = starts.shape[0]
    out = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        dx = ends[i, 0] - starts[i, 0]
        dy = ends[i, 1] - starts[i, 1]
        dz = ends[i, 2] - starts[i, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length < 1e-12:
            continue
        n = int(np.ceil(length / step))
        if n < 2:
            n = 2
        for k in range(1, n):
            t = k / n
            if length * (1.0 - t) <= skip_near_end[i]:
                break
            px = starts[i, 0] + t * dx
            py = starts[i, 1] + t * dy
            pz = starts[i, 2] + t * dz
            ix = int(np.floor((px - origin[0]) / cell_size))
            iy = int(np.floor((py - origin[1]) / cell_size))
            iz = int(np.floor((pz - origin[2]) / cell_size))
            if ix < 0 or iy < 0 or iz < 0 or ix >= d0 or iy >= d1 or iz >= d2:
                continue
            if occ[ix, iy, iz] != 0:
                out[i] = True
                break
    return out


def anchor_skip_distance(field: VoxelField, anchors: np.ndarray) -> np.ndarray:
    """Sight-line slack near surface anchor points.

    Occupancy is bbox-based, so anchors may sit some way inside object-flagged
    cells (noisy transforms inflate the axis-aligned bbox). The last stretch of
    a sight line, up to the anchor's depth inside the bbox plus one cell, must
    not count as blocking.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    bmin, bmax = field.object_bbox
    inside = np.minimum(anchors - bmin, bmax - anchors)
    depth = np.clip(inside.min(axis=1), 0.0, None)
    depth[np.any(inside < 0, axis=1)] = 0.0
    return depth + field.cell_size


def segments_blocked(field: VoxelField, starts: np.ndarray, ends: np.ndarray,
                     skip_near_end=None) -> np.ndarray:
    """(m,) bool: segments passing through object or support occupancy.

    Sampled at cell_size/2; samples within ``skip_near_end`` (scalar or
    per-segment; default: the endpoint's bbox depth plus one cell) of each
    endpoint are ignored so surface endpoints do not self-block.
    """
    starts = np.ascontiguousarray(np.atleast_2d(np.asarray(starts, dtype=float)))
    ends = np.ascontiguousarray(np.atleast_2d(np.asarray(ends, dtype=float)))
    if skip_near_end is None:
        skip = anchor_skip_distance(field, ends)
    else:
        skip = np.broadcast_to(np.asarray(skip_near_end, dtype=float), (starts.shape[0],))
    return _segments_blocked_kernel(
        starts, ends, field.origin, field.cell_size,
        field.dims[0], field.dims[1], field.dims[2], field.occupancy,
        np.ascontiguousarray(skip), field.cell_size / 2.0,
    )


def segment_blocked(field: VoxelField, start, end, skip_near_end: float | None = None) -> bool:
    """Scalar convenience wrapper around segments_blocked."""
    return bool(segments_blocked(field, np.asarray(start)[None], np.asarray(end)[None],
                                 skip_near_end)[0])


def nearest_region_point(truth: GroundTruth, label: str, position) -> np.ndarray:
    pts = truth.points_of(label)
    if pts.shape[0] == 0:
        raise UnknownRegionLabel(f"no ground-truth points labeled {label!r}")
    d = np.linalg.norm(pts - np.asarray(position, dtype=float), axis=1)
    return pts[int(np.argmin(d))]


def annotate(field: VoxelField, understanding, truth: GroundTruth | None = None) -> VoxelField:
    """Stamp target and observability attributes from a high-level understanding.

    A free cell is assigned the region whose bbox face its centroid-directed ray
    enters first, when that region is named by the understanding. Observability
    verdicts are copied from the understanding but demoted to occluded whenever
    the segment from the cell to the region (nearest ground-truth point when
    available, else the region centroid) crosses occupied cells.
    """
    named = list(dict.fromkeys([lab for lab, _ in understanding.targets] + list(understanding.observability)))
    if not named:
        return field.copy()
    for lab in named:
        if lab not in field.labels:
            raise UnknownRegionLabel(f"label {lab!r} not in field labels {field.labels}")

    out = field.copy()
    bmin, bmax = out.object_bbox
    free = out.free_mask()
    centers = out.cell_centers()
    flat_centers = centers.reshape(-1, 3)
    free_flat = free.reshape(-1)
    codes = np.full(free_flat.shape, -1, dtype=int)
    codes[free_flat] = entry_face_codes(flat_centers[free_flat], out.centroid, bmin, bmax)

    # a region owns the bbox face its outward direction currently points at;
    # after a manipulation the same region label can face a different axis
    face_dirs = {
        0: np.array([-1.0, 0, 0]), 1: np.array([1.0, 0, 0]),
        2: np.array([0, -1.0, 0]), 3: np.array([0, 1.0, 0]),
        4: np.array([0, 0, -1.0]), 5: np.array([0, 0, 1.0]),
    }
    owner = {}
    for lab in named:
        direction = out.region_centroids[lab] - out.centroid
        n = np.linalg.norm(direction)
        direction = direction / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
        scores = {code: float(direction @ d) for code, d in face_dirs.items()}
        best_code = max(sorted(scores), key=lambda c: scores[c])
        if best_code not in owner or scores[best_code] > owner[best_code][1]:
            owner[best_code] = (lab, scores[best_code])

    from scipy.spatial import cKDTree

    phi_t = out.phi_t.reshape(-1)
    phi_o = out.phi_o.reshape(-1)
    for code, (lab, _score) in sorted(owner.items()):
        cells = np.nonzero(codes == code)[0]
        if cells.size == 0:
            continue
        phi_t[cells] = out.label_index(lab)
        verdict = understanding.observability.get(lab)
        if verdict is None:
            continue
        if verdict != "observable":
            phi_o[cells] = OBS_OCCLUDED
            continue
        starts = flat_centers[cells]
        if truth is not None:
            pts = truth.points_of(lab)
            _, nearest = cKDTree(pts).query(starts)
            anchors = pts[nearest]
        else:
            anchors = np.broadcast_to(out.region_centroids[lab], starts.shape)
        blocked = segments_blocked(out, starts, anchors)
        phi_o[cells] = np.where(blocked, OBS_OCCLUDED, OBS_OBSERVABLE)
    return out


def region_observability(field: VoxelField, truth: GroundTruth,
                         probe_cells=(4, 6, 8)) -> dict:
    """Geometric observability verdict per region.

    A region is observable when some outward probe point above the support
    plane has an unblocked segment to the region's nearest surface point.
    """
    verdicts = {}
    for lab in field.labels:
        c_r = field.region_centroids[lab]
        direction = c_r - field.centroid
        n = np.linalg.norm(direction)
        direction = direction / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
        observable = False
        for cells in probe_cells:
            probe = c_r + direction * cells * field.cell_size
            if probe[2] < field.support_height:
                continue
            if field.contains(probe):
                idx = tuple(np.floor((probe - field.origin) / field.cell_size).astype(int))
                if field.occupancy[idx] != OCC_FREE:
                    continue
            anchor = nearest_region_point(truth, lab, probe)
            if not segment_blocked(field, probe, anchor):
                observable = True
                break
        verdicts[lab] = "observable" if observable else "occluded"
    return verdicts


def remap(old: VoxelField, transform: Pose) -> VoxelField:
    """Carry attributes through a rigid motion of the object.

    Each new cell center is pulled back through the inverse motion and copies
    the attributes of its containing old cell; occupancy is recomputed from the
    transformed bbox, never copied.
    """
    corners = np.array(
        [
            [x, y, z]
            for x in (old.object_bbox[0][0], old.object_bbox[1][0])
            for y in (old.object_bbox[0][1], old.object_bbox[1][1])
            for z in (old.object_bbox[0][2], old.object_bbox[1][2])
        ]
    )
    moved = transform.transform_points(corners)
    new_bbox = (moved.min(axis=0), moved.max(axis=0))
    out = VoxelField(
        old.origin, old.cell_size, old.dims, old.labels, new_bbox,
        transform.transform_point(old.centroid), old.support_height,
        {k: transform.transform_point(v) for k, v in old.region_centroids.items()},
    )
    _compute_occupancy(out)

    centers = out.cell_centers().reshape(-1, 3)
    back = transform.inverse().transform_points(centers)
    idx = np.floor((back - old.origin) / old.cell_size).astype(int)
    inside = np.all(idx >= 0, axis=1) & np.all(idx < np.array(old.dims), axis=1)
    flat_new = np.arange(centers.shape[0])[inside]
    src = tuple(idx[inside].T)
    for attr in ("phi_omega", "phi_t", "phi_o", "phi_a"):
        dst = getattr(out, attr).reshape(-1)
        dst[flat_new] = getattr(old, attr)[src]
    return out


def save_field(field: VoxelField, json_path, arrays_path) -> None:
    meta = {
        "origin": field.origin.tolist(),
        "cell_size": field.cell_size,
        "dims": list(field.dims),
        "labels": field.labels,
        "object_bbox": [field.object_bbox[0].tolist(), field.object_bbox[1].tolist()],
        "centroid": field.centroid.tolist(),
        "support_height": field.support_height,
        "region_centroids": {k: v.tolist() for k, v in field.region_centroids.items()},
        "arrays": str(arrays_path),
    }
    with open(json_path, "w") as f:
        json.dump(meta, f, indent=2)
    np.savez(
        arrays_path,
        occupancy=field.occupancy,
        phi_omega=field.phi_omega.astype(np.float32),
        phi_t=field.phi_t,
        phi_o=field.phi_o,
        phi_a=field.phi_a.astype(np.float32),
    )


def load_field(json_path) -> VoxelField:
    with open(json_path) as f:
        meta = json.load(f)
    field = VoxelField(
        meta["origin"], meta["cell_size"], meta["dims"], meta["labels"],
        (meta["object_bbox"][0], meta["object_bbox"][1]), meta["centroid"],
        meta["support_height"], meta["region_centroids"],
    )
    with np.load(meta["arrays"]) as arrays:
        field.occupancy = arrays["occupancy"]
        field.phi_omega = arrays["phi_omega"].astype(float)
        field.phi_t = arrays["phi_t"]
        field.phi_o = arrays["phi_o"]
        field.phi_a = arrays["phi_a"].astype(float)
    return field
