"""Procedural desk-scale objects (box, mug, figurine) as splat sets.

Each generator emits a pristine SplatModel together with its GroundTruth: the
ground-truth surface points are exactly the primitive means (1:1), labeled with
the closed region vocabulary and carrying outward normals. Surfaces are
flattened along their normals (one small scale axis) and painted with simple
procedural texture so rendering metrics have signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .geometry import GroundTruth, SplatModel, logit, matrix_to_quat

OBJECT_KINDS = ("box", "mug", "figurine")

_OPACITY_LOGIT = float(logit(0.9995))

_DIRECTIONS = {
    "side:+x": np.array([1.0, 0.0, 0.0]),
    "side:-x": np.array([-1.0, 0.0, 0.0]),
    "side:+y": np.array([0.0, 1.0, 0.0]),
    "side:-y": np.array([0.0, -1.0, 0.0]),
    "top": np.array([0.0, 0.0, 1.0]),
    "bottom": np.array([0.0, 0.0, -1.0]),
}


def _frame_quat(normal) -> np.ndarray:
    """Quaternion whose local z-axis aligns with the outward normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return matrix_to_quat(np.column_stack([t1, t2, n]))


def _texture(p, base, stripe_axis=0, freq=55.0) -> np.ndarray:
    """Deterministic per-point color: base tint plus positional stripes."""
    v = 0.5 + 0.5 * np.sin(freq * p[stripe_axis] + 20.0 * p[2])
    color = np.asarray(base, dtype=float) * (0.55 + 0.45 * v)
    return np.clip(color, 0.0, 1.0)


def direction_label(p, centroid, half_extent) -> str:
    """Region label by dominant normalized offset from the centroid."""
    d = (np.asarray(p, dtype=float) - centroid) / np.maximum(half_extent, 1e-9)
    axis = int(np.argmax(np.abs(d)))
    if axis == 2:
        return "top" if d[2] > 0 else "bottom"
    if axis == 0:
        return "side:+x" if d[0] > 0 else "side:-x"
    return "side:+y" if d[1] > 0 else "side:-y"


def _assemble(points, normals, labels, scales, colors, object_id) -> tuple[SplatModel, GroundTruth]:
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    rotations = np.array([_frame_quat(n) for n in normals])
    model = SplatModel(
        points, np.asarray(scales, dtype=float), rotations,
        np.full(len(points), _OPACITY_LOGIT), np.asarray(colors, dtype=float),
        object_id=object_id,
    )
    truth = GroundTruth(points, list(labels), normals=normals)
    return model, truth


def make_box(width=0.26, depth=0.2, height=0.16, n=9):
    """Textured box resting on the table (bottom at z = 0)."""
    pts, normals, labels, colors = [], [], [], []
    hx, hy = width / 2, depth / 2
    xs = np.linspace(-hx, hx, n)
    ys = np.linspace(-hy, hy, n)
    zs = np.linspace(0.0, height, n)
    bases = {
        "top": (0.85, 0.3, 0.25), "bottom": (0.3, 0.3, 0.8),
        "side:+x": (0.9, 0.75, 0.2), "side:-x": (0.25, 0.7, 0.35),
        "side:+y": (0.75, 0.4, 0.75), "side:-y": (0.35, 0.75, 0.8),
    }
    for x in xs:
        for y in ys:
            for lab, z in (("bottom", 0.0), ("top", height)):
                pts.append([x, y, z])
                normals.append(_DIRECTIONS[lab])
                labels.append(lab)
                colors.append(_texture([x, y, z], bases[lab]))
    for y in ys:
        for z in zs[1:-1]:
            for lab, x in (("side:+x", hx), ("side:-x", -hx)):
                pts.append([x, y, z])
                normals.append(_DIRECTIONS[lab])
                labels.append(lab)
                colors.append(_texture([x, y, z], bases[lab], stripe_axis=1))
    for x in xs:
        for z in zs[1:-1]:
            for lab, y in (("side:+y", hy), ("side:-y", -hy)):
                pts.append([x, y, z])
                normals.append(_DIRECTIONS[lab])
                labels.append(lab)
                colors.append(_texture([x, y, z], bases[lab]))
    spacing = max(width, depth, height) / (n - 1)
    scales = np.tile([spacing * 0.8, spacing * 0.8, spacing * 0.22], (len(pts), 1))
    return _assemble(pts, normals, labels, scales, colors, "box")


def make_mug(radius=0.09, height=0.22, wall=0.018, n_phi=26, n_z=9):
    """Cylinder with a deep, narrow cavity and a side handle, resting at z = 0.

    The cavity interior is fully enclosed by opaque walls, so its floor and
    lower walls are reachable only through the narrow rim opening: concave
    geometry that rewards precisely aimed steep views.
    """
    pts, normals, labels, colors = [], [], [], []

    def side_label(phi):
        x, y = np.cos(phi), np.sin(phi)
        if abs(x) >= abs(y):
            return "side:+x" if x > 0 else "side:-x"
        return "side:+y" if y > 0 else "side:-y"

    zs = np.linspace(0.0, height, n_z)
    for k, z in enumerate(zs[1:-1], start=1):
        for i in range(n_phi):
            phi = 2 * np.pi * (i + 0.5 * (k % 2)) / n_phi
            p = [radius * np.cos(phi), radius * np.sin(phi), z]
            pts.append(p)
            normals.append([np.cos(phi), np.sin(phi), 0.0])
            labels.append(side_label(phi))
            colors.append(_texture(p, (0.85, 0.55, 0.25), stripe_axis=2, freq=80.0))
    # bottom disk (outer, faces the table)
    for r in np.linspace(0.0, radius - wall / 2, 4):
        count = max(1, int(round(n_phi * r / radius)))
        for i in range(count):
            phi = 2 * np.pi * i / count
            p = [r * np.cos(phi), r * np.sin(phi), 0.0]
            pts.append(p)
            normals.append([0.0, 0.0, -1.0])
            labels.append("bottom")
            colors.append(_texture(p, (0.3, 0.5, 0.85)))
    # rim lip: annulus narrowing the mouth so the cavity interior is reachable
    # only through a small opening (jar-like)
    mouth = 0.048
    for r_lip in np.linspace(radius - wall / 2, mouth, 3):
        count = max(8, int(round(n_phi * r_lip / radius)))
        for i in range(count):
            phi = 2 * np.pi * i / count
            p = [r_lip * np.cos(phi), r_lip * np.sin(phi), height]
            pts.append(p)
            normals.append([0.0, 0.0, 1.0])
            labels.append("top")
            colors.append(_texture(p, (0.9, 0.85, 0.7)))
    # inner cavity wall: full rings down to a deep floor
    r_in = radius - wall
    inner_rings = np.linspace(height * 0.96, height * 0.16, 10)
    n_inner = n_phi - 4
    for k, z in enumerate(inner_rings):
        for i in range(n_inner):
            phi = 2 * np.pi * (i + 0.5 * (k % 2)) / n_inner
            p = [r_in * np.cos(phi), r_in * np.sin(phi), z]
            pts.append(p)
            normals.append([-np.cos(phi), -np.sin(phi), 0.25])
            labels.append("top")
            colors.append(_texture(p, (0.75, 0.7, 0.6), freq=40.0))
    # cavity floor
    for r in np.linspace(0.0, r_in - 0.012, 4):
        count = max(1, int(round(n_inner * r / radius)))
        for i in range(count):
            phi = 2 * np.pi * i / count
            p = [r * np.cos(phi), r * np.sin(phi), height * 0.13]
            pts.append(p)
            normals.append([0.0, 0.0, 1.0])
            labels.append("top")
            colors.append(_texture(p, (0.7, 0.66, 0.55)))
    # handle: arc of beads on the +x side
    arc_r = height * 0.28
    cx, cz = radius + 0.012, height * 0.52
    for t in np.linspace(-np.pi / 2, np.pi / 2, 9):
        p = [cx + arc_r * np.cos(t) * 0.6, 0.0, cz + arc_r * np.sin(t)]
        pts.append(p)
        out = np.array([np.cos(t), 0.0, np.sin(t)])
        normals.append(out)
        labels.append("side:+x")
        colors.append(_texture(p, (0.85, 0.55, 0.25), freq=30.0))
    spacing = 2 * np.pi * radius / n_phi
    scales = np.tile([spacing * 0.8, spacing * 0.8, spacing * 0.24], (len(pts), 1))
    return _assemble(pts, normals, labels, scales, colors, "mug")


def make_figurine(seed_radius=0.105):
    """Multi-lobed figure with a cratered head, resting at z = 0.

    The head lobe carries a narrow bowl recess whose interior is visible only
    from steep, well-aimed views.
    """
    head_center = np.array([0.0, 0.0, 2 * seed_radius + 0.175])
    head_r = 0.052
    lobes = [
        (np.array([0.0, 0.0, seed_radius]), seed_radius, 200),
        (np.array([0.0, 0.015, 2 * seed_radius + 0.06]), 0.075, 120),
        (head_center, head_r, 80),
        (np.array([0.085, 0.0, 0.21]), 0.042, 46),
        (np.array([-0.085, 0.0, 0.21]), 0.042, 46),
        # shoulder joints connect the arms so the silhouette stays gap-free
        (np.array([0.055, 0.0, 0.23]), 0.035, 24),
        (np.array([-0.055, 0.0, 0.23]), 0.035, 24),
    ]
    from .voxel import fibonacci_sphere

    crater_cos = np.cos(np.radians(38.0))
    pts, normals, radii_of = [], [], []
    for center, r, count in lobes:
        dirs = fibonacci_sphere(count)
        for d in dirs:
            if center is head_center and d[2] > crater_cos:
                continue  # carve the crater opening
            p = center + r * d
            if p[2] < 0.0:
                continue
            # skip points swallowed by another lobe
            inside = any(
                np.linalg.norm(p - c2) < r2 - 0.004 for c2, r2, _ in lobes if c2 is not center
            )
            if inside:
                continue
            pts.append(p)
            normals.append(d)
            radii_of.append(r)
    # crater: inner wall rings descending to a small floor inside the head
    rim_r = head_r * np.sin(np.radians(38.0))
    for frac, ring_r in ((0.12, rim_r * 0.97), (0.32, rim_r * 0.9), (0.55, rim_r * 0.75),
                         (0.8, rim_r * 0.5)):
        depth = head_r * (np.cos(np.radians(38.0)) - frac * 1.15)
        n_ring = max(6, int(round(14 * ring_r / rim_r)))
        for i in range(n_ring):
            phi = 2 * np.pi * i / n_ring
            p = head_center + np.array(
                [ring_r * np.cos(phi), ring_r * np.sin(phi), depth]
            )
            inward = np.array([-np.cos(phi) * 0.8, -np.sin(phi) * 0.8, 0.6])
            pts.append(p)
            normals.append(inward / np.linalg.norm(inward))
            radii_of.append(head_r * 0.55)
    floor = head_center + np.array([0.0, 0.0, head_r * (crater_cos - 0.95)])
    pts.append(floor)
    normals.append(np.array([0.0, 0.0, 1.0]))
    radii_of.append(head_r * 0.55)
    pts = np.array(pts)
    normals = np.array(normals)
    centroid = pts.mean(axis=0)
    half_extent = (pts.max(axis=0) - pts.min(axis=0)) / 2.0
    labels = [direction_label(p, centroid, half_extent) for p in pts]
    # anchor the lowest ring to the table so a "bottom" region exists
    low = pts[:, 2] < 0.035
    for i in np.nonzero(low)[0]:
        labels[i] = "bottom"
    colors = np.array(
        [_texture(p, (0.4 + 0.5 * (n[2] > 0), 0.55, 0.75), freq=45.0) for p, n in zip(pts, normals)]
    )
    spacing = np.array(radii_of) * 0.34
    scales = np.column_stack([spacing, spacing, spacing * 0.28])
    return _assemble(pts, normals, labels, scales, colors, "figurine")


def make_object(kind: str):
    if kind == "box":
        return make_box()
    if kind == "mug":
        return make_mug()
    if kind == "figurine":
        return make_figurine()
    raise ValueError(f"unknown object kind {kind!r}; choose from {OBJECT_KINDS}")


# ------------------------------------------------------------- scene configs

@dataclass
class SceneConfig:
    object_kind: str
    seed: int = 0
    support_height: float = 0.0
    degradation_levels: dict = dataclass_field(default_factory=dict)
    sigma_pos: float = 0.06
    sigma_opacity: float = 0.3
    removal: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.object_kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.object_kind!r}")
        for lab, level in self.degradation_levels.items():
            if not (0.0 <= float(level) <= 1.0):
                raise ValueError(f"degradation level for {lab!r} must be in [0, 1]")
        if not self.name:
            self.name = self.object_kind


DEFAULT_SCENES = {
    "box": SceneConfig(
        object_kind="box", sigma_pos=0.08,
        degradation_levels={"bottom": 1.0, "side:+x": 0.7, "top": 0.4},
    ),
    "mug": SceneConfig(
        object_kind="mug", sigma_pos=0.06,
        degradation_levels={"bottom": 1.0, "side:+x": 0.8, "side:-y": 0.8, "top": 0.8},
    ),
    "figurine": SceneConfig(
        object_kind="figurine", sigma_pos=0.06,
        degradation_levels={"bottom": 1.0, "side:+x": 0.7, "side:-x": 0.5, "top": 0.5},
    ),
}


def load_scene_config(path) -> SceneConfig:
    """Read a scene spec from JSON or TOML."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    deg = data.get("degradation", {})
    return SceneConfig(
        object_kind=data["object"],
        seed=int(data.get("seed", 0)),
        support_height=float(data.get("table_height", 0.0)),
        degradation_levels={k: float(v) for k, v in deg.get("levels", {}).items()},
        sigma_pos=float(deg.get("sigma_pos", 0.06)),
        sigma_opacity=float(deg.get("sigma_opacity", 0.3)),
        removal=float(deg.get("removal", 1.0)),
        name=data.get("name", data["object"]),
    )


def scene_config_by_name(name: str) -> SceneConfig:
    if name in DEFAULT_SCENES:
        cfg = DEFAULT_SCENES[name]
        return SceneConfig(
            object_kind=cfg.object_kind, seed=cfg.seed, support_height=cfg.support_height,
            degradation_levels=dict(cfg.degradation_levels), sigma_pos=cfg.sigma_pos,
            sigma_opacity=cfg.sigma_opacity, removal=cfg.removal, name=name,
        )
    return load_scene_config(name)
