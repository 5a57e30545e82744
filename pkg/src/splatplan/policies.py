"""Baseline view-selection policies over a fixed spherical candidate set."""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, Pose, look_at_or_fallback
from .render import RenderConfig, render
from .uncertainty import UncertaintyConfig, projected_hull_mask, view_uncertainty
BASELINE_POLICIES = ("random", "uniform", "uncertainty_greedy")


def candidate_set(truth, radius: float, count: int, support_height: float):
    """Fibonacci-hemisphere candidate poses: spread over the reachable upper
    half-space instead of piling reflected points onto the table circle."""
    i = np.arange(count)
    z = (i + 0.5) / count
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    dirs = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    positions = truth.centroid + radius * dirs
    lift = support_height - positions[:, 2].min()
    if lift > 0:
        positions[:, 2] = np.maximum(positions[:, 2], support_height)
    return [look_at_or_fallback(p, truth.centroid) for p in positions]


def uniform_order(candidates) -> list:
    """Deterministic farthest-point ordering: every prefix spreads evenly.

    A budget smaller than the candidate count then still sweeps the whole
    sphere at roughly equal angles, the preset-trajectory behavior.
    """
    positions = np.array([p.translation for p in candidates])
    center = positions.mean(axis=0)
    dirs = positions - center
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    order = [0]
    remaining = list(range(1, len(candidates)))
    min_dot = dirs @ dirs[0]
    while remaining:
        idx = min(remaining, key=lambda i: (min_dot[i], i))  # farthest first
        order.append(idx)
        remaining.remove(idx)
        min_dot = np.maximum(min_dot, dirs @ dirs[idx])
    return order


class RandomPolicy:
    """Seeded uniform draws without replacement."""

    def __init__(self, candidates, seed: int):
        self.candidates = list(candidates)
        self.rng = np.random.default_rng([seed, 0xA11CE])
        self.remaining = list(range(len(self.candidates)))

    def next_pose(self, world) -> Pose:
        if not self.remaining:
            self.remaining = list(range(len(self.candidates)))
        pick = int(self.rng.integers(len(self.remaining)))
        return self.candidates[self.remaining.pop(pick)]


class UniformPolicy:
    """Fixed equal-angle trajectory; visits every candidate before repeating."""

    def __init__(self, candidates, seed: int = 0):
        self.candidates = list(candidates)
        self.order = uniform_order(candidates)
        self.cursor = 0

    def next_pose(self, world) -> Pose:
        idx = self.order[self.cursor % len(self.order)]
        self.cursor += 1
        return self.candidates[idx]


class UncertaintyGreedyPolicy:
    """Render every remaining candidate and take the most uncertain view."""

    def __init__(self, candidates, xi_t: float, intrinsics: CameraIntrinsics,
                 render_config: RenderConfig = RenderConfig(),
                 uncertainty_config: UncertaintyConfig = UncertaintyConfig()):
        self.candidates = list(candidates)
        self.remaining = list(range(len(self.candidates)))
        self.xi_t = xi_t
        self.intrinsics = intrinsics
        self.render_config = render_config
        self.uncertainty_config = uncertainty_config

    def next_pose(self, world) -> Pose:
        if not self.remaining:
            self.remaining = list(range(len(self.candidates)))
        best_i = 0
        best_omega = -1.0
        for pos, idx in enumerate(self.remaining):
            pose = self.candidates[idx]
            rv = render(world.current, pose, self.intrinsics, self.render_config)
            mask = projected_hull_mask(world.truth.surface_points, pose, self.intrinsics)
            omega = view_uncertainty(rv, self.xi_t, object_mask=mask,
                                     config=self.uncertainty_config).ratio
            if omega > best_omega:
                best_omega = omega
                best_i = pos
        return self.candidates[self.remaining.pop(best_i)]


def make_baseline(name: str, candidates, seed: int, xi_t: float,
                  intrinsics: CameraIntrinsics,
                  render_config: RenderConfig = RenderConfig(),
                  uncertainty_config: UncertaintyConfig = UncertaintyConfig()):
    if name == "random":
        return RandomPolicy(candidates, seed)
    if name == "uniform":
        return UniformPolicy(candidates, seed)
    if name == "uncertainty_greedy":
        return UncertaintyGreedyPolicy(candidates, xi_t, intrinsics,
                                       render_config, uncertainty_config)
    raise ValueError(f"unknown baseline policy {name!r}")
