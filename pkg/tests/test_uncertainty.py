import numpy as np
import pytest

from splatplan.errors import EmptyCalibration
from splatplan.geometry import CameraIntrinsics, GaussianPrimitive, SplatModel, logit, look_at
from splatplan.render import DepthWeightProfile, render
from splatplan.uncertainty import (
    UncertaintyConfig,
    calibrate_threshold,
    entropy_map,
    pixel_entropy,
    projected_hull_mask,
    view_uncertainty,
)


def profile(depths, weights):
    return DepthWeightProfile(depths, weights, np.arange(len(depths)))


# ------------------------------------------------------------- pixel_entropy

def test_point_mass_entropy_zero():
    assert pixel_entropy(profile([1.0], [0.9])) == pytest.approx(0.0, abs=1e-12)


def test_uniform_four_entries():
    p = profile([1, 2, 3, 4], [0.2, 0.2, 0.2, 0.2])
    assert pixel_entropy(p) == pytest.approx(np.log(4), abs=1e-9)


def test_scalar_arithmetic_oracle():
    w = np.array([0.6, 0.3, 0.1])
    expected = float(-(w * np.log(w)).sum())  # already normalized
    assert pixel_entropy(profile([1, 2, 3], w)) == pytest.approx(expected, abs=1e-12)
    assert pixel_entropy(profile([1, 2, 3], w)) == pytest.approx(0.8979, abs=2e-4)


def test_scale_invariance_property():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        w = rng.uniform(1e-6, 1.0, n)
        w = w / w.sum() * rng.uniform(0.1, 1.0)
        d = np.sort(rng.uniform(0.5, 5.0, n))
        c = float(rng.uniform(0.01, 100.0))
        e1 = pixel_entropy(profile(d, w))
        e2 = pixel_entropy(profile(d, w * c))
        assert e1 == pytest.approx(e2, abs=1e-9)
        assert -1e-12 <= e1 <= np.log(n) + 1e-9  # concentration bound


def test_empty_profile_value():
    p = profile([], [])
    assert pixel_entropy(p) == float("inf")
    assert pixel_entropy(p, empty_value=0.5) == 0.5


# ---------------------------------------------------------- view_uncertainty

def build_render(entropy_rows, size=4):
    """Synthesize a RenderOutput-like object via a real render is overkill here;
    instead build profiles directly through render of simple scenes in other
    tests. This helper fabricates CSR arrays for counting tests."""
    from splatplan.render import RenderOutput

    npix = size * size
    offsets = [0]
    depths, weights, prims = [], [], []
    for i in range(npix):
        entries = entropy_rows[i]
        for d, w in entries:
            depths.append(d)
            weights.append(w)
            prims.append(0)
        offsets.append(len(depths))
    return RenderOutput(
        color=np.zeros((size, size, 3)),
        depth=np.zeros((size, size)),
        alpha=np.zeros((size, size)),
        transmittance=np.ones((size, size)),
        profile_offsets=np.array(offsets),
        entry_depths=np.array(depths, dtype=float),
        entry_weights=np.array(weights, dtype=float),
        entry_prims=np.array(prims),
        max_weight_per_primitive=np.zeros(1),
    )


def test_all_single_entry_profiles_zero_ratio():
    rows = [[(1.0, 0.8)] for _ in range(16)]
    rv = build_render(rows)
    um = view_uncertainty(rv, threshold=0.01)
    assert um.ratio == 0.0
    assert um.pixel_count == 16


def test_counting_case_three_of_twelve():
    spread = [(1.0, 0.25), (2.0, 0.25), (3.0, 0.25), (4.0, 0.25)]  # entropy ln4
    rows = [[(1.0, 0.9)] for _ in range(16)]
    for i in (0, 5, 10):
        rows[i] = spread
    rows[3] = [(1.0, 0.5), (2.0, 0.5)]  # entropy ln2, below threshold ln3
    rv = build_render(rows)
    um = view_uncertainty(rv, threshold=np.log(3.0))
    assert um.pixel_count == 16
    assert um.ratio == pytest.approx(3.0 / 16.0)
    # 3 of 12: restrict by mask so only 12 pixels are in scope
    mask = np.zeros((4, 4), dtype=bool)
    rows2 = [[(1.0, 0.9)] for _ in range(12)] + [[] for _ in range(4)]
    for i in (0, 5, 10):
        rows2[i] = spread
    rv2 = build_render(rows2)  # 4 empty pixels, all outside the mask
    um2 = view_uncertainty(rv2, threshold=np.log(3.0), object_mask=mask)
    assert um2.pixel_count == 12
    assert um2.ratio == pytest.approx(0.25)


def test_empty_pixels_inside_mask_count_as_uncertain():
    rows = [[(1.0, 0.9)] for _ in range(16)]
    rows[2] = []
    rows[9] = []
    rv = build_render(rows)
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 2] = True  # pixel 2 empty and inside the mask
    um = view_uncertainty(rv, threshold=0.5, object_mask=mask)
    assert um.pixel_count == 15  # 14 covered + 1 empty-in-mask
    assert um.ratio == pytest.approx(1.0 / 15.0)
    strict = view_uncertainty(
        rv, threshold=0.5, object_mask=mask, config=UncertaintyConfig(strict_total_pixels=True)
    )
    assert strict.pixel_count == 16
    assert strict.ratio == pytest.approx(2.0 / 16.0)


def test_threshold_monotonicity():
    rng = np.random.default_rng(3)
    rows = []
    for _ in range(16):
        n = int(rng.integers(1, 6))
        w = rng.uniform(0.05, 0.3, n)
        d = np.sort(rng.uniform(1, 4, n))
        rows.append(list(zip(d, w)))
    rv = build_render(rows)
    ratios = [view_uncertainty(rv, t).ratio for t in (0.0, 0.3, 0.8, 1.2, 2.0)]
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


def test_degraded_region_raises_omega():
    # pristine: a tight sheet of near-opaque splats; degraded: same sheet with
    # jittered depths and weak opacities
    intr = CameraIntrinsics(32, 32, 40.0, 40.0, 16.0, 16.0)
    pose = look_at((0, 0, 1.5), (0, 0, 0), up=(0, 1, 0))
    rng = np.random.default_rng(12)

    def sheet(jitter, opacity):
        prims = []
        for x in np.linspace(-0.3, 0.3, 7):
            for y in np.linspace(-0.3, 0.3, 7):
                z = rng.normal(0, jitter) if jitter else 0.0
                prims.append(
                    GaussianPrimitive(
                        (x, y, z), (0.06, 0.06, 0.02), (1, 0, 0, 0),
                        float(logit(opacity)), (0.5, 0.5, 0.5),
                    )
                )
        return SplatModel.from_primitives(prims)

    pristine = render(sheet(0.0, 0.98), pose, intr)
    degraded = render(sheet(0.15, 0.35), pose, intr)
    xi_t = calibrate_threshold([pristine], quantile=0.99)
    om_p = view_uncertainty(pristine, xi_t).ratio
    om_d = view_uncertainty(degraded, xi_t).ratio
    assert om_d > om_p


# ------------------------------------------------------- calibrate_threshold

def test_calibrate_all_zero():
    rows = [[(1.0, 0.9)] for _ in range(16)]
    rv = build_render(rows)
    assert calibrate_threshold([rv]) == 0.0


def test_calibrate_quantile_oracle():
    # 1000 covered pixels: 999 zero entropies, one ln2 outlier -> q99 is 0
    rows = []
    for i in range(1000):
        rows.append([(1.0, 0.5), (2.0, 0.5)] if i == 0 else [(1.0, 0.9)])
    from splatplan.render import RenderOutput

    npix = 1000
    offsets = [0]
    depths, weights = [], []
    for r in rows:
        for d, w in r:
            depths.append(d)
            weights.append(w)
        offsets.append(len(depths))
    rv = RenderOutput(
        color=np.zeros((40, 25, 3)), depth=np.zeros((40, 25)), alpha=np.zeros((40, 25)),
        transmittance=np.ones((40, 25)), profile_offsets=np.array(offsets),
        entry_depths=np.array(depths), entry_weights=np.array(weights),
        entry_prims=np.zeros(len(depths), dtype=int), max_weight_per_primitive=np.zeros(1),
    )
    assert calibrate_threshold([rv], quantile=0.99) == pytest.approx(0.0, abs=1e-12)
    # median of a near-uniform entropy pool sits near the pool median
    rng = np.random.default_rng(5)
    target = rng.uniform(0, 1, 1000)
    rows2 = []
    for t in target:
        # two-entry profile with entropy t: solve H(p) = t for p via bisection
        lo, hi = 1e-9, 0.5
        for _ in range(60):
            mid = (lo + hi) / 2
            h = -(mid * np.log(mid) + (1 - mid) * np.log(1 - mid))
            if h < t:
                lo = mid
            else:
                hi = mid
        rows2.append([(1.0, lo), (2.0, 1 - lo)])
    offsets = [0]
    depths, weights = [], []
    for r in rows2:
        for d, w in r:
            depths.append(d)
            weights.append(w)
        offsets.append(len(depths))
    rv2 = RenderOutput(
        color=np.zeros((40, 25, 3)), depth=np.zeros((40, 25)), alpha=np.zeros((40, 25)),
        transmittance=np.ones((40, 25)), profile_offsets=np.array(offsets),
        entry_depths=np.array(depths), entry_weights=np.array(weights),
        entry_prims=np.zeros(len(depths), dtype=int), max_weight_per_primitive=np.zeros(1),
    )
    med = calibrate_threshold([rv2], quantile=0.5)
    assert med == pytest.approx(np.quantile(target, 0.5), abs=0.05)


def test_calibrate_empty_raises():
    from splatplan.render import RenderOutput

    rv = RenderOutput(
        color=np.zeros((4, 4, 3)), depth=np.zeros((4, 4)), alpha=np.zeros((4, 4)),
        transmittance=np.ones((4, 4)), profile_offsets=np.zeros(17, dtype=int),
        entry_depths=np.zeros(0), entry_weights=np.zeros(0),
        entry_prims=np.zeros(0, dtype=int), max_weight_per_primitive=np.zeros(1),
    )
    with pytest.raises(EmptyCalibration):
        calibrate_threshold([rv])


def test_quantile_validation():
    with pytest.raises(ValueError):
        calibrate_threshold([], quantile=1.5)


# ------------------------------------------------------------------ the mask

def test_projected_hull_mask_contains_object():
    intr = CameraIntrinsics(32, 32, 40.0, 40.0, 16.0, 16.0)
    pose = look_at((0, 0, 1.5), (0, 0, 0), up=(0, 1, 0))
    pts = np.array([[x, y, 0.0] for x in (-0.2, 0.2) for y in (-0.2, 0.2)])
    mask = projected_hull_mask(pts, pose, intr)
    assert mask[16, 16]
    assert not mask[0, 0]
    assert 0 < mask.sum() < 32 * 32


def test_entropy_map_matches_pixel_entropy():
    intr = CameraIntrinsics(16, 16, 20.0, 20.0, 8.0, 8.0)
    pose = look_at((0.1, 0.05, 1.2), (0, 0, 0), up=(0, 1, 0))
    rng = np.random.default_rng(77)
    prims = []
    for _ in range(8):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        prims.append(
            GaussianPrimitive(
                rng.uniform(-0.2, 0.2, 3), rng.uniform(0.05, 0.1, 3), q,
                float(logit(rng.uniform(0.3, 0.8))), rng.uniform(0, 1, 3),
            )
        )
    rv = render(SplatModel.from_primitives(prims), pose, intr)
    ent = entropy_map(rv)
    for row in range(0, 16, 3):
        for col in range(0, 16, 3):
            prof = rv.profile(row, col)
            expected = pixel_entropy(prof) if len(prof) else 0.0
            assert ent[row, col] == pytest.approx(expected, abs=1e-9)
