import numpy as np
import pytest

from splatplan.geometry import GroundTruth, SplatModel
from splatplan.ply import load_ground_truth, load_splat_model, save_ground_truth, save_splat_model


def make_model(rng, n=17):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SplatModel(
        rng.uniform(-1, 1, (n, 3)),
        rng.uniform(0.01, 0.5, (n, 3)),
        q,
        rng.normal(size=n),
        rng.uniform(0, 1, (n, 3)),
        object_id="roundtrip",
    )


@pytest.mark.parametrize("binary", [True, False])
def test_splat_round_trip(tmp_path, binary):
    rng = np.random.default_rng(1)
    model = make_model(rng)
    path = tmp_path / "model.ply"
    save_splat_model(path, model, binary=binary)
    back = load_splat_model(path)
    assert back.object_id == "roundtrip"
    np.testing.assert_allclose(back.means, model.means, atol=1e-12)
    np.testing.assert_allclose(back.scales, model.scales, atol=1e-12)
    np.testing.assert_allclose(back.rotations, model.rotations, atol=1e-12)
    np.testing.assert_allclose(back.opacity_logits, model.opacity_logits, atol=1e-12)
    np.testing.assert_allclose(back.colors, model.colors, atol=1e-12)


@pytest.mark.parametrize("binary", [True, False])
def test_ground_truth_round_trip(tmp_path, binary):
    rng = np.random.default_rng(2)
    pts = rng.uniform(-0.2, 0.2, (40, 3))
    labels = [["bottom", "top", "side:+x", "side:-y"][i % 4] for i in range(40)]
    truth = GroundTruth(pts, labels)
    path = tmp_path / "truth.ply"
    save_ground_truth(path, truth, binary=binary)
    back = load_ground_truth(path)
    np.testing.assert_allclose(back.surface_points, truth.surface_points, atol=1e-12)
    assert back.region_labels == labels


def test_ascii_and_binary_agree(tmp_path):
    rng = np.random.default_rng(3)
    model = make_model(rng, n=5)
    pa, pb = tmp_path / "a.ply", tmp_path / "b.ply"
    save_splat_model(pa, model, binary=False)
    save_splat_model(pb, model, binary=True)
    ma, mb = load_splat_model(pa), load_splat_model(pb)
    np.testing.assert_allclose(ma.means, mb.means, atol=1e-12)
    np.testing.assert_allclose(ma.rotations, mb.rotations, atol=1e-12)


def test_load_rejects_non_ply(tmp_path):
    path = tmp_path / "bogus.ply"
    path.write_bytes(b"not a ply file")
    with pytest.raises(ValueError):
        load_splat_model(path)
