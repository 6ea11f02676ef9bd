import numpy as np
import pytest

import nowcast


def test_normalization_round_trip():
    x = np.linspace(0.0, 200.0, 101)
    assert np.allclose(nowcast.denormalize_rate(nowcast.normalize_rate(x)), x, atol=1e-5)
    assert nowcast.normalize_rate(nowcast.MISSING) == 0.0
    with pytest.raises(ValueError):
        nowcast.normalize_rate(250.0)


def test_categories_and_csi():
    assert nowcast.categorize(55.0) == "violent"
    assert nowcast.category_bounds("heavy") == (7.5, 50.0)
    assert nowcast.csi(1, 0, 0) == 1.0
    assert nowcast.csi(2, 1, 1) == 0.5
    assert nowcast.csi(0, 0, 0, 9) is None
    pred = np.array([[10, 10], [1, 1]], dtype=np.float32)
    obs = np.array([[10, 1], [10, 1]], dtype=np.float32)
    assert nowcast.contingency(pred, obs, "heavy") == {"tp": 1, "fp": 1, "fn": 1, "tn": 1}


def test_fss_matches_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = rng.uniform(0, 60, (12, 12)).astype(np.float32)
        b = rng.uniform(0, 60, (12, 12)).astype(np.float32)
        assert nowcast.fss(a, b, "heavy", 3) == pytest.approx(nowcast.fss_bruteforce(a, b, "heavy", 3), abs=1e-9)
    single = np.zeros((5, 5), np.float32)
    single[1, 1] = 10
    moved = np.zeros((5, 5), np.float32)
    moved[2, 2] = 10
    assert nowcast.fss(moved, single, "heavy") == pytest.approx(0.29561200923787534, rel=1e-12)


def test_unet_budget_and_forward(tmp_path):
    ref = nowcast.UNet("radar", reference=True)
    assert ref.layout == {"convs": 20, "pools": 4, "upsamples": 4, "skips": 4}
    assert ref.param_count == 31384645
    assert nowcast.UNet("multimodal", reference=True).param_count > ref.param_count

    m = nowcast.UNet("radar", seed=2)
    x = np.random.default_rng(0).uniform(0, 1, (1, 6, 64, 64, 1)).astype(np.float32)
    y = m.forward(x)
    assert y.shape == (1, 1, 64, 64, 1)
    m.save(tmp_path / "m.rfp")
    other = nowcast.UNet("radar", seed=9)
    other.load(tmp_path / "m.rfp")
    assert np.array_equal(other.forward(x), y)
    with pytest.raises(ValueError):
        nowcast.UNet("radar", rows=66)


def test_synth_preprocess_and_maps(tmp_path):
    index = nowcast.write_synthetic(tmp_path / "data", rows=32, cols=32, frames=40, outlier_frames=2)
    manifest = nowcast.preprocess(index, tmp_path / "prep", keep=1.0, seed=4)
    assert "outliers_removed=2" in manifest
    assert (tmp_path / "prep" / "manifest.txt").exists()

    frames = nowcast.synthetic_frames(rows=16, cols=16, frames=3)
    assert len(frames) == 3 and frames[0].shape == (16, 16)
    nowcast.write_grid(tmp_path / "g.rfg", frames[0])
    assert np.array_equal(nowcast.read_grid(tmp_path / "g.rfg"), frames[0])

    ppm = nowcast.render_map(np.zeros((2, 3), np.float32))
    assert ppm.startswith(b"P6\n3 2\n255\n")
    assert set(ppm[len(b"P6\n3 2\n255\n"):]) == {255}
