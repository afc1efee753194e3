import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from dcepk.core import EmptyMask, EmptyRegion, ImageTooSmall, PkMap, ShapeMismatch, TkModel
from dcepk.metrics import (
    RegionSpec, evaluate_maps, nrmse, psnr, region_stats, report_csv, ssim, ssim_map,
)


def skimage_ssim(a, b, rng):
    mean, full = structural_similarity(a, b, data_range=rng, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False, full=True)
    return mean, full


def test_ssim_matches_skimage(rng):
    for shape in ((32, 32), (48, 40), (11, 11)):
        a = rng.uniform(0, 1, shape)
        b = a + rng.normal(0, 0.1, shape)
        ref_mean, ref_map = skimage_ssim(b, a, 1.0)
        np.testing.assert_allclose(ssim_map(b, a, 1.0), ref_map, atol=1e-12)
        assert ssim(b, a, 1.0) == pytest.approx(ref_mean, abs=1e-12)


def test_ssim_smooth_images_match_skimage(rng):
    y, x = np.mgrid[0:40, 0:40] / 40.0
    a = np.sin(3 * x) * np.cos(2 * y)
    b = a * 0.9 + 0.05
    assert ssim(b, a, 2.0) == pytest.approx(skimage_ssim(b, a, 2.0)[0], abs=1e-12)


def test_ssim_identity_is_one(rng):
    a = rng.uniform(0, 2, (24, 24))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_respects_mask(rng):
    a = rng.uniform(0, 1, (30, 30))
    b = a.copy()
    b[:, 20:] += rng.normal(0, 0.5, (30, 10))
    m = np.zeros_like(a, bool)
    m[:, :8] = True  # at least 5 px from the corrupted block, so its windows are clean
    assert ssim(b, a, 1.0, m) == pytest.approx(1.0, abs=1e-12)
    assert ssim(b, a, 1.0) < 0.9


def test_ssim_too_small():
    with pytest.raises(ImageTooSmall):
        ssim(np.ones((10, 10)), np.ones((10, 10)), 1.0)


def test_ssim_border_only_mask():
    m = np.zeros((20, 20), bool)
    m[0, :] = True
    with pytest.raises(EmptyMask):
        ssim(np.ones((20, 20)), np.ones((20, 20)), 1.0, m)


def test_psnr_closed_form():
    ref = np.zeros((8, 8))
    ref[0, 0] = 2.0
    pred = ref + 0.1
    # MSE = 0.01, range = max(ref) = 2
    assert psnr(pred, ref) == pytest.approx(10 * math.log10(4 / 0.01), rel=1e-14)
    assert psnr(pred, ref, data_range=1.0) == pytest.approx(20.0, rel=1e-14)


@given(st.floats(1e-6, 1e3), st.floats(1e-4, 1.0))
def test_psnr_scales_with_range(scale, err):
    ref = np.linspace(0, scale, 64).reshape(8, 8)
    pred = ref + err * scale
    assert psnr(pred, ref) == pytest.approx(-20 * math.log10(err), rel=1e-9, abs=1e-9)


def test_psnr_infinite_for_identical_and_round_off(rng):
    ref = rng.uniform(0.1, 1, (16, 16))
    assert psnr(ref, ref) == math.inf
    assert psnr(ref * (1 + 1e-14), ref) == math.inf
    assert math.isfinite(psnr(ref * (1 + 1e-8), ref))


def test_psnr_masked(rng):
    ref = rng.uniform(0.5, 1, (10, 10))
    pred = ref.copy()
    pred[5:] += 100.0
    m = np.zeros_like(ref, bool)
    m[:5] = True
    assert psnr(pred, ref, mask=m) == math.inf


def test_psnr_errors(rng):
    a = rng.uniform(size=(4, 4))
    with pytest.raises(ShapeMismatch):
        psnr(a, a[:3])
    with pytest.raises(EmptyMask):
        psnr(a, a, mask=np.zeros((4, 4), bool))
    with pytest.raises(ValueError):
        psnr(a, np.zeros((4, 4)))


def test_nrmse():
    ref = np.array([0.0, 2.0, 4.0, 2.0])
    pred = ref + np.array([0.4, -0.4, 0.4, -0.4])
    assert nrmse(pred, ref) == pytest.approx(0.1, rel=1e-14)
    assert nrmse(ref, ref) == 0.0
    with pytest.raises(ValueError):
        nrmse(ref, np.ones(4))
    with pytest.raises(ShapeMismatch):
        nrmse(ref, ref[:3])


def _maps():
    labels = np.zeros((12, 12), int)
    labels[2:6, 2:6] = 1
    labels[7:11, 7:11] = 2
    k = np.where(labels == 1, 0.2, np.where(labels == 2, 0.4, 0.0))
    return labels, PkMap(TkModel.PATLAK, k, k * 0.1)


def test_region_stats():
    labels, pk = _maps()
    stats = region_stats(pk, RegionSpec.from_labels(labels))
    assert set(stats) == {1, 2}
    assert stats[1]["ktrans"] == pytest.approx(0.2) and stats[2]["vp"] == pytest.approx(0.04)


def test_region_errors():
    labels, pk = _maps()
    with pytest.raises(EmptyRegion):
        region_stats(pk, RegionSpec(labels, frozenset({1, 7})))
    with pytest.raises(ShapeMismatch):
        region_stats(pk, RegionSpec.from_labels(labels[:5]))


def test_report_rows_and_csv():
    labels, pk = _maps()
    big = PkMap(TkModel.PATLAK, np.tile(pk.ktrans, (2, 2)) + 0.01, np.tile(pk.vp, (2, 2)) + 0.001)
    rows = evaluate_maps(big, big, regions=RegionSpec.from_labels(np.tile(labels, (2, 2))))
    psnrs = [r for r in rows if r["metric"] == "psnr"]
    assert [r["value"] for r in psnrs] == [math.inf, math.inf]
    text = report_csv(rows)
    assert text.splitlines()[0] == "parameter,metric,value,region_id"
    assert "ktrans,psnr,inf," in text and "ktrans,ssim,1.0," in text
    assert sum(1 for r in rows if r["metric"] == "mean_pred") == 4


def test_evaluate_model_mismatch():
    e = PkMap(TkModel.ETOFTS, np.ones((2, 2)) * 0.1, np.ones((2, 2)) * 0.01, np.ones((2, 2)) * 0.2)
    p = PkMap(TkModel.PATLAK, np.ones((2, 2)) * 0.1, np.ones((2, 2)) * 0.01)
    with pytest.raises(ShapeMismatch):
        evaluate_maps(e, p)
