import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import zoom_grid_search
from dcepk.aif import plasma_curve
from dcepk.core import AcqParams, AuxMaps, ConfigError, DceSeries, PlasmaCurve, SingularDesign, TkModel
from dcepk.fitting import (
    FAIL_INVERSION, FLAG_CLAMPED, FLAG_DEGENERATE_KEP, FitConfig, fit_curve, fit_etofts_lls, fit_nlls,
    fit_patlak_lls, fit_volume, to_external, to_internal,
)
from dcepk.phantom import LESION_RANGES, TUMOR_ACQ, PhantomConfig, generate_phantom
from dcepk.physics import etofts_concentration, patlak_concentration, tissue_concentration

# Median relative K^trans error of NLLS on 200 noisy lesion voxels (sigma 0.01 mM).
# A zoom grid search on 5 of those voxels finds least-squares minimisers whose
# K^trans errors average 0.062 (0.118, 0.012, 0.127, 0.0018, 0.052); the
# threshold adds 50% for sampling spread.
NOISY_MEDIAN_THRESHOLD = 0.10


def fine_cp():
    acq = AcqParams(0.0028, np.radians(10), 3.47, 6.5 / 4, 257, 16)
    return plasma_curve(acq)


def test_patlak_lls_recovers_table_magnitudes(cp):
    ct = patlak_concentration(0.013 / 60, 0.00454, cp)
    res = fit_patlak_lls(ct, cp)
    k, vp = to_external("patlak", res.parameters)
    assert k == pytest.approx(0.013, rel=1e-9)
    assert vp == pytest.approx(0.00454, rel=1e-9)
    assert res.residual_norm < 1e-12


def test_patlak_lls_pure_vascular(cp):
    res = fit_patlak_lls(0.02 * cp.values_mM, cp)
    assert abs(res.parameters[0]) <= 1e-12
    assert res.parameters[1] == pytest.approx(0.02, abs=1e-12)


def test_lls_zero_curve(cp):
    np.testing.assert_array_equal(fit_patlak_lls(np.zeros(65), cp).parameters, [0.0, 0.0])
    res = fit_etofts_lls(np.zeros(65), cp)
    assert res.parameters[0] == 0.0 and res.parameters[1] == 0.0


def test_patlak_lls_zero_plasma_is_singular():
    cp = PlasmaCurve(np.zeros(10), np.arange(10.0))
    with pytest.raises(SingularDesign):
        fit_patlak_lls(np.zeros(10), cp)


def test_etofts_lls_fine_grid():
    cp = fine_cp()
    ct = etofts_concentration(0.013 / 60, 0.00454, 0.042, cp)
    p = to_external("etofts", fit_etofts_lls(ct, cp).parameters)
    np.testing.assert_allclose(p, [0.013, 0.00454, 0.042], rtol=1e-3)


def test_etofts_lls_error_is_second_order():
    errs = []
    for factor in (1, 2, 4):
        acq = AcqParams(0.0028, np.radians(10), 3.47, 6.5 / factor, 64 * factor + 1, 4 * factor)
        cp = plasma_curve(acq)
        ct = etofts_concentration(0.013 / 60, 0.00454, 0.042, cp)
        p = to_external("etofts", fit_etofts_lls(ct, cp).parameters)
        errs.append(np.max(np.abs(p / [0.013, 0.00454, 0.042] - 1)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_etofts_lls_degenerate_kep(cp):
    res = fit_etofts_lls(0.01 * cp.values_mM, cp)
    assert res.degenerate_kep
    assert res.flags & FLAG_DEGENERATE_KEP
    assert np.isnan(res.parameters[2])
    assert abs(res.parameters[0]) < 1e-12


def test_lls_negative_estimates_are_clamped(cp):
    res = fit_patlak_lls(-0.02 * cp.values_mM, cp)
    assert res.clamped and res.flags & FLAG_CLAMPED
    assert res.parameters[1] == 0.0


def test_nlls_patlak_converges_immediately(cp):
    ct = patlak_concentration(0.013 / 60, 0.00454, cp)
    lls = fit_patlak_lls(ct, cp)
    res = fit_nlls(ct, cp, FitConfig(method="nlls", model="patlak"))
    assert res.converged and res.iterations_used <= 3
    np.testing.assert_allclose(res.parameters, lls.parameters, rtol=1e-10)


def test_nlls_etofts_from_perturbed_start(cp):
    truth = [0.013, 0.00454, 0.042]
    ct = etofts_concentration(0.013 / 60, 0.00454, 0.042, cp)
    guess = dict(zip(("ktrans", "vp", "ve"), np.array(truth) * 1.5))
    res = fit_nlls(ct, cp, FitConfig(method="nlls", model="etofts", initial_guess=guess))
    assert res.converged
    np.testing.assert_allclose(to_external("etofts", res.parameters), truth, rtol=1e-6)
    assert res.residual_norm < 1e-12


def test_nlls_residual_never_increases(cp, rng):
    ct = etofts_concentration(0.012 / 60, 0.005, 0.04, cp).values_mM + rng.normal(0, 0.01, 65)
    res = fit_nlls(ct, cp, FitConfig(method="nlls", model="etofts", initial_guess={"ktrans": 0.1, "vp": 0.1, "ve": 0.5}))
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert len(res.history) > 3


def test_nlls_requires_nlls_method(cp):
    with pytest.raises(ConfigError):
        fit_nlls(np.zeros(65), cp, FitConfig())


def test_nlls_noise_against_grid_oracle():
    cp = plasma_curve(TUMOR_ACQ)
    t, c = cp.time_seconds, cp.values_mM
    rng = np.random.default_rng(7)
    truth = np.column_stack([rng.uniform(*LESION_RANGES[k], 200) for k in ("ktrans", "vp", "ve")])
    clean = tissue_concentration("etofts", c, t, truth[:, 0] / 60, truth[:, 1], truth[:, 2])
    noisy = clean + rng.normal(0, 0.01, clean.shape)
    cfg = FitConfig(method="nlls", model="etofts")
    fits = [fit_nlls(y, cp, cfg) for y in noisy]
    err = [abs(to_external("etofts", f.parameters)[0] / k - 1) for f, k in zip(fits, truth[:, 0])]
    assert np.median(err) < NOISY_MEDIAN_THRESHOLD
    lo, hi = cfg.internal_bounds()
    y = noisy[1]
    _, f_grid, _ = zoom_grid_search(
        lambda p: np.sum((tissue_concentration("etofts", c, t, p[:, 0], p[:, 1], p[:, 2]) - y) ** 2, axis=1), lo, hi)
    assert fits[1].residual_norm ** 2 == pytest.approx(f_grid, abs=1e-8)


@given(st.floats(0.001, 0.02), st.floats(0.001, 0.05), st.floats(0.01, 0.5), st.floats(0.1, 50.0))
def test_joint_scaling_invariance(k, vp, ve, scale):
    cp = plasma_curve(TUMOR_ACQ)
    ct = etofts_concentration(k / 60, vp, ve, cp).values_mM
    scaled = PlasmaCurve(cp.values_mM * scale, cp.time_seconds)
    for cfg in (FitConfig(model="patlak"), FitConfig(model="etofts")):
        a = fit_curve(ct, cp, cfg).parameters
        b = fit_curve(ct * scale, scaled, cfg).parameters
        np.testing.assert_allclose(b, a, rtol=1e-7, atol=1e-12)


@pytest.fixture(scope="module")
def small_phantom():
    return generate_phantom(PhantomConfig(width=24, height=24, model="patlak", seed=3))


def test_fit_volume_recovers_phantom(small_phantom):
    ph = small_phantom
    vf = fit_volume(ph.series, ph.cp, ph.aux, FitConfig(model="patlak"))
    m = ph.aux.mask
    assert vf.n_failed == 0
    for a, b in zip(vf.pk.as_stack(), ph.pk.as_stack()):
        np.testing.assert_allclose(a[m], b[m], rtol=1e-6)
    assert not vf.pk.as_stack()[:, ~m].any()


def test_fit_volume_thread_count_is_irrelevant(small_phantom):
    ph = small_phantom
    cfg = FitConfig(method="nlls", model="patlak")
    a = fit_volume(ph.series, ph.cp, ph.aux, cfg, n_workers=1)
    b = fit_volume(ph.series, ph.cp, ph.aux, cfg, n_workers=3)
    np.testing.assert_array_equal(a.pk.as_stack(), b.pk.as_stack())
    np.testing.assert_array_equal(a.codes, b.codes)


def test_fit_volume_empty_mask(small_phantom):
    ph = small_phantom
    aux = AuxMaps(ph.aux.t1_seconds, ph.aux.s0, np.zeros(ph.aux.shape, bool))
    vf = fit_volume(ph.series, ph.cp, aux, FitConfig(model="patlak"))
    assert vf.n_failed == 0 and not vf.pk.as_stack().any()


def test_fit_volume_isolates_bad_voxel(small_phantom):
    ph = small_phantom
    data = ph.series.data.copy()
    i, j = np.argwhere(ph.aux.mask)[5]
    data[30, i, j] = 100.0 * ph.aux.s0[i, j]
    vf = fit_volume(DceSeries(data, ph.series.acq), ph.cp, ph.aux, FitConfig(model="patlak"))
    assert vf.codes[i, j] == FAIL_INVERSION
    assert vf.n_failed == 1
    m = ph.aux.mask.copy()
    m[i, j] = False
    np.testing.assert_allclose(vf.pk.ktrans[m], ph.pk.ktrans[m], rtol=1e-6)


def test_config_validation():
    with pytest.raises(ConfigError):
        FitConfig(parameter_bounds={"vp": (1.0, 0.0)})
    with pytest.raises(ConfigError):
        FitConfig(method="gradient-descent")
    assert FitConfig(model="eTofts").model is TkModel.ETOFTS
    np.testing.assert_allclose(to_external("patlak", to_internal("patlak", [0.6, 0.1])), [0.6, 0.1])
