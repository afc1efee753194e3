import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcepk.aif import (
    AifParams, aif_quality_features, blood_to_plasma, default_aif_params, plasma_curve, population_aif,
)
from dcepk.core import EmptyCurve, PlasmaCurve, UnitError

# default AIF on the 65-frame 6.5 s grid, evaluated in 30-digit arithmetic
DEFAULT_FIRST_MOMENT = 157.071790342451
DEFAULT_PEAK = 10.6689845097984
DEFAULT_AUC = 624.851963950721


def params(**kw):
    return default_aif_params().replace(**kw)


def test_zero_before_arrival():
    t = np.linspace(0, 100, 201)
    cb = population_aif(default_aif_params(), t).values_mM
    assert not np.any(cb[t < 26.0])


def test_gamma_variate_peaks_at_width():
    p = params(recirculation_amplitude_mM=0.0, tail_amplitude_mM=0.0, peak_amplitude_mM=3.0)
    t = 26.0 + np.array([7.99, 8.0, 8.01])
    cb = population_aif(p, t).values_mM
    assert cb[1] == pytest.approx(3.0, abs=1e-14)
    assert cb[1] > cb[0] and cb[1] > cb[2]


def test_default_curve_in_clinical_range():
    t = np.arange(0, 420, 0.1)
    cb = population_aif(default_aif_params(), t).values_mM
    assert 4.0 <= cb.max() <= 8.0
    tail = population_aif(default_aif_params(), np.array([0.0, 326.0])).values_mM[1]
    assert 0.3 <= tail <= 1.0
    assert tail == pytest.approx(0.520142914120034, abs=1e-12)


def test_blood_to_plasma():
    cb = PlasmaCurve(np.ones(3), np.arange(3.0))
    np.testing.assert_allclose(blood_to_plasma(cb, 0.45).values_mM, 1 / 0.55, rtol=1e-15)
    np.testing.assert_array_equal(blood_to_plasma(cb, 0.0).values_mM, cb.values_mM)
    zero = PlasmaCurve(np.zeros(3), np.arange(3.0))
    assert not blood_to_plasma(zero).values_mM.any()
    with pytest.raises(UnitError):
        blood_to_plasma(cb, 1.0)


def test_plasma_curve_zero_before_bolus_frame(acq):
    cp = plasma_curve(acq)
    assert not cp.values_mM[:4].any()
    assert cp.values_mM[4:].min() >= 0


def test_impulse_features():
    c = np.zeros(11)
    c[3] = 2.0
    f = aif_quality_features(PlasmaCurve(c, np.arange(11) * 10.0))
    assert f.first_moment_seconds == 30.0
    assert f.peak_enhancement_mM == 2.0
    assert f.auc_mM_seconds == pytest.approx(20.0)


def test_constant_features():
    t = np.linspace(0, 120, 13)
    f = aif_quality_features(PlasmaCurve(np.full(13, 0.7), t))
    assert f.first_moment_seconds == pytest.approx(60.0)
    assert f.auc_mM_seconds == pytest.approx(0.7 * 120)


def test_default_features_pinned(acq):
    f = aif_quality_features(plasma_curve(acq))
    assert f.first_moment_seconds == pytest.approx(DEFAULT_FIRST_MOMENT, rel=1e-12)
    assert f.peak_enhancement_mM == pytest.approx(DEFAULT_PEAK, rel=1e-12)
    assert f.auc_mM_seconds == pytest.approx(DEFAULT_AUC, rel=1e-12)


def test_empty_curve():
    with pytest.raises(EmptyCurve):
        aif_quality_features(PlasmaCurve(np.zeros(4), np.arange(4.0)))


@given(st.floats(0, 200), st.floats(0.5, 10), st.floats(1, 30), st.floats(0, 3), st.floats(1e-3, 0.1))
def test_output_non_negative(arrival, peak, width, recirc, wash):
    p = params(bolus_arrival_seconds=arrival, peak_amplitude_mM=peak, bolus_width_seconds=width,
               recirculation_amplitude_mM=recirc, washout_rate_per_s=wash)
    cb = population_aif(p, np.linspace(0, 600, 301)).values_mM
    assert np.all(np.isfinite(cb)) and cb.min() >= 0


@given(st.floats(0.0, 200.0))
def test_shift_moves_first_moment(delta):
    t = np.arange(0, 2000, 2.0)
    base = aif_quality_features(population_aif(default_aif_params(), t))
    # shift on the same grid: evaluate the shifted curve at t, the unshifted at t - delta
    shifted = population_aif(params(bolus_arrival_seconds=26.0 + delta), t + delta)
    moved = aif_quality_features(PlasmaCurve(shifted.values_mM, t + delta))
    assert moved.first_moment_seconds == pytest.approx(base.first_moment_seconds + delta, rel=1e-12)


@given(st.floats(0.01, 0.9), st.floats(0.01, 0.9))
def test_hematocrit_is_monotone(h1, h2):
    cb = population_aif(default_aif_params(), np.linspace(0, 300, 50))
    a, b = blood_to_plasma(cb, min(h1, h2)), blood_to_plasma(cb, max(h1, h2))
    assert np.all(a.values_mM <= b.values_mM)


def test_params_validated():
    with pytest.raises(UnitError):
        params(bolus_width_seconds=0.0)
    assert AifParams.from_dict(default_aif_params().to_dict()) == default_aif_params()
