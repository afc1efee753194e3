import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcepk.core import (
    AcqParams, AuxMaps, DceSeries, PkMap, PlasmaCurve, ShapeMismatch, TkModel, UnitError,
    per_min_to_per_s, per_s_to_per_min, validate_units,
)


def test_tumour_acquisition_is_accepted(acq):
    assert validate_units(acq) is acq
    assert acq.time_seconds[-1] == pytest.approx(64 * 6.5)


@pytest.mark.parametrize("field,kw", [
    ("tr", {"tr_seconds": 0.0}),
    ("flip_angle", {"flip_angle_radians": math.pi}),
    ("r1", {"r1_per_mM_per_second": -1.0}),
    ("frame_interval", {"frame_interval_seconds": 0.0}),
    ("n_frames", {"n_frames": 1}),
    ("bolus_arrival_frame", {"bolus_arrival_frame": 65}),
])
def test_bad_acquisition_names_the_field(field, kw):
    base = dict(tr_seconds=0.0028, flip_angle_radians=math.radians(10), r1_per_mM_per_second=3.47,
                frame_interval_seconds=6.5, n_frames=65, bolus_arrival_frame=4)
    base.update(kw)
    with pytest.raises(UnitError) as err:
        AcqParams(**base)
    assert err.value.field == field


def test_acq_dict_round_trip_and_degrees(acq):
    assert AcqParams.from_dict(acq.to_dict()) == acq
    d = acq.to_dict()
    d["flip_angle_degrees"] = 10.0
    del d["flip_angle_radians"]
    assert AcqParams.from_dict(d).flip_angle_radians == pytest.approx(acq.flip_angle_radians, abs=1e-15)


@given(st.one_of(st.just(0.0), st.floats(1e-200, 5.0)))
def test_ktrans_unit_round_trip(k):
    assert per_s_to_per_min(per_min_to_per_s(k)) == pytest.approx(k, rel=1e-15, abs=0)


def test_pkmap_invariants():
    z = np.zeros((3, 4))
    PkMap(TkModel.PATLAK, z, z)
    with pytest.raises(ShapeMismatch):
        PkMap(TkModel.PATLAK, z, z, z)
    with pytest.raises(ShapeMismatch):
        PkMap(TkModel.ETOFTS, z, z)
    with pytest.raises(UnitError):
        PkMap(TkModel.PATLAK, z - 1, z)
    with pytest.raises(UnitError):
        PkMap(TkModel.ETOFTS, z, z, z + 2)


def test_pkmap_is_immutable():
    pk = PkMap.zeros("etofts", (2, 2))
    with pytest.raises(ValueError):
        pk.ktrans[0, 0] = 1.0
    assert pk.as_stack().shape == (3, 2, 2)


def test_series_frame_count_must_match(acq):
    with pytest.raises(ShapeMismatch):
        DceSeries(np.ones((64, 2, 2)), acq)
    with pytest.raises(UnitError):
        DceSeries(-np.ones((65, 2, 2)), acq)
    assert DceSeries(np.ones((65, 2, 3)), acq).shape == (2, 3)


def test_plasma_curve_checks():
    with pytest.raises(UnitError):
        PlasmaCurve(np.array([0.0, -1.0]), np.array([0.0, 1.0]))
    with pytest.raises(UnitError):
        PlasmaCurve(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(ShapeMismatch):
        PlasmaCurve(np.zeros(3), np.arange(2.0))


def test_aux_maps_only_checked_inside_mask():
    t1 = np.array([[1.0, 0.0]])
    s0 = np.array([[1.0, 0.0]])
    AuxMaps(t1, s0, np.array([[True, False]]))
    with pytest.raises(UnitError):
        AuxMaps(t1, s0)
    assert AuxMaps(np.ones((2, 2)), np.ones((2, 2))).mask.all()


def test_model_parse():
    assert TkModel.parse("eTofts") is TkModel.ETOFTS
    assert TkModel.parse("PATLAK").n_params == 2
