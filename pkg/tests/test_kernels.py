import numpy as np
import pytest

from oracles import exp_convolution_quad
from dcepk import kernels
from dcepk._kernels_py import step_weights

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


def irregular_problem(rng, nb=2, nv=3, n=40):
    t = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 12.0, n - 1))])
    cp = rng.uniform(0, 5, (nb, n))
    kep = np.concatenate([rng.uniform(0, 0.01, (nb, nv - 1)), np.zeros((nb, 1))], axis=1)
    kep[0, 0] = 0.5  # x = kep*dt well above the series cutoff
    return cp, t, kep


@pytest.mark.parametrize("backend", BACKENDS)
def test_matches_adaptive_quadrature(backend, rng):
    cp, t, kep = irregular_problem(rng, nb=1, nv=3, n=15)
    out, _ = kernels.get_backend(backend).expconv(cp, t, kep)
    for v in range(kep.shape[1]):
        ref = exp_convolution_quad(t, cp[0], kep[0, v])
        np.testing.assert_allclose(out[0, v], ref, rtol=1e-10, atol=1e-12)


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    cp, t, kep = irregular_problem(rng)
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    a, da = py.expconv(cp, t, kep, with_derivative=True)
    b, db = cy.expconv(cp, t, kep, with_derivative=True)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(da, db, rtol=1e-12, atol=1e-15)
    g = rng.normal(size=a.shape)
    for x, y in zip(py.expconv_vjp(cp, t, kep, g), cy.expconv_vjp(cp, t, kep, g)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("backend", BACKENDS)
def test_kep_derivative(backend, rng):
    mod = kernels.get_backend(backend)
    cp, t, kep = irregular_problem(rng)
    kep = kep + 0.002
    _, d = mod.expconv(cp, t, kep, with_derivative=True)
    h = 1e-7
    fd = (mod.expconv(cp, t, kep + h)[0] - mod.expconv(cp, t, kep - h)[0]) / (2 * h)
    np.testing.assert_allclose(d, fd, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("backend", BACKENDS)
def test_vjp_is_adjoint(backend, rng):
    mod = kernels.get_backend(backend)
    cp, t, kep = irregular_problem(rng)
    g = rng.normal(size=(cp.shape[0], kep.shape[1], cp.shape[1]))
    gcp, gkep = mod.expconv_vjp(cp, t, kep, g)
    # F is linear in cp, so <g, F(dcp)> = <gcp, dcp> exactly
    dcp = rng.normal(size=cp.shape)
    lhs = np.sum(g * mod.expconv(dcp, t, kep)[0])
    assert lhs == pytest.approx(np.sum(gcp * dcp), rel=1e-12)
    _, d = mod.expconv(cp, t, kep, with_derivative=True)
    np.testing.assert_allclose(gkep, np.einsum("bvn,bvn->bv", g, d), rtol=1e-12)


def test_series_branch_is_continuous():
    x = np.array([0.1 - 1e-12, 0.1 + 1e-12])
    for w in step_weights(x):
        assert abs(w[0] - w[1]) < 1e-10


def test_zero_kep_is_trapezoid():
    t = np.array([0.0, 1.0, 3.0, 4.0])
    cp = np.array([[0.0, 2.0, 1.0, 5.0]])
    out, _ = kernels.expconv(cp, t, np.zeros((1, 1)))
    np.testing.assert_allclose(out[0, 0], [0.0, 1.0, 4.0, 7.0], rtol=1e-15)
