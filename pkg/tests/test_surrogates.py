import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavisl.convexify import surrogates as S

pos = st.floats(1e-3, 1e3)
xy = st.floats(-2000, 2000)


@given(pos, pos, st.floats(0, 10))
def test_quadratic_transform_lower_bound(f, g, a):
    assert S.quad_transform_lb(f, g, a) <= f / g + 1e-12 * max(1.0, f / g)


@given(pos, pos)
def test_quadratic_transform_tight(f, g):
    assert S.quad_transform_lb(f, g, S.quad_transform_alpha(f, g)) == pytest.approx(f / g, rel=1e-12)


@given(pos, pos, st.floats(0.01, 0.99), st.floats(0.01, 0.999))
def test_inverse_transform_upper_bound(f, g, theta, frac):
    rho = frac * 2 * np.sqrt(g) / f
    assert S.inv_quad_transform_ub(f, g, theta, rho) >= np.log1p(f / g) - 1e-12


@given(pos, pos)
def test_inverse_transform_tight(f, g):
    th, rho = S.inv_quad_transform_params(f, g)
    assert S.inv_quad_transform_ub(f, g, th, rho) == pytest.approx(np.log1p(f / g), rel=1e-10)


def test_inverse_transform_guard():
    with pytest.raises(ValueError):
        S.inv_quad_transform_ub(1.0, 1.0, 0.5, 3.0)


@given(xy, xy, xy, xy, xy, xy, st.floats(10, 200))
@settings(max_examples=200)
def test_taylor_under_estimators(qx, qy, gx, gy, px, py, H):
    q, g, qp = np.array([qx, qy]), np.array([gx, gy]), np.array([px, py])
    d2 = H ** 2 + ((q - g) ** 2).sum()
    assert S.taylor_inv_sq_lb(q, g, H, qp) <= 1 / d2 + 1e-15
    assert S.taylor_sq_lb(q, g, H, qp) <= d2 * (1 + 1e-12)
    assert S.taylor_inv_quart_lb(q, g, H, qp) <= 1 / d2 ** 2 + 1e-20


@given(xy, xy, xy, xy, st.floats(10, 200))
def test_taylor_tight_at_anchor(qx, qy, gx, gy, H):
    q, g = np.array([qx, qy]), np.array([gx, gy])
    d2 = H ** 2 + ((q - g) ** 2).sum()
    assert S.taylor_inv_sq_lb(q, g, H, q) == pytest.approx(1 / d2, rel=1e-12)
    assert S.taylor_sq_lb(q, g, H, q) == pytest.approx(d2, rel=1e-12)
    assert S.taylor_inv_quart_lb(q, g, H, q) == pytest.approx(1 / d2 ** 2, rel=1e-12)


def test_coefficients_shapes(reference):
    Q = np.tile(reference.depot_pos, (41, 1))
    co = S.surrogate_coefficients(reference, Q, np.full(40, 0.01))
    for name in ("varphi", "varphi_idle", "rho", "mu", "nu", "zeta", "kappa"):
        assert getattr(co, name).shape == (5, 40)
    assert np.all((co.mu > 0) & (co.mu < 1))
