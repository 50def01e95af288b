import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from qclab import fields as F
from qclab import matalg as M
from qclab.errors import DegenerateGradient, EvaluationDomainError


CATALOG = ["z", "z^2", "(z-1)^2", "zbar", "z+0.2zbar", "radial"]


def test_gridspec_validation():
    with pytest.raises(ValueError):
        F.GridSpec(1, 0, 0, 1, 4, 4)
    with pytest.raises(ValueError):
        F.GridSpec(0, 1, 0, 1, 1, 4)
    s = F.GridSpec(0, 1, -1, 1, 5, 9)
    assert s.hx == pytest.approx(0.25) and s.hy == pytest.approx(0.25)
    assert F.GridSpec.from_dict(s.to_dict()) == s


def test_cell_centered_avoids_seam():
    s = F.GridSpec.cell_centered(-1, 1, -1, 1, 256, 256)
    assert not np.any(s.x == 0)
    assert s.hx == pytest.approx(2 / 256)


def test_sample_identity_3x3():
    f = F.sample(F.identity(), F.GridSpec(0, 1, 0, 1, 3, 3))
    assert np.allclose(f.gradients, np.eye(2)) and f.provenance == "analytic"


def test_shifted_square_gradient_at_origin():
    s = F.GridSpec.square(5)
    f = F.sample(F.shifted_power(1.0, 2), s)
    assert np.allclose(f.gradients[2, 2], [[-2, 0], [0, -2]])


def test_piecewise_gradients():
    u, v = F.example1_pair(math.pi / 2)
    assert np.allclose(u.gradient(0.5, 0.25), [[1, 0], [0.25, 0.5]])
    assert np.allclose(u.gradient(0.5, 0.0), [[1, 0], [0, 0.5]])
    assert np.allclose(v.gradient(0.5, 0.0), [[0, -0.5], [1, 0]])
    assert np.allclose(u.gradient(-0.5, 0.3), [[1, 0], [-0.3, 0.5]])
    assert np.allclose(v.gradient(-0.5, 0.3), [[1, 0], [-0.3, 0.5]])
    with pytest.raises(ValueError):
        F.example1_pair(0.0)


def test_piecewise_values_follow_definition():
    u, v = F.example1_pair(0.8)
    x = np.array([0.3, -0.4])
    y = np.array([0.5, 0.2])
    uv = u(x, y)
    assert np.allclose(uv[0], [0.3, 0.15]) and np.allclose(uv[1], [-0.4, 0.08])
    vv = v(x, y)
    c, s = math.cos(0.8), math.sin(0.8)
    assert np.allclose(vv[0], [0.3 * c - 0.15 * s, 0.3 * s + 0.15 * c])
    assert np.allclose(vv[1], uv[1])


def test_piecewise_invariants_off_seam():
    u, v = F.example1_pair(math.pi / 2)
    s = F.GridSpec.cell_centered(-1, 1, -1, 1, 64, 64)
    Gu, Gv = F.sample(u, s).gradients, F.sample(v, s).gradients
    assert np.all(M.similar_ellipse_test(Gu, Gv))
    assert np.max(np.abs(M.beltrami_complex(Gu) - M.beltrami_complex(Gv))) < 1e-12
    assert np.allclose(M.symmetric_factor(Gu), M.symmetric_factor(Gv), atol=1e-12)


def test_evaluation_domain_error():
    bad = F.holomorphic_map("inv", lambda z: 1 / z, lambda z: -1 / z ** 2)
    with pytest.raises(EvaluationDomainError):
        F.sample(bad, F.GridSpec.square(5))


def test_catalog_lookup():
    assert F.catalog_map("z^3").params["n"] == 3
    assert F.catalog_map("z+0.2zbar").params["m"] == [0.2, 0.0]
    A = F.catalog_map("affine:2;0;0;3")
    assert np.allclose(A.gradient(np.zeros(1), np.zeros(1))[0], np.diag([2, 3]))
    with pytest.raises(KeyError):
        F.catalog_map("nope")
    u, v = F.catalog_pair("z,(z-1)^2")
    assert u.name == "identity"


@pytest.mark.parametrize("name", CATALOG)
def test_analytic_gradients_second_order(name):
    """Finite differences converge to the closed forms with order close to 2."""
    amap = F.catalog_map(name)
    errs = []
    # fixed probe region away from the radial map's non-smooth circles
    for n in (65, 129, 257):
        s = F.GridSpec(0.05, 0.15, 0.05, 0.15, n, n)
        f = F.sample(amap, s)
        num = F.finite_diff_gradients(f)
        errs.append(np.max(np.abs(num.gradients - f.gradients)))
    if errs[0] < 1e-12:
        return
    order = math.log2(errs[1] / errs[2])
    assert order >= 1.9


def test_radial_gradients_second_order_in_annulus():
    amap = F.radial_stretch()
    errs = []
    for n in (65, 129, 257):
        s = F.GridSpec(0.6, 0.7, 0.05, 0.15, n, n)
        f = F.sample(amap, s)
        errs.append(np.max(np.abs(F.finite_diff_gradients(f).gradients - f.gradients)))
    assert math.log2(errs[1] / errs[2]) >= 1.9


def test_radial_profile():
    r = F.radial_stretch(0.5, 0.3)
    x = np.array([0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.9])
    rho = r(x, 0 * x)[:, 0]
    assert rho[0] == pytest.approx(0.1) and rho[1] == pytest.approx(0.2)
    assert np.all(np.diff(rho) > 0)
    # independent oracle: integrate rho'/rho = q/r numerically
    def q(t):
        s = min(abs(t - 0.5) / 0.3, 1.0)
        return 0.5 * (3 * math.sqrt(s) - s ** 1.5)
    for xi, ri in zip(x[2:], rho[2:]):
        val, _ = integrate.quad(lambda t: q(t) / t, 0.2, xi, points=[0.5], limit=200)
        assert math.log(ri) == pytest.approx(math.log(0.2) + val, abs=1e-8)
    # similarity outside the annulus
    assert rho[6] / rho[5] == pytest.approx(0.9 / 0.8)


def test_radial_mu_support_and_integrable_dilatation():
    s = F.GridSpec.cell_centered(-1, 1, -1, 1, 200, 200)
    f = F.sample(F.radial_stretch(), s)
    mu = M.beltrami_complex(f.gradients)
    r = np.abs(s.z())
    assert np.all(np.abs(mu[(r < 0.2) | (r > 0.8)]) < 1e-14)
    assert np.all(np.abs(mu) < 1) and np.all(f.det() > 0)
    assert np.abs(mu).max() > 0.9


def test_finite_diff_exact_on_linear():
    A = np.array([[1.5, -0.3], [0.2, 0.7]])
    f = F.sample(F.affine(A, (0.1, 0.2)), F.GridSpec(0, 1, 0, 2, 7, 9))
    num = F.finite_diff_gradients(f)
    assert num.provenance == "numeric"
    assert np.allclose(num.gradients, A, atol=1e-12)


def test_finite_diff_identity_exact():
    f = F.sample(F.identity(), F.GridSpec.square(6))
    assert np.allclose(F.finite_diff_gradients(f).gradients, np.eye(2), atol=1e-13)


def test_finite_diff_square_richardson():
    errs = []
    for n in (33, 65):
        s = F.GridSpec(0.2, 0.8, -0.3, 0.3, n, n)
        f = F.sample(F.holomorphic_map("cube", lambda z: z ** 3, lambda z: 3 * z ** 2), s)
        errs.append(np.abs(F.finite_diff_gradients(f).gradients - f.gradients).max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)


def test_bilinear_exact_on_bilinear_functions():
    s = F.GridSpec(0, 2, -1, 1, 5, 7)
    X, Y = s.mesh()
    arr = 1 + 2 * X - Y + 0.5 * X * Y
    pts = np.array([[0.3, 0.1], [1.7, -0.9], [2.0, 1.0]])
    got = F.bilinear(arr, s, pts)
    exp = 1 + 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 0] * pts[:, 1]
    assert np.allclose(got, exp)


# --- integrability scan ------------------------------------------------------

def test_scan_identity_is_area():
    s = F.GridSpec.cell_centered(0, 1, -1, 1, 100, 50)
    res = F.integrability_scan(F.sample(F.identity(), s), [0.5, 0.25])
    assert [d for d, _ in res] == [0.5, 0.25]
    assert res[0][1] == pytest.approx(1.0, rel=0.01)
    assert res[1][1] == pytest.approx(1.5, rel=0.01)


def test_scan_piecewise_matches_quadrature_oracle():
    u, _ = F.example1_pair()
    s = F.GridSpec.cell_centered(0, 1, -1, 1, 4096, 64)
    (d, val), = F.integrability_scan(F.sample(u, s), [1e-3])
    # oracle: operator norm squared of [[1,0],[x2,x1]] over x1
    def L(x2, x1):
        return float(M.operator_norm(np.array([[1, 0], [x2, x1]]))) ** 2 / x1
    ref, _ = integrate.dblquad(L, 1e-3, 1, -1, 1, epsabs=1e-9)
    assert val == pytest.approx(ref, rel=1e-3)
    assert val >= 2 * math.log(1000)


def test_scan_piecewise_increment_asymptotics():
    """Each halving adds ln2 times the integral of 1 + x2^2 over (-1, 1)."""
    u, _ = F.example1_pair()
    s = F.GridSpec.cell_centered(0, 1, -1, 1, 8192, 64)
    vals = [v for _, v in F.integrability_scan(F.sample(u, s), [2.0 ** -k for k in range(4, 11)])]
    inc = np.diff(vals)
    assert np.all(inc > 0)
    assert np.allclose(inc, 8 / 3 * math.log(2), rtol=2e-3)
    assert np.all(inc > 2 * math.log(2))


def test_scan_bounded_dilatation_converges():
    s = F.GridSpec.cell_centered(0, 1, -1, 1, 2048, 64)
    vals = [v for _, v in F.integrability_scan(F.sample(F.beltrami_affine(0.3), s),
                                               [2.0 ** -k for k in range(4, 11)])]
    inc = np.diff(vals)
    assert np.all(inc > 0)
    # K is bounded, so each halving adds about half of the previous increment
    assert np.allclose(inc[1:] / inc[:-1], 0.5, rtol=0.02)


def test_scan_rejects_degenerate():
    s = F.GridSpec.cell_centered(0, 1, -1, 1, 16, 16)
    with pytest.raises(DegenerateGradient):
        F.integrability_scan(F.sample(F.conjugate(), s), [0.1])


# --- area check ---------------------------------------------------------------

def test_area_identity_unit_square():
    f = F.sample(F.identity(), F.GridSpec(-0.5, 1.5, -0.5, 1.5, 81, 81))
    integral, area = F.area_check(f, F.GridSpec(0, 1, 0, 1, 20, 20))
    assert integral == pytest.approx(1, rel=0.01) and area == pytest.approx(1, rel=0.01)


def test_area_affine():
    f = F.sample(F.affine(np.diag([2.0, 3.0])), F.GridSpec(-0.5, 1.5, -0.5, 1.5, 81, 81))
    integral, area = F.area_check(f, F.GridSpec(0, 1, 0, 1, 20, 20))
    assert integral == pytest.approx(6, rel=0.01) and area == pytest.approx(6, rel=0.01)


def test_area_beltrami_affine():
    f = F.sample(F.beltrami_affine(0.2), F.GridSpec(-0.5, 1.5, -0.5, 1.5, 161, 161))
    integral, area = F.area_check(f, F.GridSpec(0, 1, 0, 1, 40, 40))
    assert integral == pytest.approx(area, rel=0.02)
    assert area == pytest.approx(1 - 0.04, rel=1e-3)  # det = 1 - |m|^2


def test_boundary_polygon_is_ccw_square():
    p = F.boundary_polygon(F.GridSpec(0, 1, 0, 2, 10, 10))
    assert F.shoelace(p) == pytest.approx(2.0)
    assert len(p) == 4 * 20 or abs(len(p) - 80) <= 4


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
def test_beltrami_affine_mu_constant(a, b):
    m = complex(a, b)
    if abs(m) >= 0.95:
        return
    f = F.sample(F.beltrami_affine(m), F.GridSpec.square(5))
    assert np.allclose(F.mu_grid(f).values, m, atol=1e-14)
