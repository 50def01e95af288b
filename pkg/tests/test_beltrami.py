import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qclab import beltrami as B
from qclab import fields as F
from qclab import matalg as M
from qclab.errors import KappaTooLarge, NotConverged


def smooth_mu(spec, kappa):
    z = spec.z()
    r2 = np.abs(z) ** 2
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        b = np.where(r2 < 0.5, np.exp(2 - 1 / (0.5 - r2)), 0.0)
    c = b * (np.cos(3 * z.real) + 0.5j * np.sin(2 * z.imag + 0.4))
    return kappa * c / np.abs(c).max(), r2


# --- truncation ---------------------------------------------------------------

def test_truncate_zero_unchanged():
    mu = B.MuField.zero(F.GridSpec.square(8))
    assert np.array_equal(B.truncate_mu(mu, 0.3).values, mu.values)


def test_truncate_rescales_hs_norm():
    spec = F.GridSpec.square(3)
    vals = np.zeros(spec.shape, complex)
    vals[1, 1] = 1.40 / math.sqrt(2) * np.exp(0.7j)   # HS norm 1.40
    out = B.truncate_mu(B.MuField.from_values(spec, vals), 0.2).values[1, 1]
    assert math.sqrt(2) * abs(out) == pytest.approx(math.sqrt(2) - 0.2)
    assert math.sqrt(2) * abs(out) == pytest.approx(1.2142, abs=1e-4)
    assert np.angle(out) == pytest.approx(0.7)


def test_truncate_zeroes_outside_domain():
    spec = F.GridSpec.square(4)
    mu = B.MuField.from_values(spec, np.full(spec.shape, 0.1 + 0j))
    dom = np.zeros(spec.shape, bool)
    dom[1:3, 1:3] = True
    out = B.truncate_mu(mu, 0.5, dom).values
    assert np.all(out[~dom] == 0) and np.allclose(out[dom], 0.1)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 1.4), st.integers(0, 10_000))
def test_truncate_idempotent_and_capped(eps, seed):
    rng = np.random.default_rng(seed)
    spec = F.GridSpec.square(6)
    vals = rng.uniform(0, 0.999, spec.shape) * np.exp(1j * rng.uniform(0, 6.3, spec.shape))
    once = B.truncate_mu(B.MuField.from_values(spec, vals), eps)
    twice = B.truncate_mu(once, eps)
    assert np.allclose(once.values, twice.values, atol=1e-15)
    assert np.all(np.sqrt(2) * np.abs(once.values) <= math.sqrt(2) - eps + 1e-12)
    small = np.abs(vals) <= 1 - eps / math.sqrt(2)
    assert np.array_equal(once.values[small], vals[small])


def test_truncate_converges_as_eps_shrinks():
    spec = F.GridSpec.square(16)
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 0.99, spec.shape) * np.exp(1j * rng.uniform(0, 6.3, spec.shape))
    mu = B.MuField.from_values(spec, vals)
    gaps = [np.abs(B.truncate_mu(mu, e).values - vals).max() for e in (0.4, 0.1, 0.01, 1e-4)]
    assert all(a >= b for a, b in zip(gaps, gaps[1:])) and gaps[-1] == 0


def test_truncate_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        B.truncate_mu(B.MuField.zero(F.GridSpec.square(3)), 1.5)


# --- transforms -------------------------------------------------------------------

def periodic_spec(n=32, L=2 * math.pi):
    # n nodes with spacing L/n: the grid is exactly one period of length L
    return F.GridSpec(0, L * (n - 1) / n, 0, L * (n - 1) / n, n, n)


def test_beurling_zero():
    spec = periodic_spec()
    assert np.all(B.beurling_transform(F.ComplexGrid(spec, np.zeros(spec.shape))).values == 0)


@pytest.mark.parametrize("k", [(1, 0), (0, 1), (2, -3), (-4, 5)])
def test_beurling_single_mode(k):
    spec = periodic_spec()
    X, Y = spec.mesh()
    mode = np.exp(1j * (k[0] * X + k[1] * Y))
    xi = k[0] + 1j * k[1]
    out = B.beurling_transform(F.ComplexGrid(spec, mode)).values
    assert np.allclose(out, np.conj(xi) / xi * mode, atol=1e-12)


def test_beurling_intertwines_derivatives():
    spec = periodic_spec(64)
    X, Y = spec.mesh()
    # p = sin(x) cos(2y) + i cos(3y): derivatives by hand
    p_x = np.cos(X) * np.cos(2 * Y)
    p_y = -2 * np.sin(X) * np.sin(2 * Y) - 3j * np.sin(3 * Y)
    dzbar = 0.5 * (p_x + 1j * p_y)
    dz = 0.5 * (p_x - 1j * p_y)
    out = B.beurling_transform(F.ComplexGrid(spec, dzbar)).values
    assert np.allclose(out, dz, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_beurling_plancherel(seed):
    rng = np.random.default_rng(seed)
    spec = periodic_spec(16)
    g = rng.normal(size=spec.shape) + 1j * rng.normal(size=spec.shape)
    g -= g.mean()
    out = B.beurling_transform(F.ComplexGrid(spec, g)).values
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(g), rel=1e-12)


def test_cauchy_inverts_dbar_on_modes():
    spec = periodic_spec(32)
    X, Y = spec.mesh()
    g = np.exp(1j * (2 * X - Y)) + 0.5 * np.exp(1j * (-X + 3 * Y)) + 0.7
    F_ = B.cauchy_transform(F.ComplexGrid(spec, g)).values
    # d/dzbar of exp(i(kx x + ky y)) is i xi/2 times the mode
    expect = (np.exp(1j * (2 * X - Y)) / (1j * (2 - 1j) / 2)
              + 0.5 * np.exp(1j * (-X + 3 * Y)) / (1j * (-1 + 3j) / 2))
    assert np.allclose(F_, expect, atol=1e-12)


# --- residual --------------------------------------------------------------------

def test_dbar_residual_examples():
    spec = F.GridSpec.square(9)
    zero = B.MuField.zero(spec)
    assert np.allclose(B.dbar_residual(F.sample(F.identity(), spec), zero).values, 0)
    assert np.allclose(B.dbar_residual(F.sample(F.conjugate(), spec), zero).values, 1)
    m = 0.3 - 0.2j
    aff = F.sample(F.beltrami_affine(m), spec)
    assert np.allclose(B.dbar_residual(aff, B.MuField.from_values(spec, np.full(spec.shape, m))).values, 0,
                       atol=1e-15)


# --- solver --------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        B.SolverConfig(padding_factor=1.5)
    with pytest.raises(ValueError):
        B.SolverConfig(epsilon_trunc=0)
    with pytest.raises(ValueError):
        B.SolverConfig(residual_tol=-1)


def test_zero_mu_gives_identity_exactly():
    spec = F.GridSpec.square(64)
    sol = B.solve_principal(B.MuField.zero(spec))
    X, Y = spec.mesh()
    assert np.array_equal(sol.f.values[..., 0], X) and np.array_equal(sol.f.values[..., 1], Y)
    assert np.array_equal(sol.f.gradients, np.broadcast_to(np.eye(2), sol.f.gradients.shape))
    assert np.all(sol.dbar_residual.values == 0) and sol.neumann_converged


def test_kappa_rejection():
    spec = F.GridSpec.square(16)
    mu = B.MuField.from_values(spec, np.full(spec.shape, 0.96 + 0j))
    with pytest.raises(KappaTooLarge):
        B.solve_principal(mu, truncate=False)
    with pytest.raises(KappaTooLarge):
        B.solve_principal(B.MuField.from_values(spec, np.full(spec.shape, 1.0 + 0j)),
                          B.SolverConfig(kappa_max=1.0), truncate=False)


def test_not_converged_carries_result():
    spec = F.GridSpec.square(64)
    mu, _ = smooth_mu(spec, 0.8)
    with pytest.raises(NotConverged) as info:
        B.solve_principal(B.MuField.from_values(spec, mu), B.SolverConfig(max_neumann_iters=2))
    res = info.value.result
    assert res is not None and not res.neumann_converged and res.iterations_used == 2
    soft = B.solve_principal(B.MuField.from_values(spec, mu), B.SolverConfig(max_neumann_iters=2),
                             strict=False)
    assert not soft.neumann_converged


def test_contraction_rate_oracle():
    """kappa = 0.5 reaches 1e-6 within ceil(log(tol)/log(kappa)) iterations."""
    spec = F.GridSpec.square(256)
    mu, _ = smooth_mu(spec, 0.5)
    sol = B.solve_principal(B.MuField.from_values(spec, mu), B.SolverConfig(residual_tol=1e-6))
    assert sol.neumann_converged and sol.max_residual <= 1e-6
    assert sol.iterations_used <= math.ceil(math.log(1e-7) / math.log(0.5))


@pytest.mark.parametrize("kappa", [0.2, 0.5, 0.8])
def test_contraction_factor(kappa):
    spec = F.GridSpec.square(128)
    mu, _ = smooth_mu(spec, kappa)
    sol = B.solve_principal(B.MuField.from_values(spec, mu), B.SolverConfig(residual_tol=1e-10))
    s = np.array(sol.step_norms)
    assert np.all(s[1:] / s[:-1] <= kappa + 0.05)


@pytest.mark.parametrize("kappa", [0.2, 0.5, 0.8])
def test_coefficient_recovery_and_orientation(kappa):
    spec = F.GridSpec.square(256)
    mu, r2 = smooth_mu(spec, kappa)
    sol = B.solve_principal(B.MuField.from_values(spec, mu), B.SolverConfig(residual_tol=1e-9))
    support = r2 < 0.45
    spectral = M.beltrami_complex(sol.f.gradients)
    assert np.abs(spectral - mu)[support].max() < 1e-3
    # independent route: finite differences of the solution values
    fd = M.beltrami_complex(F.finite_diff_gradients(sol.f).gradients)
    assert np.abs(fd - mu)[support].max() < 1e-3
    assert np.all(M.det(sol.f.gradients) > 0)


def test_fd_residual_second_order():
    out = []
    for n in (64, 128, 256):
        spec = F.GridSpec.square(n)
        mu, _ = smooth_mu(spec, 0.5)
        out.append(B.solve_principal(B.MuField.from_values(spec, mu)).fd_max_residual)
    assert out[0] / out[1] > 3.5 and out[1] / out[2] > 3.5


def test_affine_coefficient_on_bump_region():
    spec = F.GridSpec.square(256)
    z = spec.z()
    r = np.abs(z)
    # 0.2 on |z| < 0.3, smooth transition to 0 at |z| = 0.6
    t = np.clip((r - 0.3) / 0.3, 0, 1)
    mu = 0.2 * (1 - t * t * (3 - 2 * t)) ** 3
    sol = B.solve_principal(B.MuField.from_values(spec, mu + 0j))
    fd = M.beltrami_complex(F.finite_diff_gradients(sol.f).gradients)
    inner = r < 0.25
    assert np.abs(M.beltrami_complex(sol.f.gradients) - 0.2)[inner].max() < 1e-4
    assert np.abs(fd - 0.2)[inner].max() < 1e-4


def test_truncation_applied_in_solver():
    spec = F.GridSpec.square(32)
    mu = B.MuField.from_values(spec, np.full(spec.shape, 0.97 + 0j))
    sol = B.solve_principal(mu, B.SolverConfig(epsilon_trunc=0.2))
    assert sol.kappa == pytest.approx(1 - 0.2 / math.sqrt(2))


def test_deterministic_across_thread_counts(monkeypatch):
    spec = F.GridSpec.square(96)
    mu = B.MuField.from_values(spec, smooth_mu(spec, 0.6)[0])
    monkeypatch.setenv("QCLAB_THREADS", "1")
    a = B.solve_principal(mu).f.values
    monkeypatch.setenv("QCLAB_THREADS", "4")
    b = B.solve_principal(mu).f.values
    assert np.array_equal(a, b)


def test_fft_workers_env(monkeypatch):
    monkeypatch.setenv("QCLAB_THREADS", "3")
    assert B.fft_workers() == 3
    monkeypatch.setenv("QCLAB_THREADS", "junk")
    assert B.fft_workers() == 1
