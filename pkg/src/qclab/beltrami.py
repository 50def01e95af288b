"""Spectral solver for the Beltrami equation f_zbar = mu f_z.

The coefficient lives on a grid Omega.  Omega is embedded in a periodic box
with the same spacing and ``padding_factor`` times as many nodes per axis,
and mu is extended by zero.  On that box the Beurling transform is the
Fourier multiplier conj(xi)/xi and the Cauchy transform (inverse of d/dzbar)
is -2i/xi, with xi = kx + i ky; both vanish on the zero mode.

Writing f = z + C g, the equation becomes g = mu (1 + S g), which is solved
by Neumann iteration (a contraction with factor sup|mu| in l2).  Since C
drops the mean of g, the affine term mean(g) zbar is added back so that
f_zbar = g holds exactly and f_z = 1 + S g.

FFTs run through ``scipy.fft`` with ``workers`` taken from the environment
variable ``QCLAB_THREADS`` (default 1).  Pocketfft splits work over
independent 1-D transforms, so results do not depend on the worker count.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft

from . import matalg
from .errors import KappaTooLarge, NotConverged
from .fields import ComplexGrid, GridField, GridSpec, interior_mask


def fft_workers() -> int:
    try:
        return max(1, int(os.environ.get("QCLAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class MuField:
    """Complex Beltrami coefficient on a grid; zero outside ``support_box``."""

    grid: ComplexGrid
    support_box: Optional[GridSpec] = None

    def __post_init__(self):
        if self.support_box is None:
            self.support_box = self.grid.spec

    @property
    def spec(self) -> GridSpec:
        return self.grid.spec

    @property
    def values(self) -> np.ndarray:
        return self.grid.values

    @property
    def kappa(self) -> float:
        v = np.abs(self.grid.values)
        return float(v.max()) if v.size else 0.0

    @classmethod
    def from_values(cls, spec: GridSpec, values) -> "MuField":
        return cls(ComplexGrid(spec, np.asarray(values, complex)))

    @classmethod
    def zero(cls, spec: GridSpec) -> "MuField":
        return cls.from_values(spec, np.zeros(spec.shape, complex))

    @classmethod
    def of_field(cls, f: GridField) -> "MuField":
        """mu of Df, with masked-out samples set to zero."""
        mu = matalg.beltrami_complex(f.require_gradients().gradients)
        mu = np.where(f.valid, mu, 0.0)
        return cls.from_values(f.spec, mu)


@dataclass(frozen=True)
class SolverConfig:
    epsilon_trunc: float = 0.1
    max_neumann_iters: int = 500
    residual_tol: float = 1e-8
    padding_factor: float = 2.0
    kappa_max: float = 0.95

    def __post_init__(self):
        if not 0 < self.epsilon_trunc < math.sqrt(2):
            raise ValueError("epsilon_trunc must lie in (0, sqrt 2)")
        if self.max_neumann_iters < 1:
            raise ValueError("max_neumann_iters must be positive")
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.padding_factor < 2:
            raise ValueError("padding_factor must be at least 2")
        if not 0 < self.kappa_max <= 1:
            raise ValueError("kappa_max must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "epsilon_trunc": self.epsilon_trunc,
            "max_neumann_iters": self.max_neumann_iters,
            "residual_tol": self.residual_tol,
            "padding_factor": self.padding_factor,
            "kappa_max": self.kappa_max,
        }


@dataclass
class PrincipalSolution:
    f: GridField
    dbar_residual: ComplexGrid
    iterations_used: int
    neumann_converged: bool
    kappa: float = 0.0
    max_residual: float = 0.0
    fd_max_residual: float = float("nan")
    step_norms: list = field(default_factory=list)
    mu: Optional[MuField] = None


def truncate_mu(mu: MuField, epsilon: float, domain: Optional[np.ndarray] = None) -> MuField:
    """Cap the Hilbert-Schmidt norm of mu at sqrt(2) - epsilon.

    The HS norm of a conformal matrix is sqrt(2) times the complex modulus,
    so the cap on |mu| is 1 - epsilon/sqrt(2).  Larger samples keep their
    argument.  Samples outside ``domain`` (a boolean mask) become 0.
    """
    if not 0 < epsilon < math.sqrt(2):
        raise ValueError("epsilon must lie in (0, sqrt 2)")
    cap = 1.0 - epsilon / math.sqrt(2)
    v = mu.values
    a = np.abs(v)
    big = a > cap
    out = v.copy()
    out[big] = v[big] * (cap / a[big])
    if domain is not None:
        out = np.where(domain, out, 0.0)
    return MuField(ComplexGrid(mu.spec, out, mu.grid.mask), mu.support_box)


# --------------------------------------------------------------------------
# periodic transforms


class PeriodicBox:
    """Periodic box of shape (Nx, Ny) and spacing (hx, hy) with its multipliers."""

    def __init__(self, shape, hx: float, hy: float):
        self.shape = tuple(int(s) for s in shape)
        self.hx, self.hy = float(hx), float(hy)
        kx = 2 * np.pi * sfft.fftfreq(self.shape[0], self.hx)
        ky = 2 * np.pi * sfft.fftfreq(self.shape[1], self.hy)
        xi = kx[:, None] + 1j * ky[None, :]
        nz = xi != 0
        safe = np.where(nz, xi, 1.0)
        self.beurling = np.where(nz, np.conj(xi) / safe, 0.0)
        self.cauchy = np.where(nz, -2j / safe, 0.0)
        self.workers = fft_workers()

    def fft(self, a):
        return sfft.fft2(a, workers=self.workers)

    def ifft(self, a):
        return sfft.ifft2(a, workers=self.workers)

    def apply(self, g, mult):
        return self.ifft(mult * self.fft(g))


def _box_for(g: ComplexGrid) -> PeriodicBox:
    return PeriodicBox(g.spec.shape, g.spec.hx, g.spec.hy)


def beurling_transform(g: ComplexGrid) -> ComplexGrid:
    """Multiplier conj(xi)/xi on the grid viewed as one period."""
    return ComplexGrid(g.spec, _box_for(g).apply(g.values, _box_for(g).beurling))


def cauchy_transform(g: ComplexGrid) -> ComplexGrid:
    """Periodic F with dF/dzbar = g - mean(g) and zero mean."""
    box = _box_for(g)
    return ComplexGrid(g.spec, box.apply(g.values, box.cauchy))


# --------------------------------------------------------------------------
# solver


def _embedding(spec: GridSpec, padding: float):
    Nx = sfft.next_fast_len(int(math.ceil(padding * spec.nx)))
    Ny = sfft.next_fast_len(int(math.ceil(padding * spec.ny)))
    ox, oy = (Nx - spec.nx) // 2, (Ny - spec.ny) // 2
    return (Nx, Ny), (slice(ox, ox + spec.nx), slice(oy, oy + spec.ny))


def dbar_residual(f: GridField, mu: MuField) -> ComplexGrid:
    """Pointwise f_zbar - mu f_z read off the conformal split of Df."""
    G = f.require_gradients().gradients
    return ComplexGrid(f.spec, matalg.dzbar(G) - mu.values * matalg.dz(G))


def solve_principal(mu: MuField, config: SolverConfig = SolverConfig(), *, truncate: bool = True,
                    strict: bool = True) -> PrincipalSolution:
    """Solve f_zbar = mu f_z with f = z + (periodic Cauchy transform) on the grid of mu.

    With ``truncate`` the coefficient is first capped by ``truncate_mu`` at
    ``config.epsilon_trunc``.  Raises KappaTooLarge when sup|mu| reaches
    ``config.kappa_max``.  When the residual tolerance is missed, raises
    NotConverged carrying the result (or returns it if ``strict`` is False).
    """
    if truncate:
        mu = truncate_mu(mu, config.epsilon_trunc)
    kappa = mu.kappa
    if kappa >= min(config.kappa_max, 1.0):
        raise KappaTooLarge(f"sup|mu| = {kappa:.6g} >= kappa_max = {config.kappa_max:g}")
    spec = mu.spec
    shape, inner = _embedding(spec, config.padding_factor)
    box = PeriodicBox(shape, spec.hx, spec.hy)

    m = np.zeros(shape, complex)
    m[inner] = mu.values
    g = m.copy()
    step_tol = config.residual_tol / 10
    steps = []
    iters = 0
    small_step = kappa == 0.0
    while not small_step and iters < config.max_neumann_iters:
        g_new = m * (1.0 + box.apply(g, box.beurling))
        d = g_new - g
        steps.append(float(np.sqrt(np.mean(np.abs(d) ** 2))))
        g = g_new
        iters += 1
        if np.max(np.abs(d)) < step_tol:
            small_step = True

    ghat = box.fft(g)
    Sg = box.ifft(box.beurling * ghat)
    Cg = box.ifft(box.cauchy * ghat)
    gbar = complex(np.mean(g))

    X, Y = spec.mesh()
    z = X + 1j * Y
    fz = 1.0 + Sg[inner]
    fzbar = g[inner]
    fval = z + gbar * np.conj(z) + Cg[inner]
    if kappa == 0.0:
        fz, fzbar, fval = np.ones_like(z), np.zeros_like(z), z.copy()
    f = GridField(spec, np.stack([fval.real, fval.imag], -1), matalg.from_wirtinger(fz, fzbar),
                  "spectral")
    resid = ComplexGrid(spec, fzbar - mu.values * fz)
    max_res = float(np.max(np.abs(resid.values)))

    fd = f.values
    dx = np.gradient(fd, spec.hx, axis=0, edge_order=2)
    dy = np.gradient(fd, spec.hy, axis=1, edge_order=2)
    fd_G = np.stack([dx, dy], -1)
    inn = interior_mask(spec.shape, 1)
    fd_res = np.abs(matalg.dzbar(fd_G) - mu.values * matalg.dz(fd_G))[inn]
    fd_max = float(fd_res.max()) if fd_res.size else float("nan")

    converged = small_step and max_res <= config.residual_tol
    sol = PrincipalSolution(f, resid, iters, converged, kappa, max_res, fd_max, steps, mu)
    if not converged and strict:
        raise NotConverged(
            f"residual {max_res:.3g} above tol {config.residual_tol:g} after {iters} iterations", sol)
    return sol
