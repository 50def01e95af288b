"""Factor a pair of maps with a common Beltrami coefficient.

For u, v with mu_Du = mu_Dv the pipeline solves for a homeomorphism w with
(truncated) coefficient mu_Du, inverts it, and forms phi_u = u o w^-1 and
phi_v = v o w^-1, which are nearly holomorphic.  Their derivative ratio
psi = phi_v' / phi_u' then gives Dv = P(psi(w)) Du away from zeros of
phi_u'.

Derivatives of the compositions use the chain rule at source nodes,
G_u = Du Dw^-1, which is exact given Du and Dw.  Target samples read G_u
at h(y) by bilinear interpolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from . import matalg
from .beltrami import MuField, SolverConfig, solve_principal, truncate_mu
from .errors import (CoefficientMismatch, InsufficientTrace, KappaTooLarge, NewtonDiverged,
                     NonPositiveDeterminant, NotConverged, PreconditionViolated, TargetOutsideImage)
from .fields import ComplexGrid, GridField, GridSpec, bilinear, interior_mask, region_weights

OK, OUTSIDE, DIVERGED = 0, 1, 2
DEFAULT_SCHEDULE = tuple(0.4 * 2.0 ** -k for k in range(6))


# --------------------------------------------------------------------------
# inversion


def _bilinear_with_jacobian(vals, spec, x):
    """Bilinear interpolant of vals (nx, ny, 2) at points x (m, 2) and its Jacobian."""
    idx = spec.fractional_index(x)
    i = np.clip(np.floor(idx[:, 0]).astype(int), 0, spec.nx - 2)
    j = np.clip(np.floor(idx[:, 1]).astype(int), 0, spec.ny - 2)
    a = (idx[:, 0] - i)[:, None]
    b = (idx[:, 1] - j)[:, None]
    w00, w10, w01, w11 = vals[i, j], vals[i + 1, j], vals[i, j + 1], vals[i + 1, j + 1]
    W = (1 - a) * (1 - b) * w00 + a * (1 - b) * w10 + (1 - a) * b * w01 + a * b * w11
    da = ((1 - b) * (w10 - w00) + b * (w11 - w01)) / spec.hx
    db = ((1 - a) * (w01 - w00) + a * (w11 - w10)) / spec.hy
    return W, np.stack([da, db], -1)


def boundary_image(w: GridField) -> np.ndarray:
    """Images of the source-grid boundary nodes, counter-clockwise."""
    v = w.values
    return np.concatenate([v[:-1, 0], v[-1, :-1], v[:0:-1, -1], v[0, :0:-1]])


def inside_polygon(points, poly) -> np.ndarray:
    """Even-odd ray casting test for points (m, 2) against a closed polygon (k, 2)."""
    px, py = points[:, 0][:, None], points[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    crosses = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    return (np.sum(crosses & (px < xi), axis=1) % 2) == 1


def invert_points(w: GridField, y, tol: float = 1e-10, max_iter: int = 40):
    """Invert the bilinear interpolant of ``w`` at points y of shape (m, 2).

    Returns (x, status, residual).  Unconverged targets outside the image of
    the source boundary get status OUTSIDE, the others DIVERGED.
    """
    spec = w.spec
    y = np.asarray(y, float).reshape(-1, 2)
    src = np.stack(spec.mesh(), -1).reshape(-1, 2)
    valid = w.valid.reshape(-1)
    tree = cKDTree(w.values.reshape(-1, 2)[valid])
    _, nearest = tree.query(y)
    x = src[valid][nearest].copy()
    lo = np.array([spec.x_min, spec.y_min])
    hi = np.array([spec.x_max, spec.y_max])

    W, J = _bilinear_with_jacobian(w.values, spec, x)
    r = W - y
    rn = np.linalg.norm(r, axis=1)
    active = rn > tol
    for _ in range(max_iter):
        if not active.any():
            break
        ia = np.flatnonzero(active)
        Ja = J[ia]
        d = Ja[:, 0, 0] * Ja[:, 1, 1] - Ja[:, 0, 1] * Ja[:, 1, 0]
        ok = np.abs(d) > 1e-300
        dsafe = np.where(ok, d, 1.0)
        ra = r[ia]
        step = np.stack([(Ja[:, 1, 1] * ra[:, 0] - Ja[:, 0, 1] * ra[:, 1]) / dsafe,
                         (-Ja[:, 1, 0] * ra[:, 0] + Ja[:, 0, 0] * ra[:, 1]) / dsafe], -1)
        step[~ok] = 0.0
        t = np.ones(len(ia))
        xa, best_n = x[ia], rn[ia]
        accepted = np.zeros(len(ia), bool)
        new_x = xa.copy()
        new_r = ra.copy()
        new_n = best_n.copy()
        new_J = Ja.copy()
        for _halving in range(12):
            pending = ~accepted
            if not pending.any():
                break
            cand = np.clip(xa[pending] - t[pending, None] * step[pending], lo, hi)
            Wc, Jc = _bilinear_with_jacobian(w.values, spec, cand)
            rc = Wc - y[ia[pending]]
            nc = np.linalg.norm(rc, axis=1)
            good = nc < best_n[pending]
            sel = np.flatnonzero(pending)[good]
            new_x[sel], new_r[sel], new_n[sel], new_J[sel] = cand[good], rc[good], nc[good], Jc[good]
            accepted[sel] = True
            t[pending] *= 0.5
        x[ia], r[ia], rn[ia], J[ia] = new_x, new_r, new_n, new_J
        # samples that cannot improve have stalled
        stalled = ia[~accepted]
        active[ia] = rn[ia] > tol
        active[stalled] = False

    status = np.full(len(y), OK, np.int8)
    bad = np.flatnonzero(rn > tol)
    if bad.size:
        poly = boundary_image(w)
        inside = np.zeros(bad.size, bool)
        for k in range(0, bad.size, 4096):
            inside[k:k + 4096] = inside_polygon(y[bad[k:k + 4096]], poly)
        status[bad] = np.where(inside, DIVERGED, OUTSIDE)
    return x, status, rn


def invert_map(w: GridField, targets: GridSpec, tol: float = 1e-10, max_iter: int = 40,
               strict: bool = False) -> GridField:
    """Approximate h = w^-1 sampled on ``targets``.

    Each target is seeded at the source node with the nearest image and
    refined by damped Newton on the bilinear interpolant of w.  Failures are
    per sample: ``status`` holds OK / OUTSIDE / DIVERGED and ``mask`` marks
    the OK samples.  With ``strict`` the call raises when no sample succeeds.
    """
    ty = np.stack(targets.mesh(), -1).reshape(-1, 2)
    x, status, _ = invert_points(w, ty, tol, max_iter)
    status = status.reshape(targets.shape)
    mask = status == OK
    if strict and not mask.any():
        if np.any(status == DIVERGED):
            raise NewtonDiverged("inversion failed at every target")
        raise TargetOutsideImage("no target lies inside the image of w")
    Gw = w.require_gradients().gradients
    Dw_at = bilinear(Gw, w.spec, x.reshape(targets.shape + (2,)))
    d = matalg.det(Dw_at)
    safe = np.where(np.abs(d) > 0, d, np.nan)
    Dh = _inv_safe(Dw_at, safe)
    Dh = np.where(mask[..., None, None], Dh, np.nan)
    return GridField(targets, x.reshape(targets.shape + (2,)), np.nan_to_num(Dh), "inverse",
                     mask=mask, status=status)


def _inv_safe(A, d):
    adj = np.empty_like(A)
    adj[..., 0, 0] = A[..., 1, 1]
    adj[..., 1, 1] = A[..., 0, 0]
    adj[..., 0, 1] = -A[..., 0, 1]
    adj[..., 1, 0] = -A[..., 1, 0]
    return adj / d[..., None, None]


# --------------------------------------------------------------------------
# decomposition


class EnergyEntry(NamedTuple):
    epsilon: float
    anticonformal_energy: float
    conformal_energy: float


@dataclass
class EnergyTrace:
    entries: list = field(default_factory=list)
    failure: Optional[str] = None

    def __len__(self):
        return len(self.entries)

    @property
    def epsilons(self):
        return np.array([e.epsilon for e in self.entries])

    @property
    def anticonformal(self):
        return np.array([e.anticonformal_energy for e in self.entries])

    @property
    def conformal(self):
        return np.array([e.conformal_energy for e in self.entries])

    def to_dict(self) -> dict:
        return {"entries": [list(map(float, e)) for e in self.entries], "failure": self.failure}


@dataclass
class StoilowResult:
    w: GridField
    h: GridField
    phi_u: GridField
    phi_v: GridField
    psi: ComplexGrid
    pole_flags: np.ndarray
    relation_residual: float
    composition_residual: float = float("nan")
    epsilon: float = float("nan")
    comparison_mask: Optional[np.ndarray] = None
    relation_map: Optional[np.ndarray] = None
    solver_iterations: int = 0

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "relation_residual": self.relation_residual,
            "composition_residual": self.composition_residual,
            "pole_count": int(self.pole_flags.sum()),
            "inverted_fraction": float(self.h.valid.mean()),
            "comparison_samples": int(self.comparison_mask.sum()) if self.comparison_mask is not None else 0,
            "solver_iterations": self.solver_iterations,
        }


def _pulled_back(Du, Dw):
    """Du Dw^-1: the derivative of u o w^-1 evaluated at w(x)."""
    return Du @ matalg.adjugate_inverse(Dw)


def _energies(G, Dw, mask, spec):
    jac = matalg.det(Dw)
    cell = spec.hx * spec.hy
    ea = np.abs(matalg.det(matalg.anticonformal_part(G))) * jac
    ec = matalg.det(matalg.conformal_part(G)) * jac
    return float(np.sum(ea[mask]) * cell), float(np.sum(ec[mask]) * cell)


def check_common_coefficient(u: GridField, v: GridField, mask, mu_tol: float):
    Gu, Gv = u.require_gradients().gradients, v.require_gradients().gradients
    du, dv = matalg.det(Gu), matalg.det(Gv)
    for name, d in (("Du", du), ("Dv", dv)):
        if np.any(d[mask] <= 0):
            raise NonPositiveDeterminant(f"det({name}) <= 0 at {int(np.sum(d[mask] <= 0))} interior sample(s)")
    mu_u = matalg.beltrami_complex(Gu)
    mu_v = matalg.beltrami_complex(Gv)
    gap = np.abs(mu_u - mu_v)[mask]
    worst = float(gap.max()) if gap.size else 0.0
    if worst > mu_tol:
        raise CoefficientMismatch(f"max |mu_u - mu_v| = {worst:.3g} exceeds {mu_tol:g}")
    return mu_u, worst


def _comparison_mask(w: GridField, spec: GridSpec, margin: int = 3) -> np.ndarray:
    """Largest centred subgrid whose w-image stays ``margin`` cells inside the target box."""
    nx, ny = spec.shape
    inset_x, inset_y = margin * spec.hx, margin * spec.hy
    X, Y = w.values[..., 0], w.values[..., 1]
    inside = ((X >= spec.x_min + inset_x) & (X <= spec.x_max - inset_x)
              & (Y >= spec.y_min + inset_y) & (Y <= spec.y_max - inset_y))
    for m in range(margin, min(nx, ny) // 2):
        sub = interior_mask((nx, ny), m)
        if inside[sub].all():
            return sub
    return np.zeros((nx, ny), bool)


def decompose_pair(u: GridField, v: GridField, config: SolverConfig = SolverConfig(),
                   schedule=DEFAULT_SCHEDULE, mu_tol: float = 1e-8, pole_factor: float = 4.0,
                   inversion_tol: float = 1e-10):
    """Run the truncated-coefficient pipeline for each epsilon of ``schedule``.

    The loop stops at the first epsilon whose solve fails (KappaTooLarge or
    NotConverged); the failure is recorded on the trace.  The returned
    StoilowResult is built from the smallest epsilon that succeeded.
    """
    spec = u.spec
    if v.spec != spec:
        raise ValueError("u and v must share a grid")
    Gu, Gv = u.require_gradients().gradients, v.require_gradients().gradients
    inner1 = interior_mask(spec.shape, 1) & u.valid & v.valid
    mu_u, _ = check_common_coefficient(u, v, inner1, mu_tol)
    mu = MuField.from_values(spec, np.where(inner1, mu_u, 0.0))
    energy_mask = interior_mask(spec.shape, 3)

    trace = EnergyTrace()
    last = None
    for eps in sorted(schedule, reverse=True):
        cfg = SolverConfig(eps, config.max_neumann_iters, config.residual_tol,
                           config.padding_factor, config.kappa_max)
        try:
            sol = solve_principal(truncate_mu(mu, eps), cfg, truncate=False)
        except (KappaTooLarge, NotConverged) as exc:
            trace.failure = f"epsilon={eps:g}: {type(exc).__name__}: {exc}"
            break
        Gw = sol.f.gradients
        trace.entries.append(EnergyEntry(eps, *_energies(_pulled_back(Gu, Gw), Gw, energy_mask, spec)))
        last = (eps, sol)
    if last is None:
        raise NotConverged(f"no epsilon in the schedule succeeded ({trace.failure})", trace)

    eps, sol = last
    w = sol.f
    Gw = w.gradients
    h = invert_map(w, spec, inversion_tol)
    hx = h.values
    ok = h.valid

    def compose(f: GridField, G):
        vals = bilinear(f.values, spec, hx)
        grads = bilinear(_pulled_back(G, Gw), spec, hx)
        return GridField(spec, vals, grads, "composed", mask=ok)

    phi_u, phi_v = compose(u, Gu), compose(v, Gv)
    du = matalg.dz(phi_u.gradients)
    dv = matalg.dz(phi_v.gradients)
    hstep = max(spec.hx, spec.hy)
    poles = ok & (np.abs(du) < pole_factor * hstep)
    usable = ok & ~poles
    psi = np.full(spec.shape, np.nan + 0j)
    psi[usable] = dv[usable] / du[usable]

    cmp_mask = _comparison_mask(w, spec) & u.valid & v.valid
    # psi at w(x): bilinear in the real and imaginary parts; NaN propagates from flagged corners
    psi_w = bilinear(np.stack([psi.real, psi.imag], -1), spec, w.values)
    psi_w = psi_w[..., 0] + 1j * psi_w[..., 1]
    rel = matalg.hs_norm(Gv - matalg.conformal_matrix(psi_w) @ Gu)
    rel_ok = cmp_mask & np.isfinite(rel)
    relation = float(rel[rel_ok].max()) if rel_ok.any() else float("nan")

    ok_f = ok.astype(float)
    phi_u_clean = np.where(ok[..., None], phi_u.values, np.nan)
    back = bilinear(phi_u_clean, spec, w.values)
    reach = bilinear(ok_f, spec, w.values) > 1 - 1e-12
    comp = np.linalg.norm(back - u.values, axis=-1)
    comp_ok = cmp_mask & reach & np.isfinite(comp)
    composition = float(comp[comp_ok].max()) if comp_ok.any() else float("nan")

    result = StoilowResult(w, h, phi_u, phi_v, ComplexGrid(spec, psi), poles, relation, composition,
                           eps, cmp_mask, np.where(rel_ok, rel, np.nan), sol.iterations_used)
    return result, trace


# --------------------------------------------------------------------------
# diagnostics


def holomorphy_check(phi: GridField, margin: int = 1):
    """(max anticonformal HS norm on the interior, integral of its square)."""
    G = phi.require_gradients().gradients
    a = matalg.hs_norm(matalg.anticonformal_part(G))
    spec = phi.spec
    inner = interior_mask(spec.shape, margin) & phi.valid
    W = region_weights(spec, (spec.x_min, spec.x_max), (spec.y_min, spec.y_max))
    sq = np.where(phi.valid, a ** 2, 0.0)
    return float(a[inner].max()) if inner.any() else 0.0, float(np.sum(W * sq))


@dataclass
class RigidityReport:
    best_rotation: np.ndarray
    mean_residual: float
    max_residual: float
    verdict: str
    scale: float = 1.0

    @property
    def angle(self) -> float:
        return math.atan2(self.best_rotation[1, 0], self.best_rotation[0, 0])

    def to_dict(self) -> dict:
        return {
            "best_rotation": self.best_rotation.tolist(),
            "angle": self.angle,
            "scale": self.scale,
            "mean_residual": self.mean_residual,
            "max_residual": self.max_residual,
            "verdict": self.verdict,
        }


def rigidity_fit(u: GridField, v: GridField, rigid_tol: float = 1e-3, shape_tol: float = 1e-6,
                 fit_scale: bool = False, mask=None) -> RigidityReport:
    """Fit one rotation R (and optionally a scale k) with Dv ~ k R Du.

    Precondition: equal symmetric factors S(Du) = S(Dv), or equal Beltrami
    coefficients when ``fit_scale`` is set; the relative defect must stay
    below ``shape_tol`` on the interior.  R maximises tr(R^T sum Dv Du^T),
    i.e. its angle is that of the conformal part of sum Dv Du^T.  Residuals
    are HS norms divided by the mean of |Du|_HS.
    """
    Gu, Gv = u.require_gradients().gradients, v.require_gradients().gradients
    spec = u.spec
    m = interior_mask(spec.shape, 1) & u.valid & v.valid
    if mask is not None:
        m &= mask
    du, dv = matalg.det(Gu), matalg.det(Gv)
    if np.any(du[m] <= 0) or np.any(dv[m] <= 0):
        raise PreconditionViolated("det(Du) and det(Dv) must be positive on the interior")
    if fit_scale:
        defect = np.abs(matalg.beltrami_complex(Gu) - matalg.beltrami_complex(Gv))
    else:
        Su, Sv = matalg.symmetric_factor(Gu), matalg.symmetric_factor(Gv)
        defect = matalg.hs_norm(Su - Sv) / np.maximum(matalg.hs_norm(Su), 1e-300)
    defect = np.where(m, defect, 0.0)
    if defect.max() > shape_tol:
        order = np.argsort(defect, axis=None)[::-1][:5]
        worst = [(int(i), int(j), float(defect[i, j])) for i, j in zip(*np.unravel_index(order, defect.shape))]
        what = "Beltrami coefficients" if fit_scale else "symmetric factors"
        raise PreconditionViolated(f"{what} differ by up to {defect.max():.3g}", worst)

    M = np.einsum("nik,njk->ij", Gv[m], Gu[m])
    c = matalg.dz(M)
    R = matalg.rotation(math.atan2(c.imag, c.real)) if abs(c) > 0 else np.eye(2)
    k = 1.0
    RGu = R @ Gu[m]
    if fit_scale:
        k = float(np.sum(Gv[m] * RGu) / np.sum(RGu * RGu))
    res = matalg.hs_norm(Gv[m] - k * RGu)
    scale = float(np.mean(matalg.hs_norm(Gu[m])))
    mean_r = float(np.mean(res) / scale)
    max_r = float(np.max(res) / scale)
    return RigidityReport(R, mean_r, max_r, "rigid" if mean_r <= rigid_tol else "non_rigid", k)


class TraceSlope(NamedTuple):
    slope: float
    at_floor: bool


def energy_trace_slope(trace: EnergyTrace, floor: Optional[float] = None) -> TraceSlope:
    """Least-squares slope of log anticonformal energy against log epsilon.

    Entries at or below ``floor`` (default 1e-12 times the largest conformal
    energy) carry no signal.  The fit uses the entries above the floor when
    at least 3 remain; otherwise it runs on floor-clamped values and sets
    ``at_floor``.
    """
    if len(trace) < 3:
        raise InsufficientTrace(f"need at least 3 entries, have {len(trace)}")
    eps = trace.epsilons
    ea = trace.anticonformal
    if floor is None:
        floor = 1e-12 * max(float(np.max(np.abs(trace.conformal))), 1e-300)
    above = ea > floor
    if above.sum() >= 3:
        return TraceSlope(float(np.polyfit(np.log(eps[above]), np.log(ea[above]), 1)[0]), False)
    y = np.log(np.maximum(ea, floor))
    return TraceSlope(float(np.polyfit(np.log(eps), y, 1)[0]), True)
