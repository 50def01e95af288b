"""Planar mappings sampled on uniform grids.

Arrays are indexed ``[i, j]`` with ``i`` along x and ``j`` along y, so a
GridField's ``values`` has shape ``(nx, ny, 2)`` and its ``gradients`` has
shape ``(nx, ny, 2, 2)`` with ``gradients[i, j, k, l] = d u_k / d x_l``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import matalg
from .errors import DegenerateGradient, EvaluationDomainError


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("grid bounds must satisfy min < max")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 samples per axis")

    @classmethod
    def square(cls, n: int, half_width: float = 1.0, center=(0.0, 0.0)) -> "GridSpec":
        cx, cy = center
        return cls(cx - half_width, cx + half_width, cy - half_width, cy + half_width, n, n)

    @classmethod
    def cell_centered(cls, x0, x1, y0, y1, nx, ny) -> "GridSpec":
        """Samples at the centers of an ``nx`` by ``ny`` partition of the box."""
        hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
        return cls(x0 + hx / 2, x1 - hx / 2, y0 + hy / 2, y1 - hy / 2, nx, ny)

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y_min + self.hy * np.arange(self.ny)

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    def z(self) -> np.ndarray:
        X, Y = self.mesh()
        return X + 1j * Y

    @property
    def shape(self):
        return (self.nx, self.ny)

    def fractional_index(self, points) -> np.ndarray:
        """Continuous (i, j) index coordinates of points of shape (..., 2)."""
        p = np.asarray(points, dtype=float)
        return np.stack([(p[..., 0] - self.x_min) / self.hx, (p[..., 1] - self.y_min) / self.hy], -1)

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max,
            "nx": self.nx, "ny": self.ny,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]), float(d["y_max"]),
                   int(d["nx"]), int(d["ny"]))


@dataclass
class GridField:
    """A mapping u sampled on a grid, with its gradient Du.

    ``mask`` marks usable samples (None means all); ``status`` optionally
    carries per-sample codes from the producing operation.
    """

    spec: GridSpec
    values: np.ndarray
    gradients: Optional[np.ndarray] = None
    provenance: str = "analytic"
    mask: Optional[np.ndarray] = None
    status: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.spec.nx, self.spec.ny, 2):
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.spec.shape}")
        if self.gradients is not None:
            self.gradients = np.asarray(self.gradients, dtype=float)
            if self.gradients.shape != (self.spec.nx, self.spec.ny, 2, 2):
                raise ValueError("gradients must have shape (nx, ny, 2, 2)")

    @property
    def complex_values(self) -> np.ndarray:
        return self.values[..., 0] + 1j * self.values[..., 1]

    @property
    def valid(self) -> np.ndarray:
        return np.ones(self.spec.shape, bool) if self.mask is None else self.mask

    def det(self) -> np.ndarray:
        return matalg.det(self.require_gradients().gradients)

    def require_gradients(self) -> "GridField":
        return self if self.gradients is not None else finite_diff_gradients(self)


@dataclass
class ComplexGrid:
    """Complex scalar samples; NaN marks flagged (singular or unusable) samples."""

    spec: GridSpec
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.spec.shape:
            raise ValueError("values must have the grid's shape")


def interior_mask(shape, margin: int = 1) -> np.ndarray:
    m = np.zeros(shape, bool)
    if 2 * margin < shape[0] and 2 * margin < shape[1]:
        m[margin:shape[0] - margin, margin:shape[1] - margin] = True
    return m


def bilinear(array: np.ndarray, spec: GridSpec, points) -> np.ndarray:
    """Bilinear interpolation of ``array`` (shape (nx, ny, ...)) at ``points``.

    Points outside the grid are clamped to the boundary cell (extrapolated).
    """
    idx = spec.fractional_index(points)
    s, t = idx[..., 0], idx[..., 1]
    i = np.clip(np.floor(s).astype(int), 0, spec.nx - 2)
    j = np.clip(np.floor(t).astype(int), 0, spec.ny - 2)
    a, b = s - i, t - j
    extra = (None,) * (array.ndim - 2)
    a, b = a[(...,) + extra], b[(...,) + extra]
    return ((1 - a) * (1 - b) * array[i, j] + a * (1 - b) * array[i + 1, j]
            + (1 - a) * b * array[i, j + 1] + a * b * array[i + 1, j + 1])


# --------------------------------------------------------------------------
# analytic maps


@dataclass(frozen=True)
class AnalyticMap:
    """Closed-form planar map.

    ``evaluate`` and ``gradient`` take coordinate arrays X, Y and return
    arrays of shape ``X.shape + (2,)`` and ``X.shape + (2, 2)``.
    """

    name: str
    evaluate: Callable
    gradient: Callable
    params: dict = field(default_factory=dict)
    injective: bool = False
    seam: str = ""

    def __call__(self, X, Y):
        return self.evaluate(np.asarray(X, float), np.asarray(Y, float))


def _stack2(a, b):
    return np.stack([a, b], -1)


def holomorphic_map(name, f, fprime, params=None, injective=False) -> AnalyticMap:
    """Map from a holomorphic f and its derivative."""

    def ev(X, Y):
        w = f(X + 1j * Y)
        return _stack2(w.real, w.imag)

    def gr(X, Y):
        return matalg.conformal_matrix(fprime(X + 1j * Y))

    return AnalyticMap(name, ev, gr, dict(params or {}), injective)


def wirtinger_map(name, f, fz, fzbar, params=None, injective=False, seam="") -> AnalyticMap:
    """Map from complex closed forms of f, df/dz and df/dzbar."""

    def ev(X, Y):
        w = f(X + 1j * Y)
        return _stack2(w.real, w.imag)

    def gr(X, Y):
        z = X + 1j * Y
        return matalg.from_wirtinger(fz(z), fzbar(z))

    return AnalyticMap(name, ev, gr, dict(params or {}), injective, seam)


def identity() -> AnalyticMap:
    return holomorphic_map("identity", lambda z: z, lambda z: np.ones_like(z), injective=True)


def affine(A, b=(0.0, 0.0)) -> AnalyticMap:
    A = np.asarray(A, float)
    b = np.asarray(b, float)

    def ev(X, Y):
        return np.einsum("kl,...l->...k", A, _stack2(X, Y)) + b

    def gr(X, Y):
        return np.broadcast_to(A, np.shape(X) + (2, 2)).copy()

    return AnalyticMap("affine", ev, gr, {"A": A.tolist(), "b": b.tolist()},
                       injective=bool(matalg.det(A) != 0))


def beltrami_affine(m: complex) -> AnalyticMap:
    """z + m zbar, with constant Beltrami coefficient m."""
    m = complex(m)
    return wirtinger_map(
        "beltrami_affine", lambda z: z + m * np.conj(z),
        lambda z: np.ones_like(z), lambda z: np.full_like(z, m),
        {"m": [m.real, m.imag]}, injective=abs(m) != 1,
    )


def power(n: int) -> AnalyticMap:
    return holomorphic_map(f"z^{n}", lambda z: z ** n, lambda z: n * z ** (n - 1), {"n": n},
                           injective=(n == 1))


def shifted_power(c: complex = 1.0, n: int = 2) -> AnalyticMap:
    c = complex(c)
    return holomorphic_map(f"(z-{c.real:g})^{n}", lambda z: (z - c) ** n,
                           lambda z: n * (z - c) ** (n - 1), {"c": [c.real, c.imag], "n": n})


def conjugate() -> AnalyticMap:
    return wirtinger_map("zbar", np.conj, np.zeros_like, np.ones_like, injective=True)


def scaled_rotation(inner: AnalyticMap, k: float, angle: float) -> AnalyticMap:
    """k R_angle composed after ``inner``."""
    return compose_holomorphic(inner, lambda w: k * np.exp(1j * angle) * w,
                               lambda w: np.full_like(w, k * np.exp(1j * angle)),
                               f"{k:g}R({angle:g})", injective=inner.injective)


def compose_holomorphic(inner: AnalyticMap, phi, phi_prime, label="phi", injective=False) -> AnalyticMap:
    """phi o inner for a holomorphic phi; the Beltrami coefficient is unchanged."""

    def ev(X, Y):
        u = inner.evaluate(X, Y)
        w = phi(u[..., 0] + 1j * u[..., 1])
        return _stack2(w.real, w.imag)

    def gr(X, Y):
        u = inner.evaluate(X, Y)
        return matalg.conformal_matrix(phi_prime(u[..., 0] + 1j * u[..., 1])) @ inner.gradient(X, Y)

    params = {"inner": inner.name, "inner_params": inner.params, "outer": label}
    return AnalyticMap(f"{label}o{inner.name}", ev, gr, params, injective, inner.seam)


def square_of(inner: AnalyticMap) -> AnalyticMap:
    return compose_holomorphic(inner, lambda w: w * w, lambda w: 2 * w, "square")


def radial_stretch(r0: float = 0.5, delta: float = 0.3) -> AnalyticMap:
    """Radial homeomorphism rho(|z|) z/|z| whose dilatation blows up on |z| = r0.

    The logarithmic derivative q = r rho'/rho equals 1 outside the annulus
    |r - r0| < delta (so the map is a similarity there) and inside it is
    q = (3 sqrt(t) - t^1.5)/2 with t = |r - r0|/delta.  The distortion 1/q
    is unbounded but integrable, and the Beltrami coefficient
    (q - 1)/(q + 1) z/zbar vanishes outside the annulus.
    """
    if not 0 < delta < r0:
        raise ValueError("need 0 < delta < r0")
    a = r0 / delta
    sa = math.sqrt(a)

    def G_left(tau):
        return tau ** 3 / 3 + (a - 3) * tau + sa * (3 - a) * np.arctanh(tau / sa)

    def G_right(tau):
        return -tau ** 3 / 3 + (3 + a) * tau - sa * (3 + a) * np.arctan(tau / sa)

    log_inner = math.log(r0 - delta)
    log_mid = log_inner + float(G_left(1.0))
    log_outer = log_mid + float(G_right(1.0))

    def q_of(r):
        t = np.minimum(np.abs(r - r0) / delta, 1.0)
        return 0.5 * (3 * np.sqrt(t) - t ** 1.5)

    def log_rho(r):
        r = np.asarray(r, float)
        out = np.empty_like(r)
        inner = r <= r0 - delta
        left = (r > r0 - delta) & (r <= r0)
        right = (r > r0) & (r < r0 + delta)
        outer = r >= r0 + delta
        with np.errstate(divide="ignore"):
            out[inner] = np.log(r[inner])
        out[left] = log_mid - G_left(np.sqrt((r0 - r[left]) / delta))
        out[right] = log_mid + G_right(np.sqrt((r[right] - r0) / delta))
        out[outer] = log_outer + np.log(r[outer] / (r0 + delta))
        return out

    def ev(X, Y):
        z = X + 1j * Y
        r = np.abs(z)
        rho = np.exp(log_rho(r))
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(r > 0, rho * z / np.where(r > 0, r, 1.0), 0.0)
        return _stack2(w.real, w.imag)

    def gr(X, Y):
        z = X + 1j * Y
        r = np.abs(z)
        q = q_of(r)
        rs = np.where(r > 0, r, 1.0)
        ratio = np.where(r > 0, np.exp(log_rho(rs)) / rs, 1.0)  # rho / r
        fz = 0.5 * (q + 1) * ratio
        phase = np.where(r > 0, (z / rs) ** 2, 1.0)
        fzbar = 0.5 * (q - 1) * ratio * phase
        return matalg.from_wirtinger(fz, fzbar)

    return AnalyticMap("radial", ev, gr, {"r0": r0, "delta": delta}, injective=True,
                       seam=f"|z|={r0:g}")


def example1_pair(theta: float = math.pi / 2):
    """The piecewise pair with equal Cauchy-Green tensors but no global rotation.

    u = (x1, x1 x2) and v = R_theta u for x1 > 0; u = v = (x1, -x1 x2) for x1 <= 0.
    """
    if not 0 < theta < 2 * math.pi:
        raise ValueError("theta must lie in (0, 2 pi)")
    R = matalg.rotation(theta)

    def u_ev(X, Y):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        return _stack2(X, np.where(X > 0, X * Y, -X * Y))

    def u_gr(X, Y):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        pos = X > 0
        G = np.zeros(np.shape(X) + (2, 2))
        G[..., 0, 0] = 1.0
        G[..., 1, 0] = np.where(pos, Y, -Y)
        G[..., 1, 1] = np.where(pos, X, -X)
        return G

    def v_ev(X, Y):
        X = np.asarray(X, float)
        u = u_ev(X, Y)
        rot = np.einsum("kl,...l->...k", R, u)
        return np.where((X > 0)[..., None], rot, u)

    def v_gr(X, Y):
        X = np.asarray(X, float)
        G = u_gr(X, Y)
        return np.where((X > 0)[..., None, None], R @ G, G)

    params = {"theta": theta}
    return (AnalyticMap("example1_u", u_ev, u_gr, params, seam="x1=0"),
            AnalyticMap("example1_v", v_ev, v_gr, params, seam="x1=0"))


_CATALOG_HELP = (
    "identity|z, z^N, (z-C)^N, zbar, z+Mzbar, radial, example1-u, example1-v, "
    "affine:a11;a12;a21;a22"
)


def catalog_map(name: str) -> AnalyticMap:
    """Look up a catalog map by its textual identifier."""
    s = name.strip().replace(" ", "")
    if s in ("identity", "z"):
        return identity()
    if s == "zbar":
        return conjugate()
    if s == "radial":
        return radial_stretch()
    if s in ("example1-u", "example1-v"):
        u, v = example1_pair()
        return u if s.endswith("u") else v
    m = re.fullmatch(r"z\^(\d+)", s)
    if m:
        return power(int(m.group(1)))
    m = re.fullmatch(r"\(z-([-+0-9.eE]+)\)\^(\d+)", s)
    if m:
        return shifted_power(float(m.group(1)), int(m.group(2)))
    m = re.fullmatch(r"z\+\(?([-+0-9.eEj]+)\)?\*?zbar", s)
    if m:
        return beltrami_affine(complex(m.group(1)))
    if s.startswith("affine:"):
        vals = [float(t) for t in s[len("affine:"):].split(";")]
        if len(vals) not in (4, 6):
            raise ValueError("affine needs 4 matrix entries (and optionally 2 offsets)")
        return affine(np.reshape(vals[:4], (2, 2)), vals[4:] or (0.0, 0.0))
    raise KeyError(f"unknown catalog map {name!r}; known: {_CATALOG_HELP}")


def catalog_pair(name: str):
    """Named pairs, or two comma-separated catalog maps ``"u,v"``."""
    s = name.strip().replace(" ", "")
    if s.startswith("example1"):
        theta = float(s.split(":", 1)[1]) if ":" in s else math.pi / 2
        return example1_pair(theta)
    if s == "radial":
        u = radial_stretch()
        return u, square_of(u)
    if s == "affine-square":
        u = beltrami_affine(0.2)
        return u, square_of(u)
    parts = s.split(",")
    if len(parts) != 2:
        raise KeyError(f"unknown pair {name!r}")
    return catalog_map(parts[0]), catalog_map(parts[1])


# --------------------------------------------------------------------------
# sampling and differentiation


def sample(amap: AnalyticMap, spec: GridSpec) -> GridField:
    X, Y = spec.mesh()
    with np.errstate(all="ignore"):
        vals = amap.evaluate(X, Y)
        grads = amap.gradient(X, Y)
    bad = ~np.isfinite(vals).all(-1) | ~np.isfinite(grads).all((-2, -1))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise EvaluationDomainError(
            f"{amap.name} undefined at {int(bad.sum())} sample(s), e.g. ({X[i, j]:g}, {Y[i, j]:g})")
    return GridField(spec, vals, grads, "analytic")


def finite_diff_gradients(field: GridField) -> GridField:
    """Central differences inside, second-order one-sided differences on the edges."""
    spec = field.spec
    edge = 2 if min(spec.nx, spec.ny) >= 3 else 1
    dx = np.gradient(field.values, spec.hx, axis=0, edge_order=edge)
    dy = np.gradient(field.values, spec.hy, axis=1, edge_order=edge)
    grads = np.stack([dx, dy], axis=-1)
    return replace(field, gradients=grads, provenance="numeric")


def mu_grid(field: GridField) -> ComplexGrid:
    return ComplexGrid(field.spec, matalg.beltrami_complex(field.require_gradients().gradients))


# --------------------------------------------------------------------------
# quadrature diagnostics


def _dual_weights(coords, h, lo, hi):
    return np.clip(coords + h / 2, lo, hi) - np.clip(coords - h / 2, lo, hi)


def region_weights(spec: GridSpec, x_range, y_range) -> np.ndarray:
    """Area of each sample's cell intersected with the box ``x_range x y_range``.

    Each sample owns the cell of size hx by hy centred on it, so the
    weighted sum is the midpoint rule on those cells.
    """
    wx = _dual_weights(spec.x, spec.hx, *x_range)
    wy = _dual_weights(spec.y, spec.hy, *y_range)
    return np.outer(wx, wy)


def integrability_scan(field: GridField, deltas, region=((-1.0, 1.0), (-1.0, 1.0))):
    """Midpoint integrals of |Du|^2 / det(Du) over ``region`` with x1 > delta.

    Returns ``[(delta, integral), ...]`` ordered by decreasing delta.
    """
    (x0, x1), yr = region
    G = field.require_gradients().gradients
    d = matalg.det(G)
    opn = matalg.operator_norm(G)
    out = []
    for delta in sorted((float(t) for t in deltas), reverse=True):
        W = region_weights(field.spec, (max(x0, delta), x1), yr)
        inside = W > 0
        if np.any(d[inside] <= 0):
            raise DegenerateGradient(f"det(Du) <= 0 inside scan region x1 > {delta:g}")
        L = np.zeros_like(d)
        L[inside] = opn[inside] ** 2 / d[inside]
        out.append((delta, float(np.sum(W * L))))
    return out


def boundary_polygon(spec: GridSpec, resolution: Optional[int] = None) -> np.ndarray:
    """Counter-clockwise points on the boundary of the box of ``spec``."""
    n = resolution or 4 * (spec.nx + spec.ny)
    lx, ly = spec.x_max - spec.x_min, spec.y_max - spec.y_min
    per = 2 * (lx + ly)
    nx_ = max(2, int(round(n * lx / per)))
    ny_ = max(2, int(round(n * ly / per)))
    xs = np.linspace(spec.x_min, spec.x_max, nx_ + 1)
    ys = np.linspace(spec.y_min, spec.y_max, ny_ + 1)
    bottom = np.stack([xs[:-1], np.full(nx_, spec.y_min)], -1)
    right = np.stack([np.full(ny_, spec.x_max), ys[:-1]], -1)
    top = np.stack([xs[::-1][:-1], np.full(nx_, spec.y_max)], -1)
    left = np.stack([np.full(ny_, spec.x_min), ys[::-1][:-1]], -1)
    return np.concatenate([bottom, right, top, left])


def shoelace(poly) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def area_check(field: GridField, subregion: GridSpec):
    """Return (midpoint integral of |det Du| over subregion, area of its image).

    The image area is the shoelace area of the mapped boundary polygon,
    which equals the integral when the map is injective on the subregion.
    """
    W = region_weights(field.spec, (subregion.x_min, subregion.x_max), (subregion.y_min, subregion.y_max))
    integral = float(np.sum(W * np.abs(field.det())))
    poly = bilinear(field.values, field.spec, boundary_polygon(subregion))
    return integral, abs(shoelace(poly))
