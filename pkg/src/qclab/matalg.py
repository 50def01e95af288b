"""Closed-form algebra of real 2x2 matrices.

Every function accepts a single matrix of shape ``(2, 2)`` or a stack of
shape ``(..., 2, 2)`` and broadcasts over the leading axes.

A matrix ``A`` splits uniquely as ``A = [A]_c + [A]_a`` where the conformal
part is ``alpha * R_theta`` and the anticonformal part is ``beta * N_psi``.
In complex notation the two parts are carried by the Wirtinger derivatives
of the linear map ``x -> A x``::

    dz(A)    = ((a11 + a22) + i (a21 - a12)) / 2  = alpha * exp(i theta)
    dzbar(A) = ((a11 - a22) + i (a21 + a12)) / 2  = beta * exp(i psi)

and the Beltrami coefficient of ``A`` is ``dzbar(A) / dz(A)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDeterminant

#: The reflection diag(1, -1).
REFLECTION = np.array([[1.0, 0.0], [0.0, -1.0]])
IDENTITY = np.eye(2)

DEFAULT_TOL = 1e-9


def _as_mat(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (2, 2):
        raise ValueError(f"expected trailing shape (2, 2), got {A.shape}")
    return A


def rotation(theta) -> np.ndarray:
    """R_theta, broadcasting over ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def reflection(psi) -> np.ndarray:
    """N_psi = R_psi @ diag(1, -1)."""
    c, s = np.cos(psi), np.sin(psi)
    return np.stack([np.stack([c, s], -1), np.stack([s, -c], -1)], -2)


def conformal_matrix(c) -> np.ndarray:
    """The matrix [[a, -b], [b, a]] of the complex number(s) ``c = a + ib``."""
    c = np.asarray(c, dtype=complex)
    a, b = c.real, c.imag
    return np.stack([np.stack([a, -b], -1), np.stack([b, a], -1)], -2)


def from_wirtinger(fz, fzbar) -> np.ndarray:
    """Gradient matrix with conformal part ``fz`` and anticonformal part ``fzbar``."""
    fz = np.asarray(fz, dtype=complex)
    fzbar = np.asarray(fzbar, dtype=complex)
    fx = fz + fzbar
    fy = 1j * (fz - fzbar)
    return np.stack([np.stack([fx.real, fy.real], -1), np.stack([fx.imag, fy.imag], -1)], -2)


def dz(A) -> np.ndarray:
    A = _as_mat(A)
    return 0.5 * ((A[..., 0, 0] + A[..., 1, 1]) + 1j * (A[..., 1, 0] - A[..., 0, 1]))


def dzbar(A) -> np.ndarray:
    A = _as_mat(A)
    return 0.5 * ((A[..., 0, 0] - A[..., 1, 1]) + 1j * (A[..., 1, 0] + A[..., 0, 1]))


def conformal_part(A) -> np.ndarray:
    return conformal_matrix(dz(A))


def anticonformal_part(A) -> np.ndarray:
    return conformal_matrix(dzbar(A)) @ REFLECTION


def det(A) -> np.ndarray:
    A = _as_mat(A)
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def hs_norm(A) -> np.ndarray:
    A = _as_mat(A)
    return np.sqrt(np.sum(A * A, axis=(-2, -1)))


def operator_norm(A) -> np.ndarray:
    """Largest singular value, |f_z| + |f_zbar|.

    Avoids the cancellation in tr(A^T A)^2 - 4 det(A)^2 near conformal A.
    """
    A = _as_mat(A)
    return np.abs(dz(A)) + np.abs(dzbar(A))


def _require_positive_det(A, what="matrix"):
    d = det(A)
    if np.any(~(d > 0)):
        bad = int(np.count_nonzero(~(d > 0)))
        raise NonPositiveDeterminant(f"{what}: det <= 0 at {bad} sample(s)")
    return d


# --------------------------------------------------------------------------
# conformal / anticonformal decomposition


@dataclass(frozen=True)
class ConfAntiParts:
    conformal: np.ndarray
    anticonformal: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    psi_angle: np.ndarray
    theta_degenerate: np.ndarray
    psi_degenerate: np.ndarray


def _angle(c, degenerate):
    ang = np.mod(np.angle(c), 2.0 * np.pi)
    return np.where(degenerate, 0.0, ang)


def decompose(A) -> ConfAntiParts:
    """Split ``A`` into ``alpha R_theta + beta N_psi``.

    An angle is reported as 0 with its degeneracy flag set when the
    corresponding part vanishes (relative to the size of ``A``).
    """
    A = _as_mat(A)
    c, a = dz(A), dzbar(A)
    alpha, beta = np.abs(c), np.abs(a)
    scale = alpha + beta
    tiny = 1e-14 * scale
    theta_deg = alpha <= tiny
    psi_deg = beta <= tiny
    return ConfAntiParts(
        conformal=conformal_matrix(c),
        anticonformal=conformal_matrix(a) @ REFLECTION,
        alpha=alpha,
        beta=beta,
        theta=_angle(c, theta_deg),
        psi_angle=_angle(a, psi_deg),
        theta_degenerate=theta_deg,
        psi_degenerate=psi_deg,
    )


# --------------------------------------------------------------------------
# Beltrami coefficient


@dataclass(frozen=True)
class ConformalMat:
    """Conformal matrix [[a, -b], [b, a]], i.e. the complex number a + ib.

    Two norms are in play: the complex modulus ``sqrt(a^2 + b^2)`` and the
    Hilbert-Schmidt norm of the matrix, which is ``sqrt(2)`` times larger.
    """

    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_complex(cls, c) -> "ConformalMat":
        c = np.asarray(c, dtype=complex)
        return cls(c.real, c.imag)

    @property
    def complex(self) -> np.ndarray:
        return np.asarray(self.a) + 1j * np.asarray(self.b)

    @property
    def modulus(self) -> np.ndarray:
        return np.hypot(self.a, self.b)

    @property
    def hs_norm(self) -> np.ndarray:
        return np.sqrt(2.0) * self.modulus

    @property
    def det(self) -> np.ndarray:
        # equals hs_norm**2 / 2
        return np.asarray(self.a) ** 2 + np.asarray(self.b) ** 2

    def matrix(self) -> np.ndarray:
        return conformal_matrix(self.complex)


def beltrami_complex(A) -> np.ndarray:
    """Unchecked Beltrami coefficient ``dzbar(A) / dz(A)`` as complex numbers."""
    c = dz(A)
    with np.errstate(divide="ignore", invalid="ignore"):
        return dzbar(A) / c


def beltrami_of(A) -> ConformalMat:
    """Beltrami coefficient of ``A``: the conformal mu with [A]_a I = mu [A]_c.

    Raises NonPositiveDeterminant unless det(A) > 0, which guarantees
    ``|mu| < 1`` (complex modulus).
    """
    _require_positive_det(A)
    return ConformalMat.from_complex(beltrami_complex(A))


# --------------------------------------------------------------------------
# polar decomposition, inverse, ellipse similarity, dilatation


@dataclass(frozen=True)
class PolarDecomp:
    rotation: np.ndarray
    symmetric: np.ndarray


def symmetric_sqrt(M) -> np.ndarray:
    """Square root of a symmetric positive-definite 2x2 matrix.

    Uses sqrt(M) = (M + s I) / sqrt(tr M + 2 s) with s = sqrt(det M).
    """
    M = _as_mat(M)
    s = np.sqrt(det(M))
    t = np.sqrt(M[..., 0, 0] + M[..., 1, 1] + 2.0 * s)
    return (M + s[..., None, None] * IDENTITY) / t[..., None, None]


def symmetric_factor(A) -> np.ndarray:
    """S(A) = sqrt(A^T A)."""
    A = _as_mat(A)
    return symmetric_sqrt(np.swapaxes(A, -1, -2) @ A)


def adjugate_inverse(A) -> np.ndarray:
    A = _as_mat(A)
    adj = np.empty_like(A)
    adj[..., 0, 0] = A[..., 1, 1]
    adj[..., 1, 1] = A[..., 0, 0]
    adj[..., 0, 1] = -A[..., 0, 1]
    adj[..., 1, 0] = -A[..., 1, 0]
    return adj / det(A)[..., None, None]


def polar(A) -> PolarDecomp:
    _require_positive_det(A)
    A = _as_mat(A)
    S = symmetric_factor(A)
    return PolarDecomp(rotation=A @ adjugate_inverse(S), symmetric=S)


def inverse_closed_form(A) -> np.ndarray:
    """A^{-1} = (alpha R_{-theta} - beta N_psi) / (alpha^2 - beta^2)."""
    _require_positive_det(A)
    c, a = dz(A), dzbar(A)
    denom = (np.abs(c) ** 2 - np.abs(a) ** 2)[..., None, None]
    # alpha R_{-theta} is the conformal matrix of conj(dz)
    return (conformal_matrix(np.conj(c)) - conformal_matrix(a) @ REFLECTION) / denom


def similar_ellipse_test(A, B, tol: float = DEFAULT_TOL):
    """True where the Beltrami coefficients of A and B agree within ``tol``.

    By the equivalence mu_A = mu_B <=> S(A) = lambda S(B) for some lambda > 0
    this decides whether A and B map the unit disk onto similar ellipses.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _require_positive_det(A, "A")
    _require_positive_det(B, "B")
    return np.abs(beltrami_complex(A) - beltrami_complex(B)) <= tol


def best_similarity_scale(A, B):
    """Least-squares lambda minimising |S(A) - lambda S(B)| and its relative residual."""
    SA, SB = symmetric_factor(A), symmetric_factor(B)
    lam = np.sum(SA * SB, axis=(-2, -1)) / np.sum(SB * SB, axis=(-2, -1))
    resid = hs_norm(SA - lam[..., None, None] * SB) / hs_norm(SA)
    return lam, resid


def dilatation_quotient(A) -> np.ndarray:
    """|A|^2 / det(A) with the operator norm; equals (1 + |mu|) / (1 - |mu|)."""
    d = _require_positive_det(A)
    return operator_norm(A) ** 2 / d


# --------------------------------------------------------------------------
# randomized identity suite


def random_positive_matrices(n: int, rng: np.random.Generator, max_cond: float = 1e4) -> np.ndarray:
    """``n`` Gaussian 2x2 matrices with det > 0 and condition number <= max_cond."""
    out = np.empty((0, 2, 2))
    while out.shape[0] < n:
        A = rng.standard_normal((2 * (n - out.shape[0]) + 16, 2, 2))
        flip = det(A) < 0
        A[flip, 0, :] *= -1.0
        s_max = operator_norm(A)
        s_min = det(A) / s_max
        keep = (s_min > 0) & (s_max / np.where(s_min > 0, s_min, 1.0) <= max_cond)
        out = np.concatenate([out, A[keep]])
    return out[:n]


def _max(x) -> float:
    return float(np.max(x)) if np.size(x) else 0.0


def identity_defects(samples: int = 100_000, seed: int = 0) -> dict:
    """Maximum observed defect of each decomposition identity over random matrices.

    Defects are relative to the natural scale of each identity so that the
    numbers are comparable across matrices of different size.
    """
    rng = np.random.default_rng(seed)
    A = random_positive_matrices(samples, rng)
    B = random_positive_matrices(samples, rng)
    parts = decompose(A)
    alpha, beta = parts.alpha, parts.beta
    scale = hs_norm(A)
    mu = beltrami_complex(A)
    Ainv = adjugate_inverse(A)
    mu_inv = beltrami_complex(Ainv)

    k = rng.uniform(0.1, 10.0, samples)
    C = k[:, None, None] * rotation(rng.uniform(0.0, 2 * np.pi, samples))
    Ac, Aa = parts.conformal, parts.anticonformal

    out = {}
    out["det_additivity"] = _max(np.abs(det(A) - det(Ac) - det(Aa)) / scale**2)
    out["det_alpha_beta"] = _max(np.abs(det(A) - (alpha**2 - beta**2)) / scale**2)
    out["recomposition"] = _max(hs_norm(Ac + Aa - A) / scale)
    out["linearity"] = _max(
        hs_norm(conformal_part(A + B) - conformal_part(A) - conformal_part(B))
        / (scale + hs_norm(B))
    )
    CA = C @ A
    out["left_conformal_covariance"] = _max(
        (hs_norm(conformal_part(CA) - C @ Ac) + hs_norm(anticonformal_part(CA) - C @ Aa))
        / (k * scale)
    )
    AC = A @ C
    out["right_conformal_covariance"] = _max(
        (hs_norm(conformal_part(AC) - Ac @ C) + hs_norm(anticonformal_part(AC) - Aa @ C))
        / (k * scale)
    )
    out["mu_conformal_invariance"] = _max(np.abs(beltrami_complex(CA) - mu))
    out["mu_defining_relation"] = _max(
        hs_norm(Aa @ REFLECTION - conformal_matrix(mu) @ Ac) / scale
    )
    lhs = conformal_matrix(mu) @ Ac @ REFLECTION
    rhs = -conformal_matrix(mu_inv) @ REFLECTION @ Ac
    out["inverse_relation"] = _max(hs_norm(lhs - rhs) / scale)
    out["inverse_modulus"] = _max(np.abs(np.abs(mu_inv) - np.abs(mu)))
    inv_cf = inverse_closed_form(A)
    out["closed_form_inverse"] = _max(hs_norm(inv_cf - Ainv) / hs_norm(Ainv))
    out["closed_form_inverse_product"] = _max(hs_norm(A @ inv_cf - IDENTITY))
    svd_max = np.linalg.svd(A, compute_uv=False)[:, 0]
    out["operator_norm_alpha_plus_beta"] = _max(np.abs(svd_max - (alpha + beta)) / scale)
    out["dilatation_quotient"] = _max(
        np.abs(dilatation_quotient(A) - (1 + np.abs(mu)) / (1 - np.abs(mu)))
        / ((1 + np.abs(mu)) / (1 - np.abs(mu)))
    )
    # mu_A = mu_B  =>  S(A) = lambda S(B)
    SA, SCA = symmetric_factor(A), symmetric_factor(CA)
    out["similarity_forward"] = _max(hs_norm(SCA - k[:, None, None] * SA) / (k * hs_norm(SA)))
    # S(A) = lambda S(B)  =>  mu_A = mu_B
    lam = rng.uniform(0.1, 10.0, samples)
    Q = rotation(rng.uniform(0.0, 2 * np.pi, samples))
    Bsim = Q @ (SA / lam[:, None, None])
    out["similarity_converse"] = _max(np.abs(beltrami_complex(Bsim) - mu))
    # distinct mu must not admit a similarity of symmetric factors
    mu_b = beltrami_complex(B)
    _, sep = best_similarity_scale(A, B)
    distinct = np.abs(mu - mu_b) > 1e-6
    out["similarity_separation_violations"] = float(np.count_nonzero(distinct & (sep <= 1e-9)))
    out["conformal_det_half_hs_squared"] = _max(
        np.abs(det(Ac) - 0.5 * hs_norm(Ac) ** 2) / scale**2
    )
    return out
