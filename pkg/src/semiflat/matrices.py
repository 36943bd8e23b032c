"""Pointwise 2x2 matrix algebra for fields of shape (..., 2, 2).

Connections are u(2)-valued (anti-hermitian); the trace part i*R*Id and the
traceless su(2) part are split by exact linear projection.  Closed forms are
used for the 2x2 exponential, polar decomposition and inverse square root to
keep the inner loops allocation-light.
"""
from __future__ import annotations

import numpy as np

IDENT = np.eye(2, dtype=complex)
WEYL_FLIP = np.array([[0.0, 1.0], [-1.0, 0.0]], dtype=complex)


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def anti_hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m - dagger(m))


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + dagger(m))


def comm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def trace_part(m: np.ndarray) -> np.ndarray:
    tr = np.trace(m, axis1=-2, axis2=-1)[..., None, None]
    return 0.5 * tr * IDENT


def traceless_part(m: np.ndarray) -> np.ndarray:
    return m - trace_part(m)


def fro_norm(m: np.ndarray) -> np.ndarray:
    """Pointwise Frobenius norm, shape (...,)."""
    return np.sqrt(np.sum(np.abs(m) ** 2, axis=(-2, -1)))


def sup_norm(m: np.ndarray) -> float:
    return float(fro_norm(m).max()) if m.size else 0.0


def max_anti_hermitian_defect(m: np.ndarray) -> float:
    return sup_norm(m + dagger(m)) * 0.5


def det2(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def adj2(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out


def inv2(m: np.ndarray) -> np.ndarray:
    return adj2(m) / det2(m)[..., None, None]


def expm2(m: np.ndarray) -> np.ndarray:
    """Exponential of a 2x2 matrix field, exact via Cayley-Hamilton.

    For M = c*Id + V with V traceless, V^2 = -det(V)*Id, so
    exp(M) = e^c (cosh(mu) Id + sinh(mu)/mu V), mu^2 = -det(V).
    """
    c = 0.5 * np.trace(m, axis1=-2, axis2=-1)
    v = m - c[..., None, None] * IDENT
    mu2 = -det2(v)
    mu = np.sqrt(mu2.astype(complex))
    small = np.abs(mu) < 1e-6
    mu_safe = np.where(small, 1.0, mu)
    ch = np.where(small, 1.0 + mu2 / 2.0 + mu2 ** 2 / 24.0, np.cosh(mu_safe))
    sh_over = np.where(small, 1.0 + mu2 / 6.0 + mu2 ** 2 / 120.0,
                       np.sinh(mu_safe) / mu_safe)
    out = ch[..., None, None] * IDENT + sh_over[..., None, None] * v
    return np.exp(c)[..., None, None] * out


def sqrtm_pd2(h: np.ndarray) -> np.ndarray:
    """Square root of a positive-definite hermitian 2x2 field.

    Uses sqrt(H) = (H + sqrt(det H) Id) / sqrt(tr H + 2 sqrt(det H)).
    """
    d = det2(h).real
    t = np.trace(h, axis1=-2, axis2=-1).real
    sd = np.sqrt(d)
    denom = np.sqrt(t + 2.0 * sd)
    return (h + sd[..., None, None] * IDENT) / denom[..., None, None]


def polar_unitary(g: np.ndarray) -> np.ndarray:
    """Unitary factor U of the polar decomposition g = U P, P = (g^dag g)^(1/2)."""
    p = sqrtm_pd2(dagger(g) @ g)
    return g @ inv2(p)


def unitary_defect(g: np.ndarray) -> float:
    return sup_norm(dagger(g) @ g - IDENT)


def random_su2_field(rng, shape, amplitude=0.5):
    """exp of a random anti-hermitian traceless field; det = 1 exactly."""
    x = rng.standard_normal(shape + (3,)) * amplitude
    m = np.zeros(shape + (2, 2), dtype=complex)
    m[..., 0, 0] = 1j * x[..., 0]
    m[..., 1, 1] = -1j * x[..., 0]
    m[..., 0, 1] = x[..., 1] + 1j * x[..., 2]
    m[..., 1, 0] = -x[..., 1] + 1j * x[..., 2]
    return expm2(m)


def random_hermitian_sl2(rng, shape=(), amplitude=0.5):
    """exp of a random hermitian traceless field; hermitian with det = 1."""
    x = rng.standard_normal(shape + (3,)) * amplitude
    m = np.zeros(shape + (2, 2), dtype=complex)
    m[..., 0, 0] = x[..., 0]
    m[..., 1, 1] = -x[..., 0]
    m[..., 0, 1] = x[..., 1] + 1j * x[..., 2]
    m[..., 1, 0] = x[..., 1] - 1j * x[..., 2]
    return expm2(m)
