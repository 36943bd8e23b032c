"""Rank-2 unitary connections on a single torus fiber.

A connection is stored through its anti-hermitian components A_x, A_y on a
periodic N x N grid.  Equivalently A = B dzbar - B^dag dz with
B = (A_x + i A_y)/2 a traceless-plus-trace complex matrix field; the
(0,1)-part B is what the complexified gauge group acts on:

    g * A :  B  ->  g^-1 dzbar(g) + g^-1 B g,   g in SL(2, C)-valued fields,

re-assembled into anti-hermitian components afterwards.  Flat connections
are gauge equivalent to constant diagonal ones B = diag(a, -a); the residual
identifications are a ~ a + (m + i n) pi (lattice-type unitary gauges) and
a ~ -a (constant Weyl flip), leaving the quotient sphere with four special
points a in {0, pi/2, i pi/2, (1+i) pi/2} where the isotropy jumps.

`flatten_to_t` inverts the gauge orbit numerically: a damped Newton iteration
over zero-average sl2(C)-valued generators kills the non-constant Fourier
modes of B, then the remaining constant matrix is diagonalized.  The unitary
part of that complex transform (polar factor) realizes the square-root
curvature bound measured by `unitary_normalize`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import spectral
from .errors import (
    CurvatureTooLarge,
    DeterminantDrift,
    NearNilpotent,
    NewtonDiverged,
    PreconditionCurvature,
)
from .matrices import (
    IDENT,
    WEYL_FLIP,
    anti_hermitize,
    comm,
    dagger,
    det2,
    expm2,
    fro_norm,
    inv2,
    max_anti_hermitian_defect,
    polar_unitary,
    sup_norm,
    trace_part,
    traceless_part,
)

SINGULAR_REPS = np.array([0.0, np.pi / 2, 1j * np.pi / 2, (1 + 1j) * np.pi / 2])


# ---------------------------------------------------------------------------
# connection container
# ---------------------------------------------------------------------------

@dataclass
class FiberConnection:
    ax: np.ndarray  # (n, n, 2, 2) anti-hermitian, axis 0 = x, axis 1 = y
    ay: np.ndarray
    fiber_period: float = 1.0

    def __post_init__(self):
        self.ax = np.ascontiguousarray(self.ax, dtype=complex)
        self.ay = np.ascontiguousarray(self.ay, dtype=complex)
        defect = max(max_anti_hermitian_defect(self.ax),
                     max_anti_hermitian_defect(self.ay))
        if defect > 1e-12:
            raise ValueError(f"connection components not anti-hermitian ({defect:.2e})")
        self.ax = anti_hermitize(self.ax)
        self.ay = anti_hermitize(self.ay)

    @property
    def n(self) -> int:
        return self.ax.shape[0]

    @property
    def trace_x(self):
        return trace_part(self.ax)

    @property
    def su2_x(self):
        return traceless_part(self.ax)

    @property
    def trace_y(self):
        return trace_part(self.ay)

    @property
    def su2_y(self):
        return traceless_part(self.ay)

    def b_matrix(self) -> np.ndarray:
        return 0.5 * (self.ax + 1j * self.ay)

    def copy(self) -> "FiberConnection":
        return FiberConnection(self.ax.copy(), self.ay.copy(), self.fiber_period)

    @classmethod
    def from_b(cls, b, fiber_period=1.0) -> "FiberConnection":
        b = np.asarray(b, dtype=complex)
        return cls(ax=b - dagger(b), ay=-1j * (b + dagger(b)), fiber_period=fiber_period)

    @classmethod
    def from_moduli(cls, a, n, fiber_period=1.0) -> "FiberConnection":
        """Constant diagonal connection with B = diag(a, -a)."""
        b = np.zeros((n, n, 2, 2), dtype=complex)
        b[..., 0, 0] = a
        b[..., 1, 1] = -a
        return cls.from_b(b, fiber_period)

    @classmethod
    def zero(cls, n, fiber_period=1.0) -> "FiberConnection":
        z = np.zeros((n, n, 2, 2), dtype=complex)
        return cls(z, z.copy(), fiber_period)


def dbar(field: np.ndarray, period: float = 1.0, scheme: str = "spectral") -> np.ndarray:
    """d/dzbar = (d/dx + i d/dy)/2 on fiber fields (..., first two axes)."""
    d = spectral.deriv if scheme == "spectral" else spectral.deriv_fd4
    return 0.5 * (d(field, 0, period) + 1j * d(field, 1, period))


def fiber_curvature(conn: FiberConnection, scheme: str = "spectral") -> np.ndarray:
    """dx^dy coefficient of F = dA + A^A."""
    d = spectral.deriv if scheme == "spectral" else spectral.deriv_fd4
    p = conn.fiber_period
    return (d(conn.ay, 0, p) - d(conn.ax, 1, p) + comm(conn.ax, conn.ay))


def curvature_l2(conn: FiberConnection) -> float:
    f = fiber_curvature(conn)
    area = conn.fiber_period ** 2
    return float(np.sqrt(np.mean(fro_norm(f) ** 2) * area))


def constant_curvature_from_b(b: np.ndarray) -> np.ndarray:
    """Curvature of a constant-component connection: -2i (B B^dag - B^dag B)."""
    return -2j * (b @ dagger(b) - dagger(b) @ b)


# ---------------------------------------------------------------------------
# gauge transformations
# ---------------------------------------------------------------------------

@dataclass
class GaugeTransform:
    kind: str  # "unitary" | "complex"
    g: np.ndarray  # (n, n, 2, 2), det = 1
    decomposition: Optional[tuple] = None  # (unitary factor, hermitian factor)

    def __post_init__(self):
        drift = float(np.max(np.abs(det2(self.g) - 1.0)))
        if drift > 1e-9:
            raise DeterminantDrift(drift)

    def compose(self, other: "GaugeTransform") -> "GaugeTransform":
        """Transform that applies `self` first, then `other`."""
        kind = "unitary" if self.kind == other.kind == "unitary" else "complex"
        return GaugeTransform(kind=kind, g=self.g @ other.g)

    def unitary_part(self) -> "GaugeTransform":
        return GaugeTransform(kind="unitary", g=polar_unitary(self.g))


def complex_gauge_apply(g, conn: FiberConnection, scheme="spectral") -> FiberConnection:
    """Act on the (0,1)-part and re-assemble; unitary g is the special case
    g*A = g^-1 dg + g^-1 A g of the same formula."""
    gm = g.g if isinstance(g, GaugeTransform) else np.asarray(g, dtype=complex)
    drift = float(np.max(np.abs(det2(gm) - 1.0)))
    if drift > 1e-9:
        raise DeterminantDrift(drift)
    gi = inv2(gm)
    b = conn.b_matrix()
    b_new = gi @ dbar(gm, conn.fiber_period, scheme) + gi @ b @ gm
    return FiberConnection.from_b(b_new, conn.fiber_period)


def lattice_shift_transform(n_shift: int, m_shift: int, n: int,
                            fiber_period: float = 1.0) -> GaugeTransform:
    """diag(e^{2 pi i (n x - m y)}, e^{-2 pi i (n x - m y)}) sampled on the grid."""
    p = fiber_period
    x = spectral.grid_coords(n, p)[:, None]
    y = spectral.grid_coords(n, p)[None, :]
    phase = np.exp(2j * np.pi * (n_shift * x - m_shift * y) / p)
    g = np.zeros((n, n, 2, 2), dtype=complex)
    g[..., 0, 0] = phase
    g[..., 1, 1] = np.conj(phase)
    return GaugeTransform(kind="unitary", g=g)


def lattice_gauge_shift(conn: FiberConnection, n_shift: int, m_shift: int) -> FiberConnection:
    """Apply the lattice-type unitary gauge; a constant diagonal class moves
    a -> a + (m + i n) pi / period before any fundamental-domain reduction."""
    if n_shift == 0 and m_shift == 0:
        return conn.copy()
    g = lattice_shift_transform(n_shift, m_shift, conn.n, conn.fiber_period)
    return complex_gauge_apply(g, conn)


def holonomy_extract(conn: FiberConnection, hol_warn_tol: float = 1e-6):
    """Path-ordered exponentials around the two fiber cycles through the origin.

    For a constant diagonal class a the eigenphases are +-2 Im(a) (x-cycle)
    and -+2 Re(a) (y-cycle) at unit fiber period.
    """
    f_sup = sup_norm(fiber_curvature(conn))
    if f_sup > hol_warn_tol:
        warnings.warn(
            f"holonomy of a non-flat connection is base-point dependent "
            f"(sup |F| = {f_sup:.2e})", stacklevel=2)
    n, p = conn.n, conn.fiber_period
    h = p / n
    hx = IDENT.copy()
    for j in range(n):
        hx = expm2(h * conn.ax[j, 0]) @ hx
    hy = IDENT.copy()
    for j in range(n):
        hy = expm2(h * conn.ay[0, j]) @ hy
    return hx, hy


def eigenphases(u: np.ndarray) -> np.ndarray:
    vals = np.linalg.eigvals(u)
    return np.sort(np.angle(vals))


# ---------------------------------------------------------------------------
# flat moduli
# ---------------------------------------------------------------------------

def _wrap_pi(x):
    y = np.mod(x, np.pi)
    # float rounding can land exactly on pi for tiny negative inputs
    return np.where(y >= np.pi, y - np.pi, y)


def moduli_distance(a, b) -> float:
    """Distance on the quotient of C by a ~ a + (m + i n) pi and a ~ -a."""
    best = np.inf
    for sgn in (1.0, -1.0):
        d = sgn * np.asarray(a) - b
        dre = np.abs(_wrap_pi(d.real + np.pi / 2) - np.pi / 2)
        dim = np.abs(_wrap_pi(d.imag + np.pi / 2) - np.pi / 2)
        best = min(best, float(np.hypot(dre, dim)))
    return best


@dataclass(frozen=True)
class ModuliPoint:
    """Class of a flat connection: fundamental-domain representative of a,
    with the Weyl flip and lattice shift used in the reduction."""

    a: complex
    weyl_flipped: bool = False
    lattice_shift: tuple = (0, 0)
    singular: bool = False
    moduli_tol: float = 1e-6

    @classmethod
    def reduce(cls, a_raw, moduli_tol: float = 1e-6) -> "ModuliPoint":
        a_raw = complex(a_raw)

        def wrap_snap(x):
            y = float(_wrap_pi(x))
            # snap domain-boundary noise so the Weyl choice is stable
            if y < 1e-12 or np.pi - y < 1e-12:
                y = 0.0
            return y

        c_plus = complex(wrap_snap(a_raw.real), wrap_snap(a_raw.imag))
        c_minus = complex(wrap_snap(-a_raw.real), wrap_snap(-a_raw.imag))
        flip = (c_minus.real, c_minus.imag) < (c_plus.real, c_plus.imag)
        a = c_minus if flip else c_plus
        sgn = -1.0 if flip else 1.0
        m = int(round((a.real - sgn * a_raw.real) / np.pi))
        n = int(round((a.imag - sgn * a_raw.imag) / np.pi))
        singular = min(moduli_distance(a, s) for s in SINGULAR_REPS) <= moduli_tol
        return cls(a=a, weyl_flipped=bool(flip), lattice_shift=(n, m),
                   singular=singular, moduli_tol=moduli_tol)

    def distance_to(self, other) -> float:
        b = other.a if isinstance(other, ModuliPoint) else other
        return moduli_distance(self.a, b)

    def so3_view(self) -> complex:
        """Representative in the halved domain [0, pi/2) x i[0, pi/2) of the
        adjoint (SO(3)) picture."""
        re = np.mod(self.a.real, np.pi / 2)
        im = np.mod(self.a.imag, np.pi / 2)
        re2 = np.mod(-self.a.real, np.pi / 2)
        im2 = np.mod(-self.a.imag, np.pi / 2)
        return complex(*min((re, im), (re2, im2)))


def nearest_lift(point_a: complex, reference: complex):
    """Lift a fundamental-domain value to the sheet closest to `reference`.

    Returns (lift, weyl_flipped) minimizing |lift - reference| over the Weyl
    flip and lattice translates; used for branch tracking along base sweeps.
    """
    best = None
    for sgn in (1.0, -1.0):
        base = sgn * point_a
        m = round((reference.real - base.real) / np.pi)
        n = round((reference.imag - base.imag) / np.pi)
        for dm in (m - 1, m, m + 1):
            for dn in (n - 1, n, n + 1):
                cand = base + np.pi * (dm + 1j * dn)
                d = abs(cand - reference)
                if best is None or d < best[0]:
                    best = (d, cand, sgn < 0)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# flattening: gauge back to constant diagonal form
# ---------------------------------------------------------------------------

@dataclass
class FlattenResult:
    point: ModuliPoint
    transform: GaugeTransform
    residual: float
    iterations: int
    constant_b: np.ndarray       # the constant matrix before diagonalization
    eigenvalue: complex          # branch actually diagonalized to
    nilpotent_norm: float

    @property
    def case(self) -> int:
        return 2 if self.nilpotent_norm > 0 else 1


def _ad_matrix(b: np.ndarray) -> np.ndarray:
    """Matrix of w -> [b, w] on the (alpha, beta, gamma) coordinates of sl2."""
    p, q, r = b[0, 0], b[0, 1], b[1, 0]
    return np.array([
        [0.0, -r, q],
        [-2 * q, 2 * p, 0.0],
        [2 * r, 0.0, -2 * p],
    ], dtype=complex)


def _fields_to_abc(v):
    return np.stack([v[..., 0, 0], v[..., 0, 1], v[..., 1, 0]], axis=-1)


def _abc_to_fields(abc):
    out = np.zeros(abc.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = abc[..., 0]
    out[..., 1, 1] = -abc[..., 0]
    out[..., 0, 1] = abc[..., 1]
    out[..., 1, 0] = abc[..., 2]
    return out


def _linearized_solve(b_mean, resid, period):
    """Per-Fourier-mode solve of (dzbar + ad_{b_mean}) w = -resid over the
    zero-average generator space; the (0,0) mode is projected out.

    At the four singular classes one mode is resonant (the isotropy jump);
    those modes get the minimum-norm step, which is exact whenever the
    residual has no content along the resonant direction.
    """
    n = resid.shape[0]
    rhat = np.fft.fft2(_fields_to_abc(resid), axes=(0, 1))
    k = np.fft.fftfreq(n, d=1.0 / n)
    zeta = (1j * np.pi * (k[:, None] + 1j * k[None, :]) / period)
    mats = zeta[..., None, None] * np.eye(3) + _ad_matrix(b_mean)
    mats[0, 0] = np.eye(3)  # zero mode is excluded from the solve
    dets = np.abs(np.linalg.det(mats))
    scale = np.maximum(np.abs(zeta), 1.0) ** 3
    singular = dets < 1e-10 * scale
    safe = mats.copy()
    safe[singular] = np.eye(3)
    what = np.linalg.solve(safe, -rhat[..., None])[..., 0]
    if singular.any():
        for idx in np.argwhere(singular):
            i, j = idx
            what[i, j] = np.linalg.pinv(mats[i, j]) @ (-rhat[i, j])
    what[0, 0] = 0.0
    w = np.fft.ifft2(what, axes=(0, 1))
    return _abc_to_fields(w)


def _diagonalizer(b: np.ndarray, seed: Optional[complex], eig_tol: float):
    """Constant SL(2,C) matrix V with V^-1 b V = diag(lam, -lam).

    Returns (V, lam, nilpotent_norm).  Near-coincident eigenvalues with a
    nonzero matrix are reported as nilpotent (non-diagonalizable) content.
    """
    p, q, r = b[0, 0], b[0, 1], b[1, 0]
    lam = np.sqrt(complex(p * p + q * r))
    norm_b = float(np.sqrt(np.sum(np.abs(b) ** 2)))
    if norm_b < max(eig_tol, 1e-10):
        return np.array(IDENT), 0.0 + 0.0j, 0.0
    if abs(lam) ** 2 < eig_tol * norm_b:
        # eigenvalue gap at the noise floor of the matrix scale: the
        # eigenvector matrix is numerically singular (nilpotent content)
        return None, lam, norm_b
    if seed is not None and abs(-lam - seed) < abs(lam - seed):
        lam = -lam
    if abs(q) >= abs(r):
        v1 = np.array([q, lam - p], dtype=complex)
        v2 = np.array([q, -lam - p], dtype=complex)
        if abs(q) < eig_tol:  # already diagonal
            first = abs(p - lam) < abs(p + lam)
            v1 = np.array([1.0, 0.0] if first else [0.0, 1.0], dtype=complex)
            v2 = np.array([0.0, 1.0] if first else [1.0, 0.0], dtype=complex)
    else:
        v1 = np.array([lam + p, r], dtype=complex)
        v2 = np.array([-lam + p, r], dtype=complex)
    v = np.stack([v1, v2], axis=-1)
    v = v / np.sqrt(det2(v).astype(complex))
    return v, lam, 0.0


def flatten_to_t(conn: FiberConnection, seed: Optional[ModuliPoint] = None,
                 flatten_energy_max: float = 0.05, newton_tol: float = 1e-12,
                 max_iters: int = 50, eig_tol: float = 1e-9,
                 moduli_tol: float = 1e-6, allow_nilpotent: bool = False):
    """Complex-gauge a near-flat connection to a constant diagonal class.

    Stage one solves exp(v)*A = const over zero-average generators v by a
    damped Newton iteration whose linearization is inverted exactly per
    Fourier mode; stage two diagonalizes the remaining constant matrix.  When
    a seed class is supplied, the eigenvalue branch nearest the seed is taken,
    and the result stays within a fixed multiple of the input distance.
    """
    l2 = curvature_l2(conn)
    if l2 > flatten_energy_max:
        raise CurvatureTooLarge(
            f"curvature L2 {l2:.3e} above flattening threshold {flatten_energy_max:.3e}")
    period = conn.fiber_period
    b0 = conn.b_matrix()
    b0 = traceless_part(b0)  # the trace sector is handled by its own ops
    v = np.zeros_like(b0)

    def residual_of(vv):
        g = expm2(vv)
        b = inv2(g) @ dbar(g, period) + inv2(g) @ b0 @ g
        r = b - b.mean(axis=(0, 1), keepdims=True)
        return b, r, sup_norm(r)

    b_cur, resid, rnorm = residual_of(v)
    # rounding floor of the spectral transform chain; a stalled line search
    # below it counts as converged (the achieved residual is reported)
    stall_floor = 1e-10 * (1.0 + sup_norm(b0))
    iters = 0
    for iters in range(1, max_iters + 1):
        if rnorm <= newton_tol:
            break
        step = _linearized_solve(b_cur.mean(axis=(0, 1)), resid, period)
        tau, accepted = 1.0, False
        while tau > 1.0 / 4096:
            b_try, r_try, rn_try = residual_of(v + tau * step)
            if rn_try < rnorm * (1.0 - 0.25 * tau) + 1e-15:
                v = v + tau * step
                b_cur, resid, rnorm = b_try, r_try, rn_try
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            if rnorm <= stall_floor:
                break
            raise NewtonDiverged(rnorm)
    else:
        if rnorm > max(newton_tol, stall_floor):
            raise NewtonDiverged(rnorm)

    b_mean = b_cur.mean(axis=(0, 1))
    seed_a = seed.a if isinstance(seed, ModuliPoint) else seed
    vmat, lam, nil = _diagonalizer(b_mean, seed_a, eig_tol)
    if vmat is None:
        if not allow_nilpotent:
            raise NearNilpotent(
                f"constant matrix is non-diagonalizable (|b| = {nil:.3e})")
        point = ModuliPoint.reduce(0.0, moduli_tol)
        g_total = expm2(v)
        return FlattenResult(point=point,
                             transform=GaugeTransform("complex", g_total),
                             residual=rnorm, iterations=iters,
                             constant_b=b_mean, eigenvalue=lam,
                             nilpotent_norm=nil)
    lam = complex(lam)
    point = ModuliPoint.reduce(lam, moduli_tol)
    g_total = expm2(v) @ vmat
    return FlattenResult(point=point, transform=GaugeTransform("complex", g_total),
                         residual=rnorm, iterations=iters, constant_b=b_mean,
                         eigenvalue=lam, nilpotent_norm=0.0)


def connection_distance(c1: FiberConnection, c2: FiberConnection) -> float:
    d = np.sqrt(fro_norm(c1.ax - c2.ax) ** 2 + fro_norm(c1.ay - c2.ay) ** 2)
    return float(d.max())


def unitary_normalize(conn: FiberConnection, result: FlattenResult,
                      delta0: float = 0.5):
    """Unitary gauge bringing a near-flat connection close to its flat class.

    Keeps the polar-unitary factor of the flattening transform, composed with
    the lattice and Weyl unitaries of the fundamental-domain reduction, and
    reports the achieved ratio |h*A - A_0|_sup / |F_A|_sup^(1/2).
    """
    f_sup = sup_norm(fiber_curvature(conn))
    if f_sup >= delta0:
        raise PreconditionCurvature(
            f"sup |F| = {f_sup:.3e} not below delta_0 = {delta0:.3e}")
    # reduction is a_red = (+-a_raw) + pi (m + i n): Weyl flip first, then the
    # lattice-type gauge recorded by the reduction
    h = result.transform.unitary_part()
    if result.point.weyl_flipped:
        w = np.broadcast_to(WEYL_FLIP, h.g.shape).copy()
        h = h.compose(GaugeTransform("unitary", w))
    n_shift, m_shift = result.point.lattice_shift
    if (n_shift, m_shift) != (0, 0):
        h = h.compose(lattice_shift_transform(n_shift, m_shift, conn.n,
                                              conn.fiber_period))
    moved = complex_gauge_apply(h, conn)
    moved_su2 = FiberConnection(traceless_part(moved.ax), traceless_part(moved.ay),
                                conn.fiber_period)
    target = FiberConnection.from_moduli(result.point.a, conn.n, conn.fiber_period)
    dist = connection_distance(moved_su2, target)
    ratio = dist / np.sqrt(f_sup) if f_sup > 0 else 0.0
    return h, float(ratio), float(dist)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class Classification:
    kind: str                 # "case1" | "case2" | "unstable"
    point: Optional[ModuliPoint]
    s_class: Optional[ModuliPoint]  # for case2: the limit flat class
    confidence: float
    detail: str = ""


def semistability_classify(conn: FiberConnection, flatten_energy_max: float = 0.05,
                           eig_tol: float = 1e-9, moduli_tol: float = 1e-6,
                           unstable_energy: float = 1e-3) -> Classification:
    """Total classification of the induced holomorphic structure on the fiber:
    split into line bundles (case 1), nontrivial self-extension (case 2), or
    unstable (flattening diverges at non-small energy)."""
    try:
        res = flatten_to_t(conn, flatten_energy_max=flatten_energy_max,
                           eig_tol=eig_tol, moduli_tol=moduli_tol,
                           allow_nilpotent=True)
    except (NewtonDiverged, CurvatureTooLarge) as exc:
        l2 = curvature_l2(conn)
        conf = min(1.0, l2 / max(unstable_energy, 1e-300))
        return Classification(kind="unstable", point=None, s_class=None,
                              confidence=conf, detail=str(exc))
    if res.nilpotent_norm > 0:
        torsion = min(SINGULAR_REPS, key=lambda s: moduli_distance(res.eigenvalue, s))
        s_class = ModuliPoint.reduce(torsion, moduli_tol)
        conf = min(1.0, res.nilpotent_norm / max(eig_tol, 1e-300))
        return Classification(kind="case2", point=None, s_class=s_class,
                              confidence=conf,
                              detail=f"nilpotent norm {res.nilpotent_norm:.3e}")
    margin = 2 * abs(res.eigenvalue)
    conf = 1.0 if margin > 10 * eig_tol or abs(res.constant_b).max() < eig_tol else 0.5
    return Classification(kind="case1", point=res.point, s_class=res.point,
                          confidence=conf)
