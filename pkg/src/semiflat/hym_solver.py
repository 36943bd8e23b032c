"""Connections on the product grid (base torus) x (fiber torus) and the
anti-self-duality flow at fixed fiber scale epsilon.

A connection is Xi = A + Phi ds + Psi dt with A = A_x dx + A_y dy; all four
components are anti-hermitian 2x2 fields on the (s, t, x, y) grid.  With the
orientation fixed so that the form ds^dx + dt^dy is self-dual, the
anti-self-dual part of the curvature vanishes exactly when

    F_sx + F_ty = 0,   F_sy - F_tx = 0,   F_st - f eps^-2 F_xy = 0,

on an isothermal base metric f(s,t)(ds^2 + dt^2) with fiber metric
eps^2 (dx^2 + dy^2).  The constant-central-curvature condition shifts the
first residual by 2 i c0 (trace sector only).  `flow_solve` performs descent
on the squared self-dual norm

    E = 1/2 int |F_sx + F_ty - 2 i c0|^2 + |F_sy - F_tx|^2
              + |eps f^-1/2 F_st - eps^-1 f^1/2 F_xy|^2

with an analytic gradient and backtracking line search.

Sections with winding (dual-torus monodromy) are carried by affine-linear
parts of A: A_x = (periodic) + s Q_xs + t Q_xt with constant diagonal Q's.
Such twisted sectors are supported in the fiberwise-diagonal (abelian)
subspace, where all commutators vanish and the affine parts stay exact under
the flow; non-abelian fields require zero winding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import spectral
from .errors import BlowUp, NonConvergence
from .matrices import (
    IDENT,
    anti_hermitize,
    comm,
    fro_norm,
    max_anti_hermitian_defect,
    sup_norm,
    trace_part,
    traceless_part,
)
from .fiber_gauge import FiberConnection

AXIS_S, AXIS_T, AXIS_X, AXIS_Y = 0, 1, 2, 3
PAULI3 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

@dataclass
class Connection4D:
    ax: np.ndarray  # (nb, nb, nf, nf, 2, 2), periodic parts
    ay: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    epsilon: float = 1.0
    base_period: tuple = (1.0, 1.0)
    fiber_period: tuple = (1.0, 1.0)
    winding_su2: np.ndarray = None   # (2, 2) ints: [leg x/y, direction s/t]
    winding_trace: np.ndarray = None
    conformal_factor: np.ndarray = None  # (nb, nb) isothermal weight, default 1

    def __post_init__(self):
        for name in ("ax", "ay", "phi", "psi"):
            f = np.ascontiguousarray(getattr(self, name), dtype=complex)
            defect = max_anti_hermitian_defect(f)
            if defect > 1e-12:
                raise ValueError(f"{name} not anti-hermitian ({defect:.2e})")
            setattr(self, name, anti_hermitize(f))
        self.winding_su2 = (np.zeros((2, 2), dtype=int) if self.winding_su2 is None
                            else np.asarray(self.winding_su2, dtype=int))
        self.winding_trace = (np.zeros((2, 2), dtype=int) if self.winding_trace is None
                              else np.asarray(self.winding_trace, dtype=int))
        if self.conformal_factor is None:
            self.conformal_factor = np.ones(self.ax.shape[:2])
        if self.has_winding and not self.is_fiber_diagonal():
            raise ValueError("winding sectors require fiberwise-diagonal fields")

    @property
    def nb(self) -> int:
        return self.ax.shape[0]

    @property
    def nf(self) -> int:
        return self.ax.shape[2]

    @property
    def has_winding(self) -> bool:
        return bool(self.winding_su2.any() or self.winding_trace.any())

    @property
    def cell_volume(self) -> float:
        ls, lt = self.base_period
        px, py = self.fiber_period
        return (ls * lt * px * py) / (self.nb ** 2 * self.nf ** 2)

    def is_fiber_diagonal(self, tol: float = 1e-12) -> bool:
        for f in (self.ax, self.ay, self.phi, self.psi):
            off = max(np.abs(f[..., 0, 1]).max(), np.abs(f[..., 1, 0]).max())
            if off > tol:
                return False
        return True

    def winding_matrix(self, leg: int, direction: int) -> np.ndarray:
        """Constant rate of the affine part of A_leg along a base direction."""
        length = self.base_period[direction]
        w2 = self.winding_su2[leg, direction]
        wt = self.winding_trace[leg, direction]
        return (2j * np.pi / length) * (w2 * PAULI3 + wt * IDENT)

    def copy(self) -> "Connection4D":
        return Connection4D(
            self.ax.copy(), self.ay.copy(), self.phi.copy(), self.psi.copy(),
            epsilon=self.epsilon, base_period=self.base_period,
            fiber_period=self.fiber_period, winding_su2=self.winding_su2.copy(),
            winding_trace=self.winding_trace.copy(),
            conformal_factor=self.conformal_factor.copy(),
        )

    def fields(self):
        return self.ax, self.ay, self.phi, self.psi

    def with_fields(self, ax, ay, phi, psi) -> "Connection4D":
        out = self.copy()
        out.ax, out.ay, out.phi, out.psi = ax, ay, phi, psi
        return out

    def fiber_at(self, i: int, j: int) -> FiberConnection:
        """Fiber connection over base site (i, j), affine winding included."""
        s = i * self.base_period[0] / self.nb
        t = j * self.base_period[1] / self.nb
        ax = self.ax[i, j] + s * self.winding_matrix(0, 0) + t * self.winding_matrix(0, 1)
        ay = self.ay[i, j] + s * self.winding_matrix(1, 0) + t * self.winding_matrix(1, 1)
        return FiberConnection(ax, ay, self.fiber_period[0])

    def trace_split(self):
        """Exact linear split into (trace parts, traceless parts)."""
        tr = tuple(trace_part(f) for f in self.fields())
        su = tuple(traceless_part(f) for f in self.fields())
        return tr, su

    @classmethod
    def zero(cls, nb, nf, epsilon=1.0, **kw) -> "Connection4D":
        shape = (nb, nb, nf, nf, 2, 2)
        z = np.zeros(shape, dtype=complex)
        return cls(z, z.copy(), z.copy(), z.copy(), epsilon=epsilon, **kw)


def _deriv(conn, f, axis, scheme="spectral"):
    periods = conn.base_period + conn.fiber_period
    d = spectral.deriv if scheme == "spectral" else spectral.deriv_fd4
    return d(f, axis, periods[axis])


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

@dataclass
class CurvatureBundle:
    """Curvature components F_mu_nu of Xi; `mix_s`, `mix_t`, `base` and
    `fiber` expose them in covariant-derivative form."""

    f_sx: np.ndarray
    f_sy: np.ndarray
    f_tx: np.ndarray
    f_ty: np.ndarray
    f_st: np.ndarray
    f_xy: np.ndarray

    @property
    def fiber(self):
        return self.f_xy

    @property
    def base(self):
        """d_t Phi - d_s Psi - [Phi, Psi]."""
        return -self.f_st

    @property
    def mix_s(self):
        """(d_A Phi - d_s A) components (dx, dy)."""
        return -self.f_sx, -self.f_sy

    @property
    def mix_t(self):
        return -self.f_tx, -self.f_ty

    def sup(self) -> float:
        return max(sup_norm(f) for f in
                   (self.f_sx, self.f_sy, self.f_tx, self.f_ty, self.f_st, self.f_xy))


def curvature_components(conn: Connection4D, scheme="spectral",
                         abelian: bool = False) -> CurvatureBundle:
    """Set `abelian` only for fiberwise-diagonal fields, whose commutators
    vanish identically; the result is then bit-identical to the general path."""
    ax, ay, phi, psi = conn.fields()
    d = lambda f, a: _deriv(conn, f, a, scheme)
    cm = (lambda a, b: 0.0) if abelian else comm
    f_sx = d(ax, AXIS_S) - d(phi, AXIS_X) + cm(phi, ax) + conn.winding_matrix(0, 0)
    f_sy = d(ay, AXIS_S) - d(phi, AXIS_Y) + cm(phi, ay) + conn.winding_matrix(1, 0)
    f_tx = d(ax, AXIS_T) - d(psi, AXIS_X) + cm(psi, ax) + conn.winding_matrix(0, 1)
    f_ty = d(ay, AXIS_T) - d(psi, AXIS_Y) + cm(psi, ay) + conn.winding_matrix(1, 1)
    f_st = d(psi, AXIS_S) - d(phi, AXIS_T) + cm(phi, psi)
    f_xy = d(ay, AXIS_X) - d(ax, AXIS_Y) + cm(ax, ay)
    return CurvatureBundle(f_sx, f_sy, f_tx, f_ty, f_st, f_xy)


def bianchi_defect(conn: Connection4D, bundle: Optional[CurvatureBundle] = None) -> float:
    """Sup-norm of the discrete covariant Bianchi identity over the four
    coordinate triples; machine-small for resolved band-limited fields."""
    fb = bundle or curvature_components(conn)
    ax, ay, phi, psi = conn.fields()
    d = lambda f, a: _deriv(conn, f, a)
    comps = {
        ("s", "t", "x"): (d(fb.f_tx, AXIS_S) - d(fb.f_sx, AXIS_T) + d(fb.f_st, AXIS_X)
                          + comm(phi, fb.f_tx) - comm(psi, fb.f_sx) + comm(ax, fb.f_st)),
        ("s", "t", "y"): (d(fb.f_ty, AXIS_S) - d(fb.f_sy, AXIS_T) + d(fb.f_st, AXIS_Y)
                          + comm(phi, fb.f_ty) - comm(psi, fb.f_sy) + comm(ay, fb.f_st)),
        ("s", "x", "y"): (d(fb.f_xy, AXIS_S) - d(fb.f_sy, AXIS_X) + d(fb.f_sx, AXIS_Y)
                          + comm(phi, fb.f_xy) - comm(ax, fb.f_sy) + comm(ay, fb.f_sx)),
        ("t", "x", "y"): (d(fb.f_xy, AXIS_T) - d(fb.f_ty, AXIS_X) + d(fb.f_tx, AXIS_Y)
                          + comm(psi, fb.f_xy) - comm(ax, fb.f_ty) + comm(ay, fb.f_tx)),
    }
    return max(sup_norm(v) for v in comps.values())


def c_epsilon(deg_e: float, vol: float, rank: int) -> float:
    """Mean-curvature constant 2 pi deg(E) / (Vol * rank)."""
    if vol <= 0:
        raise ValueError("volume must be positive")
    if rank < 1:
        raise ValueError("rank must be at least 1")
    return 2.0 * np.pi * deg_e / (vol * rank)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def _mixed_star(u_blocks, g, g_inv):
    """Hodge star on mixed (base leg, fiber leg) two-forms of the semi-flat
    metric: *U = J (g^-1 U g) J^-1 acting on the 2x2 block of matrix fields.
    Scalar metric entries multiply matrix-valued block entries."""
    u_sx, u_sy, u_tx, u_ty = u_blocks

    def lin(c, m):
        return c[..., None, None, None, None] * m if np.ndim(c) == 2 else c * m

    gi, g_ = g_inv, g
    # V = g^-1 U g with U indexed [base p, fiber q]
    v = {}
    for p, gp in ((0, (gi[..., 0, 0], gi[..., 0, 1])), (1, (gi[..., 0, 1], gi[..., 1, 1]))):
        row = (lin(gp[0], u_sx) + lin(gp[1], u_tx),
               lin(gp[0], u_sy) + lin(gp[1], u_ty))
        v[p] = (lin(g_[..., 0, 0], row[0]) + lin(g_[..., 0, 1], row[1]),
                lin(g_[..., 0, 1], row[0]) + lin(g_[..., 1, 1], row[1]))
    # *U = J V J^-1
    star_sx = v[1][1]
    star_sy = -v[1][0]
    star_tx = -v[0][1]
    star_ty = v[0][0]
    return star_sx, star_sy, star_tx, star_ty


def hym_residual(conn: Connection4D, geom=None, c0: float = 0.0, det_g=None):
    """Residuals of the two curvature equations at fixed epsilon:

    fiber balance:  d_t Phi - d_s Psi - [Phi, Psi] + (det g)^(-1/2) eps^-2 F_xy
    mixed part:     (1 + *)(F_mix - i c0 omega), omega = ds^dx + dt^dy

    Returned with exact trace / traceless splits and norms.  The metric g is
    taken from `geom` when supplied (sampled on the base grid), otherwise the
    flat identity metric is used.
    """
    fb = curvature_components(conn)
    eps = conn.epsilon
    if geom is not None:
        g = geom.g
        g_inv = geom.g_inv
        dg = geom.det_g
    else:
        nb = conn.nb
        g = np.broadcast_to(np.eye(2), (nb, nb, 2, 2))
        g_inv = g
        dg = np.ones((nb, nb))
    if det_g is not None:
        dg = det_g
    fac = (dg ** -0.5)[..., None, None, None, None]

    r_fiber = -fb.f_st + fac * eps ** -2 * fb.f_xy

    omega = [1.0, 0.0, 0.0, 1.0]  # (sx, sy, tx, ty) pattern of ds^dx + dt^dy
    u = tuple(f - 1j * c0 * w * IDENT
              for f, w in zip((fb.f_sx, fb.f_sy, fb.f_tx, fb.f_ty), omega))
    star = _mixed_star(u, g, g_inv)
    r_mix = tuple(a + b for a, b in zip(u, star))
    return HymResidual(r_fiber=r_fiber, r_mix=r_mix, bundle=fb,
                       cell_volume=conn.cell_volume)


@dataclass
class HymResidual:
    r_fiber: np.ndarray
    r_mix: tuple  # (sx, sy, tx, ty) components
    bundle: CurvatureBundle
    cell_volume: float

    def _l2(self, f):
        return float(np.sqrt(np.sum(fro_norm(f) ** 2) * self.cell_volume))

    @property
    def fiber_l2(self):
        return self._l2(self.r_fiber)

    @property
    def mix_l2(self):
        return float(np.sqrt(sum(self._l2(m) ** 2 for m in self.r_mix)))

    @property
    def fiber_sup(self):
        return sup_norm(self.r_fiber)

    @property
    def mix_sup(self):
        return max(sup_norm(m) for m in self.r_mix)

    def split(self):
        """(trace parts, traceless parts) of both residuals; the two halves
        recombine to the full residuals exactly."""
        tr = (trace_part(self.r_fiber), tuple(trace_part(m) for m in self.r_mix))
        su = (traceless_part(self.r_fiber), tuple(traceless_part(m) for m in self.r_mix))
        return tr, su


def asd_residual_isothermal(conn: Connection4D, f=None, c0: float = 0.0):
    """The two anti-self-duality residuals on an isothermal base:

    H1 = (d_T A - d_A Psi) + *_F (d_S A - d_A Phi)   (fiber one-form, x/y parts)
    H2 = d_T Phi - d_S Psi - [Phi, Psi] + f eps^-2 F_xy
    """
    fb = curvature_components(conn)
    if f is None:
        f = conn.conformal_factor
    fw = np.asarray(f)[..., None, None, None, None] if np.ndim(f) == 2 else f
    h1x = fb.f_tx - fb.f_sy
    h1y = fb.f_ty + fb.f_sx - 2j * c0 * IDENT
    h2 = -fb.f_st + fw * conn.epsilon ** -2 * fb.f_xy
    return h1x, h1y, h2


def ym_energy(conn: Connection4D, f=None):
    """Curvature energy with the epsilon-metric weights: the fiber block
    carries eps^-2, the mixed block weight one, and the base block eps^2."""
    fb = curvature_components(conn)
    if f is None:
        f = conn.conformal_factor
    fw = np.asarray(f, dtype=float)
    if fw.ndim == 0:
        fw = fw * np.ones(conn.ax.shape[:2])
    fw4 = fw[..., None, None]
    h = conn.cell_volume
    eps = conn.epsilon
    base = eps ** 2 * float(np.sum(fro_norm(fb.f_st) ** 2 / fw4)) * h
    mixed = float(sum(np.sum(fro_norm(m) ** 2)
                      for m in (fb.f_sx, fb.f_sy, fb.f_tx, fb.f_ty))) * h
    fiber = eps ** -2 * float(np.sum(fro_norm(fb.f_xy) ** 2 * fw4)) * h
    return {"total": base + mixed + fiber, "base_term": base,
            "mixed_term": mixed, "fiber_term": fiber}


# ---------------------------------------------------------------------------
# the descent functional and its gradient
# ---------------------------------------------------------------------------

def _sd_residuals(conn: Connection4D, fb: CurvatureBundle, c0: float):
    eps = conn.epsilon
    fw = conn.conformal_factor[..., None, None, None, None]
    r1 = fb.f_sx + fb.f_ty - 2j * c0 * IDENT
    r2 = fb.f_sy - fb.f_tx
    r3 = eps * fw ** -0.5 * fb.f_st - fw ** 0.5 / eps * fb.f_xy
    return r1, r2, r3


def flow_energy(conn: Connection4D, c0: float = 0.0,
                fb: Optional[CurvatureBundle] = None) -> float:
    fb = fb or curvature_components(conn)
    r1, r2, r3 = _sd_residuals(conn, fb, c0)
    total = sum(np.sum(fro_norm(r) ** 2) for r in (r1, r2, r3))
    return 0.5 * float(total) * conn.cell_volume


def equation_residual_norm(conn: Connection4D, c0: float = 0.0,
                           fb: Optional[CurvatureBundle] = None) -> float:
    """L2 norm of the anti-self-duality equations in displayed form (the
    fiber-balance block keeps its eps^-2 factor, so a fixed tolerance forces
    |F_xy| down like eps^2 along a shrinking-fiber family)."""
    fb = fb or curvature_components(conn)
    r1, r2, r3 = _sd_residuals(conn, fb, c0)
    fw = conn.conformal_factor[..., None, None, None, None]
    h2 = fw ** 0.5 / conn.epsilon * r3  # equals -(H2 residual)
    total = (np.sum(fro_norm(r1) ** 2) + np.sum(fro_norm(r2) ** 2)
             + np.sum(fro_norm(h2) ** 2))
    return float(np.sqrt(total * conn.cell_volume))


def flow_gradient(conn: Connection4D, c0: float = 0.0,
                  fb: Optional[CurvatureBundle] = None, abelian: bool = False):
    """Euclidean gradient of `flow_energy` in the anti-hermitian field
    variables; pairs as dE = sum_fields Re tr(G^dag V) over grid sites."""
    fb = fb if fb is not None else curvature_components(conn, abelian=abelian)
    ax, ay, phi, psi = conn.fields()
    r1, r2, r3 = _sd_residuals(conn, fb, c0)
    eps = conn.epsilon
    fw = conn.conformal_factor[..., None, None, None, None]
    r3_xy = -(fw ** 0.5 / eps) * r3     # coefficient of F_xy inside r3
    r3_st = (eps * fw ** -0.5) * r3     # coefficient of F_st inside r3
    d = lambda f, a: _deriv(conn, f, a)
    cm = (lambda a, b: 0.0) if abelian else comm

    g_ax = (-d(r1, AXIS_S) + cm(r1, phi) + d(r2, AXIS_T) - cm(r2, psi)
            + d(r3_xy, AXIS_Y) - cm(r3_xy, ay))
    g_ay = (-d(r1, AXIS_T) + cm(r1, psi) - d(r2, AXIS_S) + cm(r2, phi)
            - d(r3_xy, AXIS_X) + cm(r3_xy, ax))
    g_phi = (d(r1, AXIS_X) - cm(r1, ax) + d(r2, AXIS_Y) - cm(r2, ay)
             + d(r3_st, AXIS_T) - cm(r3_st, psi))
    g_psi = (d(r1, AXIS_Y) - cm(r1, ay) - d(r2, AXIS_X) + cm(r2, ax)
             - d(r3_st, AXIS_S) + cm(r3_st, phi))
    h = conn.cell_volume
    grads = tuple(anti_hermitize(g) * h for g in (g_ax, g_ay, g_phi, g_psi))
    return grads


@dataclass
class FlowResult:
    connection: Connection4D
    converged: bool
    iterations: int
    residual: float
    energy_trace: list = field(default_factory=list)
    residual_trace: list = field(default_factory=list)
    step_trace: list = field(default_factory=list)
    blowup: bool = False


def flow_solve(conn0: Connection4D, c0: float = 0.0, tol: float = 1e-8,
               max_iters: int = 2000, blowup_guard_factor: float = 1e3,
               armijo: float = 1e-4, raise_on_fail: bool = True) -> FlowResult:
    """Descend the squared self-dual norm until the equation residual norm
    drops below `tol`.

    Accepted steps are monotone in the functional (backtracking line search);
    curvature blow-up beyond `blowup_guard_factor` times the initial sup-norm
    aborts with a BlowUp marker for the family diagnostics.
    """
    conn = conn0.copy()
    # fiberwise-diagonal fields stay diagonal under the flow: commutators can
    # be skipped exactly
    abelian = conn.is_fiber_diagonal()
    fb = curvature_components(conn, abelian=abelian)
    sup0 = max(fb.sup(), 1.0)
    guard = blowup_guard_factor * sup0
    energy = flow_energy(conn, c0, fb)
    res = equation_residual_norm(conn, c0, fb)
    result = FlowResult(connection=conn, converged=res <= tol, iterations=0,
                        residual=res, energy_trace=[energy],
                        residual_trace=[res], step_trace=[])
    if result.converged:
        return result
    step = 1.0
    for it in range(1, max_iters + 1):
        grads = flow_gradient(conn, c0, fb, abelian=abelian)
        gnorm2 = sum(float(np.sum(np.abs(g) ** 2)) for g in grads)
        if gnorm2 == 0.0:
            break
        accepted = False
        trial = step * 2.0
        for _ in range(60):
            fields = tuple(f - trial * g for f, g in zip(conn.fields(), grads))
            cand = conn.with_fields(*fields)
            fb_c = curvature_components(cand, abelian=abelian)
            e_c = flow_energy(cand, c0, fb_c)
            if e_c <= energy - armijo * trial * gnorm2:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        conn, fb, energy, step = cand, fb_c, e_c, trial
        res = equation_residual_norm(conn, c0, fb)
        result.energy_trace.append(energy)
        result.residual_trace.append(res)
        result.step_trace.append(trial)
        result.connection = conn
        result.iterations = it
        result.residual = res
        if fb.sup() > guard:
            result.blowup = True
            if raise_on_fail:
                raise BlowUp(fb.sup())
            return result
        if res <= tol:
            result.converged = True
            return result
    result.residual = res
    result.converged = res <= tol
    if not result.converged and raise_on_fail:
        exc = NonConvergence(res)
        exc.result = result
        raise exc
    return result


# ---------------------------------------------------------------------------
# gauge action on the 4D grid
# ---------------------------------------------------------------------------

def gauge_transform_4d(conn: Connection4D, g: np.ndarray) -> Connection4D:
    """Unitary gauge field g(s,t,x,y): each leg maps to g^-1 d g + g^-1 (.) g.
    Only zero-winding connections can be transformed by grid-periodic gauges."""
    if conn.has_winding:
        raise ValueError("periodic gauge fields act on zero-winding connections")
    gi = np.conj(np.swapaxes(g, -1, -2))
    d = lambda a: _deriv(conn, g, a)
    new = []
    for leg, axis in ((conn.ax, AXIS_X), (conn.ay, AXIS_Y),
                      (conn.phi, AXIS_S), (conn.psi, AXIS_T)):
        new.append(anti_hermitize(gi @ d(axis) + gi @ leg @ g))
    return conn.with_fields(*new)
