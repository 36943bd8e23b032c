"""Dual-torus sections of the mirror fibration and their verification.

The fiberwise flat classes of a relaxed connection determine points of the
dual torus over each base point: branch coordinates (a_i, b_i) are the
imaginary parts of the diagonal entries of A_x, A_y (period 2 pi under the
lattice-type gauges; mirror unit-period coordinates are x* = a/2pi,
y* = b/2pi).  In the limit of vanishing fiber scale the section satisfies
the first-order system

    (1)  d_s a_i + d_t b_i - c0 = 0
    (2)  (g^ss d_s + 2 g^st d_t) b_i - g^tt d_t a_i - c0 g^st = 0

on the base, whose graph is Lagrangian for the mirror symplectic form: the
pairing of the graph tangent frame with the form reduces to

    (L)  g^st d_s a + g^tt d_t a - g^ss d_s b - g^st d_t b = 0,

and, when det g = 1, the restriction of the imaginary holomorphic volume
form is d_t b + d_s a, which vanishes exactly in the zero-central-curvature
case c0 = 0 (Lagrangian sections with c0 != 0 are not special).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg

from . import spectral
from .errors import IncompatibleData, NotCalabiYau, SolverStall
from .fiber_gauge import SINGULAR_REPS, moduli_distance
from .geometry import HessianGeometry
from .matrices import trace_part


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class Branch:
    """One branch of a dual-torus-valued section: total (possibly winding)
    real fields on the base grid plus the integer winding per cycle."""

    a: np.ndarray              # (nb, nb)
    b: np.ndarray
    winding_a: tuple           # (per s-cycle, per t-cycle)
    winding_b: tuple

    def periodic_parts(self, periods):
        nb = self.a.shape[0]
        ls, lt = periods
        s = np.arange(nb)[:, None] * ls / nb
        t = np.arange(nb)[None, :] * lt / nb
        lin_a = 2 * np.pi * (self.winding_a[0] * s / ls + self.winding_a[1] * t / lt)
        lin_b = 2 * np.pi * (self.winding_b[0] * s / ls + self.winding_b[1] * t / lt)
        return self.a - lin_a, self.b - lin_b

    def gradients(self, periods):
        ls, lt = periods
        pa, pb = self.periodic_parts(periods)
        da_ds = spectral.deriv(pa, 0, ls) + 2 * np.pi * self.winding_a[0] / ls
        da_dt = spectral.deriv(pa, 1, lt) + 2 * np.pi * self.winding_a[1] / lt
        db_ds = spectral.deriv(pb, 0, ls) + 2 * np.pi * self.winding_b[0] / ls
        db_dt = spectral.deriv(pb, 1, lt) + 2 * np.pi * self.winding_b[1] / lt
        return da_ds, da_dt, db_ds, db_dt


@dataclass
class Multisection:
    branches: list
    c0: float
    base_period: tuple
    provenance: str            # "solved_limit_equation" | "extracted_from_connection"
    masked: Optional[np.ndarray] = None   # ramification / ambiguous cells
    multiplicity: int = 1


@dataclass
class VerificationReport:
    lagrangian_sup: float
    lagrangian_l2: float
    special_sup: Optional[float]
    special_l2: Optional[float]
    flat_bundle_sup: Optional[float]
    two_path_agreement: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# metric plumbing
# ---------------------------------------------------------------------------

def _metric_fields(geom, nb):
    if isinstance(geom, HessianGeometry):
        if geom.base_resolution != nb:
            raise ValueError("geometry resolution must match the section grid")
        gi = geom.g_inv
        return (gi[..., 0, 0], gi[..., 0, 1], gi[..., 1, 1]), geom.base_period, geom
    # plain constant metric: 2x2 inverse supplied directly
    g = np.asarray(geom, dtype=float)
    gi = np.linalg.inv(g)
    const = (np.full((nb, nb), gi[0, 0]), np.full((nb, nb), gi[0, 1]),
             np.full((nb, nb), gi[1, 1]))
    return const, (1.0, 1.0), None


# ---------------------------------------------------------------------------
# the limit system
# ---------------------------------------------------------------------------

def limit_solve(geom, c0: float, winding_a=(0, 0), winding_b=(0, 0),
                forcing=None, resolution: Optional[int] = None,
                constants=(0.0, 0.0), tol: float = 1e-11,
                max_iter: int = 400) -> Multisection:
    """Solve the limit system for one branch with the given windings.

    The affine winding part carries all the flux: averaging equation (1)
    forces 2 pi (w_a_s / L_s + w_b_t / L_t) = c0, and averaging (2) pins the
    transverse windings; both are checked exactly.  The periodic remainder is
    solved spectrally for constant metrics and by preconditioned iteration
    for variable ones.
    """
    if isinstance(geom, HessianGeometry):
        nb = geom.base_resolution if resolution is None else resolution
    else:
        nb = resolution or 32
    (g_ss, g_st, g_tt), periods, _ = _metric_fields(geom, nb)
    ls, lt = periods
    area = ls * lt

    ra = 2 * np.pi * np.array([winding_a[0] / ls, winding_a[1] / lt])
    rb = 2 * np.pi * np.array([winding_b[0] / ls, winding_b[1] / lt])

    flux = ra[0] + rb[1]
    if abs(flux - c0) > 1e-12 * max(1.0, abs(c0)):
        raise IncompatibleData(
            f"flux constraint violated: total winding flux {flux:.6e} != c0 {c0:.6e}"
            f" (times base area {area:.3e})")
    mean2 = (g_ss.mean() * rb[0] + 2 * g_st.mean() * rb[1]
             - g_tt.mean() * ra[1] - c0 * g_st.mean())
    variable = (np.ptp(g_ss) + np.ptp(g_st) + np.ptp(g_tt)) > 1e-14
    if not variable and abs(mean2) > 1e-10 * max(1.0, abs(c0) + np.abs(ra).max() + np.abs(rb).max()):
        raise IncompatibleData(
            f"second equation has non-removable mean {mean2:.3e} for these windings")

    if forcing is None:
        rho1 = np.zeros((nb, nb))
        rho2 = np.zeros((nb, nb))
    else:
        # equation (1) has constant coefficients: its range is exactly the
        # zero-mean fields; equation (2)'s range contains nonzero means when
        # the metric varies, so its forcing is kept as given
        rho1 = np.asarray(forcing[0], dtype=float) - np.mean(forcing[0])
        rho2 = np.asarray(forcing[1], dtype=float)

    # periodic remainder: eq2 picks up the variable-metric coupling to the
    # affine winding part
    rhs2 = rho2 - (g_ss * rb[0] + 2 * g_st * rb[1] - g_tt * ra[1] - c0 * g_st)
    if not variable:
        rhs2 = rhs2 - rhs2.mean()  # exact zero up to the checked constraint
        alpha, beta = _solve_constant(g_ss[0, 0], g_st[0, 0], g_tt[0, 0],
                                      rho1, rhs2, periods)
    else:
        alpha, beta = _solve_variable(g_ss, g_st, g_tt, rho1, rhs2, periods,
                                      tol, max_iter)

    s = np.arange(nb)[:, None] * ls / nb
    t = np.arange(nb)[None, :] * lt / nb
    a = ra[0] * s + ra[1] * t + alpha + constants[0]
    b = rb[0] * s + rb[1] * t + beta + constants[1]
    return Multisection(
        branches=[Branch(a=a, b=b, winding_a=tuple(winding_a),
                         winding_b=tuple(winding_b))],
        c0=c0, base_period=periods, provenance="solved_limit_equation")


def _symbols(nb, periods):
    ks = np.fft.fftfreq(nb, d=1.0 / nb)
    sig_s = 2j * np.pi * ks[:, None] / periods[0] * np.ones((1, nb))
    sig_t = 2j * np.pi * ks[None, :] / periods[1] * np.ones((nb, 1))
    return sig_s, sig_t


def _solve_constant(gss, gst, gtt, rho1, rho2, periods):
    nb = rho1.shape[0]
    sig_s, sig_t = _symbols(nb, periods)
    r1 = np.fft.fft2(rho1)
    r2 = np.fft.fft2(rho2)
    det = gss * sig_s ** 2 + 2 * gst * sig_s * sig_t + gtt * sig_t ** 2
    det[0, 0] = 1.0
    # [sig_s, sig_t; -gtt sig_t, gss sig_s + 2 gst sig_t] [alpha, beta] = [r1, r2]
    m11 = gss * sig_s + 2 * gst * sig_t
    alpha_hat = (m11 * r1 - sig_t * r2) / det
    beta_hat = (sig_s * r2 + gtt * sig_t * r1) / det
    alpha_hat[0, 0] = 0.0
    beta_hat[0, 0] = 0.0
    return np.fft.ifft2(alpha_hat).real, np.fft.ifft2(beta_hat).real


def _solve_variable(g_ss, g_st, g_tt, rho1, rho2, periods, tol, max_iter):
    nb = rho1.shape[0]
    ls, lt = periods

    def apply(vec):
        al = vec[:nb * nb].reshape(nb, nb)
        be = vec[nb * nb:].reshape(nb, nb)
        e1 = spectral.deriv(al, 0, ls) + spectral.deriv(be, 1, lt)
        e2 = (g_ss * spectral.deriv(be, 0, ls) + 2 * g_st * spectral.deriv(be, 1, lt)
              - g_tt * spectral.deriv(al, 1, lt))
        return np.concatenate([e1.ravel(), e2.ravel()])

    mean_g = (float(g_ss.mean()), float(g_st.mean()), float(g_tt.mean()))

    def precond(vec):
        r1 = vec[:nb * nb].reshape(nb, nb)
        r2 = vec[nb * nb:].reshape(nb, nb)
        al, be = _solve_constant(*mean_g, r1 - r1.mean(), r2 - r2.mean(), periods)
        return np.concatenate([al.ravel(), be.ravel()])

    n2 = 2 * nb * nb
    op = scipy.sparse.linalg.LinearOperator((n2, n2), matvec=apply, dtype=float)
    pm = scipy.sparse.linalg.LinearOperator((n2, n2), matvec=precond, dtype=float)
    rhs = np.concatenate([rho1.ravel(), rho2.ravel()])
    sol, info = scipy.sparse.linalg.lgmres(op, rhs, M=pm, rtol=tol,
                                           atol=tol * max(1.0, np.abs(rhs).max()),
                                           maxiter=max_iter)
    if info != 0:
        raise SolverStall(f"variable-metric iteration did not converge (info {info})")
    alpha = sol[:nb * nb].reshape(nb, nb)
    beta = sol[nb * nb:].reshape(nb, nb)
    return alpha - alpha.mean(), beta - beta.mean()


def limit_residual(section: Multisection, geom) -> list:
    """Residual fields of both limit equations per branch."""
    out = []
    nb = section.branches[0].a.shape[0]
    (g_ss, g_st, g_tt), periods, _ = _metric_fields(geom, nb)
    for br in section.branches:
        da_ds, da_dt, db_ds, db_dt = br.gradients(periods)
        e1 = da_ds + db_dt - section.c0
        e2 = g_ss * db_ds + 2 * g_st * db_dt - g_tt * da_dt - section.c0 * g_st
        out.append((e1, e2))
    return out


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def lagrangian_residual(section: Multisection, geom):
    """Graph-Lagrangian condition per branch, evaluated on two independent
    paths: the closed-form coefficient pattern, and the contraction of the
    graph tangent frame with the mirror symplectic form in the fixed chart.
    Both must agree to rounding."""
    nb = section.branches[0].a.shape[0]
    (g_ss, g_st, g_tt), periods, hess = _metric_fields(geom, nb)
    fields = []
    agreement = 0.0
    for br in section.branches:
        da_ds, da_dt, db_ds, db_dt = br.gradients(periods)
        formula = g_st * da_ds + g_tt * da_dt - g_ss * db_ds - g_st * db_dt

        # independent path: omega_check(l1, l2) with l_i in the (s,t,x*,y*)
        # chart and the form coefficients from the metric
        if hess is not None:
            g = hess.g
        else:
            gi = np.stack([np.stack([g_ss, g_st], -1),
                           np.stack([g_st, g_tt], -1)], -2)
            g = np.linalg.inv(gi)
        l1 = np.stack([g_ss, g_st, g_ss * da_ds + g_st * da_dt,
                       g_ss * db_ds + g_st * db_dt], axis=-1)
        l2 = np.stack([g_st, g_tt, g_st * da_ds + g_tt * da_dt,
                       g_st * db_ds + g_tt * db_dt], axis=-1)
        contraction = (l1[..., 0] * (g[..., 0, 0] * l2[..., 2] + g[..., 0, 1] * l2[..., 3])
                       + l1[..., 1] * (g[..., 0, 1] * l2[..., 2] + g[..., 1, 1] * l2[..., 3])
                       - l2[..., 0] * (g[..., 0, 0] * l1[..., 2] + g[..., 0, 1] * l1[..., 3])
                       - l2[..., 1] * (g[..., 0, 1] * l1[..., 2] + g[..., 1, 1] * l1[..., 3]))
        agreement = max(agreement, float(np.abs(formula - contraction).max()))
        fields.append(formula)
    return fields, agreement


@dataclass
class SpecialResidual:
    """Restriction of the imaginary holomorphic volume form to the graph
    (per branch), and its shift by c0 (the balance form of equation (1))."""
    fields: list
    c0: float

    @property
    def balance_fields(self):
        return [f - self.c0 for f in self.fields]

    def sup(self) -> float:
        return max(float(np.abs(f).max()) for f in self.fields)


def special_residual(section: Multisection, geom, cy_tol: float = 1e-8) -> SpecialResidual:
    """Requires det g = 1 (the simplification identifying the form with
    d_t b + d_s a holds only then)."""
    nb = section.branches[0].a.shape[0]
    (g_ss, g_st, g_tt), periods, hess = _metric_fields(geom, nb)
    det_inv = g_ss * g_tt - g_st ** 2
    if np.max(np.abs(det_inv - 1.0)) > cy_tol:
        raise NotCalabiYau(
            f"det g deviates from 1 by {np.max(np.abs(det_inv - 1.0)):.3e}")
    fields = []
    for br in section.branches:
        da_ds, da_dt, db_ds, db_dt = br.gradients(periods)
        fields.append(db_dt + da_ds)
    return SpecialResidual(fields=fields, c0=section.c0)


# ---------------------------------------------------------------------------
# extraction from a relaxed connection
# ---------------------------------------------------------------------------

def from_connection(conn, phi_section, branch_tol: float = 1e-3,
                    max_masked_fraction: float = 0.01) -> Multisection:
    """Assemble the two-branch multisection of a relaxed connection: the
    branch coordinates come from the tracked flat-class lift, shifted by the
    fiberwise-constant trace part; cells where the branches collide within
    `branch_tol` (ramification candidates) are masked."""
    if phi_section.masked_fraction > max_masked_fraction:
        raise ValueError(
            f"section extraction masked {phi_section.masked_fraction:.1%} of fibers")
    lifts = phi_section.lifts
    nb = lifts.shape[0]
    ls, lt = conn.base_period

    # fiberwise-constant trace parts (i R coefficients of A_x, A_y)
    tr_x = trace_part(conn.ax).mean(axis=(2, 3))[..., 0, 0].imag
    tr_y = trace_part(conn.ay).mean(axis=(2, 3))[..., 0, 0].imag
    s = np.arange(nb)[:, None] * ls / nb
    t = np.arange(nb)[None, :] * lt / nb
    tr_x = tr_x + 2 * np.pi * (conn.winding_trace[0, 0] * s / ls
                               + conn.winding_trace[0, 1] * t / lt)
    tr_y = tr_y + 2 * np.pi * (conn.winding_trace[1, 0] * s / ls
                               + conn.winding_trace[1, 1] * t / lt)

    (m_s, n_s), (m_t, n_t) = phi_section.windings
    u = 2.0 * lifts.imag     # su(2) part of the first diagonal entry of A_x
    v = -2.0 * lifts.real    # and of A_y
    wa1 = (n_s + conn.winding_trace[0, 0], n_t + conn.winding_trace[0, 1])
    wb1 = (-m_s + conn.winding_trace[1, 0], -m_t + conn.winding_trace[1, 1])
    wa2 = (-n_s + conn.winding_trace[0, 0], -n_t + conn.winding_trace[0, 1])
    wb2 = (m_s + conn.winding_trace[1, 0], m_t + conn.winding_trace[1, 1])
    branch1 = Branch(a=u + tr_x, b=v + tr_y, winding_a=tuple(int(x) for x in wa1),
                     winding_b=tuple(int(x) for x in wb1))
    branch2 = Branch(a=-u + tr_x, b=-v + tr_y, winding_a=tuple(int(x) for x in wa2),
                     winding_b=tuple(int(x) for x in wb2))

    masked = np.zeros((nb, nb), dtype=bool)
    for i in range(nb):
        for j in range(nb):
            d = min(moduli_distance(lifts[i, j], rep) for rep in SINGULAR_REPS)
            masked[i, j] = d < branch_tol
    for sample in phi_section.samples:
        if sample.masked:
            masked[sample.site] = True

    c0_extracted = 0.0  # zero-central-curvature grid track
    return Multisection(branches=[branch1, branch2], c0=c0_extracted,
                        base_period=(ls, lt),
                        provenance="extracted_from_connection", masked=masked,
                        multiplicity=1)


def flat_bundle_residual(conn, masked=None):
    """Residual of d_t Phi - d_s Psi - [Phi, Psi] for the fiberwise-constant
    diagonal parts of Phi, Psi over the smooth region of the section; the
    deviation of Phi, Psi from that form is reported alongside."""
    nb = conn.nb
    ls, lt = conn.base_period
    devs = []
    consts = []
    for legfield in (conn.phi, conn.psi):
        const = legfield.mean(axis=(2, 3))
        diag = np.zeros_like(const)
        diag[..., 0, 0] = const[..., 0, 0]
        diag[..., 1, 1] = const[..., 1, 1]
        full = np.broadcast_to(diag[:, :, None, None], legfield.shape)
        devs.append(float(np.max(np.sqrt(np.sum(np.abs(legfield - full) ** 2,
                                                axis=(-2, -1))))))
        consts.append(diag)
    phi_c, psi_c = consts
    resid = (spectral.deriv(phi_c, 1, lt) - spectral.deriv(psi_c, 0, ls)
             + (phi_c @ psi_c - psi_c @ phi_c))
    norms = np.sqrt(np.sum(np.abs(resid) ** 2, axis=(-2, -1)))
    if masked is not None:
        norms = norms[~masked]
    sup = float(norms.max()) if norms.size else 0.0
    return {"sup": sup, "deviation_phi": devs[0], "deviation_psi": devs[1]}


def verify(section: Multisection, geom, tol: float = 1e-3,
           check_special: bool = True, conn=None,
           flow_tol: Optional[float] = None) -> VerificationReport:
    """Run the Lagrangian check (two paths), the special check when det g = 1
    and c0 = 0, and the flat-bundle check when a connection is supplied."""
    lag_fields, agreement = lagrangian_residual(section, geom)
    mask = section.masked

    def stats(f):
        vals = f[~mask] if mask is not None else f
        if vals.size == 0:
            return 0.0, 0.0
        return float(np.abs(vals).max()), float(np.sqrt(np.mean(vals ** 2)))

    lag_sup = max(stats(f)[0] for f in lag_fields)
    lag_l2 = max(stats(f)[1] for f in lag_fields)
    sp_sup = sp_l2 = None
    if check_special:
        sp = special_residual(section, geom)
        sp_sup = max(stats(f)[0] for f in sp.fields)
        sp_l2 = max(stats(f)[1] for f in sp.fields)
    fb_sup = None
    details = {}
    if conn is not None:
        fb = flat_bundle_residual(conn, masked=None)
        fb_sup = fb["sup"]
        details["flat_bundle"] = fb
        if flow_tol is not None:
            details["flat_bundle_pass"] = fb_sup <= 10 * flow_tol
    passed = lag_sup <= tol and (sp_sup is None or sp_sup <= tol) \
        and agreement <= 1e-12
    return VerificationReport(
        lagrangian_sup=lag_sup, lagrangian_l2=lag_l2, special_sup=sp_sup,
        special_l2=sp_l2, flat_bundle_sup=fb_sup, two_path_agreement=agreement,
        tolerance=tol, passed=passed, details=details)
