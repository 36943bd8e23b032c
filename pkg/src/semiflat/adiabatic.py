"""Shrinking-fiber families: relax the connection at each fiber scale,
extract the fiberwise flat classes as a section of the moduli sphere bundle,
and monitor where curvature concentrates.

Per base point the concentration statistic is

    c(s,t) = eps^-1 sup_fiber |F_A| + sup_fiber |d_T A - d_A Psi|,

whose growth under eps -> 0 separates the three concentration profiles:
eps*c unbounded (point-like), eps*c bounded away from zero (fiber-scale),
c unbounded with eps*c -> 0 (moduli-sphere scale).  The base measure mu
assigns each cell the metric-weighted curvature energy over the fibers above
it; cells where mu exceeds the quantization threshold, or where the section
sits near a singular class, form the flagged set excluded from convergence
claims.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fiber_gauge as fg
from . import hym_solver as hs
from .errors import FitUnreliable, InsufficientFamily, NonConvergence
from .matrices import anti_hermitize, fro_norm, traceless_part


# ---------------------------------------------------------------------------
# section extraction
# ---------------------------------------------------------------------------

@dataclass
class SectionSample:
    site: tuple
    point: fg.ModuliPoint
    lift: complex          # branch-tracked representative (may wind)
    branch_flipped: bool
    confidence: float
    masked: bool = False


@dataclass
class PhiSection:
    samples: list                   # row-major SectionSamples
    lifts: np.ndarray               # (nb, nb) complex, branch-tracked
    windings: tuple                 # ((m_s, n_s), (m_t, n_t)) lattice steps
    masked_fraction: float
    holo_residual_sup: float
    holo_residual_l2: float
    base_period: tuple

    def points(self):
        return np.array([[s.point.a for s in row] for row in self._grid()])

    def _grid(self):
        nb = self.lifts.shape[0]
        return [self.samples[i * nb:(i + 1) * nb] for i in range(nb)]


def _unwrap_1d(values, masked, start, out, flips, indexer):
    """Lift a 1D sweep with linear prediction: the reference extrapolates the
    previous step, which keeps the branch choice stable when the sweep passes
    through a Weyl-fixed class (where the two images are equidistant)."""
    prev = start
    delta = 0.0 + 0.0j
    have_prev = False
    for k, idx in enumerate(indexer):
        pred = prev + delta if have_prev else prev
        if masked[idx]:
            out[idx] = pred
            prev = pred
            continue
        lift, flipped = fg.nearest_lift(values[idx], pred)
        out[idx] = lift
        flips[idx] = flipped
        if have_prev:
            delta = lift - prev
        prev = lift
        have_prev = True


def _serpentine_unwrap(reduced, masked):
    """Lift fundamental-domain values to a continuous sheet: unwrap the first
    row along s, then every column along t anchored at that row."""
    nb = reduced.shape[0]
    lifts = np.zeros_like(reduced)
    flips = np.zeros(reduced.shape, dtype=bool)
    _unwrap_1d(reduced, masked, reduced[0, 0], lifts, flips,
               [(0, j) for j in range(nb)])
    for j in range(nb):
        _unwrap_1d(reduced, masked, lifts[0, j], lifts, flips,
                   [(i, j) for i in range(nb)])
    return lifts, flips


def _cycle_winding(lifts, axis):
    """Lattice step pi(m + i n) picked up around a base cycle: continue the
    lift one step past the last site at the interior drift rate and compare
    with the first site."""
    steps = np.diff(lifts, axis=axis)
    drift = complex(np.median(steps.real), np.median(steps.imag))
    delta = np.take(lifts, -1, axis=axis) - np.take(lifts, 0, axis=axis) + drift
    m = int(round(np.median(delta.real) / np.pi))
    n = int(round(np.median(delta.imag) / np.pi))
    return m, n


def phi_extract(conn: hs.Connection4D, flatten_energy_max: float = 0.05,
                moduli_tol: float = 1e-6, eig_tol: float = 1e-9,
                newton_tol: float = 1e-12) -> PhiSection:
    """Fiberwise flat classes of a relaxed connection as a branch-tracked
    section, with the Cauchy-Riemann defect of its lift in the base complex
    coordinate (s - i t convention)."""
    nb = conn.nb
    reduced = np.zeros((nb, nb), dtype=complex)
    masked = np.zeros((nb, nb), dtype=bool)
    confidence = np.ones((nb, nb))
    for i in range(nb):
        for j in range(nb):
            fiber = conn.fiber_at(i, j)
            fiber_su2 = fg.FiberConnection(traceless_part(fiber.ax),
                                           traceless_part(fiber.ay),
                                           fiber.fiber_period)
            try:
                # near-zero classes with nilpotent noise land at the limit
                # flat class instead of masking the site
                res = fg.flatten_to_t(fiber_su2, flatten_energy_max=flatten_energy_max,
                                      newton_tol=newton_tol, eig_tol=eig_tol,
                                      moduli_tol=moduli_tol, allow_nilpotent=True)
                reduced[i, j] = res.eigenvalue
            except Exception:
                masked[i, j] = True
                confidence[i, j] = 0.0
    lifts, flips = _serpentine_unwrap(reduced, masked)
    mw = _cycle_winding(lifts, 0)
    nw = _cycle_winding(lifts, 1)
    ls, lt = conn.base_period
    rate_s = np.pi * (mw[0] + 1j * mw[1]) / ls
    rate_t = np.pi * (nw[0] + 1j * nw[1]) / lt
    s = np.arange(nb)[:, None] * ls / nb
    t = np.arange(nb)[None, :] * lt / nb
    periodic = lifts - rate_s * s - rate_t * t
    from . import spectral
    dbar = 0.5 * (spectral.deriv(periodic, 0, ls) - 1j * spectral.deriv(periodic, 1, lt))
    dbar = dbar + 0.5 * (rate_s - 1j * rate_t)
    ok = ~masked
    sup = float(np.abs(dbar[ok]).max()) if ok.any() else float("nan")
    l2 = float(np.sqrt(np.mean(np.abs(dbar[ok]) ** 2))) if ok.any() else float("nan")
    samples = []
    for i in range(nb):
        for j in range(nb):
            samples.append(SectionSample(
                site=(i, j), point=fg.ModuliPoint.reduce(reduced[i, j], moduli_tol),
                lift=complex(lifts[i, j]), branch_flipped=bool(flips[i, j]),
                confidence=float(confidence[i, j]), masked=bool(masked[i, j])))
    return PhiSection(samples=samples, lifts=lifts, windings=(mw, nw),
                      masked_fraction=float(masked.mean()),
                      holo_residual_sup=sup, holo_residual_l2=l2,
                      base_period=(ls, lt))


# ---------------------------------------------------------------------------
# measures and flags
# ---------------------------------------------------------------------------

def energy_density_on_base(conn: hs.Connection4D) -> np.ndarray:
    """Metric-weighted curvature energy integrated over each fiber: the cell
    masses of this density field are the base measure."""
    fb = hs.curvature_components(conn, abelian=conn.is_fiber_diagonal())
    eps = conn.epsilon
    fw = conn.conformal_factor[..., None, None]
    dens = (eps ** 2 * fro_norm(fb.f_st) ** 2 / fw
            + fro_norm(fb.f_sx) ** 2 + fro_norm(fb.f_sy) ** 2
            + fro_norm(fb.f_tx) ** 2 + fro_norm(fb.f_ty) ** 2
            + eps ** -2 * fro_norm(fb.f_xy) ** 2 * fw)
    return dens.sum(axis=(2, 3)) * conn.cell_volume


def base_measure(conn: hs.Connection4D, cells: int) -> np.ndarray:
    """Cellwise curvature energy on a `cells` x `cells` partition of the base;
    sums exactly to the total energy."""
    dens = energy_density_on_base(conn)
    nb = dens.shape[0]
    if nb % cells != 0:
        raise ValueError("partition must divide the base grid")
    blk = nb // cells
    return dens.reshape(cells, blk, cells, blk).sum(axis=(1, 3))


def singular_set(mu: np.ndarray, delta_eta: float,
                 phi: Optional[PhiSection] = None, eta: float = 0.2) -> np.ndarray:
    """Cells where the measure exceeds the energy-quantization threshold,
    together with cells whose section value is within eta of a singular
    class."""
    flags = mu > delta_eta
    if phi is not None:
        nb = phi.lifts.shape[0]
        cells = mu.shape[0]
        blk = nb // cells
        near = np.zeros((nb, nb), dtype=bool)
        for i in range(nb):
            for j in range(nb):
                d = min(fg.moduli_distance(phi.lifts[i, j], s)
                        for s in fg.SINGULAR_REPS)
                near[i, j] = d < eta
        near_cells = near.reshape(cells, blk, cells, blk).any(axis=(1, 3))
        flags = flags | near_cells
    return flags


def fit_log_exponent(eps_list, values, floor=1e-12):
    """Least-squares slope of log(value) against log(eps)."""
    x = np.log(np.asarray(eps_list, dtype=float))
    y = np.log(np.maximum(np.asarray(values, dtype=float), floor))
    x = x - x.mean()
    denom = float(np.sum(x * x))
    if denom == 0:
        return 0.0
    return float(np.sum(x * (y - y.mean())) / denom)


def bubble_classify(c_fields, eps_list, slope_tol: float = 0.3,
                    bounded_delta: float = 0.1, floor: float = 1e-8) -> np.ndarray:
    """Concentration type per base cell from the scaling of the statistic c:

    eps*c growing        -> "type1"
    eps*c bounded > 0    -> "type2"
    c growing, eps*c -> 0 -> "type3"
    otherwise            -> "none"
    """
    if len(eps_list) < 2:
        raise InsufficientFamily("need the statistic at two scales or more")
    c = np.stack([np.asarray(f, dtype=float) for f in c_fields])
    eps = np.asarray(eps_list, dtype=float)
    ec = c * eps[:, None, None]
    shape = c.shape[1:]
    tags = np.full(shape, "none", dtype=object)
    for i in range(shape[0]):
        for j in range(shape[1]):
            if c[-1, i, j] < floor:
                continue
            p_c = fit_log_exponent(eps, c[:, i, j])
            p_ec = fit_log_exponent(eps, ec[:, i, j])
            if p_ec <= -slope_tol:
                tags[i, j] = "type1"
            elif abs(p_ec) < slope_tol and ec[-1, i, j] >= bounded_delta:
                tags[i, j] = "type2"
            elif p_c <= -slope_tol and p_ec >= slope_tol:
                tags[i, j] = "type3"
    return tags


def concentration_statistic(conn: hs.Connection4D) -> np.ndarray:
    """c(s,t) = eps^-1 sup_fiber |F_A| + sup_fiber |d_T A - d_A Psi|."""
    fb = hs.curvature_components(conn, abelian=conn.is_fiber_diagonal())
    sup_fa = fro_norm(fb.f_xy).max(axis=(2, 3))
    sup_mix_t = np.sqrt(fro_norm(fb.f_tx) ** 2 + fro_norm(fb.f_ty) ** 2).max(axis=(2, 3))
    return sup_fa / conn.epsilon + sup_mix_t


# ---------------------------------------------------------------------------
# exponential-decay diagnostic
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    rate: float
    r_squared: float
    exact: bool
    samples: int


def deviation_from_diagonal(conn: hs.Connection4D) -> np.ndarray:
    """Sup over the fiber of the distance of A to its fiberwise-constant
    diagonal part, per base point."""
    devs = []
    for leg in (conn.ax, conn.ay):
        const = leg.mean(axis=(2, 3), keepdims=True)
        diag = np.zeros_like(const)
        diag[..., 0, 0] = const[..., 0, 0]
        diag[..., 1, 1] = const[..., 1, 1]
        devs.append(fro_norm(leg - diag).max(axis=(2, 3)))
    return np.sqrt(devs[0] ** 2 + devs[1] ** 2)


def _torus_dist(x, c, period):
    d = np.abs(x - c)
    return np.minimum(d, period - d)


def decay_diagnostic(conn: hs.Connection4D, center, radius,
                     min_r2: float = 0.8, floor: float = 1e-14) -> DecayFit:
    """Fit log(deviation from the flat diagonal classes) against the distance
    to the boundary of a base ball; a boundary-supported perturbation that
    relaxes in the interior shows a positive rate ~ twice the spectral gap."""
    dev = deviation_from_diagonal(conn)
    if float(dev.max()) < floor:
        return DecayFit(rate=float("inf"), r_squared=1.0, exact=True, samples=0)
    nb = conn.nb
    ls, lt = conn.base_period
    s = np.arange(nb)[:, None] * ls / nb
    t = np.arange(nb)[None, :] * lt / nb
    dist_c = np.hypot(_torus_dist(s, center[0], ls), _torus_dist(t, center[1], lt))
    inside = dist_c < radius
    d_boundary = radius - dist_c
    use = inside & (dev > floor)
    if use.sum() < 4:
        raise FitUnreliable(0.0)
    x = d_boundary[use].ravel()
    y = np.log(dev[use].ravel())
    a = np.stack([x, np.ones_like(x)], axis=1)
    coef, res_, *_ = np.linalg.lstsq(a, y, rcond=None)
    pred = a @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if r2 < min_r2:
        raise FitUnreliable(r2)
    return DecayFit(rate=float(-coef[0]), r_squared=float(r2), exact=False,
                    samples=int(use.sum()))


# ---------------------------------------------------------------------------
# the family driver
# ---------------------------------------------------------------------------

@dataclass
class EpsilonEntry:
    epsilon: float
    connection: hs.Connection4D
    converged: bool
    flow_residual: float
    flow_iterations: int
    sup_fiber_curvature: float
    c_field: np.ndarray
    mu: np.ndarray
    phi: Optional[PhiSection]
    energy: dict
    blowup: bool = False


@dataclass
class AdiabaticReport:
    epsilons: list
    entries: list
    bubble_tags: Optional[np.ndarray] = None
    flagged_cells: Optional[np.ndarray] = None
    phi_jump_cells: Optional[np.ndarray] = None
    diagnostics_only: bool = False
    notes: list = field(default_factory=list)

    @property
    def sup_fiber_trace(self):
        return [e.sup_fiber_curvature for e in self.entries]

    def masked_fractions(self):
        return [e.phi.masked_fraction if e.phi else 1.0 for e in self.entries]


def _warm_project(fields, abelian):
    out = [anti_hermitize(f) for f in fields]
    if abelian:
        for f in out:
            f[..., 0, 1] = 0.0
            f[..., 1, 0] = 0.0
    return out


def resample_connection(conn: hs.Connection4D, nb: int, nf: int) -> hs.Connection4D:
    """Move a connection to a new grid by Fourier padding/truncation of all
    four periodic legs; windings and scales carry over unchanged."""
    from . import spectral

    fields = []
    for f in conn.fields():
        out = f
        for axis, n_new in ((0, nb), (1, nb), (2, nf), (3, nf)):
            if out.shape[axis] != n_new:
                out = spectral.fourier_pad(out, axis, n_new)
        fields.append(anti_hermitize(np.ascontiguousarray(out)))
    cf = conn.conformal_factor
    for axis in (0, 1):
        if cf.shape[axis] != nb:
            cf = spectral.fourier_pad(cf, axis, nb)
    return hs.Connection4D(
        *fields, epsilon=conn.epsilon, base_period=conn.base_period,
        fiber_period=conn.fiber_period, winding_su2=conn.winding_su2.copy(),
        winding_trace=conn.winding_trace.copy(), conformal_factor=cf.real.copy())


def run_family(seed_conn: hs.Connection4D, eps_list, tol: float = 1e-6,
               max_iters: int = 2000, c0: float = 0.0, cells: Optional[int] = None,
               delta_eta: Optional[float] = None, eta: float = 0.2,
               flatten_energy_max: float = 0.05, phi_jump_tol: float = 0.3,
               extract: bool = True, blowup_guard_factor: float = 1e3,
               grids=None) -> AdiabaticReport:
    """Relax the family over a strictly decreasing list of fiber scales,
    warm-starting each scale from the previous solution, and assemble all
    diagnostics.  Non-convergence at one scale is recorded, not fatal.
    `grids` optionally gives (base, fiber) resolutions per scale (the fiber
    grid may grow as the scale shrinks); warm starts are Fourier-resampled."""
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or not eps_list:
        raise ValueError("epsilon list must be strictly decreasing")
    if any(e <= 0 or e > 1 for e in eps_list):
        raise ValueError("epsilon values must lie in (0, 1]")
    if grids is not None and len(grids) != len(eps_list):
        raise ValueError("per-scale grid list must match the epsilon list")
    cells = cells or (grids[0][0] if grids else seed_conn.nb)
    entries = []
    prev = None
    abelian = seed_conn.is_fiber_diagonal()
    for k, eps in enumerate(eps_list):
        conn = seed_conn.copy()
        conn.epsilon = eps
        if grids is not None:
            conn = resample_connection(conn, *grids[k])
        if prev is not None:
            src = prev if grids is None else resample_connection(prev, *grids[k])
            conn = conn.with_fields(*_warm_project(list(src.fields()), abelian))
        blow = False
        try:
            flow = hs.flow_solve(conn, c0=c0, tol=tol, max_iters=max_iters,
                                 blowup_guard_factor=blowup_guard_factor,
                                 raise_on_fail=False)
        except NonConvergence as exc:  # pragma: no cover - raise_on_fail=False
            flow = exc.result
        solved = flow.connection
        blow = flow.blowup
        prev = solved
        fb = hs.curvature_components(solved, abelian=abelian)
        sup_fa = float(fro_norm(fb.f_xy).max())
        phi = None
        if extract:
            try:
                phi = phi_extract(solved, flatten_energy_max=flatten_energy_max)
            except Exception:
                phi = None
        mu_cells = cells if solved.nb % cells == 0 else solved.nb
        entries.append(EpsilonEntry(
            epsilon=eps, connection=solved, converged=flow.converged,
            flow_residual=flow.residual, flow_iterations=flow.iterations,
            sup_fiber_curvature=sup_fa,
            c_field=concentration_statistic(solved),
            mu=base_measure(solved, mu_cells), phi=phi,
            energy=hs.ym_energy(solved), blowup=blow))

    report = AdiabaticReport(epsilons=eps_list, entries=entries)

    if delta_eta is None:
        # calibrate from the family itself: a tenth of the smallest nonzero
        # cell mass that persists at the final scale, or unit if clean
        mu_last = entries[-1].mu
        nz = mu_last[mu_last > 1e-10]
        delta_eta = 0.1 * float(nz.min()) if nz.size else 1.0
    report.notes.append(f"delta_eta = {delta_eta:.6e}")

    same_grid = len({e.c_field.shape for e in entries}) == 1
    if len(entries) >= 2 and same_grid:
        report.bubble_tags = bubble_classify([e.c_field for e in entries], eps_list)
    flags = singular_set(entries[-1].mu, delta_eta, entries[-1].phi, eta)
    report.flagged_cells = flags

    phis = [e.phi for e in entries if e.phi is not None]
    if len(phis) >= 2 and phis[-2].lifts.shape == phis[-1].lifts.shape:
        jumps = np.zeros_like(flags, dtype=bool)
        a, b = phis[-2].lifts, phis[-1].lifts
        nb = a.shape[0]
        blk = nb // flags.shape[0]
        jump_field = np.zeros((nb, nb), dtype=bool)
        for i in range(nb):
            for j in range(nb):
                jump_field[i, j] = fg.moduli_distance(a[i, j], b[i, j]) > phi_jump_tol
        jumps = jump_field.reshape(flags.shape[0], blk, flags.shape[0], blk).any(axis=(1, 3))
        report.phi_jump_cells = jumps

    # the convergence statement needs a non-constant section away from the
    # singular classes; otherwise the run is diagnostics-only
    if phis:
        last = phis[-1]
        vals = last.lifts[~np.isnan(last.lifts.real)]
        near_sing = [min(fg.moduli_distance(v, s) for s in fg.SINGULAR_REPS) < eta
                     for v in vals.ravel()]
        spread = float(np.abs(vals - vals.mean()).max()) if vals.size else 0.0
        if all(near_sing) and spread < 1e-3:
            report.diagnostics_only = True
            report.notes.append("section constant at a singular class")
    return report
