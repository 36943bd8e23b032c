"""Semi-flat base geometry of a Lagrangian torus fibration over T^2.

The base metric comes from a convex potential h(s, t): its Hessian
g_pq = d^2 h / dp dq is the metric in the affine (symplectic) coordinates,
and the structure is Ricci-flat exactly when det(g_pq) = 1.  The gradient
map (s, t) -> (dh/ds, dh/dt) is the Legendre transform to the complex
affine coordinates of the base; the dual-torus fibration carries the mirror
symplectic form d s_chk ^ dx* + d t_chk ^ dy* and the holomorphic volume
form (ds + i dx*) ^ (dt + i dy*) in the induced Darboux chart.

Because the base torus only supports convex potentials of the form
(quadratic) + (periodic), potentials are handled either in that split form
(periodic part differentiated spectrally, exact for band-limited data) or
as a raw callable (4th-order central differences with a fine step).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import InvalidEpsilon, NonPositiveDefinite, ResolutionTooLow

DEFAULT_CY_TOL = 1e-8


class Potential:
    """Base potential in split form (quadratic + periodic) or as a raw callable."""

    def __init__(self, quadratic=None, periodic_grid=None, periodic_fn=None,
                 raw_fn=None, periods=(1.0, 1.0)):
        self.quadratic = None if quadratic is None else np.asarray(quadratic, dtype=float)
        self.periodic_grid = periodic_grid
        self.periodic_fn = periodic_fn
        self.raw_fn = raw_fn
        self.periods = tuple(float(p) for p in periods)
        if self.raw_fn is None and self.quadratic is None:
            raise ValueError("potential needs a quadratic part or a raw callable")

    @classmethod
    def flat(cls, periods=(1.0, 1.0)):
        """h = (s^2 + t^2)/2, the exactly Ricci-flat reference."""
        return cls(quadratic=np.eye(2), periods=periods)

    @classmethod
    def quadratic_form(cls, q, periods=(1.0, 1.0)):
        return cls(quadratic=q, periods=periods)

    @classmethod
    def cosine(cls, amplitude, modes=(1, 1), quadratic=None, periods=(1.0, 1.0)):
        """h = quadratic + amplitude * cos(2 pi k s / L_s) * cos(2 pi l t / L_t)."""
        ls, lt = periods
        k, l = modes

        def p(s, t):
            out = amplitude * np.cos(2 * np.pi * k * s / ls)
            if l != 0:
                out = out * np.cos(2 * np.pi * l * t / lt)
            return out

        q = np.eye(2) if quadratic is None else np.asarray(quadratic, dtype=float)
        return cls(quadratic=q, periodic_fn=p, periods=periods)

    @classmethod
    def from_callable(cls, fn, periods=(1.0, 1.0)):
        return cls(raw_fn=fn, periods=periods)

    @classmethod
    def from_samples(cls, samples, quadratic=None, periods=(1.0, 1.0)):
        """Periodic part sampled on an N x N grid (row index = s)."""
        q = np.eye(2) if quadratic is None else np.asarray(quadratic, dtype=float)
        return cls(quadratic=q, periodic_grid=np.asarray(samples, dtype=float),
                   periods=periods)

    def periodic_samples(self, n):
        if self.periodic_grid is not None:
            if self.periodic_grid.shape != (n, n):
                raise ValueError("sampled periodic part has wrong resolution")
            return self.periodic_grid
        if self.periodic_fn is not None:
            s = spectral.grid_coords(n, self.periods[0])
            t = spectral.grid_coords(n, self.periods[1])
            return self.periodic_fn(s[:, None], t[None, :]) * np.ones((n, n))
        return np.zeros((n, n))

    def value(self, s, t):
        if self.raw_fn is not None:
            return self.raw_fn(s, t)
        st = np.stack([np.asarray(s, dtype=float), np.asarray(t, dtype=float)])
        quad = 0.5 * np.einsum("i...,ij,j...->...", st, self.quadratic, st)
        if self.periodic_fn is not None:
            quad = quad + self.periodic_fn(s, t)
        elif self.periodic_grid is not None:
            quad = quad + _trig_eval(self.periodic_grid, s, t, self.periods)
        return quad


def _trig_eval(grid, s, t, periods, ds=0, dt=0):
    """Evaluate (derivatives of) the trigonometric interpolant of a periodic grid."""
    n = grid.shape[0]
    chat = np.fft.fft2(grid) / (n * n)
    ks = np.fft.fftfreq(n, d=1.0 / n)
    # Nyquist mode has no symmetric partner on even grids; drop it for smooth
    # derivative evaluation off-grid.
    keep = np.abs(ks) < n / 2
    ks = ks[keep]
    chat = chat[np.ix_(keep, keep)]
    fs = 2j * np.pi * ks / periods[0]
    ft = 2j * np.pi * ks / periods[1]
    es = np.exp(np.multiply.outer(np.asarray(s, dtype=float), fs)) * fs ** ds
    et = np.exp(np.multiply.outer(np.asarray(t, dtype=float), ft)) * ft ** dt
    return np.einsum("...k,kl,...l->...", es, chat, et).real


@dataclass
class HessianGeometry:
    """Base metric data derived from a potential."""

    potential: Potential
    base_resolution: int
    base_period: tuple
    g: np.ndarray          # (N, N, 2, 2) symmetric
    g_inv: np.ndarray      # (N, N, 2, 2)
    det_g: np.ndarray      # (N, N)
    conformal_factor_f: np.ndarray  # (N, N), isothermal weight when applicable
    cy_tol: float = DEFAULT_CY_TOL
    pre_symmetrization_defect: float = 0.0

    @property
    def calabi_yau(self) -> bool:
        return bool(np.max(np.abs(self.det_g - 1.0)) <= self.cy_tol)

    @property
    def base_area(self) -> float:
        return self.base_period[0] * self.base_period[1]

    def g_at_mean(self):
        return self.g.mean(axis=(0, 1))

    def summary(self) -> dict:
        dev = float(np.max(np.abs(self.det_g - 1.0)))
        eig = np.linalg.eigvalsh(self.g)
        return {
            "resolution": self.base_resolution,
            "periods": list(self.base_period),
            "det_g_max_deviation": dev,
            "calabi_yau": self.calabi_yau,
            "cy_tol": self.cy_tol,
            "min_eigenvalue": float(eig.min()),
            "max_eigenvalue": float(eig.max()),
            "inverse_defect": float(
                np.max(np.abs(self.g_inv @ self.g - np.eye(2)))
            ),
        }


def metric_from_potential(potential, resolution, periods=(1.0, 1.0),
                          scheme="auto", fd_step=None, cy_tol=DEFAULT_CY_TOL,
                          conformal_factor=None) -> HessianGeometry:
    """Build the Hessian metric of a potential on an N x N periodic base grid.

    Split-form potentials use spectral differentiation of the periodic part
    (the quadratic Hessian is added analytically); raw callables fall back to
    4th-order central differences with step `fd_step` (default period/256,
    independent of the grid).
    """
    n = int(resolution)
    if n < 8:
        raise ResolutionTooLow(f"base resolution {n} < 8")
    if isinstance(potential, Potential):
        pot = potential
    elif callable(potential):
        pot = Potential.from_callable(potential, periods=periods)
    else:
        pot = Potential.from_samples(potential, periods=periods)
    periods = pot.periods if pot.periods else periods

    if pot.raw_fn is not None and scheme != "spectral":
        hess, defect = _hessian_fd4(pot.raw_fn, n, periods, fd_step)
    else:
        hess, defect = _hessian_split(pot, n, periods)

    g = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    tr = g[..., 0, 0] + g[..., 1, 1]
    disc = np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))
    lam_min = 0.5 * (tr - disc)
    if np.any(lam_min <= 0):
        loc = np.unravel_index(int(np.argmin(lam_min)), lam_min.shape)
        raise NonPositiveDefinite(loc, float(lam_min[loc]))
    g_inv = np.empty_like(g)
    g_inv[..., 0, 0] = g[..., 1, 1] / det
    g_inv[..., 1, 1] = g[..., 0, 0] / det
    g_inv[..., 0, 1] = -g[..., 0, 1] / det
    g_inv[..., 1, 0] = -g[..., 1, 0] / det

    if conformal_factor is None:
        f = np.sqrt(det)  # exact isothermal weight whenever g is conformal
    else:
        f = np.broadcast_to(np.asarray(conformal_factor, dtype=float), det.shape).copy()

    return HessianGeometry(
        potential=pot, base_resolution=n, base_period=tuple(periods),
        g=g, g_inv=g_inv, det_g=det, conformal_factor_f=f, cy_tol=cy_tol,
        pre_symmetrization_defect=defect,
    )


def _hessian_split(pot, n, periods):
    p = pot.periodic_samples(n)
    hess = np.zeros((n, n, 2, 2))
    hess[..., 0, 0] = pot.quadratic[0, 0]
    hess[..., 0, 1] = pot.quadratic[0, 1]
    hess[..., 1, 0] = pot.quadratic[1, 0]
    hess[..., 1, 1] = pot.quadratic[1, 1]
    if np.any(p):
        dss = spectral.deriv(p, 0, periods[0], order=2)
        dtt = spectral.deriv(p, 1, periods[1], order=2)
        dst = spectral.deriv(spectral.deriv(p, 0, periods[0]), 1, periods[1])
        dts = spectral.deriv(spectral.deriv(p, 1, periods[1]), 0, periods[0])
        defect = float(np.max(np.abs(dst - dts)))
        hess[..., 0, 0] += dss
        hess[..., 1, 1] += dtt
        hess[..., 0, 1] += 0.5 * (dst + dts)
        hess[..., 1, 0] += 0.5 * (dst + dts)
    else:
        defect = 0.0
    return hess, defect


def _hessian_fd4(fn, n, periods, fd_step):
    s = spectral.grid_coords(n, periods[0])[:, None]
    t = spectral.grid_coords(n, periods[1])[None, :]
    hs = periods[0] / 256 if fd_step is None else fd_step
    ht = periods[1] / 256 if fd_step is None else fd_step

    def d2(axis_s, axis_t):
        # mixed/pure second derivatives by nested 4th-order stencils
        if axis_s == 2:
            return (-fn(s + 2 * hs, t) + 16 * fn(s + hs, t) - 30 * fn(s, t)
                    + 16 * fn(s - hs, t) - fn(s - 2 * hs, t)) / (12 * hs * hs)
        if axis_t == 2:
            return (-fn(s, t + 2 * ht) + 16 * fn(s, t + ht) - 30 * fn(s, t)
                    + 16 * fn(s, t - ht) - fn(s, t - 2 * ht)) / (12 * ht * ht)

        def ds_of(tv):
            return (8 * (fn(s + hs, tv) - fn(s - hs, tv))
                    - (fn(s + 2 * hs, tv) - fn(s - 2 * hs, tv))) / (12 * hs)

        return (8 * (ds_of(t + ht) - ds_of(t - ht))
                - (ds_of(t + 2 * ht) - ds_of(t - 2 * ht))) / (12 * ht)

    hess = np.zeros((n, n, 2, 2))
    hess[..., 0, 0] = d2(2, 0)
    hess[..., 1, 1] = d2(0, 2)
    mixed = d2(1, 1)
    hess[..., 0, 1] = mixed
    hess[..., 1, 0] = mixed
    return hess, 0.0


def gradient_at(geom: HessianGeometry, s, t):
    """Gradient of the potential (the forward Legendre map) at arbitrary points."""
    pot = geom.potential
    ls, lt = geom.base_period
    if pot.raw_fn is not None:
        h = ls / 256
        fn = pot.raw_fn
        gs = (8 * (fn(s + h, t) - fn(s - h, t)) - (fn(s + 2 * h, t) - fn(s - 2 * h, t))) / (12 * h)
        gt = (8 * (fn(s, t + h) - fn(s, t - h)) - (fn(s, t + 2 * h) - fn(s, t - 2 * h))) / (12 * h)
        return gs, gt
    st = np.stack([np.asarray(s, dtype=float), np.asarray(t, dtype=float)])
    lin = np.einsum("ij,j...->i...", pot.quadratic, st)
    gs, gt = lin[0], lin[1]
    if pot.periodic_fn is not None or pot.periodic_grid is not None:
        grid = pot.periodic_samples(geom.base_resolution)
        gs = gs + _trig_eval(grid, s, t, (ls, lt), ds=1)
        gt = gt + _trig_eval(grid, s, t, (ls, lt), dt=1)
    return gs, gt


def hessian_at(geom: HessianGeometry, s, t):
    pot = geom.potential
    ls, lt = geom.base_period
    if pot.raw_fn is not None:
        return _fd4_hessian_point(pot.raw_fn, s, t, ls / 256)
    h = np.array(pot.quadratic, dtype=float)
    out = np.zeros(np.shape(s) + (2, 2))
    out[...] = h
    if pot.periodic_fn is not None or pot.periodic_grid is not None:
        grid = pot.periodic_samples(geom.base_resolution)
        out[..., 0, 0] += _trig_eval(grid, s, t, (ls, lt), ds=2)
        out[..., 1, 1] += _trig_eval(grid, s, t, (ls, lt), dt=2)
        m = _trig_eval(grid, s, t, (ls, lt), ds=1, dt=1)
        out[..., 0, 1] += m
        out[..., 1, 0] += m
    return out


def _fd4_hessian_point(fn, s, t, h):
    def ds_of(tv):
        return (8 * (fn(s + h, tv) - fn(s - h, tv))
                - (fn(s + 2 * h, tv) - fn(s - 2 * h, tv))) / (12 * h)

    out = np.zeros(np.shape(s) + (2, 2))
    out[..., 0, 0] = (-fn(s + 2 * h, t) + 16 * fn(s + h, t) - 30 * fn(s, t)
                      + 16 * fn(s - h, t) - fn(s - 2 * h, t)) / (12 * h * h)
    out[..., 1, 1] = (-fn(s, t + 2 * h) + 16 * fn(s, t + h) - 30 * fn(s, t)
                      + 16 * fn(s, t - h) - fn(s, t - 2 * h)) / (12 * h * h)
    mixed = (8 * (ds_of(t + h) - ds_of(t - h))
             - (ds_of(t + 2 * h) - ds_of(t - 2 * h))) / (12 * h)
    out[..., 0, 1] = mixed
    out[..., 1, 0] = mixed
    return out


def legendre_forward(geom: HessianGeometry, point):
    """Map a base point (s, t) to the complex affine chart (dh/ds, dh/dt)."""
    s, t = point
    gs, gt = gradient_at(geom, s, t)
    return gs, gt


def legendre_inverse(geom: HessianGeometry, point_check, x0=None, tol=1e-12,
                     max_iters=60):
    """Invert the forward map by Newton iteration with the Hessian as Jacobian."""
    target = np.asarray(point_check, dtype=float)
    x = np.array(target if x0 is None else x0, dtype=float)
    for _ in range(max_iters):
        fs, ft = legendre_forward(geom, (x[0], x[1]))
        r = np.array([fs - target[0], ft - target[1]])
        if np.max(np.abs(r)) < tol:
            break
        jac = hessian_at(geom, x[0], x[1])
        x = x - np.linalg.solve(jac, r)
    return x[0], x[1]


def transformed_potential_value(geom: HessianGeometry, s, t):
    """h_tilde = h - (s*ds_h + t*dt_h), the inverse-transform potential,
    evaluated at the source point (s, t)."""
    gs, gt = gradient_at(geom, s, t)
    return geom.potential.value(s, t) - (s * gs + t * gt), (gs, gt)


@dataclass
class EpsilonStructure:
    """Scales of the rescaled Kahler family: the symplectic form shrinks
    linearly and the fiber metric quadratically in epsilon."""

    epsilon: float
    omega_scale: float
    fiber_J_scale: float
    fiber_volume: float
    total_volume: float
    fiber_period: tuple = (1.0, 1.0)

    def degree_pairing(self, deg_unit: float) -> float:
        """Pairing of a fixed first Chern class with the scaled symplectic form."""
        return deg_unit * self.epsilon


def epsilon_structure(geom: HessianGeometry, epsilon: float,
                      fiber_period=(1.0, 1.0)) -> EpsilonStructure:
    if not (0.0 < epsilon <= 1.0):
        raise InvalidEpsilon(f"epsilon must lie in (0, 1], got {epsilon}")
    fiber_area = fiber_period[0] * fiber_period[1]
    fiber_volume = epsilon ** 2 * fiber_area
    total = geom.base_area * fiber_volume
    return EpsilonStructure(
        epsilon=float(epsilon), omega_scale=float(epsilon),
        fiber_J_scale=1.0 / float(epsilon), fiber_volume=fiber_volume,
        total_volume=total, fiber_period=tuple(fiber_period),
    )


@dataclass
class MirrorFrame:
    """Constant-coefficient tensors of the dual fibration in the fixed charts.

    `omega_check` is the mirror symplectic form in the basis
    (d s_chk, d t_chk, dx*, dy*); `im_volume` is the imaginary part of the
    holomorphic volume form in the basis (ds, dt, dx*, dy*).
    """

    omega_check: np.ndarray
    im_volume: np.ndarray

    def omega_in_symplectic_chart(self, g):
        """Coefficients of the mirror symplectic form in (s, t, x*, y*),
        obtained by substituting d s_chk = g_ss ds + g_st dt etc."""
        out = np.zeros(g.shape[:-2] + (4, 4))
        out[..., 0, 2] = g[..., 0, 0]
        out[..., 1, 2] = g[..., 0, 1]
        out[..., 0, 3] = g[..., 0, 1]
        out[..., 1, 3] = g[..., 1, 1]
        out[..., 2, 0] = -g[..., 0, 0]
        out[..., 2, 1] = -g[..., 0, 1]
        out[..., 3, 0] = -g[..., 0, 1]
        out[..., 3, 1] = -g[..., 1, 1]
        return out


def mirror_frame(geom: HessianGeometry) -> MirrorFrame:
    omega_check = np.zeros((4, 4))
    omega_check[0, 2] = 1.0
    omega_check[2, 0] = -1.0
    omega_check[1, 3] = 1.0
    omega_check[3, 1] = -1.0
    im_volume = np.zeros((4, 4))
    # ds ^ dy* - dt ^ dx* in the (s, t, x*, y*) ordering
    im_volume[0, 3] = 1.0
    im_volume[3, 0] = -1.0
    im_volume[1, 2] = -1.0
    im_volume[2, 1] = 1.0
    return MirrorFrame(omega_check=omega_check, im_volume=im_volume)
