"""Named seed connections for the solver and the shrinking-fiber families."""
from __future__ import annotations

import numpy as np

from . import spectral
from .hym_solver import Connection4D
from .matrices import anti_hermitize


def flat_seed(nb, nf, epsilon=1.0, a0=0j, **kw) -> Connection4D:
    """Fiberwise constant diagonal connection in the class a0; exactly flat
    in the fiber directions with zero mixed curvature."""
    conn = Connection4D.zero(nb, nf, epsilon=epsilon, **kw)
    conn.ax[..., 0, 0] = 2j * a0.imag
    conn.ax[..., 1, 1] = -2j * a0.imag
    conn.ay[..., 0, 0] = -2j * a0.real
    conn.ay[..., 1, 1] = 2j * a0.real
    return conn


def _diagonal_from_scalars(u, v, p, q):
    def mk(w):
        m = np.zeros(w.shape + (2, 2), dtype=complex)
        m[..., 0, 0] = 1j * w
        m[..., 1, 1] = -1j * w
        return m

    return mk(u), mk(v), mk(p), mk(q)


def _gauge_project(fields, periods):
    """Remove the per-mode infinitesimal gauge component from diagonal scalar
    perturbation fields (u, v, p, q) ordered as (A_x, A_y, Phi, Psi)."""
    shape = fields[0].shape
    hats = [np.fft.fftn(f) for f in fields]
    axes_freqs = [np.fft.fftfreq(n, d=1.0 / n) / periods[i]
                  for i, n in enumerate(shape)]
    ks = np.meshgrid(*axes_freqs, indexing="ij")
    # gauge direction lambda: delta(u, v, p, q) = 2 pi i (k_x, k_y, k_s, k_t) lambda
    gdir = [ks[2], ks[3], ks[0], ks[1]]
    g2 = sum(np.abs(g) ** 2 for g in gdir)
    g2 = np.where(g2 == 0, 1.0, g2)
    overlap = sum(np.conj(g) * h for g, h in zip(gdir, hats))
    hats = [h - g * overlap / g2 for g, h in zip(gdir, hats)]
    return [np.fft.ifftn(h).real for h in hats]


def abelian_winding_seed(nb, nf, epsilon=1.0, winding=(1, -1), amplitude=1e-2,
                         fiber_band=(2, 3), base_band=2, rng=None,
                         trace_winding=(0, 0), **kw) -> Connection4D:
    """Diagonal connection whose section winds around the dual torus, plus a
    fiber-frequency perturbation for the flow to relax.

    `winding` = (w_a, w_b): the first diagonal branch of the section moves by
    2 pi w_a along the s-cycle (x-leg) and 2 pi w_b along the t-cycle (y-leg).
    The perturbation lives in fiber modes |k| in `fiber_band` (gauge modes
    projected out) so the relaxation is governed by the stiff fiber block.
    """
    rng = rng or np.random.default_rng(0)
    w_su2 = np.array([[winding[0], 0], [0, winding[1]]], dtype=int)
    w_tr = np.array([[trace_winding[0], 0], [0, trace_winding[1]]], dtype=int)
    conn = Connection4D.zero(nb, nf, epsilon=epsilon, winding_su2=w_su2,
                             winding_trace=w_tr, **kw)
    shape = (nb, nb, nf, nf)
    periods = conn.base_period + conn.fiber_period

    def band_field():
        spec = np.zeros(shape, dtype=complex)
        kb = np.fft.fftfreq(nb, d=1.0 / nb)
        kf = np.fft.fftfreq(nf, d=1.0 / nf)
        mb = np.abs(kb) <= base_band
        kf_abs = np.hypot(np.abs(kf)[:, None], np.abs(kf)[None, :])
        mf = (kf_abs >= fiber_band[0]) & (kf_abs <= fiber_band[1])
        mask = (mb[:, None, None, None] & mb[None, :, None, None]
                & mf[None, None, :, :])
        c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        spec = c * mask
        f = np.fft.ifftn(spec).real
        m = np.abs(f).max()
        return f / m if m > 0 else f

    u, v, p, q = (amplitude * band_field() for _ in range(4))
    u, v, p, q = _gauge_project((u, v, p, q), periods)
    ax, ay, phi, psi = _diagonal_from_scalars(u, v, p, q)
    return conn.with_fields(ax, ay, phi, psi)


def periodic_bump(n, period, center, width):
    """Smooth periodic bump exp(kappa (cos(2 pi (x - c)/L) - 1)), kappa set
    so the Gaussian-limit standard deviation is `width`."""
    x = spectral.grid_coords(n, period)
    kappa = (period / (2 * np.pi * width)) ** 2
    return np.exp(kappa * (np.cos(2 * np.pi * (x - center) / period) - 1.0))


def abelian_lump_seed(nb, nf, epsilon=1.0, center=(0.5, 0.5), base_width=0.08,
                      fiber_mode=2, amplitude=0.5, **kw) -> Connection4D:
    """Localized fiber curvature: F_xy is carried by a single fiber mode
    modulated by a base bump at `center`; sup |F_A| = amplitude * 2 pi k."""
    conn = Connection4D.zero(nb, nf, epsilon=epsilon, **kw)
    ls, lt = conn.base_period
    bump = (periodic_bump(nb, ls, center[0], base_width)[:, None]
            * periodic_bump(nb, lt, center[1], base_width)[None, :])
    x = spectral.grid_coords(nf, conn.fiber_period[0])
    prof = np.sin(2 * np.pi * fiber_mode * x / conn.fiber_period[0])
    field = amplitude / (2 * np.pi * fiber_mode) * \
        bump[:, :, None, None] * prof[None, None, :, None] * np.ones((1, 1, 1, nf))
    ay = np.zeros((nb, nb, nf, nf, 2, 2), dtype=complex)
    ay[..., 0, 0] = 1j * field
    ay[..., 1, 1] = -1j * field
    conn.ay = ay
    return conn


def perturbed_seed(nb, nf, epsilon=1.0, a0=0.45 + 0.3j, amplitude=5e-3,
                   k_max=2, rng=None, **kw) -> Connection4D:
    """Non-abelian: a constant diagonal class plus a small random band-limited
    anti-hermitian perturbation on every leg (zero winding)."""
    rng = rng or np.random.default_rng(0)
    conn = flat_seed(nb, nf, epsilon=epsilon, a0=a0, **kw)
    shape = (nb, nb, nf, nf)
    out = []
    for legfield in conn.fields():
        m = np.zeros(shape + (2, 2), dtype=complex)
        for i in range(2):
            for j in range(2):
                m[..., i, j] = spectral.band_limited_field(
                    rng, shape, (0, 1, 2, 3), k_max, amplitude)
        out.append(legfield + anti_hermitize(m))
    return conn.with_fields(*out)


SEED_BUILDERS = {
    "flat": flat_seed,
    "abelian-winding": abelian_winding_seed,
    "abelian-lump": abelian_lump_seed,
    "perturbed": perturbed_seed,
}
