"""Brute-force calibration of the constants that the analysis leaves
symbolic: the square-root-curvature normalization ratio, the lower bound for
the gauge-action displacement, and the diagonal-component bound suite.

Run via the `calibrate` CLI subcommand; the shipped defaults in `config` were
produced by these sweeps and the acceptance suite checks against them.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import fiber_gauge as fg
from .matrices import expm2, random_hermitian_sl2, sup_norm


@dataclass
class CalibrationResult:
    unitary_ratio_max: float      # max |h*A - A0| / |F_A|^(1/2) observed
    unitary_ratio_recommended: float
    gauge_displacement_min: float  # min |exp(v)*A' - A'| / |v| observed
    gauge_displacement_recommended: float
    samples_constant: int
    samples_field: int
    samples_displacement: int
    violations_bound_suite: int

    def as_dict(self):
        return asdict(self)


def sweep_unitary_ratio_constant(rng, samples=10000, n=16, eta_max=0.1,
                                 a_range=(0.2, 1.3)):
    """Ratio sweep over constant hermitian gauges: A = P * A1 with
    P = exp(eta * hermitian) and real classes a1; the achieved distance after
    the polar-unitary gauge is measured against sqrt(sup |F_A|)."""
    ratios = np.zeros(samples)
    for k in range(samples):
        a1 = rng.uniform(*a_range)
        eta = rng.uniform(0.01, eta_max)
        p = random_hermitian_sl2(rng, (), eta)
        base = fg.FiberConnection.from_moduli(a1, n)
        conn = fg.complex_gauge_apply(np.broadcast_to(p, (n, n, 2, 2)).copy(), base)
        res = fg.flatten_to_t(conn, seed=complex(a1), flatten_energy_max=np.inf)
        _, ratio, _ = fg.unitary_normalize(conn, res, delta0=np.inf)
        ratios[k] = ratio
    return ratios


def sweep_unitary_ratio_field(rng, samples=400, n=16, amplitude=2e-3):
    """Same ratio over non-constant complex gauges built from zero-average
    band-limited generators."""
    from . import spectral

    ratios = []
    for _ in range(samples):
        a1 = rng.uniform(0.2, 1.3)
        v = np.zeros((n, n, 2, 2), dtype=complex)
        for idx in [(0, 0), (0, 1), (1, 0)]:
            f = spectral.band_limited_field(rng, (n, n), (0, 1), 2, amplitude)
            f -= f.mean()
            v[..., idx[0], idx[1]] = f
        v[..., 1, 1] = -v[..., 0, 0]
        base = fg.FiberConnection.from_moduli(a1, n)
        conn = fg.complex_gauge_apply(expm2(v), base)
        try:
            res = fg.flatten_to_t(conn, seed=complex(a1), flatten_energy_max=np.inf)
            _, ratio, _ = fg.unitary_normalize(conn, res, delta0=np.inf)
        except Exception:
            continue
        ratios.append(ratio)
    return np.array(ratios)


def sweep_gauge_displacement(rng, samples=1000, n=16, amplitude=1e-3):
    """Empirical constant in |exp(v)*A' - A'| >= C |v| for zero-average
    generators v and classes A' away from the singular set."""
    from . import spectral

    ratios = np.zeros(samples)
    for k in range(samples):
        a = rng.uniform(0.15, 1.4) + 1j * rng.uniform(0.15, 1.4)
        v = np.zeros((n, n, 2, 2), dtype=complex)
        for idx in [(0, 0), (0, 1), (1, 0)]:
            f = spectral.band_limited_field(rng, (n, n), (0, 1), 2,
                                            amplitude * rng.uniform(0.2, 1.0))
            f -= f.mean()
            v[..., idx[0], idx[1]] = f
        v[..., 1, 1] = -v[..., 0, 0]
        base = fg.FiberConnection.from_moduli(a, n)
        moved = fg.complex_gauge_apply(expm2(v), base)
        num = fg.connection_distance(moved, base)
        den = sup_norm(v)
        ratios[k] = num / den if den > 0 else np.inf
    return ratios


def bound_suite_violations(rng, samples=10000, deltas=(1e-2, 1e-3)):
    """Diagonal-component bound chain for constant hermitian gauges: with all
    curvature components below delta^2,

        |a (p r + |q|^2 - 1)| < sqrt(delta),
        |a q r|, |a q p| < sqrt(2 delta).

    Returns the number of violations over the sampled (P, a1) pairs."""
    violations = 0
    for delta in deltas:
        for _ in range(samples // len(deltas)):
            p_mat = random_hermitian_sl2(rng, (), rng.uniform(0.05, 0.6))
            p = float(p_mat[0, 0].real)
            q = complex(p_mat[0, 1])
            r = float(p_mat[1, 1].real)
            # curvature components scale as a^2: choose a so the largest
            # component of the commutator matrix is at most delta^2
            b_unit = np.array([[(p * r + abs(q) ** 2), 2 * q * r],
                               [-2 * np.conj(q) * p, -(p * r + abs(q) ** 2)]])
            cc = b_unit @ b_unit.conj().T - b_unit.conj().T @ b_unit
            scale = np.abs(cc).max()
            a = rng.uniform(0.1, 1.0) * delta / np.sqrt(max(scale, 1e-300))
            if not (abs(a * (p * r + abs(q) ** 2 - 1)) < np.sqrt(delta)):
                violations += 1
            if not (abs(a * q * r) < np.sqrt(2 * delta)):
                violations += 1
            if not (abs(a * q * p) < np.sqrt(2 * delta)):
                violations += 1
    return violations


def run_calibration(seed=20240801, samples_constant=10000, samples_field=400,
                    samples_displacement=1000) -> CalibrationResult:
    rng = np.random.default_rng(seed)
    r_const = sweep_unitary_ratio_constant(rng, samples_constant)
    r_field = sweep_unitary_ratio_field(rng, samples_field)
    r_all = np.concatenate([r_const, r_field])
    disp = sweep_gauge_displacement(rng, samples_displacement)
    viols = bound_suite_violations(rng, 2000)
    return CalibrationResult(
        unitary_ratio_max=float(r_all.max()),
        unitary_ratio_recommended=float(1.25 * r_all.max()),
        gauge_displacement_min=float(disp.min()),
        gauge_displacement_recommended=float(disp.min()),
        samples_constant=len(r_const),
        samples_field=len(r_field),
        samples_displacement=len(disp),
        violations_bound_suite=int(viols),
    )
