"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
with its runtime (run with `pytest tests/test_acceptance.py -v -s`)."""
import time

import numpy as np
import pytest

import semiflat.adiabatic as ad
import semiflat.hym_solver as hs
import semiflat.mirror_lagrangian as ml
import semiflat.seeds as seeds
from semiflat import fiber_gauge as fg
from semiflat import spectral
from semiflat.config import (CALIBRATED_GAUGE_DISPLACEMENT,
                             CALIBRATED_UNITARY_RATIO)
from semiflat.geometry import (Potential, legendre_forward, legendre_inverse,
                               metric_from_potential)
from semiflat.matrices import expm2, fro_norm, random_hermitian_sl2

FLOW_TOL = 1e-6


class Criterion:
    def __init__(self, number, description, limit_s):
        self.number = number
        self.description = description
        self.limit_s = limit_s
        self.t0 = time.perf_counter()

    def finish(self, passed=True):
        dt = time.perf_counter() - self.t0
        tag = "PASS" if passed and dt < self.limit_s else "FAIL"
        print(f"criterion {self.number:02d} {tag} ({dt:5.1f}s / "
              f"limit {self.limit_s:.0f}s): {self.description}")
        assert passed, f"criterion {self.number} failed"
        assert dt < self.limit_s, (
            f"criterion {self.number} exceeded its runtime limit "
            f"({dt:.1f}s > {self.limit_s}s)")


@pytest.fixture(scope="module")
def winding_family():
    """The shrinking-fiber run shared by criteria 7, 8 and 11."""
    rng = np.random.default_rng(42)
    seed = seeds.abelian_winding_seed(16, 16, epsilon=1.0, winding=(1, -1),
                                      amplitude=1e-2, fiber_band=(2, 3),
                                      base_band=2, rng=rng)
    t0 = time.perf_counter()
    report = ad.run_family(seed, [1.0, 0.5, 0.25, 0.125], tol=FLOW_TOL,
                           max_iters=3000)
    return report, time.perf_counter() - t0


def test_criterion_01_calabi_yau():
    c = Criterion(1, "flat potential det g = 1 exactly; perturbed det matches "
                     "the analytic Hessian to 1e-8 at N = 64", 1.0)
    flat = metric_from_potential(Potential.flat(), resolution=64)
    ok = bool(np.all(flat.det_g == 1.0)) and flat.calabi_yau

    amp, n = 0.01, 64
    geom = metric_from_potential(Potential.cosine(amp, modes=(1, 1)), resolution=n)
    s = np.arange(n)[:, None] / n * np.ones((1, n))
    t = np.ones((n, 1)) * np.arange(n)[None, :] / n
    w = 2 * np.pi
    h_ss = 1 - amp * w ** 2 * np.cos(w * s) * np.cos(w * t)
    h_tt = 1 - amp * w ** 2 * np.cos(w * s) * np.cos(w * t)
    h_st = amp * w ** 2 * np.sin(w * s) * np.sin(w * t)
    det_exact = h_ss * h_tt - h_st ** 2
    ok = ok and float(np.max(np.abs(geom.det_g - det_exact))) < 1e-8
    ok = ok and not geom.calabi_yau
    c.finish(ok)


def test_criterion_02_legendre_round_trip():
    c = Criterion(2, "forward-then-inverted coordinate change returns inputs "
                     "to 1e-8 on a strictly convex perturbed potential, N = 128", 5.0)
    geom = metric_from_potential(Potential.cosine(0.01, modes=(1, 1)),
                                 resolution=128)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(40, 2))
    worst = 0.0
    for s, t in pts:
        sc, tc = legendre_forward(geom, (s, t))
        s2, t2 = legendre_inverse(geom, (sc, tc))
        worst = max(worst, abs(s2 - s), abs(t2 - t))
    c.finish(worst < 1e-8)


def test_criterion_03_component_bound_suite():
    c = Criterion(3, "diagonal-component bound chain over 10^4 gauge samples, "
                     "zero violations at delta = 1e-2 and 1e-3", 10.0)
    rng = np.random.default_rng(8)
    violations = 0
    total = 0
    for delta in (1e-2, 1e-3):
        m = 5000
        p_mat = random_hermitian_sl2(rng, (m,), 0.4)
        p = p_mat[:, 0, 0].real
        q = p_mat[:, 0, 1]
        r = p_mat[:, 1, 1].real
        b_unit = np.zeros((m, 2, 2), dtype=complex)
        b_unit[:, 0, 0] = p * r + np.abs(q) ** 2
        b_unit[:, 0, 1] = 2 * q * r
        b_unit[:, 1, 0] = -2 * np.conj(q) * p
        b_unit[:, 1, 1] = -(p * r + np.abs(q) ** 2)
        cc = b_unit @ np.conj(np.swapaxes(b_unit, -1, -2)) \
            - np.conj(np.swapaxes(b_unit, -1, -2)) @ b_unit
        scale = np.abs(cc).reshape(m, 4).max(axis=1)
        a = rng.uniform(0.05, 1.0, m) * delta / np.sqrt(np.maximum(scale, 1e-300))
        # every curvature component is now at most delta^2
        assert np.all(np.abs(a[:, None, None] ** 2 * cc) <= delta ** 2 * (1 + 1e-12))
        bound1 = np.abs(a * (p * r + np.abs(q) ** 2 - 1)) < np.sqrt(delta)
        bound2 = np.abs(a * q * r) < np.sqrt(2 * delta)
        bound3 = np.abs(a * q * p) < np.sqrt(2 * delta)
        violations += int(np.sum(~bound1) + np.sum(~bound2) + np.sum(~bound3))
        total += m
    c.finish(violations == 0 and total >= 10000)


def test_criterion_04_unitary_normalization_bound():
    c = Criterion(4, "unitary gauge achieves |h*A - A0| <= C_cal sqrt(sup|F|) "
                     "in 500/500 trials at N = 32", 120.0)
    rng = np.random.default_rng(99)
    n, failures, worst = 32, 0, 0.0
    for k in range(500):
        rad = rng.uniform(0.2, 1.3)
        a0 = rad * np.exp(1j * rng.uniform(0, np.pi / 2))
        if k % 2 == 0:
            pm = random_hermitian_sl2(rng, (), rng.uniform(0.01, 0.1))
            g = np.broadcast_to(pm, (n, n, 2, 2)).copy()
        else:
            v = np.zeros((n, n, 2, 2), dtype=complex)
            for idx in [(0, 0), (0, 1), (1, 0)]:
                f = spectral.band_limited_field(rng, (n, n), (0, 1), 2, 2e-3)
                f -= f.mean()
                v[..., idx[0], idx[1]] = f
            v[..., 1, 1] = -v[..., 0, 0]
            g = expm2(v)
        base = fg.FiberConnection.from_moduli(a0, n)
        conn = fg.complex_gauge_apply(g, base)
        try:
            res = fg.flatten_to_t(conn, seed=a0, flatten_energy_max=np.inf)
            _, ratio, _ = fg.unitary_normalize(conn, res, delta0=np.inf)
        except Exception:
            failures += 1
            continue
        worst = max(worst, ratio)
        if ratio > CALIBRATED_UNITARY_RATIO:
            failures += 1
    print(f"  [criterion 4] worst ratio {worst:.3f} vs bound "
          f"{CALIBRATED_UNITARY_RATIO}")
    c.finish(failures == 0)


def test_criterion_05_gauge_invariances():
    c = Criterion(5, "curvature norms, energies, flat classes and sections "
                     "invariant under unitary gauges and lattice shifts", 60.0)
    rng = np.random.default_rng(11)
    ok = True

    # fiber curvature norm under 50 resolved unitary gauges (1e-11)
    base = fg.FiberConnection.from_moduli(0.5 + 0.3j, 32)
    v = np.zeros((32, 32, 2, 2), dtype=complex)
    for idx in [(0, 0), (0, 1), (1, 0)]:
        f = spectral.band_limited_field(rng, (32, 32), (0, 1), 2, 1e-3)
        v[..., idx[0], idx[1]] = f - f.mean()
    v[..., 1, 1] = -v[..., 0, 0]
    conn = fg.complex_gauge_apply(expm2(v), base)
    n0 = fro_norm(fg.fiber_curvature(conn))
    for _ in range(50):
        u = np.zeros((32, 32, 2, 2), dtype=complex)
        for idx in [(0, 0), (0, 1), (1, 0)]:
            f = spectral.band_limited_field(rng, (32, 32), (0, 1), 2, 0.02)
            u[..., idx[0], idx[1]] = f
        u = 0.5 * (u - np.conj(np.swapaxes(u, -1, -2)))
        u[..., 1, 1] = -u[..., 0, 0]
        moved = fg.complex_gauge_apply(expm2(u), conn)
        ok &= float(np.max(np.abs(fro_norm(fg.fiber_curvature(moved)) - n0))) < 1e-11

    # flat classes under 50 unitary gauges (1e-9)
    p0 = fg.flatten_to_t(conn, flatten_energy_max=np.inf).point
    for _ in range(50):
        u = np.zeros((32, 32, 2, 2), dtype=complex)
        for idx in [(0, 0), (0, 1), (1, 0)]:
            f = spectral.band_limited_field(rng, (32, 32), (0, 1), 2, 0.01)
            u[..., idx[0], idx[1]] = f
        u = 0.5 * (u - np.conj(np.swapaxes(u, -1, -2)))
        u[..., 1, 1] = -u[..., 0, 0]
        moved = fg.complex_gauge_apply(expm2(u), conn)
        ok &= fg.flatten_to_t(moved, flatten_energy_max=np.inf).point.distance_to(p0) < 1e-9

    # flat classes and holonomy phases under all lattice shifts (1e-10)
    base2 = fg.FiberConnection.from_moduli(0.3 + 0.4j, 32)
    hx0, hy0 = fg.holonomy_extract(base2)
    for ns in (-1, 0, 1):
        for ms in (-1, 0, 1):
            moved = fg.lattice_gauge_shift(base2, ns, ms)
            ok &= fg.flatten_to_t(moved).point.distance_to(0.3 + 0.4j) < 1e-10
            hx, hy = fg.holonomy_extract(moved)
            ok &= np.allclose(fg.eigenphases(hx), fg.eigenphases(hx0), atol=1e-10)
            ok &= np.allclose(fg.eigenphases(hy), fg.eigenphases(hy0), atol=1e-10)

    # 4D energies and residual norms under 25 unitary gauge fields (1e-10)
    conn4 = seeds.perturbed_seed(8, 8, epsilon=0.7, amplitude=2e-3,
                                 rng=rng, a0=0.5 + 0.2j)
    e0 = hs.ym_energy(conn4)
    r0 = hs.hym_residual(conn4)
    for _ in range(25):
        u = np.zeros(conn4.ax.shape, dtype=complex)
        for i in range(2):
            for j in range(2):
                u[..., i, j] = spectral.band_limited_field(
                    rng, conn4.ax.shape[:4], (0, 1, 2, 3), 1, 0.02)
        u = 0.5 * (u - np.conj(np.swapaxes(u, -1, -2)))
        g4 = expm2(u)
        moved = hs.gauge_transform_4d(conn4, g4)
        em = hs.ym_energy(moved)
        rm = hs.hym_residual(moved)
        ok &= abs(em["total"] - e0["total"]) < 1e-10
        ok &= abs(rm.fiber_l2 - r0.fiber_l2) < 1e-10
        ok &= abs(rm.mix_l2 - r0.mix_l2) < 1e-10

    # extracted sections under fiberwise lattice shifts (modulo relabeling)
    flat4 = seeds.flat_seed(8, 8, epsilon=0.5, a0=0.4 + 0.25j)
    phi0 = ad.phi_extract(flat4)
    sec0 = ml.from_connection(flat4, phi0)
    shifted = flat4.copy()
    for i in range(8):
        for j in range(8):
            fib = fg.FiberConnection(flat4.ax[i, j], flat4.ay[i, j])
            moved = fg.lattice_gauge_shift(fib, 1, 0)
            shifted.ax[i, j] = moved.ax
            shifted.ay[i, j] = moved.ay
    sec1 = ml.from_connection(shifted, ad.phi_extract(shifted))
    d = (sec0.branches[0].a - sec1.branches[0].a) / (2 * np.pi)
    ok &= float(np.abs(d - np.round(d)).max()) < 1e-9
    c.finish(bool(ok))


def test_criterion_06_flow_correctness():
    c = Criterion(6, "analytic gradient matches finite differences to 1e-6 in "
                     "20 directions at N = 8^4; energy monotone along steps", 60.0)
    rng = np.random.default_rng(12)
    conn = seeds.perturbed_seed(8, 8, epsilon=0.7, amplitude=5e-3, rng=rng)
    grads = hs.flow_gradient(conn, c0=0.05)
    ok = True
    for _ in range(20):
        dirs = []
        for _ in range(4):
            m = np.zeros(conn.ax.shape, dtype=complex)
            for i in range(2):
                for j in range(2):
                    m[..., i, j] = spectral.band_limited_field(
                        rng, conn.ax.shape[:4], (0, 1, 2, 3), 2, 1.0)
            m = 0.5 * (m - np.conj(np.swapaxes(m, -1, -2)))
            dirs.append(m)
        tau = 1e-6
        ep = hs.flow_energy(conn.with_fields(
            *[f + tau * d for f, d in zip(conn.fields(), dirs)]), 0.05)
        em = hs.flow_energy(conn.with_fields(
            *[f - tau * d for f, d in zip(conn.fields(), dirs)]), 0.05)
        fd = (ep - em) / (2 * tau)
        an = sum(float(np.sum((np.conj(g) * d).real)) for g, d in zip(grads, dirs))
        ok &= abs(fd - an) <= 1e-6 * max(abs(fd), abs(an))

    flow = hs.flow_solve(seeds.abelian_winding_seed(8, 8, epsilon=0.5,
                                                    amplitude=5e-3,
                                                    fiber_band=(1, 2),
                                                    base_band=1,
                                                    rng=rng),
                         tol=1e-7, max_iters=2000, raise_on_fail=False)
    et = np.array(flow.energy_trace)
    ok &= bool(np.all(np.diff(et) <= 1e-15))
    c.finish(bool(ok))


def test_criterion_07_adiabatic_flatness_trend(winding_family):
    c = Criterion(7, "sup-fiber |F_A| decreases with per-halving ratio in "
                     "[2, 8]; section residual <= 1e-3 at the smallest scale", 600.0)
    report, family_time = winding_family
    c.t0 = time.perf_counter() - family_time  # charge the shared run here
    sups = report.sup_fiber_trace
    ok = all(e.converged for e in report.entries)
    for a, b in zip(sups, sups[1:]):
        ok &= 2.0 <= a / b <= 8.0
    phi = report.entries[-1].phi
    ok &= phi is not None and phi.holo_residual_sup <= 1e-3
    ok &= phi.masked_fraction == 0.0
    print(f"  [criterion 7] sup|F_A| trace: "
          + " ".join(f"{x:.2e}" for x in sups))
    c.finish(bool(ok))


def test_criterion_08_mirror_consistency(winding_family):
    c = Criterion(8, "extracted multisection matches the limit-equation branch "
                     "to 1e-3; Lagrangian and special residuals <= 1e-3", 60.0)
    report, _ = winding_family
    last = report.entries[-1]
    sec = ml.from_connection(last.connection, last.phi)
    br = max(sec.branches, key=lambda b: b.winding_a[0])
    assert br.winding_a == (1, 0) and br.winding_b == (0, -1)
    pa, pb = br.periodic_parts(sec.base_period)
    ref = ml.limit_solve(np.eye(2), c0=0.0, winding_a=br.winding_a,
                         winding_b=br.winding_b, resolution=16,
                         constants=(float(pa.mean()), float(pb.mean())))
    ok_mask = ~sec.masked
    da = float(np.abs(br.a - ref.branches[0].a)[ok_mask].max())
    db = float(np.abs(br.b - ref.branches[0].b)[ok_mask].max())
    lag_fields, agree = ml.lagrangian_residual(sec, np.eye(2))
    lag = max(float(np.abs(f[ok_mask]).max()) for f in lag_fields)
    sp = ml.special_residual(sec, np.eye(2))
    spv = max(float(np.abs(f[ok_mask]).max()) for f in sp.fields)
    print(f"  [criterion 8] section distance {max(da, db):.2e}, "
          f"lagrangian {lag:.2e}, special {spv:.2e}")
    c.finish(da <= 1e-3 and db <= 1e-3 and lag <= 1e-3 and spv <= 1e-3
             and agree < 1e-12)


def test_criterion_09_lagrangian_identity():
    c = Criterion(9, "limit solutions satisfy the graph-Lagrangian identity "
                     "across 20 random unit-determinant configurations", 30.0)
    rng = np.random.default_rng(55)
    solver_tol = 1e-10
    ok = True
    for k in range(20):
        kind = k % 3
        if kind == 0:
            # diagonal metric, independent windings, c0 from the flux
            d = np.exp(rng.uniform(-0.4, 0.4))
            g = np.diag([d, 1.0 / d])
            wa = (int(rng.integers(-2, 3)), 0)
            wb = (0, int(rng.integers(-2, 3)))
            c0 = 2 * np.pi * (wa[0] + wb[1])
        elif kind == 1:
            # full metric with the symmetric winding family
            l = np.array([[np.exp(rng.uniform(-0.3, 0.3)), 0],
                          [rng.uniform(-0.4, 0.4), 1.0]])
            g = l @ l.T
            g = g / np.sqrt(np.linalg.det(g))
            w = int(rng.integers(-2, 3))
            wa, wb, c0 = (w, 0), (0, w), 4 * np.pi * w
        else:
            # zero winding with band-limited forcing
            l = np.array([[np.exp(rng.uniform(-0.3, 0.3)), 0],
                          [rng.uniform(-0.4, 0.4), 1.0]])
            g = l @ l.T
            g = g / np.sqrt(np.linalg.det(g))
            wa, wb, c0 = (0, 0), (0, 0), 0.0
        sec = ml.limit_solve(g, c0=c0, winding_a=wa, winding_b=wb,
                             resolution=32)
        (e1, e2), = ml.limit_residual(sec, g)
        ok &= float(np.abs(e1).max()) <= solver_tol
        ok &= float(np.abs(e2).max()) <= solver_tol
        fields, agree = ml.lagrangian_residual(sec, g)
        ok &= max(float(np.abs(f).max()) for f in fields) <= solver_tol
        ok &= agree <= 1e-12
        if c0 == 0.0:
            sp = ml.special_residual(sec, g)
            ok &= sp.sup() <= solver_tol
    c.finish(bool(ok))


def test_criterion_10_bubble_detection():
    c = Criterion(10, "constructed concentration corpora produce exactly the "
                      "designed flags and type tags; empty corpus stays empty", 120.0)
    eps_list = [1.0, 0.5, 0.25, 0.125]
    ok = True
    for kind, builder in {
        "type1": lambda e: seeds.abelian_lump_seed(8, 8, epsilon=e,
                                                   amplitude=0.5 / e,
                                                   base_width=0.2 * e),
        "type2": lambda e: seeds.abelian_lump_seed(8, 8, epsilon=e,
                                                   amplitude=0.5,
                                                   base_width=0.12),
        "type3": lambda e: seeds.abelian_lump_seed(8, 8, epsilon=e,
                                                   amplitude=0.5 * np.sqrt(e),
                                                   base_width=0.12),
    }.items():
        conns = [builder(e) for e in eps_list]
        tags = ad.bubble_classify([ad.concentration_statistic(x) for x in conns],
                                  eps_list)
        ok &= tags[4, 4] == kind
        ok &= tags[0, 0] == "none"
        # exactly the designed cells: flags cluster at the lump
        mu = ad.base_measure(conns[-1], 8)
        flags = ad.singular_set(mu, delta_eta=0.1 * mu.max())
        ii, jj = np.nonzero(flags)
        ok &= flags.any() and np.all(np.abs(ii - 4) <= 1) and np.all(np.abs(jj - 4) <= 1)
    empty = ad.singular_set(np.zeros((8, 8)), delta_eta=1e-3)
    ok &= not empty.any()
    flat = seeds.flat_seed(8, 8, a0=0.8 + 0.8j)
    rep = ad.run_family(flat, [1.0, 0.5], tol=1e-10, max_iters=50)
    ok &= not rep.flagged_cells.any() and (rep.bubble_tags == "none").all()
    c.finish(bool(ok))


def test_criterion_11_flat_bundle(winding_family):
    c = Criterion(11, "the transported frame is flat on the section: "
                      "curl residual <= 10 x flow tolerance", 10.0)
    report, _ = winding_family
    last = report.entries[-1]
    out = ml.flat_bundle_residual(last.connection)
    print(f"  [criterion 11] flat-bundle residual {out['sup']:.2e} "
          f"(bound {10 * FLOW_TOL:.1e})")
    c.finish(out["sup"] <= 10 * FLOW_TOL)


def test_calibrated_displacement_bound_holds():
    # fresh samples must respect half the calibrated displacement constant
    rng = np.random.default_rng(123)
    from semiflat.calibrate import sweep_gauge_displacement
    ratios = sweep_gauge_displacement(rng, samples=200, n=16)
    assert ratios.min() >= CALIBRATED_GAUGE_DISPLACEMENT / 2
