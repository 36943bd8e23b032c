import numpy as np
import pytest

from semiflat import geometry
from semiflat.errors import InvalidEpsilon, NonPositiveDefinite, ResolutionTooLow
from semiflat.geometry import (
    Potential,
    epsilon_structure,
    legendre_forward,
    legendre_inverse,
    metric_from_potential,
    mirror_frame,
)


def analytic_hessian_cosine(amp, k, l, s, t, periods=(1.0, 1.0)):
    """Hand-evaluated Hessian of h = (s^2+t^2)/2 + amp cos(2pi k s)cos(2pi l t)."""
    ws = 2 * np.pi * k / periods[0]
    wt = 2 * np.pi * l / periods[1]
    cs, ss = np.cos(ws * s), np.sin(ws * s)
    ct, st = np.cos(wt * t), np.sin(wt * t)
    h = np.zeros(np.shape(s) + (2, 2))
    h[..., 0, 0] = 1.0 - amp * ws ** 2 * cs * ct
    h[..., 1, 1] = 1.0 - amp * wt ** 2 * cs * ct
    h[..., 0, 1] = amp * ws * wt * ss * st
    h[..., 1, 0] = h[..., 0, 1]
    return h


def test_flat_potential_gives_identity_metric():
    geom = metric_from_potential(Potential.flat(), resolution=16)
    assert np.allclose(geom.g, np.eye(2), atol=0)
    assert np.all(geom.det_g == 1.0)
    assert geom.calabi_yau


def test_resolution_floor():
    with pytest.raises(ResolutionTooLow):
        metric_from_potential(Potential.flat(), resolution=7)


def test_cy_flag_rejects_cosine_perturbation():
    geom = metric_from_potential(Potential.cosine(0.01, modes=(1, 0)), resolution=32)
    assert not geom.calabi_yau
    assert np.max(np.abs(geom.det_g - 1)) > 1e-3


def test_det_matches_analytic_hessian():
    amp, k, l, n = 0.01, 1, 1, 64
    geom = metric_from_potential(Potential.cosine(amp, modes=(k, l)), resolution=n)
    s = np.add.outer(np.arange(n) / n, np.zeros(n))
    t = np.add.outer(np.zeros(n), np.arange(n) / n)
    h = analytic_hessian_cosine(amp, k, l, s, t)
    det_exact = h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] ** 2
    assert np.max(np.abs(geom.det_g - det_exact)) < 1e-8


def test_callable_potential_matches_split_form():
    amp = 0.01

    def raw(s, t):
        return 0.5 * (s ** 2 + t ** 2) + amp * np.cos(2 * np.pi * s) * np.cos(2 * np.pi * t)

    g_raw = metric_from_potential(raw, resolution=32)
    g_split = metric_from_potential(Potential.cosine(amp), resolution=32)
    assert np.max(np.abs(g_raw.g - g_split.g)) < 1e-8


def test_metric_positive_definiteness_guard():
    # at amplitude 0.05 the pure s-cosine term already makes the Hessian indefinite
    with pytest.raises(NonPositiveDefinite):
        metric_from_potential(Potential.cosine(0.05, modes=(1, 0)), resolution=32)


def test_inverse_and_symmetry_invariants():
    geom = metric_from_potential(Potential.cosine(0.01), resolution=32)
    prod = geom.g_inv @ geom.g
    assert np.max(np.abs(prod - np.eye(2))) < 1e-12
    assert np.max(np.abs(geom.g - np.swapaxes(geom.g, -1, -2))) == 0.0
    assert geom.pre_symmetrization_defect < 1e-10


def test_legendre_identity_on_quadratic():
    geom = metric_from_potential(Potential.flat(), resolution=16)
    s, t = 0.3, 0.7
    assert legendre_forward(geom, (s, t)) == pytest.approx((s, t))


def test_inverse_transform_relation():
    # -s = d h_tilde / d s_chk for h_tilde = h - (s*s_chk + t*t_chk): verify by
    # finite differences of h_tilde along the transformed coordinates.
    geom = metric_from_potential(Potential.cosine(0.01), resolution=64)
    s0, t0 = 0.31, 0.12
    sc0, tc0 = legendre_forward(geom, (s0, t0))
    eps = 1e-5

    def h_tilde(sc, tc):
        s, t = legendre_inverse(geom, (sc, tc), x0=(s0, t0))
        return geom.potential.value(s, t) - (s * sc + t * tc)

    d_sc = (h_tilde(sc0 + eps, tc0) - h_tilde(sc0 - eps, tc0)) / (2 * eps)
    d_tc = (h_tilde(sc0, tc0 + eps) - h_tilde(sc0, tc0 - eps)) / (2 * eps)
    assert d_sc == pytest.approx(-s0, abs=1e-7)
    assert d_tc == pytest.approx(-t0, abs=1e-7)


def test_legendre_round_trip():
    geom = metric_from_potential(Potential.cosine(0.01), resolution=128)
    rng = np.random.default_rng(7)
    pts = rng.uniform(0, 1, size=(24, 2))
    for s, t in pts:
        sc, tc = legendre_forward(geom, (s, t))
        s2, t2 = legendre_inverse(geom, (sc, tc))
        assert abs(s2 - s) < 1e-8 and abs(t2 - t) < 1e-8


def test_forward_jacobian_is_metric():
    geom = metric_from_potential(Potential.cosine(0.01), resolution=64)
    s, t = 0.22, 0.63
    eps = 1e-6
    j = np.zeros((2, 2))
    for i, d in enumerate([(eps, 0), (0, eps)]):
        fp = legendre_forward(geom, (s + d[0], t + d[1]))
        fm = legendre_forward(geom, (s - d[0], t - d[1]))
        j[:, i] = (np.array(fp) - np.array(fm)) / (2 * eps)
    g_here = geometry.hessian_at(geom, s, t)
    assert np.max(np.abs(j - g_here)) < 1e-5
    assert np.linalg.eigvalsh(g_here).min() > 0


def test_epsilon_structure_scales():
    geom = metric_from_potential(Potential.flat(), resolution=16)
    e1 = epsilon_structure(geom, 1.0)
    assert e1.omega_scale == 1.0 and e1.fiber_J_scale == 1.0
    for eps in (0.5, 0.25, 0.125):
        ee = epsilon_structure(geom, eps)
        assert ee.total_volume / e1.total_volume == pytest.approx(eps ** 2, rel=1e-12)
        assert ee.omega_scale == pytest.approx(eps)
        assert ee.fiber_J_scale == pytest.approx(1.0 / eps)
    with pytest.raises(InvalidEpsilon):
        epsilon_structure(geom, 0.0)
    with pytest.raises(InvalidEpsilon):
        epsilon_structure(geom, -0.5)


def test_mirror_frame_darboux_normal_form():
    geom = metric_from_potential(Potential.flat(), resolution=16)
    fr = mirror_frame(geom)
    assert fr.omega_check[0, 2] == 1.0  # omega(d_schk, d_x*) = 1
    assert fr.omega_check[0, 3] == 0.0
    assert np.allclose(fr.omega_check, -fr.omega_check.T)
    # Im(dz1 ^ dz2) = ds ^ dy* - dt ^ dx*
    assert fr.im_volume[0, 3] == 1.0 and fr.im_volume[1, 2] == -1.0


def test_mirror_pairing_matches_direct_contraction():
    # tangent frames of a section graph paired with the mirror form, once via
    # the closed-form coefficient pattern and once via raw 4-vector contraction
    geom = metric_from_potential(Potential.cosine(0.01), resolution=32)
    fr = mirror_frame(geom)
    rng = np.random.default_rng(3)
    n = geom.base_resolution
    da_ds, da_dt = rng.standard_normal((2, n, n))
    db_ds, db_dt = rng.standard_normal((2, n, n))
    gi = geom.g_inv

    # path 1: the derived coefficient pattern
    lag1 = (gi[..., 0, 1] * da_ds + gi[..., 1, 1] * da_dt
            - gi[..., 0, 0] * db_ds - gi[..., 0, 1] * db_dt)

    # path 2: contraction of the tangent vectors with omega_check in the
    # (s, t, x*, y*) chart
    omega_chart = fr.omega_in_symplectic_chart(geom.g)
    d_schk = np.stack([gi[..., 0, 0], gi[..., 0, 1]], axis=-1)
    d_tchk = np.stack([gi[..., 0, 1], gi[..., 1, 1]], axis=-1)
    da_dschk = d_schk[..., 0] * da_ds + d_schk[..., 1] * da_dt
    db_dschk = d_schk[..., 0] * db_ds + d_schk[..., 1] * db_dt
    da_dtchk = d_tchk[..., 0] * da_ds + d_tchk[..., 1] * da_dt
    db_dtchk = d_tchk[..., 0] * db_ds + d_tchk[..., 1] * db_dt
    l1 = np.stack([d_schk[..., 0], d_schk[..., 1], da_dschk, db_dschk], axis=-1)
    l2 = np.stack([d_tchk[..., 0], d_tchk[..., 1], da_dtchk, db_dtchk], axis=-1)
    lag2 = np.einsum("...i,...ij,...j->...", l1, omega_chart, l2)

    assert np.max(np.abs(lag1 - lag2)) < 1e-12
