import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semiflat import fiber_gauge as fg
from semiflat import spectral
from semiflat.errors import CurvatureTooLarge, NearNilpotent
from semiflat.matrices import expm2, fro_norm, sup_norm


def random_zero_mean_sl2(rng, n, amplitude, k_max=2):
    """Traceless generator field with zero fiber average in every entry."""
    v = np.zeros((n, n, 2, 2), dtype=complex)
    for idx in [(0, 0), (0, 1), (1, 0)]:
        f = spectral.band_limited_field(rng, (n, n), (0, 1), k_max, amplitude)
        f -= f.mean()
        v[..., idx[0], idx[1]] = f
    v[..., 1, 1] = -v[..., 0, 0]
    return v


def gauge_perturbed_flat(rng, a, n, amplitude=1e-3, k_max=2, target_l2=None):
    base = fg.FiberConnection.from_moduli(a, n)
    v = random_zero_mean_sl2(rng, n, amplitude, k_max)
    conn = fg.complex_gauge_apply(expm2(v), base)
    if target_l2 is not None:
        for _ in range(3):
            l2 = fg.curvature_l2(conn)
            if l2 <= target_l2:
                break
            v *= 0.8 * target_l2 / l2
            conn = fg.complex_gauge_apply(expm2(v), base)
    return conn, v, base


# --- curvature ------------------------------------------------------------

def test_constant_diagonal_is_flat():
    conn = fg.FiberConnection.from_moduli(0.3 + 0.4j, 16)
    assert sup_norm(fg.fiber_curvature(conn)) < 1e-13


def test_constant_gauge_curvature_matches_commutator_formula():
    rng = np.random.default_rng(0)
    p = fg.np.asarray(  # constant hermitian determinant-one matrix
        __import__("semiflat.matrices", fromlist=["random_hermitian_sl2"])
        .random_hermitian_sl2(rng, (), 0.3))
    a1 = 0.7
    base = fg.FiberConnection.from_moduli(a1, 16)
    gfield = np.broadcast_to(p, (16, 16, 2, 2)).copy()
    moved = fg.complex_gauge_apply(gfield, base)
    f = fg.fiber_curvature(moved)
    b = moved.b_matrix()[0, 0]
    expected = fg.constant_curvature_from_b(b)
    assert np.max(np.abs(f - expected)) < 1e-10


def test_two_scheme_curvature_cross_check():
    errs = {}
    for n in (16, 32):
        rng = np.random.default_rng(5)
        ax = 1j * np.zeros((n, n, 2, 2))
        conn = fg.FiberConnection.zero(n)
        v = random_zero_mean_sl2(rng, n, 0.05, k_max=3)
        conn = fg.complex_gauge_apply(expm2(v), conn)
        f_spec = fg.fiber_curvature(conn, scheme="spectral")
        f_fd = fg.fiber_curvature(conn, scheme="fd4")
        errs[n] = sup_norm(f_spec - f_fd)
    # 4th-order scheme: halving h divides the defect by about 2^4
    assert errs[32] < errs[16] / 8.0


# --- gauge actions ----------------------------------------------------------

def test_identity_gauge_is_noop():
    rng = np.random.default_rng(1)
    conn, _, _ = gauge_perturbed_flat(rng, 0.5 + 0.2j, 16)
    g = np.broadcast_to(np.eye(2, dtype=complex), (16, 16, 2, 2)).copy()
    moved = fg.complex_gauge_apply(g, conn)
    assert fg.connection_distance(moved, conn) < 1e-13


def test_unitary_gauge_preserves_pointwise_curvature_norm():
    # smooth unitary field from a band-limited anti-hermitian generator; the
    # grid must resolve the exponential's mode tail for the discrete identity
    rng = np.random.default_rng(2)
    conn, _, _ = gauge_perturbed_flat(rng, 0.4 + 0.1j, 32)
    u = random_zero_mean_sl2(rng, 32, 0.02, k_max=2)
    u = 0.5 * (u - np.conj(np.swapaxes(u, -1, -2)))
    g = expm2(u)
    moved = fg.complex_gauge_apply(g, conn)
    n1 = fro_norm(fg.fiber_curvature(conn))
    n2 = fro_norm(fg.fiber_curvature(moved))
    assert np.max(np.abs(n1 - n2)) < 1e-11


def test_constant_hermitian_gauge_reproduces_component_matrix():
    # P * A1 for P = [[p, q], [qbar, r]] hermitian, det 1, A1 = diag(a, -a):
    # B' = [[a(pr+|q|^2), 2aqr], [-2a qbar p, -a(pr+|q|^2)]]
    rng = np.random.default_rng(3)
    a = 0.9
    q = 0.3 + 0.2j
    p = 1.4
    r = (1.0 + abs(q) ** 2) / p
    pm = np.array([[p, q], [np.conj(q), r]], dtype=complex)
    assert abs(np.linalg.det(pm) - 1.0) < 1e-12
    base = fg.FiberConnection.from_moduli(a, 16)
    moved = fg.complex_gauge_apply(np.broadcast_to(pm, (16, 16, 2, 2)).copy(), base)
    b = moved.b_matrix()
    expected = np.array([
        [a * (p * r + abs(q) ** 2), 2 * a * q * r],
        [-2 * a * np.conj(q) * p, -a * (p * r + abs(q) ** 2)],
    ])
    assert np.max(np.abs(b - expected)) < 1e-11


def test_lattice_shift_identity_and_class_invariance():
    conn = fg.FiberConnection.from_moduli(0.3 + 0.4j, 16)
    same = fg.lattice_gauge_shift(conn, 0, 0)
    assert fg.connection_distance(same, conn) == 0.0
    shifted = fg.lattice_gauge_shift(conn, 1, 0)
    b = shifted.b_matrix()
    # class representative moves by i*pi before reduction
    assert np.max(np.abs(b[..., 0, 0] - (0.3 + 0.4j + 1j * np.pi))) < 1e-10
    p1 = fg.ModuliPoint.reduce(0.3 + 0.4j)
    res = fg.flatten_to_t(shifted)
    assert res.point.distance_to(p1) < 1e-10


# --- holonomy ---------------------------------------------------------------

def test_holonomy_of_zero_connection():
    conn = fg.FiberConnection.zero(16)
    hx, hy = fg.holonomy_extract(conn)
    assert np.max(np.abs(hx - np.eye(2))) < 1e-13
    assert np.max(np.abs(hy - np.eye(2))) < 1e-13


def test_holonomy_eigenphases_of_constant_class():
    a = 0.3 + 0.4j
    conn = fg.FiberConnection.from_moduli(a, 32)
    hx, hy = fg.holonomy_extract(conn)
    ph_x = fg.eigenphases(hx)
    ph_y = fg.eigenphases(hy)
    assert np.allclose(ph_x, sorted([2 * a.imag, -2 * a.imag]), atol=1e-10)
    assert np.allclose(ph_y, sorted([2 * a.real, -2 * a.real]), atol=1e-10)


def test_holonomy_minus_one_at_half_lattice():
    conn = fg.FiberConnection.from_moduli(np.pi / 2, 32)
    _, hy = fg.holonomy_extract(conn)
    assert np.max(np.abs(hy + np.eye(2))) < 1e-10


def test_holonomy_invariant_under_lattice_shifts():
    a = 0.3 + 0.4j
    conn = fg.FiberConnection.from_moduli(a, 32)
    hx0, hy0 = fg.holonomy_extract(conn)
    for ns in (-1, 0, 1):
        for ms in (-1, 0, 1):
            moved = fg.lattice_gauge_shift(conn, ns, ms)
            hx, hy = fg.holonomy_extract(moved)
            assert np.allclose(fg.eigenphases(hx), fg.eigenphases(hx0), atol=1e-10)
            assert np.allclose(fg.eigenphases(hy), fg.eigenphases(hy0), atol=1e-10)


# --- moduli reduction -------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20, allow_nan=False), st.floats(-20, 20, allow_nan=False))
def test_reduction_idempotent_and_in_domain(re, im):
    p = fg.ModuliPoint.reduce(complex(re, im))
    assert 0 <= p.a.real < np.pi and 0 <= p.a.imag < np.pi
    p2 = fg.ModuliPoint.reduce(p.a)
    assert p2.a == p.a
    assert fg.moduli_distance(complex(re, im), p.a) < 1e-9


def test_singular_points_flagged():
    for s in [0.0, np.pi / 2, 1j * np.pi / 2, (1 + 1j) * np.pi / 2]:
        assert fg.ModuliPoint.reduce(s, moduli_tol=1e-8).singular
    assert not fg.ModuliPoint.reduce(0.3 + 0.2j).singular


def test_so3_view_halves_domain():
    p = fg.ModuliPoint.reduce(2.0 + 2.5j)
    v = p.so3_view()
    assert 0 <= v.real < np.pi / 2 and 0 <= v.imag < np.pi / 2


# --- flattening -------------------------------------------------------------

def test_flatten_trivial_on_t():
    conn = fg.FiberConnection.from_moduli(0.4 + 0.2j, 16)
    res = fg.flatten_to_t(conn)
    assert res.residual < 1e-13
    assert res.point.a == pytest.approx(0.4 + 0.2j, abs=1e-12)


def test_flatten_recovers_generator_class():
    rng = np.random.default_rng(11)
    a = 0.4 + 0.2j
    conn, v, base = gauge_perturbed_flat(rng, a, 32, amplitude=2e-3, target_l2=0.02)
    res = fg.flatten_to_t(conn)
    assert abs(res.point.a - a) < 1e-8


def test_flatten_constant_matrix_eigenvalue_bound():
    # constant near-diagonal matrices: eigenvalue stays within 3*C*eps of the
    # diagonal seed whenever the seed dominates the perturbation
    rng = np.random.default_rng(12)
    ceps = 1e-3
    for _ in range(200):
        a0 = rng.uniform(10 * ceps * 1.01, 1.0) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        a, b, c = (rng.uniform(-ceps, ceps, 2) @ np.array([1, 1j]) for _ in range(3))
        bmat = np.zeros((8, 8, 2, 2), dtype=complex)
        bmat[..., 0, 0] = a0 + a
        bmat[..., 0, 1] = b
        bmat[..., 1, 0] = c
        bmat[..., 1, 1] = -(a0 + a)
        conn = fg.FiberConnection.from_b(bmat)
        res = fg.flatten_to_t(conn, seed=complex(a0), flatten_energy_max=np.inf)
        assert abs(res.eigenvalue - a0) < 3 * ceps


def test_flatten_class_invariant_under_extra_gauge():
    rng = np.random.default_rng(13)
    a = 0.5 + 0.3j
    conn, _, _ = gauge_perturbed_flat(rng, a, 32, amplitude=1e-3, target_l2=0.02)
    extra = random_zero_mean_sl2(rng, 32, 2e-4)
    moved = fg.complex_gauge_apply(expm2(extra), conn)
    p1 = fg.flatten_to_t(conn, flatten_energy_max=0.1).point
    p2 = fg.flatten_to_t(moved, flatten_energy_max=0.1).point
    assert p1.distance_to(p2) < 1e-7


def test_flatten_energy_precondition():
    rng = np.random.default_rng(14)
    conn, _, _ = gauge_perturbed_flat(rng, 0.5, 16, amplitude=0.3, k_max=3)
    with pytest.raises(CurvatureTooLarge):
        fg.flatten_to_t(conn, flatten_energy_max=1e-4)


def test_flatten_rejects_nilpotent_class():
    b = np.zeros((16, 16, 2, 2), dtype=complex)
    b[..., 0, 1] = 1.0
    conn = fg.FiberConnection.from_b(b)
    with pytest.raises(NearNilpotent):
        fg.flatten_to_t(conn, flatten_energy_max=np.inf)


# --- unitary normalization --------------------------------------------------

def test_unitary_normalize_trivial():
    conn = fg.FiberConnection.from_moduli(0.7, 16)
    res = fg.flatten_to_t(conn)
    h, ratio, dist = fg.unitary_normalize(conn, res)
    assert ratio == 0.0 and dist < 1e-12


def test_unitary_normalize_sqrt_curvature_scaling():
    # the distance after the unitary gauge scales like sqrt(sup |F|)
    rng = np.random.default_rng(15)
    ratios = []
    for eta in (0.05, 0.1):
        pm = __import__("semiflat.matrices", fromlist=["random_hermitian_sl2"]) \
            .random_hermitian_sl2(rng, (), eta)
        base = fg.FiberConnection.from_moduli(0.8, 16)
        conn = fg.complex_gauge_apply(np.broadcast_to(pm, (16, 16, 2, 2)).copy(), base)
        res = fg.flatten_to_t(conn, flatten_energy_max=np.inf)
        h, ratio, dist = fg.unitary_normalize(conn, res, delta0=10.0)
        ratios.append(ratio)
        assert dist > 0
    assert max(ratios) < 20.0  # bounded ratio; the precise constant is calibrated


# --- classification ---------------------------------------------------------

def test_classify_zero_connection():
    c = fg.semistability_classify(fg.FiberConnection.zero(16))
    assert c.kind == "case1"
    assert c.point.a == 0 and c.point.singular


def test_classify_nilpotent_and_perturbation():
    b = np.zeros((16, 16, 2, 2), dtype=complex)
    b[..., 0, 1] = 1.0
    conn = fg.FiberConnection.from_b(b)
    c = fg.semistability_classify(conn, flatten_energy_max=np.inf)
    assert c.kind == "case2"
    assert c.s_class.a == 0

    rng = np.random.default_rng(16)
    v = random_zero_mean_sl2(rng, 16, 1e-3)
    moved = fg.complex_gauge_apply(expm2(v), conn)
    c2 = fg.semistability_classify(moved, flatten_energy_max=np.inf)
    assert c2.kind == "case2"
    assert c2.s_class.a == c.s_class.a
