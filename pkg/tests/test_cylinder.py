import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad, quad
from scipy.special import eval_legendre

from polaron import cylinder as cyl
from polaron.anisotropy import from_canonical
from polaron.errors import BadMagic, NotCylindrical, ShapeMismatch, SingularConfiguration, SlowConvergence
from polaron.field import Grid3, gaussian

SIMP = from_canonical("simplified", (0.6, 0.8, 0.8))


def _Y(n, th):
    return np.cos(n * th) / math.sqrt(math.pi) if n else np.full_like(th, 1 / math.sqrt(2 * math.pi))


def _vn_quad(pot, n, r, rp, Z):
    terms = cyl._cyl_terms(pot)

    def f(th):
        return sum(w / math.sqrt(ar**2 * (r * r + rp * rp - 2 * r * rp * math.cos(th)) + az**2 * Z * Z) for w, ar, az in terms) * _Y(n, np.array(th))

    return 2 * quad(f, 0, math.pi, epsabs=1e-14, epsrel=1e-12, limit=400)[0]


def test_beta_examples():
    assert cyl.beta(0, 0) == pytest.approx(math.sqrt(2 * math.pi))
    assert cyl.beta(2, 1) == 0.0
    assert cyl.beta(3, 2) == 0.0 and cyl.beta(-1, 3) == 0.0
    assert cyl.beta(1, 1) == pytest.approx(math.sqrt(math.pi))
    T = cyl.beta_table(6, 30)
    for n in range(7):
        for k in range(31):
            assert T[n, k] == pytest.approx(cyl.beta(n, k), rel=1e-12, abs=0)


@given(st.integers(0, 25), st.floats(0, math.pi))
def test_beta_resums_to_legendre(k, th):
    # (1 - 2 t cos th + t^2)^-1/2 = sum_k P_k(cos th) t^k
    s = sum(cyl.beta(n, k) * float(_Y(n, np.array(th))) for n in range(k + 1))
    assert s == pytest.approx(eval_legendre(k, math.cos(th)), abs=1e-12)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("t", [0.0, 0.05, 0.3, 0.69, 0.71, 0.9, 0.97])
def test_fourier_coefficients_three_routes(t):
    tab = cyl.coef_table(np.array([t]), 6)[:, 0]
    for n in range(7):
        ref = quad(lambda th: math.cos(n * th) / math.sqrt(1 - 2 * t * math.cos(th) + t * t), 0, math.pi, epsabs=1e-15, epsrel=1e-13, limit=400)[0] / math.pi
        assert cyl.coef_contour(n, t) == pytest.approx(ref, rel=1e-10, abs=1e-14)
        assert tab[n] == pytest.approx(ref, rel=1e-9, abs=1e-14)
        val, tail = cyl.coef_series(n, t)
        assert abs(val - ref) <= max(tail, 1e-14 * ref) + 1e-15


def test_coefficient_guards():
    with pytest.raises(SingularConfiguration):
        cyl.coef_series(0, 1.0)
    with pytest.raises(SlowConvergence):
        cyl.coef_series(0, 0.9995)
    with pytest.raises(SingularConfiguration):
        cyl.coef_table(np.array([1.0]), 2)
    with pytest.raises(SingularConfiguration):
        cyl.vn(SIMP, 0, 1.0, 1.0, 0.0)
    with pytest.raises(SingularConfiguration):
        cyl.vn(SIMP, 0, 0.0, 1.0, 0.5)
    with pytest.raises(NotCylindrical):
        cyl.vn(from_canonical("full", (0.9, 0.7, 0.3)), 0, 1.0, 2.0, 0.5)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@given(st.integers(0, 5), st.floats(0.05, 3), st.floats(0.05, 3), st.floats(-3, 3))
@settings(max_examples=25)
def test_vn_against_direct_quadrature(n, r, rp, Z):
    if abs(r - rp) < 1e-2 and abs(Z) < 1e-2:
        return
    for pot in (SIMP, from_canonical("full", (0.6, 0.6, 0.4))):
        ref = _vn_quad(pot, n, r, rp, Z)
        got = cyl.vn(pot, n, r, rp, Z)
        assert got == pytest.approx(ref, rel=1e-8, abs=1e-12)
        assert cyl.vn(pot, n, rp, r, -Z) == pytest.approx(got, rel=1e-12, abs=1e-15)
        s = cyl.vn_series(pot, n, r, rp, Z)
        if s["t"] < cyl.SLOW_T:
            assert abs(s["value"] - got) <= s["tail"] + 1e-12 * abs(got) + 1e-15


def test_generating_sum():
    for t in (0.1, 0.5, 0.9):
        for th in (0.0, 1.0, 2.5):
            got, _ = cyl.generating_sum(t, th)
            assert got == pytest.approx((1 - 2 * t * math.cos(th) + t * t) ** -0.5, abs=1e-12)


def test_tn_routes():
    for n in (2, 3, 5):
        c = cyl.Tn_check(n, 1.3, 0.7)
        g = cyl.Tn_check(n, 1.3, 0.7, "gauss")
        tr = cyl.Tn_check(n, 1.3, 0.7, "trapezoid", npts=2000)
        assert c == pytest.approx(g, rel=1e-10)
        assert c == pytest.approx(tr, rel=1e-10)
        assert c < 0
    assert cyl.Tn_check(1, 1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        cyl.Tn_check(2, 0.0, 1.0)


def test_heat_kernel_closed_form():
    # n = 0 carries all of the 3D heat kernel, so it has unit mass
    t = 0.3
    f = lambda zp, rp: rp * cyl.heat_kernel_n(0, t, (0.7, 0.2), (rp, zp))
    mass = dblquad(f, 0, 8, -8, 8, epsabs=1e-12, epsrel=1e-10)[0]
    assert mass == pytest.approx(1.0, rel=1e-8)
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(0, 6))
        x = (rng.uniform(0.01, 4), rng.uniform(-4, 4))
        y = (rng.uniform(0.01, 4), rng.uniform(-4, 4))
        k = cyl.heat_kernel_n(n, t, x, y)
        assert k >= 0
        assert cyl.heat_kernel_n(n, t, y, x) == pytest.approx(k, rel=1e-13, abs=1e-300)
    with pytest.raises(ValueError):
        cyl.heat_kernel_n(0, 0.0, (1, 0), (1, 0))


def test_heat_kernel_against_matrix_exponential():
    g = cyl.CylGrid(40, 40, 3.0, 3.0)
    for n in (0, 2):
        out = cyl.heat_kernel_check(n, 0.1, g)
        assert out["rel_error"] < 2e-2


def test_reduced_laplacian():
    g = cyl.CylGrid(40, 40, 8.0, 8.0)
    w = g.weights()
    for n in (0, 1, 3):
        A = cyl.laplacian_n(g, n)
        S = np.sqrt(w)[:, None] * A / np.sqrt(w)[None, :]
        assert np.abs(S - S.T).max() < 1e-12 * np.abs(S).max()
        assert np.linalg.eigvalsh(0.5 * (S + S.T)).min() > 0
    # -Delta_(0) exp(-r^2 - z^2) = (6 - 4 r^2 - 4 z^2) exp(-r^2 - z^2)
    errs = []
    for m in (40, 80):
        g = cyl.CylGrid(m, m, 8.0, 8.0)
        R, Z = np.meshgrid(g.r, g.z_half, indexing="ij")
        f = np.exp(-R**2 - Z**2)
        got = (cyl.laplacian_n(g, 0) @ f.ravel()).reshape(f.shape)
        errs.append(np.abs(got - (6 - 4 * R**2 - 4 * Z**2) * f).max())
    assert errs[0] / errs[1] > 3.3  # second order (first order would give 2)


def test_kernel_tables_match_pointwise_coefficients():
    g = cyl.CylGrid(8, 8, 3.0, 3.0)
    tabs = cyl.kernel_tables(SIMP, g, 3)
    r = g.r
    for n, tab in enumerate(tabs):
        scale = math.sqrt(2 * math.pi) if n == 0 else math.sqrt(math.pi)
        for i, j, k in ((0, 3, 0), (2, 5, 1), (4, 4, 2), (7, 1, -3)):
            ref = scale * cyl.vn(SIMP, n, r[i], r[j], k * g.hz)
            assert tab.at(k)[i, j] == pytest.approx(ref, rel=1e-10)


def test_vntable_round_trip(tmp_path):
    g = cyl.CylGrid(6, 4, 2.0, 1.5)
    tab = cyl.kernel_tables(SIMP, g, 1)[1]
    p = tmp_path / "v.cvnt"
    cyl.save_vntable(tab, p)
    back = cyl.load_vntable(p)
    assert back.n == 1 and back.grid == g and np.array_equal(back.values, tab.values)
    raw = p.read_bytes()
    (tmp_path / "a.cvnt").write_bytes(b"XXXXXXX" + raw[7:])
    with pytest.raises(BadMagic):
        cyl.load_vntable(tmp_path / "a.cvnt")
    (tmp_path / "b.cvnt").write_bytes(raw[:-8])
    with pytest.raises(ShapeMismatch):
        cyl.load_vntable(tmp_path / "b.cvnt")


def test_setup_needs_simplified_model():
    g = Grid3(16, 6.0)
    with pytest.raises(NotCylindrical):
        cyl.cyl_setup(from_canonical("full", (0.6, 0.6, 0.4)), gaussian(g, 1.0))
    with pytest.raises(NotCylindrical):
        cyl.cyl_setup(SIMP, gaussian(g, (1.0, 0.7, 1.3)), cyl.CylGrid(8, 8, 4.0, 4.0))
