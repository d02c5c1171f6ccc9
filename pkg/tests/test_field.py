import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from polaron.anisotropy import from_canonical
from polaron.errors import BadMagic, GridMismatch, GridTooSmall, NegativeInput, ShapeMismatch, VersionMismatch, ZeroMass
from polaron.field import (
    SECTORS,
    Field,
    Grid3,
    center,
    centroid,
    convolve_V,
    discrete_grad_norm2,
    gaussian,
    get_convolver,
    grad_norm2,
    laplacian,
    load_field,
    project_parity,
    resample,
    riesz_J,
    save_field,
    sector_defect,
    steiner_rearrange,
    translate,
    zeros,
)

G32 = Grid3((32, 32, 32), (10.0, 10.0, 10.0))


def _expected_inv_distance(cov):
    # E[1/|y|] for y ~ N(0, diag(cov)), using 1/|y| = 2/sqrt(pi) int exp(-t^2 |y|^2) dt
    f = lambda t: np.prod(1.0 / np.sqrt(1 + 2 * t * t * np.asarray(cov)))
    return 2 / np.sqrt(np.pi) * quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]


def _gaussian_pair_interaction(pot, sig):
    # <rho, V * rho> for rho the normal density with widths sig: the difference
    # of two samples has covariance 2 sig^2, and each Coulomb term rescales it
    total = 0.0
    for w, a in pot.coulomb_terms():
        total += w * _expected_inv_distance(2 * (np.asarray(a) * sig) ** 2)
    return total


def _random_density(seed, grid=G32):
    rng = np.random.default_rng(seed)
    base = gaussian(grid, rng.uniform(0.8, 1.2, 3), center=rng.uniform(-1, 1, 3)).values
    return Field(grid, base**2 * (1 + 0.3 * rng.random(grid.n)))


def test_grid_layout():
    g = Grid3(4, 2.0)
    assert g.n == (4, 4, 4) and g.h == (1.0, 1.0, 1.0)
    assert np.allclose(g.axis(0), [-1.5, -0.5, 0.5, 1.5])
    with pytest.raises(ValueError):
        Grid3(5, 1.0)
    with pytest.raises(ShapeMismatch):
        Field(g, np.zeros((4, 4, 3)))


def test_gaussian_mass_and_gradient():
    g = Grid3(48, 14.0)
    f = gaussian(g, 1.2, mass=2.0)
    assert f.mass == pytest.approx(2.0, rel=1e-14)
    # density width sig: ||grad psi||^2 = 3 / (4 sig^2) per unit mass
    assert grad_norm2(f) == pytest.approx(2.0 * 3 / (4 * 1.2**2), rel=1e-10)
    x = g.coords()
    r2 = sum(c * c for c in x)
    exact = (r2 / (4 * 1.2**4) - 3 / (2 * 1.2**2)) * f.values
    assert np.abs(laplacian(f).values - exact).max() < 1e-9


@pytest.mark.parametrize(
    "model,d,sig",
    [
        ("full", (0.5, 0.5, 0.5), (1.0, 1.0, 1.0)),
        ("full", (0.9, 0.7, 0.3), (1.0, 0.8, 1.3)),
        ("simplified", (0.4, 0.6, 1.0), (0.9, 1.1, 1.0)),
    ],
)
def test_convolution_against_gaussian_closed_form(model, d, sig):
    pot = from_canonical(model, d)
    g = Grid3(48, 12.0)
    rho = gaussian(g, sig) * gaussian(g, sig)
    got = rho.inner(convolve_V(pot, rho))
    assert got == pytest.approx(_gaussian_pair_interaction(pot, np.asarray(sig)), rel=1e-8)


def test_direct_route_converges_at_second_order():
    pot = from_canonical("full", (0.9, 0.7, 0.3))
    exact = _gaussian_pair_interaction(pot, np.full(3, 1.2))
    err = {}
    for n in (24, 48):
        g = Grid3(n, 9.0)
        rho = gaussian(g, 1.2) * gaussian(g, 1.2)
        err[n] = abs(rho.inner(convolve_V(pot, rho, method="direct")) - exact) / exact
        assert abs(rho.inner(convolve_V(pot, rho)) - exact) / exact < 1e-10
    assert 3.0 < err[24] / err[48] < 5.0


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_convolution_is_symmetric(s1, s2):
    pot = from_canonical("simplified", (0.3, 0.6, 0.9))
    f, h = _random_density(s1), _random_density(s2)
    a = f.inner(convolve_V(pot, h))
    b = h.inner(convolve_V(pot, f))
    assert abs(a - b) <= 1e-12 * abs(a)


def test_shell_check():
    pot = from_canonical("full", (0.5, 0.5, 0.5))
    wide = gaussian(G32, 3.0)
    with pytest.raises(GridTooSmall):
        convolve_V(pot, wide * wide)
    other = gaussian(Grid3(16, 8.0), 1.0)
    with pytest.raises(GridMismatch):
        get_convolver(pot, G32)(other * other)
    with pytest.raises(GridMismatch):
        wide.inner(other)


@given(st.integers(0, 10**6))
def test_parity_projectors(seed):
    f = Field(Grid3(8, 1.0), np.random.default_rng(seed).standard_normal((8, 8, 8)))
    parts = [project_parity(f, tau) for tau in SECTORS]
    assert np.allclose(sum(p.values for p in parts), f.values, atol=1e-13)
    for i, p in enumerate(parts):
        assert sector_defect(p, SECTORS[i]) < 1e-14
        assert np.allclose(project_parity(p, SECTORS[i]).values, p.values, atol=1e-14)
        for q in parts[i + 1 :]:
            assert abs(p.inner(q)) < 1e-12


@given(st.integers(0, 10**6), st.sampled_from([0, 1, 2, (0, 1), (1, 2), (0, 2)]))
def test_steiner_rearrangement(seed, direction):
    f = _random_density(seed)
    s = steiner_rearrange(f, direction)
    assert s.mass == pytest.approx(f.mass, rel=1e-13)
    assert np.array_equal(np.sort(s.values.ravel()), np.sort(f.values.ravel()))
    if isinstance(direction, int):
        # exact discrete Polya-Szego along one axis (planes only approximately)
        assert discrete_grad_norm2(s) <= discrete_grad_norm2(f) * (1 + 1e-12)
        # decreasing away from the center, ties placed right then left
        v = np.moveaxis(s.values, direction, -1)
        c = v.shape[-1] // 2
        order = [i for j in range(c) for i in (c + j, c - 1 - j)]
        assert np.all(np.diff(v[..., order], axis=-1) <= 0)
        assert np.array_equal(steiner_rearrange(s, direction).values, s.values)


@given(st.integers(0, 10**6), st.sampled_from([0, 1]))
def test_riesz_inequality_on_approved_axes(seed, axis):
    pot = from_canonical("full", (0.6, 0.6, 0.4))
    f, h = _random_density(seed), _random_density(seed + 1)
    f2, h2 = f * f, h * h
    j = riesz_J(f2, pot, h2)
    js = riesz_J(steiner_rearrange(f2, axis), pot, steiner_rearrange(h2, axis))
    assert js >= j * (1 - 1e-9)


def test_riesz_needs_nonnegative():
    pot = from_canonical("full", (0.5, 0.5, 0.5))
    f = gaussian(G32, 1.0)
    with pytest.raises(NegativeInput):
        riesz_J(-f, pot, f)
    with pytest.raises(NegativeInput):
        steiner_rearrange(-f, 0)


def test_translate_and_center():
    g = Grid3(40, 14.0)
    f = gaussian(g, 1.0, center=(0.7, -0.4, 1.1))
    assert np.allclose(centroid(f), [0.7, -0.4, 1.1], atol=1e-10)
    t = translate(f, (-0.7, 0.4, -1.1))
    assert np.abs(t.values - gaussian(g, 1.0).values).max() < 1e-10
    c = center(f)
    assert np.abs(centroid(c)).max() < 1e-6 * g.h[0]
    with pytest.raises(ZeroMass):
        center(zeros(g))


def test_resample_scaling():
    g = Grid3(32, 10.0)
    f = gaussian(g, 1.0)
    x = g.coords()
    r2 = sum(c * c for c in x)
    amp = f.values / np.exp(-r2 / 4)
    r = resample(f, g, scale=2.0, amplitude=3.0)
    assert np.abs(r.values - 3.0 * amp * np.exp(-r2)).max() < 1e-8
    assert np.allclose(resample(f, g).values, f.values, atol=1e-12)


def test_field_file_round_trip(tmp_path):
    g = Grid3((8, 10, 12), (1.0, 2.0, 3.0))
    f = Field(g, np.random.default_rng(0).standard_normal(g.n))
    p = tmp_path / "f.pfld"
    save_field(f, p)
    back = load_field(p)
    assert back.grid == g and np.array_equal(back.values, f.values)
    raw = p.read_bytes()
    (tmp_path / "short.pfld").write_bytes(raw[:-8])
    with pytest.raises(ShapeMismatch):
        load_field(tmp_path / "short.pfld")
    (tmp_path / "magic.pfld").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagic):
        load_field(tmp_path / "magic.pfld")
    (tmp_path / "version.pfld").write_bytes(b"PFLD0002" + raw[8:])
    with pytest.raises(VersionMismatch):
        load_field(tmp_path / "version.pfld")
