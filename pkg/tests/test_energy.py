import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polaron import energy as en
from polaron.anisotropy import from_canonical
from polaron.errors import NoBinding, NotConverged
from polaron.field import Grid3, center, gaussian, translate
from polaron.oracle import frozen_reference

ISO = from_canonical("full", (0.5, 0.5, 0.5))
CFG = en.SolverConfig(tol_residual=1e-9, max_iter=4000)


@pytest.fixture(scope="module")
def iso_result():
    return en.minimize(ISO, CFG, en.auto_grid(ISO, 48))


@given(st.floats(0.8, 2.0), st.floats(0.1, 0.9))
@settings(max_examples=8)
def test_gaussian_energy_closed_form(sigma, s):
    # E = 1/2 * 3/(4 sig^2) - 1/2 * (1-s)/(sqrt(pi) sig) for a unit-mass gaussian
    pot = from_canonical("full", (s, s, s))
    c = 1 - s
    g = Grid3(40, 10 * sigma)
    psi = gaussian(g, sigma)
    exact = 3 / (8 * sigma**2) - c / (2 * np.sqrt(np.pi) * sigma)
    assert en.energy(pot, psi) == pytest.approx(exact, rel=1e-9)


def test_energy_invariances():
    g = Grid3(48, 14.0)
    pot = from_canonical("full", (0.9, 0.7, 0.3))
    psi = gaussian(g, (1.0, 1.3, 0.8))
    e = en.energy(pot, psi)
    assert en.energy(pot, -psi) == e
    assert en.energy(pot, translate(psi, (0.5, -0.3, 0.2))) == pytest.approx(e, rel=1e-8)
    assert en.energy(pot, psi * 0.0) == 0.0


def test_solver_config_validation():
    with pytest.raises(ValueError):
        en.SolverConfig(tol_residual=1e-12)
    with pytest.raises(ValueError):
        en.SolverConfig(lam=0.0)
    with pytest.raises(ValueError):
        en.SolverConfig(polish=-1)


def test_vacuum_has_no_binding():
    vac = from_canonical("full", (1.0, 1.0, 1.0))
    with pytest.raises(NoBinding):
        en.minimize(vac, en.SolverConfig(max_iter=50), Grid3(32, 20.0))


def test_isotropic_minimizer(iso_result):
    r = iso_result
    e, mu = frozen_reference(0.5)
    assert r.converged and r.residual < 1e-9
    assert r.energy == pytest.approx(e, rel=1e-7)
    assert r.mu == pytest.approx(mu, rel=1e-6)
    assert r.mu == pytest.approx(en.rayleigh_mu(ISO, r.psi), rel=1e-12)
    assert r.psi.mass == pytest.approx(1.0, rel=1e-12)
    assert np.all(r.psi.values >= 0)


def test_energy_trace_descends(iso_result):
    tr = np.array(iso_result.energy_trace)
    slack = 1e-14 * np.abs(tr).max() * 10
    assert np.all(np.diff(tr) <= slack)


def test_el_residual_and_virial(iso_result):
    r = iso_result
    res = en.el_residual(ISO, r.psi, r.mu)
    assert res.norm() == pytest.approx(r.residual, rel=1e-8)
    v = en.virial_report(r)
    assert v["max_rel_dev"] < 1e-6
    unconv = en.minimize(ISO, dataclasses.replace(CFG, max_iter=3), r.psi.grid, raise_on_fail=False)
    assert not unconv.converged
    with pytest.raises(NotConverged):
        en.virial_report(unconv)
    with pytest.raises(NotConverged):
        en.minimize(ISO, dataclasses.replace(CFG, max_iter=3), r.psi.grid)


def test_q_form(iso_result):
    Q = en.to_q_form(iso_result)
    assert en.q_residual(ISO, Q) < 1e-7
    c, alpha = en.q_normalization(iso_result.mu)
    assert alpha == pytest.approx(1 / np.sqrt(2 * iso_result.mu))
    assert Q.values.max() == pytest.approx(c * iso_result.psi.values.max())


def test_scaled_family_and_subadditivity(iso_result):
    r = iso_result
    lam = 1.25
    f = en.scaled_family(r, lam)
    assert f.mass == pytest.approx(lam, rel=1e-8)
    # resampling on the same grid costs some interpolation accuracy
    assert en.energy(ISO, f) == pytest.approx(lam**3 * r.energy, rel=1e-6)
    half = en.minimize(ISO, dataclasses.replace(CFG, lam=0.5), en.auto_grid(ISO, 48, 0.5))
    assert half.energy == pytest.approx(r.energy / 8, rel=1e-6)
    # binding: splitting the mass costs energy
    assert r.energy < 2 * half.energy


def test_simplified_and_full_agree_for_equal_coulomb_strength():
    g = en.auto_grid(ISO, 32)
    cfg = en.SolverConfig(tol_residual=1e-8)
    a = en.minimize(ISO, cfg, g)
    b = en.minimize(from_canonical("simplified", (0.5, 0.5, 0.5)), cfg, g)
    assert a.energy == pytest.approx(b.energy, rel=1e-12)


def test_anisotropic_minimizer_is_symmetric():
    pot = from_canonical("full", (0.6, 0.6, 0.4))
    r = en.minimize(pot, en.SolverConfig(tol_residual=1e-8), en.auto_grid(pot, 32))
    m = en.symmetry_metrics(r)
    assert max(m["asymmetry"]) < 1e-4
    for axis in (0, 1):
        gap = en.symmetrization_gap(pot, m["centered"], axis)
        assert gap["rel_energy_gap"] < 1e-4
    # the minimizer is flatter along the weakly screened axis
    v = center(r.psi).values
    c = v.shape[0] // 2
    assert v[c + 4, c, c] != pytest.approx(v[c, c, c + 4], rel=1e-3)


def test_multistart_and_continuity():
    pot = ISO
    g = en.auto_grid(pot, 32)
    cfg = en.SolverConfig(tol_residual=1e-6, max_iter=4000)
    ms = en.multistart(pot, cfg, g, seeds=(1, 2))
    assert ms["relative"] < 1e-6
    probe = en.continuity_probe([pot, pot], [0.0, 1.0], cfg, g)
    assert probe["lipschitz"] == 0.0
    assert probe["rows"][0]["I"] == pytest.approx(probe["rows"][1]["I"], rel=1e-7)
