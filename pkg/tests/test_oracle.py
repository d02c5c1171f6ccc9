import numpy as np
import pytest

from polaron import oracle

# Pekar's constant for ||grad psi||^2 - D(psi^2, psi^2) at unit mass (Lieb 1977,
# Miyake): the functional here has both terms halved, so its minimum is half.
PEKAR = -0.108513


@pytest.fixture(scope="module")
def sol():
    return oracle.solve_radial(0.0, npts=512)


def test_frozen_constants_reproduce(sol):
    assert sol.energy == pytest.approx(oracle.REFERENCE_ENERGY, rel=1e-8)
    assert sol.mu == pytest.approx(oracle.REFERENCE_MU, rel=1e-7)
    assert 2 * oracle.REFERENCE_ENERGY == pytest.approx(PEKAR, abs=1e-6)


def test_radial_solution_properties(sol):
    assert 4 * np.pi * np.sum(sol.u**2) * (sol.r[1] - sol.r[0]) == pytest.approx(1.0, rel=1e-10)
    assert sol.virial()["max_rel_dev"] < 1e-8
    psi = sol.psi
    assert np.all(psi > -1e-14)
    head = psi[sol.r < 20]
    assert np.all(np.diff(head) < 0)


@pytest.mark.parametrize("s,lam", [(0.3, 1.0), (0.5, 0.7)])
def test_scaling_law(s, lam):
    e, mu = oracle.frozen_reference(s, lam)
    r = oracle.solve_radial(s, lam, npts=512)
    assert r.energy == pytest.approx(e, rel=1e-8)
    assert r.mu == pytest.approx(mu, rel=1e-7)
    # mu lam = -3 I(lam); the two constants were frozen independently
    assert mu * lam == pytest.approx(-3 * e, rel=1e-8)


def test_richardson_levels_are_stable():
    ref = oracle.reference_energy(levels=(256, 512, 1024))
    assert abs(ref["energy"][-1] - ref["energy"][-2]) < 1e-9
    assert ref["energy_extrapolated"] == pytest.approx(oracle.REFERENCE_ENERGY, rel=1e-9)


def test_bad_arguments():
    with pytest.raises(ValueError):
        oracle.solve_radial(1.0)
    with pytest.raises(ValueError):
        oracle.solve_radial(0.0, lam=-1.0)
