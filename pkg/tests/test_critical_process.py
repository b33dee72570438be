import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from homopolymer._validation import SingularPointError
from homopolymer.critical_process import (CriticalKernel, chapman_kolmogorov_defect, critical_Q,
                                          critical_Q_polar, drift_field, endpoint_radial_density,
                                          fokker_planck_residual, g_log_mass, heat_kernel_3d,
                                          limit_consistency_defect, mass, monte_carlo_endpoint_check,
                                          near_origin_drift_defect, normalization_defect, pbar)
from homopolymer.potentials import unit_well

KPSI0 = 1 / (4 * math.sqrt(2 * math.pi))  # kappa psi(0) for the unit well


def _rot(r, angle):
    return r * np.array([math.sin(angle), 0.0, math.cos(angle)])


def _pbar_mass_quad(t, r):
    # independent 2-D quadrature of int pbar(t, 1, x, z) dz, |x| = r
    tau = 1 - t

    def f(z, u):
        second = math.exp(-(r + z) ** 2 / (2 * tau)) / ((2 * math.pi) ** 1.5 * r * z * math.sqrt(tau))
        return 2 * math.pi * z * z * (heat_kernel_3d(tau, r, z, u) + second)
    return integrate.dblquad(f, -1, 1, 0, r + 40 * math.sqrt(tau), epsabs=1e-14, epsrel=1e-13)[0]


def test_pbar_symmetry_and_angle_dependence():
    y, x = _rot(0.8, 0.0), _rot(1.3, 1.1)
    assert pbar(0.1, 0.6, y, x) == pytest.approx(pbar(0.1, 0.6, x, y), rel=1e-14)
    aligned, anti = pbar(0.0, 0.5, _rot(1, 0), _rot(1, 0)), pbar(0.0, 0.5, _rot(1, 0), _rot(1, math.pi))
    p0_diff = heat_kernel_3d(0.5, 1, 1, 1.0) - heat_kernel_3d(0.5, 1, 1, -1.0)
    assert aligned - anti == pytest.approx(p0_diff, rel=1e-12)


def test_pbar_origin_branch_and_errors():
    x = _rot(1.0, 0.3)
    assert pbar(0.0, 0.5, np.zeros(3), x, KPSI0) == pytest.approx(KPSI0 * math.exp(-1.0) / math.sqrt(0.5))
    with pytest.raises(ValueError):
        pbar(0.0, 0.5, np.zeros(3), x)
    with pytest.raises(SingularPointError):
        pbar(0.0, 0.5, x, np.zeros(3))
    with pytest.raises(ValueError):
        pbar(0.5, 0.5, x, x)


@pytest.mark.parametrize("t", [0.0, 0.5])
@pytest.mark.parametrize("r", [0.1, 1.0, 3.0])
def test_log_mass_matches_quadrature(t, r):
    assert g_log_mass(t, r) == pytest.approx(math.log(_pbar_mass_quad(t, r)), abs=1e-10)


def test_log_mass_limits():
    assert abs(g_log_mass(0.5, 40.0)) < 1e-300
    assert np.all(mass(1.0, np.array([0.5, 2.0])) == 1.0)
    with pytest.raises(ValueError):
        g_log_mass(1.0, 1.0)
    with pytest.raises(SingularPointError):
        g_log_mass(0.5, 0.0)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_drift_matches_finite_difference(r):
    h = 1e-5
    fd = (g_log_mass(0.3, r + h) - g_log_mass(0.3, r - h)) / (2 * h)
    assert drift_field(0.3, r) == pytest.approx(fd, abs=1e-6)


def test_drift_near_origin_and_far_field():
    assert near_origin_drift_defect(0.5, 1e-3) < 1e-3
    # -1/r + O(r): the defect shrinks like r^2
    assert near_origin_drift_defect(0.5, 1e-2) / near_origin_drift_defect(0.5, 1e-3) > 50
    assert abs(drift_field(0.5, 20.0)) < 1e-40
    with pytest.raises(SingularPointError):
        drift_field(0.5, 0.0)


def test_endpoint_law_of_the_kernel_from_the_origin():
    r = np.array([0.3, 1.0, 2.2])
    q = critical_Q_polar(0.0, 1.0, 0.0, r, 1.0)
    assert np.allclose(4 * math.pi * r * r * q, endpoint_radial_density(r), rtol=1e-13)
    assert critical_Q(0.2, 0.7, _rot(1, 0), np.zeros(3)) == 0.0


@given(st.floats(0.0, 0.8), st.floats(0.05, 0.2), st.floats(0.0, 4.0), st.floats(1e-3, 5.0),
       st.floats(0.0, math.pi))
def test_kernel_is_nonnegative(s, dt, a, b, angle):
    t = min(s + dt, 1.0)
    assert critical_Q(s, t, _rot(a, 0.0), _rot(b, angle)) >= 0


@pytest.mark.parametrize("s", [0.0, 0.3])
@pytest.mark.parametrize("t", [0.5, 1.0])
@pytest.mark.parametrize("y", [0.3, 1.0, 3.0])
def test_normalization_sweep(s, t, y):
    assert normalization_defect(s, t, y) < 1e-6


def test_normalization_from_origin_and_doubled_rule():
    assert normalization_defect(0.2, 0.7, 0.0) < 1e-6
    k = CriticalKernel().doubled()
    assert k.n_angle == 128 and k.normalization_defect(0.2, 0.7, 1.0) < 1e-6


@pytest.mark.parametrize("times", [(0.1, 0.4, 0.8), (0.0, 0.5, 1.0), (0.2, 0.3, 0.6)])
def test_chapman_kolmogorov(times):
    for a, c, ang in [(1.0, 1.0, 0.7), (0.5, 2.0, 2.0), (0.0, 1.2, 0.0)]:
        assert chapman_kolmogorov_defect(*times, a, c, ang) < 1e-4


def test_fokker_planck_residual_and_refinement():
    rep = fokker_planck_residual(0.1, 1.0, np.linspace(0.3, 0.9, 7), np.linspace(0.2, 3.0, 15))
    assert rep.residual < 1e-3
    assert rep.ratio == pytest.approx(4.0, rel=0.1)


def test_heat_kernel_analogue_of_the_residual():
    rep = fokker_planck_residual(0.1, 1.0, np.linspace(0.3, 0.9, 7), np.linspace(0.2, 3.0, 15),
                                 h=1e-4, heat=True)
    assert rep.residual < 1e-6


def test_fokker_planck_grid_guard():
    with pytest.raises(ValueError):
        fokker_planck_residual(0.1, 1.0, [0.5], [1e-4])


def test_terminal_branch_is_the_limit():
    for a, b, u in [(1.0, 1.0, 0.5), (0.0, 0.7, 1.0), (2.0, 0.4, -0.3)]:
        assert limit_consistency_defect(0.3, a, b, u) < 1e-8


@pytest.mark.xfail(strict=True, reason="weight variance grows like Z at twice the coupling; ESS "
                                       "stays in the hundreds and the histogram noise exceeds 0.07")
def test_monte_carlo_endpoint_law_at_criticality():
    out = monte_carlo_endpoint_check(unit_well(3), math.pi ** 2 / 8, 100.0, 100_000, 500, seed=0)
    assert out["tv"] < 0.07
