import math

import numpy as np
import pytest
from scipy import stats

from homopolymer.birman_schwinger import eigenfunction_psi_beta, lambda0
from homopolymer.feynman_kac_pde import RadialGrid, default_grid, partition_function
from homopolymer.path_sampler import (BLOCK_SIZE, DegenerateWeightsWarning, EmptyConditioningError,
                                      bridge_covariance_check, diffusive_rescale_stats,
                                      drift_limit_check, endpoint_density,
                                      exact_endpoint_variance, exact_pinned_midpoint_variance,
                                      invariance_defect, limiting_process_density,
                                      pinned_weights, q_transition_check, radial_law_masses,
                                      sample_paths, tv_distance, y_independence_defect)
from homopolymer.potentials import unit_well

V3 = unit_well(3)


@pytest.fixture(scope="module")
def free_paths():
    return sample_paths(V3, 0.0, 4.0, 100, 20000, seed=3, record=(0.25, 0.5, 0.75, 1.0))


@pytest.fixture(scope="module")
def z_exact():
    # unit well, beta = 2, T = 10
    g = default_grid(V3, 10.0, h=0.025, growth=1.02, dt_max=0.01)
    return partition_function(V3, 2.0, g, 10.0).probe(0.0)[-1]


def test_zero_coupling_gives_unit_weights(free_paths):
    assert np.all(free_paths.log_weights == 0)
    assert free_paths.ess == pytest.approx(free_paths.n_paths)
    assert free_paths.z_estimate() == (1.0, 0.0)


def test_seed_determinism_and_block_streams():
    a = sample_paths(V3, 1.0, 2.0, 20, 5000, seed=7)
    b = sample_paths(V3, 1.0, 2.0, 20, 5000, seed=7, n_jobs=2)
    c = sample_paths(V3, 1.0, 2.0, 20, 5000, seed=8)
    head = sample_paths(V3, 1.0, 2.0, 20, BLOCK_SIZE, seed=7)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.log_weights, b.log_weights)
    assert not np.array_equal(a.positions, c.positions)
    # paths are a function of (seed, block) only, so a larger run extends a smaller one
    assert np.array_equal(a.positions[:, :BLOCK_SIZE], head.positions)


def test_free_endpoint_variance(free_paths):
    x = free_paths.at(4.0)
    r2 = np.einsum("ij,ij->i", x, x) / (3 * 4.0)
    assert abs(r2.mean() - 1) < 4 * r2.std() / math.sqrt(r2.size)


def test_free_endpoint_follows_chi_law(free_paths):
    edges = np.linspace(0, 3, 31)
    hist = endpoint_density(free_paths, edges, scale=2.0)
    ref = np.diff(np.append(stats.chi(3).cdf(edges), 1.0))
    assert tv_distance(hist, ref) < 0.02
    gauss = radial_law_masses(lambda r: np.exp(-r * r / 2), edges, 3, r_max=12.0)
    assert np.allclose(gauss, ref, atol=1e-5)


def test_histogram_tv_shrinks_with_sample_size():
    edges = np.linspace(0, 3, 16)
    ref = np.diff(np.append(stats.chi(3).cdf(edges), 1.0))
    tv = {n: np.mean([tv_distance(endpoint_density(sample_paths(V3, 0.0, 1.0, 10, n, seed=s), edges), ref)
                      for s in range(5)]) for n in (1000, 2000, 4000, 8000)}
    assert tv[1000] > tv[2000] > tv[4000] > tv[8000]


def test_partition_function_estimate_matches_pde(z_exact):
    e = sample_paths(V3, 2.0, 10.0, 500, 20000, seed=1)
    z, se = e.z_estimate()
    assert abs(z - z_exact) < 3 * se


@pytest.mark.filterwarnings("ignore::homopolymer.path_sampler.DegenerateWeightsWarning")
def test_standard_error_coverage(z_exact):
    # 95% intervals over 20 replicates; the weights are heavy tailed, so the
    # ensembles must be large for the variance estimate to be trustworthy
    hits = 0
    for s in range(20):
        z, se = sample_paths(V3, 2.0, 10.0, 100, 50000, seed=100 + s).z_estimate()
        hits += abs(z - z_exact) < 1.96 * se
    assert hits >= 18


def test_halving_the_time_step_moves_z_by_less_than_one_se():
    z1, se1 = sample_paths(V3, 2.0, 10.0, 500, 20000, seed=1).z_estimate()
    z2, _ = sample_paths(V3, 2.0, 10.0, 1000, 20000, seed=1).z_estimate()
    assert abs(z2 - z1) < se1


def test_input_checks():
    with pytest.raises(ValueError):
        sample_paths(V3, 1.0, 10.0, 10, 10)  # dt = 1 > 0.4
    with pytest.raises(ValueError):
        sample_paths(V3, 1.0, 1.0, 10, 10, record=(1.5,))
    e = sample_paths(V3, 1.0, 1.0, 10, 100)
    with pytest.raises(KeyError):
        e.at(0.5)


def test_degenerate_weights_warn():
    with pytest.warns(DegenerateWeightsWarning):
        e = sample_paths(V3, 60.0, 4.0, 100, 20, seed=0)
    assert e.warning and e.summary()["warning"] == e.warning


def test_diffusive_stats_without_potential(free_paths):
    tab = diffusive_rescale_stats(free_paths)
    var = tab.variances()
    t = tab.times[:, None]
    assert np.all(np.abs(var - t) < 4 * tab.var_se)
    assert np.all(np.abs(tab.inc_corr) < 4 * tab.inc_corr_se)
    assert len(tab.to_rows()) == 4 * 3


def test_pinned_weights_limits(free_paths):
    pw = pinned_weights(free_paths, np.inf)
    assert np.allclose(pw.weights, free_paths.normalized_weights())
    with pytest.raises(EmptyConditioningError):
        pinned_weights(free_paths, 1e-9)


def test_bridge_check_holds_for_free_paths(free_paths):
    bc = bridge_covariance_check(free_paths, 0.6 * 2.0, times=(0.25, 0.5, 0.75))
    assert np.all(np.abs(bc.z_scores()) < 4)


def test_transition_density_is_normalized():
    g = default_grid(V3, 20.0)
    assert q_transition_check(V3, 2.0, 5.0, 6.0, 0.0, 20.0, g) < 1e-3
    assert q_transition_check(V3, 0.0, 5.0, 6.0, 0.0, 20.0, g) < 1e-6
    assert q_transition_check(V3, 2.0, 0.5, 1.0, 1.5, 3.0, g) < 1e-3
    with pytest.raises(ValueError):
        q_transition_check(V3, 2.0, 1.0, 1.0, 0.0, 2.0, g)


@pytest.fixture(scope="module")
def psi2():
    lam = lambda0(V3, 2.0)
    return eigenfunction_psi_beta(V3, 2.0, lam=lam), lam


def test_limiting_process_checks(psi2):
    psi, lam = psi2
    g = RadialGrid.uniform(12, 0.05, 3, align=1.0)
    assert limiting_process_density(V3, 2.0, 1.0, 0.0, g, psi, lam).integral == pytest.approx(1.0, abs=5e-3)
    assert invariance_defect(V3, 2.0, 1.0, g, psi, lam) < 5e-3
    g2 = default_grid(V3, 40.0, h=0.05)
    assert y_independence_defect(V3, 2.0, 20.0, (0.0, 1.5), g2, psi, lam) < 5e-3
    g3 = default_grid(V3, 40.0, h=0.025, growth=1.02, dt_max=0.05)
    assert drift_limit_check(V3, 2.0, 40.0, g3, psi) < 0.02
    with pytest.raises(ValueError):
        limiting_process_density(V3, 1.0, 1.0, 0.0, g)


def test_exact_moments_without_potential():
    g = default_grid(V3, 4.0, h=0.05)
    assert exact_endpoint_variance(V3, 0.0, 4.0, g) == pytest.approx(1.0, abs=2e-3)
    assert exact_pinned_midpoint_variance(V3, 0.0, 4.0, g) == pytest.approx(0.25, abs=5e-3)


def test_finite_horizon_variance_deficit_decays_like_inverse_sqrt():
    beta = 0.5 * math.pi ** 2 / 8
    deficit = [1 - exact_endpoint_variance(V3, beta, T, default_grid(V3, T, h=0.05)) for T in (100.0, 400.0)]
    assert 0 < deficit[1] < deficit[0]
    assert 1.6 < deficit[0] / deficit[1] < 2.1
