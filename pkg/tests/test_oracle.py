from __future__ import annotations

import numpy as np
import pytest

from spontloc.lattice import (DenseOperator, build_grid, gaussian_state, hamiltonian, harmonic_potential,
                              position_operator)
from spontloc.meter import gaussian_packet, reduction_kernel
from spontloc.oracle import (OracleReport, averaged_mixing_matrix, compare_to_oracle, ensemble_average,
                             make_diffusive_master_rhs, make_jump_master_rhs, ode_integrate,
                             oracle_vs_oracle, packet_overlap_matrix, sem_band, trace_distance)

from conftest import random_density


@pytest.fixture(scope="module")
def grid():
    return build_grid(8, 0.5)


@pytest.fixture(scope="module")
def H(grid):
    return hamiltonian(grid, 1.0, harmonic_potential(grid))


@pytest.fixture(scope="module")
def rho0(grid):
    v = gaussian_state(grid, 0.3, 0.5, 0.7).vector
    return np.outer(v, v.conj())


def _kernel(grid, kappa):
    return reduction_kernel(gaussian_packet(), position_operator(grid), kappa)


def test_overlap_matrix_matches_channel(grid):
    k = _kernel(grid, 0.3)
    c = packet_overlap_matrix(k.packet, grid.positions, 0.3)
    assert np.max(np.abs(c - k.channel_matrix)) < 1e-9
    assert np.allclose(np.diag(c), 1.0, atol=1e-12)


def test_averaged_mixing_matrix_single_particle(grid):
    k = _kernel(grid, 0.3)
    c = packet_overlap_matrix(k.packet, grid.positions, 0.3)
    assert np.array_equal(averaged_mixing_matrix(k.packet, grid.positions, 0.3, 1), c)


def test_jump_rhs_without_coupling_is_commutator(grid, H, rho0):
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.0), nu=5.0)
    comm = -1j * (H.entries @ rho0 - rho0 @ H.entries)
    assert np.max(np.abs(rhs(rho0) - comm)) < 1e-12


def test_jump_rhs_zero_rate_is_liouville(grid, H, rho0):
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.3), nu=0.0)
    comm = -1j * (H.entries @ rho0 - rho0 @ H.entries)
    assert np.max(np.abs(rhs(rho0) - comm)) < 1e-14


@pytest.mark.parametrize("nu", [1.0, 10.0])
def test_jump_rhs_trace_free(grid, H, rng, nu):
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.3), nu)
    rho = random_density(8, rng, 3)
    assert abs(np.trace(rhs(rho))) <= 1e-8 * nu


def test_diffusive_rhs_trace_free_and_hermitian(grid, H, rng):
    rhs = make_diffusive_master_rhs(H, grid.positions, 1.0, np.pi / 2)
    rho = random_density(8, rng, 3)
    out = rhs(rho)
    assert abs(np.trace(out)) < 1e-12
    assert np.max(np.abs(out - out.conj().T)) < 1e-12


def test_ode_zero_rhs_is_identity(rho0):
    res = ode_integrate(lambda r: np.zeros_like(r), rho0, 1.0, 1e-2)
    assert np.array_equal(res.final, rho0)
    assert res.error_estimate == 0.0 and not res.step_too_large


def test_ode_liouville_matches_conjugation(grid, H, rho0):
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.3), 0.0)
    res = ode_integrate(rhs, rho0, 1.0, 1e-3, sample_times=[0.0, 0.5, 1.0])
    for t, state in zip(res.times, res.states):
        U = H.propagator(t)
        assert np.max(np.abs(state - U @ rho0 @ U.conj().T)) < 1e-8
    assert not res.step_too_large


def test_ode_fourth_order(grid, H, rho0):
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.3), 2.0)
    ref = ode_integrate(rhs, rho0, 1.0, 1e-3, estimate_error=False).final
    e1 = np.max(np.abs(ode_integrate(rhs, rho0, 1.0, 0.1, estimate_error=False).final - ref))
    e2 = np.max(np.abs(ode_integrate(rhs, rho0, 1.0, 0.05, estimate_error=False).final - ref))
    assert 8 <= e1 / e2 <= 32


def test_ode_flags_large_step(grid, H, rho0):
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.3), 2.0)
    assert ode_integrate(rhs, rho0, 1.0, 0.25, tol=1e-8).step_too_large


def test_ode_rejects_off_grid_samples(rho0):
    with pytest.raises(ValueError):
        ode_integrate(lambda r: 0 * r, rho0, 1.0, 0.1, sample_times=[0.33])


def test_oracle_stays_positive(grid, H, rho0):
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.3), 2.0)
    res = ode_integrate(rhs, rho0, 1.0, 1e-3, sample_times=np.linspace(0, 1, 11), estimate_error=False)
    for s in res.states:
        assert abs(np.trace(s) - 1) < 1e-10
        assert np.linalg.eigvalsh(0.5 * (s + s.conj().T)).min() > -1e-10


def test_trace_distance_cases(rng):
    rho = random_density(4, rng, 2)
    assert trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-14)
    a, b = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    assert trace_distance(a, b) == pytest.approx(1.0)
    assert trace_distance(np.diag([0.6, 0.4]), np.diag([0.5, 0.5])) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        trace_distance(np.diag([0.7, 0.4]), b)
    with pytest.raises(ValueError):
        trace_distance(a, np.eye(3) / 3)


def test_ensemble_of_identical_states_has_zero_sem(grid):
    v = gaussian_state(grid, 0.0, 0.5).vector
    avg = ensemble_average(np.broadcast_to(v, (50, 8)))
    assert np.max(avg.sem) < 1e-14
    assert np.allclose(avg.mean, np.outer(v, v.conj()), atol=1e-15)


def test_ensemble_of_densities(rng):
    states = np.stack([random_density(3, rng, 1) for _ in range(20)])
    avg = ensemble_average(states, densities=True)
    assert np.allclose(avg.mean, states.mean(0))
    assert avg.count == 20 and np.all(avg.sem > 0)


def test_single_member_ensemble():
    avg = ensemble_average(np.ones((1, 2)) / np.sqrt(2))
    assert np.array_equal(avg.sem, np.zeros((2, 2)))


def test_zero_coupling_ensemble_is_exact(grid, H):
    # kappa = 0 kicks are identities; every trajectory is the unitary path
    v = gaussian_state(grid, 0.2, 0.5).vector
    T = 0.7
    U = H.propagator(T)
    avg = ensemble_average(np.broadcast_to(U @ v, (10, 8)))
    rhs = make_jump_master_rhs(H, _kernel(grid, 0.0), 3.0)
    oracle = ode_integrate(rhs, np.outer(v, v.conj()), T, 1e-3, estimate_error=False).final
    rep = compare_to_oracle("jump-vs-oracle", [T], avg, oracle, 0.02)
    assert rep.max_distance < 1e-8 and rep.passed


def test_report_requires_resolving_ensemble():
    rep = OracleReport("x", np.array([1.0]), np.array([0.01]), np.array([0.05]), 0.02)
    assert not rep.passed
    with pytest.raises(ValueError):
        OracleReport("x", np.array([1.0]), np.array([1.5]), np.array([0.0]), 0.02)


def test_sem_band_is_frobenius():
    s = np.array([[3.0, 0.0], [0.0, 4.0]])
    assert sem_band(s) == pytest.approx(5.0)


def test_oracle_vs_oracle_report(rho0):
    rep = oracle_vs_oracle("a-b", [0.0], [rho0], [rho0], 0.02)
    assert rep.passed and rep.max_sem == 0.0
