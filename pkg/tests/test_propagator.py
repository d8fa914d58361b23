import numpy as np
import pytest

from src.evolution.propagator import (CNPropagator, MemoryRecorder, WaveFunction, cn_step, evolve, expm_oracle,
                                      iter_steps)
from src.utils.errors import FeasibilityError
from tests.conftest import interval, packet, propagator, random_state, schrodinger


def test_norm_is_nonincreasing():
    grid = interval(0.0, 20.0, 200)
    prop = propagator(grid, 0.01, kappa=1.0)
    sink = MemoryRecorder()
    evolve(prop, packet(grid, 10.0, 1.5, 2.0), 1000, sink)
    survival = np.concatenate([[1.0], sink.survival])
    assert np.all(np.diff(survival) <= 1e-14)
    assert survival[-1] < 0.99


def test_reflecting_boundary_conserves_norm():
    grid = interval(0.0, 20.0, 200)
    prop = propagator(grid, 0.01, kappa=0.0, nu=0.5)
    psi = evolve(prop, random_state(grid, 2), 500)
    assert abs(psi.norm_sq() - 1.0) <= 1e-12


def test_step_masses_balance_the_norm_loss():
    grid = interval(0.0, 10.0, 80)
    prop = propagator(grid, 0.02, kappa=1.5, nu=0.2)
    psi = packet(grid, 5.0, 1.0, 3.0)
    detected = 0.0
    for _, nxt, record in iter_steps(prop, psi, 300):
        assert np.all(record.masses >= 0.0)
        assert abs(psi.norm_sq() - nxt.norm_sq() - record.total) <= 1e-13
        detected += record.total
        psi = nxt
    assert abs(1.0 - psi.norm_sq() - detected) <= 1e-10


def test_midpoint_is_the_step_average():
    grid = interval(0.0, 4.0, 16)
    prop = propagator(grid, 0.05)
    psi = random_state(grid, 4)
    mid, nxt = prop.step_values(psi.values)
    np.testing.assert_allclose(mid, 0.5 * (psi.values + nxt), atol=1e-14)


def test_semigroup_is_bitwise():
    grid = interval(0.0, 10.0, 60)
    prop = propagator(grid, 0.01, kappa=1.0)
    psi0 = packet(grid, 5.0, 1.0, 1.0)
    split = evolve(prop, evolve(prop, psi0, 10), 20)
    whole = evolve(prop, psi0, 30)
    np.testing.assert_array_equal(split.values, whole.values)


def test_cn_step_matches_iteration():
    grid = interval(0.0, 4.0, 16)
    prop = propagator(grid, 0.05)
    psi0 = random_state(grid, 9)
    psi1, record = cn_step(prop, psi0)
    _, nxt, first = next(iter_steps(prop, psi0, 1))
    np.testing.assert_array_equal(psi1.values, nxt.values)
    np.testing.assert_array_equal(record.masses, first.masses)


def test_zero_state_stays_zero():
    grid = interval(0.0, 4.0, 16)
    psi_next, record = cn_step(propagator(grid, 0.05), WaveFunction(np.zeros(16), grid))
    assert not np.any(psi_next.values)
    assert record.total == 0.0


def test_crank_nicolson_is_second_order_in_time():
    grid = interval(0.0, 20.0, 64)
    H = schrodinger(grid, kappa=1.0)
    psi0 = packet(grid, 10.0, 1.5, 1.0)
    exact = expm_oracle(H, 1.0, psi0)
    errors = []
    for tau in (0.1, 0.05):
        prop = CNPropagator(H, tau)
        psi = evolve(prop, psi0, int(round(1.0 / tau)))
        errors.append(np.sqrt(grid.norm_sq(psi.values - exact.values)))
    assert 3.5 <= errors[0] / errors[1] <= 4.5


def test_strong_continuity_at_small_steps():
    grid = interval(0.0, 10.0, 40)
    psi0 = packet(grid, 5.0, 1.0)
    drift = [np.sqrt(grid.norm_sq(cn_step(propagator(grid, tau), psi0)[0].values - psi0.values))
             for tau in (1e-2, 1e-4)]
    assert drift[1] < drift[0]
    assert drift[1] < 1e-3


def test_oracle_contracts_for_absorbing_boundary():
    grid = interval(0.0, 6.0, 30)
    psi = expm_oracle(schrodinger(grid, kappa=1.0), 2.0, packet(grid, 3.0, 0.7, 2.0))
    assert psi.norm_sq() < 1.0


@pytest.mark.parametrize("tau", [0.0, -0.1])
def test_time_step_must_be_positive(tau):
    with pytest.raises(ValueError):
        propagator(interval(0.0, 1.0, 5), tau)


def test_wave_function_validation():
    grid = interval(0.0, 1.0, 5)
    with pytest.raises(ValueError):
        WaveFunction(np.zeros(4), grid)
    with pytest.raises(ValueError):
        WaveFunction(np.array([0, 0, np.nan, 0, 0]), grid)
    with pytest.raises(ValueError):
        WaveFunction(np.zeros(5), grid).normalized()


def test_oracle_refuses_large_dense_problems():
    grid = interval(0.0, 1.0, 50)
    with pytest.raises(FeasibilityError):
        expm_oracle(schrodinger(grid), 1.0, packet(grid, 0.5, 0.1), dense_limit=20)


def test_negative_step_count_is_rejected():
    grid = interval(0.0, 1.0, 5)
    with pytest.raises(ValueError):
        evolve(propagator(grid, 0.1), random_state(grid, 0), -1)
