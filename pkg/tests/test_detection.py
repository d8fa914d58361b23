import numpy as np
import pytest
from scipy.stats import chisquare

from src.measurements.detection import (DetectionEvent, NoDetection, absorption_oracle, first_event,
                                        record_distribution, reflection_coefficient, sample_detection,
                                        steps_for_horizon)
from src.utils.utils import read_csv, write_csv
from tests.conftest import interval, packet, propagator, random_state

ONE_SIDED = {(0, "lower"): {"kappa": 0.0}}


@pytest.fixture
def absorbing_run():
    grid = interval(0.0, 10.0, 80)
    prop = propagator(grid, 0.05, kappa=1.0)
    psi0 = packet(grid, 5.0, 1.0, 2.0)
    return prop, psi0, record_distribution(prop, psi0, t_max=5.0)


def test_reflecting_walls_detect_nothing():
    grid = interval(0.0, 10.0, 60)
    dist = record_distribution(propagator(grid, 0.05, kappa=0.0), packet(grid, 5.0, 1.0, 2.0), t_max=5.0)
    assert np.all(dist.masses == 0.0)
    assert dist.survivor_mass == pytest.approx(1.0, abs=1e-12)


def test_distribution_invariants(absorbing_run):
    _, _, dist = absorbing_run
    assert dist.masses.shape == (100, 2)
    assert np.all(dist.masses >= 0.0)
    assert dist.balance_residual <= 1e-10
    assert dist.total_detected > 0.5
    np.testing.assert_allclose(dist.time_density() * dist.tau, dist.time_marginal())
    assert sum(dist.per_face().values()) == pytest.approx(dist.total_detected)
    assert dist.per_particle()[0] == pytest.approx(dist.total_detected)
    assert dist.step_times[0] == pytest.approx(0.025)


def test_unnormalized_state_is_rejected():
    grid = interval(0.0, 4.0, 16)
    prop = propagator(grid, 0.05)
    psi = packet(grid, 2.0, 0.5)
    with pytest.raises(ValueError, match="normalized"):
        record_distribution(prop, type(psi)(2.0 * psi.values, grid), n_steps=4)


def test_partial_absorption_matches_plane_wave_oracle():
    grid = interval(0.0, 40.0, 801)
    prop = propagator(grid, 0.01, kappa=1.0, faces=ONE_SIDED)
    dist = record_distribution(prop, packet(grid, 20.0, 2.0, 2.0), t_max=22.0)
    assert abs(dist.total_detected - absorption_oracle(2.0, 2.0, 1.0)) <= 0.02
    assert dist.per_face()["p0:x0:lower"] == 0.0


def test_resonant_boundary_absorbs_almost_everything():
    grid = interval(0.0, 60.0, 1201)
    prop = propagator(grid, 0.01, kappa=1.0, faces=ONE_SIDED)
    dist = record_distribution(prop, packet(grid, 30.0, 4.0, 1.0), t_max=55.0)
    assert dist.total_detected >= 0.99


def test_reflection_coefficient():
    assert reflection_coefficient(1.0, 1.0) == 0.0
    assert reflection_coefficient(-3.0, 1.0) == pytest.approx(0.25)
    assert absorption_oracle(2.0, 2.0, 0.0) == 0.0
    assert 0.99 < absorption_oracle(1.0, 4.0, 1.0) <= 1.0


def test_coarsen_adds_masses(absorbing_run):
    _, _, dist = absorbing_run
    coarse = dist.coarsen(4)
    assert coarse.n_steps == 25
    assert coarse.tau == pytest.approx(0.2)
    np.testing.assert_allclose(coarse.masses[0], dist.masses[:4].sum(axis=0))
    assert coarse.total_detected == pytest.approx(dist.total_detected, abs=1e-14)
    assert coarse.survival[-1] == dist.survival[-1]
    with pytest.raises(ValueError):
        dist.coarsen(3)


def test_frames_round_trip_through_csv(tmp_path, absorbing_run):
    _, _, dist = absorbing_run
    frame = dist.to_frame()
    assert list(frame.columns) == ["step", "time", "face", "particle", "node", "x0", "mass"]
    assert len(frame) == dist.n_steps * 2
    back = read_csv(write_csv(frame, tmp_path / "distribution.csv"))
    np.testing.assert_array_equal(back["mass"].to_numpy(), frame["mass"].to_numpy())
    survival = dist.survival_frame()
    assert survival["norm_sq"].iloc[0] == 1.0
    assert survival["norm_sq"].iloc[-1] == dist.survivor_mass


def test_horizon_rounding():
    assert steps_for_horizon(1.0, 0.1) == 10
    with pytest.raises(ValueError):
        steps_for_horizon(0.0, 0.1)
    with pytest.raises(ValueError):
        steps_for_horizon(0.01, 0.1)


def test_first_event_inverts_the_cumulative_law(absorbing_run):
    prop, psi0, dist = absorbing_run
    flat = dist.masses.ravel()
    cell = int(np.argmax(flat))
    u = float(np.sum(flat[:cell]) + 0.5 * flat[cell])
    hit, _ = first_event(prop, psi0, dist.n_steps, u)
    step, entry, mid = hit
    assert (step, entry) == divmod(cell, 2)
    assert prop.tau * prop.H.outflow(mid)[entry] == pytest.approx(flat[cell], rel=1e-12)


def test_first_event_beyond_detected_mass(absorbing_run):
    prop, psi0, dist = absorbing_run
    hit, last = first_event(prop, psi0, dist.n_steps, dist.total_detected + 0.5 * dist.survivor_mass)
    assert hit is None
    assert last.norm_sq() == pytest.approx(dist.survivor_mass, rel=1e-12)


def test_sampling_is_reproducible_per_seed():
    grid = interval(0.0, 10.0, 80)
    prop = propagator(grid, 0.05, kappa=1.0)
    psi0 = packet(grid, 5.0, 1.0, 2.0)
    first = sample_detection(prop, psi0, 5.0, rng_seed=11)
    assert first == sample_detection(prop, psi0, 5.0, rng_seed=11)
    assert isinstance(first, (DetectionEvent, NoDetection))


def test_reflecting_walls_never_fire():
    grid = interval(0.0, 4.0, 16)
    event = sample_detection(propagator(grid, 0.05, kappa=0.0), random_state(grid, 1), 1.0, rng_seed=3)
    assert event == NoDetection(1.0)
    assert event.to_dict()["time"] is None


def test_event_records_position():
    grid = interval(0.0, 4.0, 16)
    prop = propagator(grid, 0.05, kappa=2.0)
    psi0 = packet(grid, 3.0, 0.4, 3.0)
    for seed in range(10):
        event = sample_detection(prop, psi0, 3.0, rng_seed=seed)
        if isinstance(event, DetectionEvent):
            assert event.position in ((0.0,), (4.0,))
            assert event.time == pytest.approx((event.step + 0.5) * 0.05)
            assert event.to_dict()["face"] in ("p0:x0:lower", "p0:x0:upper")


@pytest.mark.slow
def test_sampled_events_follow_the_detection_law():
    grid = interval(0.0, 4.0, 16)
    prop = propagator(grid, 0.05, kappa=1.0)
    psi0 = packet(grid, 2.0, 0.5, 2.0)
    dist = record_distribution(prop, psi0, t_max=2.0)
    expected = np.append(dist.coarsen(4).masses.ravel(), dist.survivor_mass)
    runs = 100_000
    counts = np.zeros(expected.size)
    for seed in np.random.SeedSequence(2024).spawn(runs):
        event = sample_detection(prop, psi0, 2.0, rng_seed=seed)
        counts[-1 if isinstance(event, NoDetection) else (event.step // 4) * 2 + event.entry] += 1
    keep = expected * runs >= 5
    observed = counts[keep]
    predicted = expected[keep] / expected[keep].sum() * observed.sum()
    assert chisquare(observed, predicted).pvalue > 1e-3


def test_product_grid_cells_group_entries_by_particle_and_node(pair_grid):
    prop = propagator(pair_grid, 0.05, kappa=1.0)
    dist = record_distribution(prop, random_state(pair_grid, 2), n_steps=10)
    cells, table = dist.cell_masses()
    assert cells == [(0, 0), (0, 6), (1, 0), (1, 6)]
    assert table.shape == (10, 4)
    np.testing.assert_allclose(table.sum(axis=1), dist.time_marginal(), rtol=1e-13)
    np.testing.assert_allclose(table[:, :2].sum(), dist.per_particle()[0], rtol=1e-13)


def test_corner_mass_is_reported_for_the_lower_particle(pair_grid):
    prop = propagator(pair_grid, 0.05, kappa=1.0)
    dist = record_distribution(prop, random_state(pair_grid, 5), n_steps=6)
    at_corner = [b for b, e in enumerate(pair_grid.boundary) if e.node == 0]
    corner_mass = dist.masses[:, at_corner].sum()
    assert corner_mass > 0.0
    cells, table = dist.cell_masses()
    by_cell = dict(zip(cells, table.sum(axis=0)))
    own_faces = sum(dist.masses[:, b].sum() for b, e in enumerate(pair_grid.boundary)
                    if e.face.particle == 0 and pair_grid.particle_base_node(e.node, 0) == 0)
    assert by_cell[(0, 0)] > own_faces
    frame = dist.to_frame()
    assert set(frame.loc[frame["node"] == 0, "particle"]) == {0}
    assert dist.per_particle().sum() == pytest.approx(dist.total_detected)
