# tests/unit/reaction/test_dw_engine.py
import numpy as np
import pytest

from services.exceptions import BudgetExceededError, InvalidArgumentError, StepSizeError
from services.reaction.core import BoxDomain, FiniteMeasure
from services.reaction.dw_engine import (EngineConfig, ParticleSystem, RateField, dw_step, occupation_density,
                                         seed_measure, simulate_dw, simulate_dw_replicas, stability_cap,
                                         time_grid)
from services.reaction.rng import RngStream


def test_stability_cap():
    assert stability_cap(10, 0.0) == pytest.approx(0.05)
    assert stability_cap(10, 20.0) == pytest.approx(0.025)


def test_time_grid_default_and_explicit_steps():
    dt, steps = time_grid(1.0, 0.1)
    assert steps == 10
    assert dt == pytest.approx(0.1)
    dt, steps = time_grid(1.0, 0.1, dt=0.05)
    assert steps == 20
    with pytest.raises(StepSizeError):
        time_grid(1.0, 0.1, dt=0.2)
    with pytest.raises(InvalidArgumentError):
        time_grid(0.0, 0.1)


def test_engine_config_rejects_unknown_placement():
    with pytest.raises(InvalidArgumentError):
        EngineConfig(placement="corner")


def test_seed_measure_places_floor_mN_plus_U(line_box):
    mu = FiniteMeasure.dirac(line_box, 0.05, [0.0], 1.0)
    sys = ParticleSystem(line_box, 0.05, 20)
    seed_measure(sys, mu, RngStream(1).key, placement="center")
    assert len(sys.positions) == 20
    assert np.allclose(sys.positions, sys.positions[0])
    assert sys.alive_mass()[0] == pytest.approx(1.0)


def test_dw_step_rejects_large_dt(line_box):
    sys = ParticleSystem(line_box, 0.05, 20)
    eta = RateField.constant(line_box, 0.05, 0.0)
    with pytest.raises(StepSizeError):
        dw_step(sys, 0.1, eta, line_box)


def test_bookkeeping_reconciles_with_killing_and_creation(line_box, rng):
    eta = RateField.from_function(line_box, 0.05, lambda x: np.where(x[:, 0] > 0, 2.0, -2.0))
    sys = ParticleSystem(line_box, 0.05, 20)
    seed_measure(sys, FiniteMeasure.uniform(line_box, 0.05, 2.0, BoxDomain.centered(1.0, 1)), rng.key)
    for _ in range(40):
        dw_step(sys, 0.02, eta, line_box)
    assert np.all(sys.reconciliation_gap() == 0)
    assert sys.tallies["eta_births"][0] > 0
    assert sys.tallies["eta_deaths"][0] > 0


def test_same_stream_same_run(line_box, origin_mass, rng, small_engine):
    eta = RateField.constant(line_box, 0.05, 0.5)
    a = simulate_dw(origin_mass, eta, line_box, 2.0, small_engine.N, rng)
    b = simulate_dw(origin_mass, eta, line_box, 2.0, small_engine.N, rng)
    np.testing.assert_array_equal(a.mass_path, b.mass_path)
    np.testing.assert_array_equal(a.occupation_snapshots, b.occupation_snapshots)


def test_replica_path_does_not_depend_on_batch(line_box, origin_mass):
    eta = RateField.constant(line_box, 0.05, 0.2)
    streams = [RngStream(5, i) for i in range(3)]
    batch = simulate_dw_replicas(origin_mass, eta, line_box, 1.0, 20, streams, stop_on_extinction=False)
    alone = simulate_dw(origin_mass, eta, line_box, 1.0, 20, streams[1], stop_on_extinction=False)
    np.testing.assert_array_equal(batch[1].mass_path, alone.mass_path)
    np.testing.assert_allclose(batch[1].occupation_snapshots, alone.occupation_snapshots)
    assert batch[1].tallies == alone.tallies


def test_exit_measure_sits_on_the_faces(rng):
    box = BoxDomain.centered(0.5, 2)
    mu = FiniteMeasure.dirac(box, 0.05, [0.0, 0.0], 2.0)
    run = simulate_dw(mu, RateField.constant(box, 0.05, 0.0), box, 3.0, 20, rng)
    nu = run.exit
    assert nu.total() > 0
    axis = nu.faces // 2
    on_face = np.isclose(np.abs(nu.points[np.arange(len(nu.points)), axis]), 0.5)
    assert on_face.all()


def test_mean_mass_decays_like_exp_minus_gamma_t(line_box, origin_mass):
    gamma, t, reps = 1.0, 0.5, 400
    eta = RateField.constant(line_box, 0.05, gamma)
    streams = [RngStream(3, i) for i in range(reps)]
    runs = simulate_dw_replicas(origin_mass, eta, line_box, t, 20, streams, track_occupation=False)
    masses = np.array([r.final_mass() for r in runs])
    se = masses.std(ddof=1) / np.sqrt(reps)
    assert abs(masses.mean() - np.exp(-gamma * t)) < 4 * se + 0.01


def test_particle_budget(line_box, origin_mass, rng):
    eta = RateField.constant(line_box, 0.05, 0.0)
    with pytest.raises(BudgetExceededError) as exc:
        simulate_dw(origin_mass, eta, line_box, 5.0, 20, rng, max_particles=5)
    assert exc.value.consumed["particles"] > 5


def test_step_budget(line_box, origin_mass, rng):
    eta = RateField.constant(line_box, 0.05, 0.0)
    with pytest.raises(BudgetExceededError):
        simulate_dw(origin_mass, eta, line_box, 5.0, 20, rng, max_steps=10)


def test_initial_measure_must_fit_in_domain(origin_mass, rng):
    small = BoxDomain.centered(1.0, 1)
    with pytest.raises(InvalidArgumentError):
        simulate_dw(origin_mass, RateField.constant(small, 0.05, 0.0), small, 1.0, 20, rng)


def test_occupation_density_arguments(line_box, origin_mass, rng):
    run = simulate_dw(origin_mass, RateField.constant(line_box, 0.05, 0.0), line_box, 1.0, 20, rng,
                      stop_on_extinction=False)
    assert occupation_density(run, 0.5, 0.5, [0.0], 0.1) == 0.0
    assert occupation_density(run, 0.0, 1.0, [-4.0], 8.0) == pytest.approx(run.total_occupation() / 8.0)
    with pytest.raises(InvalidArgumentError):
        occupation_density(run, 0.6, 0.5, [0.0], 0.1)
    with pytest.raises(InvalidArgumentError):
        occupation_density(run, 0.0, 1.0, [0.0], 0.01)
    with pytest.raises(InvalidArgumentError):
        occupation_density(run, 0.0, 1.0, [5.0], 0.1)
