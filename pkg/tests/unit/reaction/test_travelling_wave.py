# tests/unit/reaction/test_travelling_wave.py
import logging
import math

import numpy as np
import pytest

from services.exceptions import InvalidArgumentError
from services.reaction.travelling_wave import (
    NUTRIENT_ONE,
    ORIGIN,
    REAR,
    eigenvalues,
    first_integral,
    minimal_speed,
    rear_level,
    shoot,
    wave_admissible,
)


@pytest.fixture(scope="module")
def fast_wave():
    return shoot(2.0, 0.5)


def test_rear_level_solves_the_level_equation():
    v = rear_level(0.5)
    assert 0.0 < v < 0.5
    assert 1.0 - v + 0.5 * math.log(v) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 1.5])
def test_rear_level_vanishes_outside_the_unit_interval(gamma):
    assert rear_level(gamma) == 0.0


def test_rear_level_grows_with_gamma():
    assert rear_level(0.1) < rear_level(0.5) < rear_level(0.9)


def test_minimal_speed():
    assert minimal_speed(0.75) == pytest.approx(1.0)
    assert minimal_speed(0.5) == pytest.approx(math.sqrt(2.0))
    assert minimal_speed(1.2) == 0.0
    with pytest.raises(InvalidArgumentError):
        minimal_speed(-0.1)


def test_classification_flips_at_minimal_speed():
    c_star = math.sqrt(2.0)
    assert eigenvalues(NUTRIENT_ONE, c_star + 0.01, 0.5).classification == "real-split"
    assert eigenvalues(NUTRIENT_ONE, c_star - 0.01, 0.5).classification == "complex"
    assert eigenvalues(NUTRIENT_ONE, 2.0, 0.0).classification == "real-double"


def test_origin_and_rear_are_saddles():
    for at in (ORIGIN, REAR):
        low, high = eigenvalues(at, 1.0, 0.5).roots
        assert low.real < 0 < high.real


def test_nutrient_one_is_stable_for_admissible_speeds():
    pair = eigenvalues(NUTRIENT_ONE, 2.0, 0.5)
    assert all(r.real < 0 for r in pair.roots)
    assert pair.discriminant == pytest.approx(2.0)


def test_unknown_equilibrium_raises():
    with pytest.raises(InvalidArgumentError):
        eigenvalues("saddle", 1.0, 0.5)


def test_wave_admissible(caplog):
    assert wave_admissible(2.0, 0.5)
    assert not wave_admissible(1.0, 0.5)
    with caplog.at_level(logging.WARNING):
        assert wave_admissible(0.1, 1.5)
    assert "exceeds the reaction term" in caplog.text


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_non_positive_speed_raises(c):
    with pytest.raises(InvalidArgumentError):
        wave_admissible(c, 0.5)
    with pytest.raises(InvalidArgumentError):
        shoot(c, 0.5)


def test_non_positive_offset_raises():
    with pytest.raises(InvalidArgumentError):
        shoot(2.0, 0.5, delta=0.0)


def test_fast_wave_connects_rear_to_nutrient_one(fast_wave):
    assert fast_wave.admissible
    assert not fast_wave.diverged
    assert fast_wave.stays_positive
    assert fast_wave.terminal_distance < 0.05
    assert fast_wave.notes == []


def test_fast_wave_launches_next_to_the_rear_state(fast_wave):
    assert fast_wave.launch.U == pytest.approx(1e-6)
    assert fast_wave.launch.V == pytest.approx(rear_level(0.5), abs=1e-5)


def test_first_integral_is_conserved(fast_wave):
    k = first_integral(fast_wave.trajectory, 2.0, 0.5)
    assert np.all(np.isfinite(k))
    assert np.ptp(k) < 1e-5
    # the rear state sits on the same level as (0, 1, 0)
    assert k[0] == pytest.approx(2.0, abs=1e-5)


def test_nutrient_grows_monotonically_across_the_front(fast_wave):
    assert np.all(np.diff(fast_wave.trajectory[1]) >= -1e-12)


def test_smaller_offset_keeps_the_end_point(fast_wave):
    finer = shoot(2.0, 0.5, delta=1e-7)
    assert finer.stays_positive
    assert finer.terminal_distance < 0.05
    assert abs(finer.terminal_distance - fast_wave.terminal_distance) < 0.05


def test_slow_wave_goes_negative():
    slow = shoot(0.5, 0.5)
    assert not slow.admissible
    assert not slow.stays_positive


def test_strong_death_launches_from_the_origin():
    result = shoot(1.0, 1.2, xi_max=20.0)
    assert result.notes
    assert "origin" in result.notes[0]
    assert result.launch.V == pytest.approx(1e-6)
