# tests/unit/reaction/test_validation.py
import math

import pytest

from services.exceptions import InvalidArgumentError, StepSizeError
from services.reaction import validation
from services.reaction.core import Params
from services.reaction.rng import RngStream
from services.reaction.validation import (
    CheckRow,
    ValidationConfig,
    check_step_sizes,
    exit_probability_convergence,
    nutrient_compare,
    run_engine_suite,
)


@pytest.fixture
def tiny():
    """Just enough replicas for every stage to produce a row."""
    return ValidationConfig(N=10, cell_size=0.1, replicas=4, chunk=2, free_half_width=2.0,
                            laplace_half_width=1.0, laplace_pitch=0.1, laplace_horizon=5.0)


def test_check_row_as_row():
    row = CheckRow("first moment", 0.61, 0.6065, 0.01, 0.35, True).as_row()
    assert list(row) == ["check", "estimate", "oracle", "se", "z", "passed"]
    assert row["passed"] is True


@pytest.mark.parametrize("kwargs", [
    {"N": 0},
    {"replicas": 1},
    {"cell_size": 0.0},
    {"chunk": 0},
])
def test_validation_config_rejects(kwargs):
    with pytest.raises(InvalidArgumentError):
        ValidationConfig(**kwargs)


def test_step_size_above_cap_is_rejected_up_front(mocker):
    extinction = mocker.patch.object(validation, "extinction_checks")
    cfg = ValidationConfig(N=200, dt=0.1)
    with pytest.raises(StepSizeError):
        run_engine_suite(cfg, rng=None)
    extinction.assert_not_called()


def test_cap_follows_N():
    check_step_sizes(ValidationConfig(N=10, dt=0.05))
    with pytest.raises(StepSizeError):
        check_step_sizes(ValidationConfig(N=10, dt=0.06))


def test_non_positive_dt_is_invalid():
    with pytest.raises(InvalidArgumentError):
        check_step_sizes(ValidationConfig(N=10, dt=-0.01))


def test_suite_reports_progress_per_stage(mocker):
    row = CheckRow("x", 1.0, 1.0, 0.1, 0.0, True)
    mocker.patch.object(validation, "extinction_checks", return_value=[row, row])
    mocker.patch.object(validation, "moment_checks", return_value=[row, row])
    mocker.patch.object(validation, "laplace_functional_check", return_value=row)
    seen = []
    rows = run_engine_suite(ValidationConfig(N=10), rng=None, progress=lambda label, pct: seen.append(pct))
    assert len(rows) == 5
    assert seen == [0, 33, 66, 100]


def test_tiny_suite_runs_end_to_end(tiny, rng):
    rows = run_engine_suite(tiny, rng)
    assert [r.check for r in rows] == [
        "extinction gamma=0 t=2",
        "extinction gamma=1 t=1",
        "first moment gamma=0.5 t=1",
        "second moment gamma=0 t=1",
        "laplace functional d=1 box (-4,4)",
    ]
    for r in rows:
        assert 0.0 <= r.oracle
        assert not math.isnan(r.z)


def test_extinction_oracles(tiny, rng):
    rows = validation.extinction_checks(tiny, rng)
    assert rows[0].oracle == pytest.approx(math.exp(-1.0))
    assert 0.0 < rows[1].oracle < rows[0].oracle


def test_tiny_suite_is_reproducible(tiny):
    first = [r.as_row() for r in run_engine_suite(tiny, RngStream(7, 0))]
    second = [r.as_row() for r in run_engine_suite(tiny, RngStream(7, 0))]
    assert first == second


def test_nutrient_compare_needs_a_line():
    with pytest.raises(InvalidArgumentError):
        nutrient_compare(Params(1.0, 0.5, 2), [10], 4, rng=None)


def test_exit_probability_counts_nonzero_exits(mocker):
    mocker.patch.object(validation, "exit_nonzero_probability", return_value=0.6)
    runs = [mocker.Mock(extinct=True, exit_total=mocker.Mock(return_value=v)) for v in (0.0, 0.5, 1.0, 0.0)]
    mocker.patch.object(validation, "_dw_batch", return_value=runs)
    rows = exit_probability_convergence([10, 20], 4, RngStream(1))
    assert [r.N for r in rows] == [10, 20]
    assert rows[0].estimate == pytest.approx(0.5)
    assert rows[0].error == pytest.approx(0.1)
    assert rows[0].se == pytest.approx(0.25)
    assert rows[0].as_row()["alive_at_horizon"] == 0


def test_exit_probability_runs_end_to_end(rng):
    rows = exit_probability_convergence([5, 10], 6, rng, half_width=1.0, pitch=0.1, horizon=20.0, chunk=3)
    assert len(rows) == 2
    assert rows[0].oracle == rows[1].oracle
    assert 0.0 < rows[0].oracle < 1.0
    for r in rows:
        assert 0.0 <= r.estimate <= 1.0
        assert r.replicas == 6
