# tests/unit/reaction/test_phase_scan.py
import pytest

from services.exceptions import BudgetExceededError, InvalidArgumentError
from services.reaction import phase_scan
from services.reaction.core import BoxDomain, FiniteMeasure, Params
from services.reaction.dw_engine import EngineConfig
from services.reaction.rng import RngStream


@pytest.fixture
def coarse():
    return EngineConfig(N=10, cell_size=0.1, horizon=20.0)


def _point(gamma, verdict):
    return phase_scan.PhasePoint(1.0, gamma, 0.0, 0.0, 0.0, 10, 0, verdict, 4.0, 20.0)


def test_death_epsilon():
    assert phase_scan.death_epsilon(3) == pytest.approx(1.0 / 108.0)
    assert phase_scan.death_epsilon(2) == pytest.approx(1.0 / 36.0)


@pytest.mark.parametrize("lo, hi, verdict", [
    (0.2, 0.4, phase_scan.LIFE),
    (0.0, 0.03, phase_scan.DEATH),
    (0.01, 0.2, phase_scan.UNDECIDED),
])
def test_verdict_for(lo, hi, verdict):
    assert phase_scan.verdict_for(lo, hi, 0.05) == verdict


def test_scaled_block_sizes():
    L, M = phase_scan.scaled_block_sizes(8.0, 3, 0.1)
    assert L == pytest.approx(4.0)
    assert M == 8.0
    # never below one pitch
    assert phase_scan.scaled_block_sizes(0.001, 2, 0.1)[0] == pytest.approx(0.1)


def _run(mocker, exits, extinct=True):
    run = mocker.Mock(extinct=extinct)
    run.exit.is_zero.return_value = not exits
    return run


@pytest.mark.parametrize("exits, extinct, last, tag", [
    (False, True, False, phase_scan.DEAD),
    (False, False, False, phase_scan.CENSORED),
    (True, True, False, None),
    (True, False, False, phase_scan.CENSORED),
    (True, True, True, phase_scan.ALIVE),
    (True, False, True, phase_scan.ALIVE),
])
def test_classify(mocker, exits, extinct, last, tag):
    assert phase_scan._classify(_run(mocker, exits, extinct), last) == tag


def test_stage_boxes_grow_linearly():
    box = phase_scan.stage_box(1.5, 3, 2)
    assert box.lower == (-4.5, -4.5)
    assert box.upper == (4.5, 4.5)


def test_alive_only_when_the_last_stage_exits(mocker, coarse):
    runs = [_run(mocker, False), _run(mocker, True), None, _run(mocker, True)]
    mocker.patch.object(phase_scan, "_first_stage", return_value=runs)
    mocker.patch.object(phase_scan, "carry_nutrient", return_value=1.0)
    # replica 1 exits every box, replica 3 dies inside the third
    chain = mocker.patch.object(phase_scan, "simulate_direct", side_effect=[
        _run(mocker, True), _run(mocker, True), _run(mocker, True),
        _run(mocker, True), _run(mocker, False),
    ])
    rng = RngStream(5)
    point = phase_scan.survival_probability(Params(1.0, 0.5, 1), None, 2.0, 10.0, 4, coarse, rng)

    assert point.survival_estimate == pytest.approx(1.0 / 3.0)
    assert point.over_budget == 1
    assert point.censored == 0
    assert point.stages == phase_scan.SURVIVAL_STAGES
    assert chain.call_count == 5
    widths = [call.args[3].upper[0] for call in chain.call_args_list]
    assert widths == [4.0, 6.0, 8.0, 4.0, 6.0]
    streams = [call.args[6] for call in chain.call_args_list]
    assert streams[:3] == [rng.child("survival", 1).child("stage", n) for n in (2, 3, 4)]
    row = point.as_row()
    assert (row["over_budget"], row["censored"], row["stages"]) == (1, 0, 4)


def test_over_budget_stage_is_not_counted(mocker, coarse):
    mocker.patch.object(phase_scan, "_first_stage", return_value=[_run(mocker, True), _run(mocker, False)])
    mocker.patch.object(phase_scan, "carry_nutrient", return_value=1.0)
    mocker.patch.object(phase_scan, "simulate_direct", side_effect=BudgetExceededError("particles"))
    point = phase_scan.survival_probability(Params(1.0, 0.5, 1), None, 2.0, 10.0, 2, coarse, RngStream(5))
    assert point.over_budget == 1
    assert point.survival_estimate == 0.0


def test_single_stage_reads_the_first_exit(mocker, coarse):
    mocker.patch.object(phase_scan, "_first_stage", return_value=[_run(mocker, True), _run(mocker, False)])
    chain = mocker.patch.object(phase_scan, "simulate_direct")
    point = phase_scan.survival_probability(Params(1.0, 0.5, 1), None, 2.0, 10.0, 2, coarse, RngStream(5),
                                            stages=1)
    assert point.survival_estimate == pytest.approx(0.5)
    chain.assert_not_called()


def test_stage_count_must_be_positive(coarse):
    with pytest.raises(InvalidArgumentError):
        phase_scan.survival_probability(Params(1.0, 0.5, 1), None, 2.0, 10.0, 2, coarse, RngStream(5), stages=0)


def test_zero_beta_point_is_death_consistent(coarse):
    point = phase_scan.survival_probability(Params(0.0, 1.0, 1), None, 4.0, 20.0, 200, coarse, RngStream(1))
    assert point.verdict == phase_scan.DEATH
    assert point.ci_high < phase_scan.DEFAULT_LEVEL
    assert point.ci_low <= point.survival_estimate <= point.ci_high
    assert point.over_budget == 0
    row = point.as_row()
    assert row["censor_box"] == 4.0
    assert row["verdict"] == phase_scan.DEATH


def test_line_survival_falls_with_horizon(coarse):
    trend = phase_scan.certain_death_trend(Params(0.0, 0.0, 1), None, 20.0, [0.5, 2.0, 8.0], 200, coarse,
                                           RngStream(3))
    assert trend["replicas"] == 200
    assert trend["decreasing"]
    assert trend["separated"]
    assert trend["extinct"] == sorted(trend["extinct"])
    assert trend["exited"] <= 2


def test_fully_censored_point_exhausts_the_budget(coarse):
    with pytest.raises(BudgetExceededError):
        phase_scan.survival_probability(Params(1.0, 0.0, 1), None, 4.0, 0.05, 5, coarse, RngStream(1))


def test_seed_measure_must_fit_the_censoring_box(coarse):
    mu = FiniteMeasure.dirac(BoxDomain.centered(4.0, 1), 0.1, [3.0], 1.0)
    with pytest.raises(InvalidArgumentError):
        phase_scan.survival_probability(Params(1.0, 0.0, 1), mu, 2.0, 1.0, 5, coarse, RngStream(1))


def test_psi_bisection_narrows_to_tolerance(mocker, coarse):
    survival = mocker.patch.object(
        phase_scan, "survival_probability",
        side_effect=lambda p, *a, **k: _point(p.gamma, phase_scan.LIFE if p.gamma < 0.3 else phase_scan.DEATH))
    bracket = phase_scan.estimate_psi(1.0, 0.01, 50, coarse, RngStream(0), d=1)
    assert not bracket.undecided
    assert bracket.gamma_low <= 0.3 <= bracket.gamma_high
    assert bracket.width <= 0.01
    assert survival.call_count == len(bracket.points) == 7
    # every evaluation uses the same step so replicas stay coupled
    steps = {call.kwargs["dt"] for call in survival.call_args_list}
    assert len(steps) == 1


def test_psi_bisection_reports_spent_budget(mocker, coarse):
    mocker.patch.object(phase_scan, "survival_probability",
                        side_effect=lambda p, *a, **k: _point(p.gamma, phase_scan.DEATH))
    bracket = phase_scan.estimate_psi(1.0, 1e-6, 3, coarse, RngStream(0), d=1)
    assert bracket.undecided
    assert bracket.gamma_high == pytest.approx(0.125)


def test_psi_bisection_stops_when_undecided(mocker, coarse):
    mocker.patch.object(phase_scan, "survival_probability",
                        side_effect=lambda p, *a, **k: _point(p.gamma, phase_scan.UNDECIDED))
    bracket = phase_scan.estimate_psi(1.0, 0.01, 50, coarse, RngStream(0), d=1)
    assert bracket.undecided
    assert (bracket.gamma_low, bracket.gamma_high) == (0.0, 1.0)


def test_psi_rejects_bad_arguments(coarse):
    with pytest.raises(InvalidArgumentError):
        phase_scan.estimate_psi(0.0, 0.01, 5, coarse, RngStream(0))
    with pytest.raises(InvalidArgumentError):
        phase_scan.estimate_psi(1.0, 0.0, 5, coarse, RngStream(0))


def test_monotonicity_under_common_random_numbers(coarse):
    box = BoxDomain.centered(1.0, 1)
    mu = FiniteMeasure.dirac(box, 0.1, [0.0], 0.5)
    engine = EngineConfig(N=10, cell_size=0.1, horizon=30.0)
    report = phase_scan.monotonicity_scan([0.5, 2.0], [0.5, 1.5], mu, 0.5, box, engine, 8, RngStream(12))
    assert report.comparisons > 0
    assert report.clean
