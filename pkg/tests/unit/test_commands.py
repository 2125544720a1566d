# tests/unit/test_commands.py
import json

import pytest
from flask import current_app

from app import commands
from services.exceptions import BudgetExceededError, InvariantViolationError
from services.job_service import list_jobs
from services.outputs import MANIFEST, SENTINEL, read_manifest
from services.reaction.validation import CheckRow, ExitProbabilityRow


def write_config(tmp_path, name="run.json", **values):
    path = tmp_path / name
    path.write_text(json.dumps({"schema_version": 1, **values}))
    return str(path)


def jobs():
    return list_jobs(db=current_app.extensions["db_manager"])


class TestFixedPoint:
    @pytest.fixture(autouse=True)
    def setup(self, cli_runner, tmp_path):
        self.runner = cli_runner
        self.out = tmp_path / "fp"

    def test_worked_instance(self, worked_instance):
        path, _ = worked_instance
        result = self.runner.invoke(args=["sim", "fixed-point", str(path), "--out", str(self.out)])

        assert result.exit_code == 0, result.output
        assert "S = {1, 2}" in result.output
        assert "T^0(empty) = {}" in result.output
        assert "T^2(empty) = {1, 2}" in result.output
        stored = json.loads((self.out / "fixed_point.json").read_text())
        assert stored["S"] == [1, 2]
        assert (self.out / MANIFEST).exists()
        assert not (self.out / SENTINEL).exists()

    def test_brute_force_agrees(self, worked_instance):
        path, _ = worked_instance
        result = self.runner.invoke(args=["sim", "fixed-point", str(path), "--brute-force",
                                          "--out", str(self.out)])
        assert result.exit_code == 0, result.output
        assert "brute force agrees: True" in result.output

    def test_two_stage_split(self, worked_instance, tmp_path):
        _, data = worked_instance
        data = dict(data, split={"f_minus": [1.0, 0.0, 0.0]})
        path = tmp_path / "split.json"
        path.write_text(json.dumps(data))

        result = self.runner.invoke(args=["sim", "fixed-point", str(path), "--out", str(self.out)])
        assert result.exit_code == 0, result.output
        assert "S- = {1}" in result.output
        assert "S+ = {2}" in result.output

    def test_brute_force_refused_for_large_instances(self, tmp_path):
        n = 25
        path = tmp_path / "big.json"
        path.write_text(json.dumps({"labels": list(range(1, n + 1)), "e": [1.0] * n, "f": [0.0] * n,
                                    "M": [[0.0] * n for _ in range(n)]}))
        result = self.runner.invoke(args=["sim", "fixed-point", str(path), "--brute-force",
                                          "--out", str(self.out)])
        assert result.exit_code == 2
        assert not self.out.exists()

    def test_unparseable_instance(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        result = self.runner.invoke(args=["sim", "fixed-point", str(path), "--out", str(self.out)])
        assert result.exit_code == 2


class TestRunConfigErrors:
    @pytest.fixture(autouse=True)
    def setup(self, cli_runner, tmp_path):
        self.runner = cli_runner
        self.tmp_path = tmp_path

    def invoke(self, *args):
        return self.runner.invoke(args=["sim", "wave", "--out", str(self.tmp_path / "out"), *args])

    def test_unknown_key(self):
        result = self.invoke("--config", write_config(self.tmp_path, gama=0.5))
        assert result.exit_code == 2

    def test_dt_above_cap(self):
        result = self.invoke("--config", write_config(self.tmp_path, N=10, dt=0.2))
        assert result.exit_code == 2

    def test_missing_config_file(self):
        result = self.invoke("--config", str(self.tmp_path / "absent.json"))
        assert result.exit_code == 2

    def test_bad_flag_value(self):
        result = self.invoke("--replicas", "0")
        assert result.exit_code == 2

    def test_nothing_is_registered(self):
        self.invoke("--config", write_config(self.tmp_path, schema_version=3))
        assert jobs() == []


class TestDeterministicWorkflows:
    @pytest.fixture(autouse=True)
    def setup(self, cli_runner, tmp_path):
        self.runner = cli_runner
        self.tmp_path = tmp_path

    def run_twice(self, subcommand, config, *args):
        dirs = []
        for name in ("a", "b"):
            out = self.tmp_path / name
            result = self.runner.invoke(args=["sim", subcommand, "--config", config, "--out", str(out), *args])
            assert result.exit_code == 0, result.output
            dirs.append(out)
        return dirs

    def test_wave(self):
        config = write_config(self.tmp_path, gamma=0.5)
        a, b = self.run_twice("wave", config, "--speed", "2.0")

        assert (a / "wave.csv").read_bytes() == (b / "wave.csv").read_bytes()
        assert (a / "wave.csv").read_text().splitlines()[0] == "xi,U,V,W"
        summary = json.loads((a / "wave_summary.json").read_text())
        assert summary["admissible"] is True
        assert summary["stays_positive"] is True
        assert summary["eigenvalues"]["nutrient-one"]["classification"] == "real-split"
        assert read_manifest(a)["config"]["options"]["c"] == 2.0

    def test_loglaplace(self):
        config = write_config(self.tmp_path, half_width=1.0, d=1, gamma=0.0, options={"pitch": 0.1})
        a, b = self.run_twice("loglaplace-solve", config)

        assert (a / "loglaplace.csv").read_bytes() == (b / "loglaplace.csv").read_bytes()
        lines = (a / "loglaplace.csv").read_text().splitlines()
        assert lines[0] == "x1,value"
        assert len(lines) == 1 + 21
        assert read_manifest(a)["summary"]["value_at_origin"] < 1.0

    def test_exit_probability(self):
        config = write_config(self.tmp_path, half_width=1.0, d=1, gamma=0.5, options={"pitch": 0.1})
        a, b = self.run_twice("loglaplace-solve", config, "--kind", "exit-probability")

        assert (a / "exit_probability.json").read_bytes() == (b / "exit_probability.json").read_bytes()
        out = json.loads((a / "exit_probability.json").read_text())
        assert 0.0 < out["exit_nonzero_probability"] < 1.0
        assert 0.0 < out["mean_exit_mass"] < 1.0

    def test_op_sim_same_seed_same_lattice(self):
        config = write_config(self.tmp_path, seed=3, options={"generations": 20, "density": 0.9})
        a, b = self.run_twice("op-sim", config)

        assert (a / "op_sites.csv").read_bytes() == (b / "op_sites.csv").read_bytes()
        cluster = json.loads((a / "cluster.json").read_text())
        assert cluster["provenance"]

    def test_runs_are_registered(self):
        config = write_config(self.tmp_path, gamma=0.5)
        self.run_twice("wave", config, "--speed", "2.0")

        recorded = jobs()
        assert len(recorded) == 2
        assert all(j["status"] == "completed" for j in recorded)
        assert all(j["result"]["exit_code"] == 0 for j in recorded)


class TestExitCodes:
    @pytest.fixture(autouse=True)
    def setup(self, cli_runner, tmp_path):
        self.runner = cli_runner
        self.out = tmp_path / "out"

    def test_failed_check_exits_one(self, mocker):
        mocker.patch.object(commands, "run_engine_suite", return_value=[
            CheckRow("extinction gamma=0 t=2", 0.30, 0.37, 0.01, -7.0, False),
            CheckRow("first moment gamma=0.5 t=1", 0.61, 0.61, 0.01, 0.0, True),
        ])
        result = self.runner.invoke(args=["sim", "validate-engine", "--out", str(self.out)])

        assert result.exit_code == 1
        manifest = read_manifest(self.out)
        assert manifest["status"] == "check-failed"
        assert manifest["summary"]["failed"] == ["extinction gamma=0 t=2"]
        assert (self.out / "checks.csv").exists()

    def test_exhausted_budget_exits_three(self, mocker):
        mocker.patch.object(commands, "survival_probability",
                            side_effect=BudgetExceededError("particle budget", consumed={"particles": 10}))
        result = self.runner.invoke(args=["sim", "phase-scan", "--betas", "1,2", "--gammas", "0.5",
                                          "--out", str(self.out)])

        assert result.exit_code == 3
        assert (self.out / SENTINEL).exists()
        assert not (self.out / MANIFEST).exists()
        assert jobs()[0]["status"] == "failed"

    def test_partial_budget_marks_undecided(self, mocker):
        calls = iter([BudgetExceededError("particle budget", consumed={"particles": 10}), None])

        def fake(p, *args, **kwargs):
            outcome = next(calls)
            if outcome is not None:
                raise outcome
            return mocker.Mock(as_row=lambda: {"beta": p.beta, "gamma": p.gamma, "survival": 0.0,
                                               "ci_low": 0.0, "ci_high": 0.1, "replicas": 10,
                                               "censored": 2, "over_budget": 1, "stages": 4,
                                               "censor_box": 4.0, "censor_horizon": 20.0,
                                               "verdict": "death"})

        mocker.patch.object(commands, "survival_probability", side_effect=fake)
        result = self.runner.invoke(args=["sim", "phase-scan", "--betas", "1,2", "--gammas", "0.5",
                                          "--out", str(self.out)])

        assert result.exit_code == 0, result.output
        lines = (self.out / "phase.csv").read_text().splitlines()
        assert lines[0] == ",".join(commands.PHASE_COLUMNS)
        assert lines[1].endswith(commands.UNDECIDED)
        header = lines[0].split(",")
        exhausted = dict(zip(header, lines[1].split(",")))
        decided = dict(zip(header, lines[2].split(",")))
        assert (exhausted["censored"], exhausted["over_budget"]) == ("0", "200")
        assert (decided["censored"], decided["over_budget"], decided["stages"]) == ("2", "1", "4")
        assert read_manifest(self.out)["budgets"] == {"beta=1,gamma=0.5": {"particles": 10}}

    def test_bad_argument_in_body_exits_two(self, tmp_path):
        config = write_config(tmp_path, options={"density": 1.5, "generations": 5})
        result = self.runner.invoke(args=["sim", "op-sim", "--config", config, "--out", str(self.out)])

        assert result.exit_code == 2
        assert not (self.out / MANIFEST).exists()
        assert jobs()[0]["status"] == "failed"

    def test_invariant_violation_exits_one(self, mocker, caplog):
        mocker.patch.object(commands, "survival_probability",
                            side_effect=InvariantViolationError("exit iteration ended without a verdict"))
        result = self.runner.invoke(args=["sim", "phase-scan", "--betas", "1", "--gammas", "0.5",
                                          "--out", str(self.out)])

        assert result.exit_code == 1
        assert not (self.out / MANIFEST).exists()
        assert jobs()[0]["status"] == "failed"
        assert "internal invariant violated" in caplog.text

    def test_stage_count_comes_from_options(self, mocker, tmp_path):
        survival = mocker.patch.object(commands, "survival_probability", return_value=mocker.Mock(
            as_row=lambda: {"beta": 1.0, "gamma": 0.5, "verdict": "death"}))
        config = write_config(tmp_path, options={"stages": 2})
        result = self.runner.invoke(args=["sim", "phase-scan", "--config", config, "--out", str(self.out)])

        assert result.exit_code == 0, result.output
        assert survival.call_args.kwargs["stages"] == 2

    def test_exit_levels_write_the_convergence_table(self, mocker, tmp_path):
        mocker.patch.object(commands, "run_engine_suite", return_value=[
            CheckRow("first moment gamma=0.5 t=1", 0.61, 0.61, 0.01, 0.0, True)])
        convergence = mocker.patch.object(commands, "exit_probability_convergence", return_value=[
            ExitProbabilityRow(10, 100, 0.49, 0.05, 0.669, 0), ExitProbabilityRow(50, 100, 0.55, 0.05, 0.669, 0)])
        config = write_config(tmp_path, options={"exit_levels": [10, 50]})
        result = self.runner.invoke(args=["sim", "validate-engine", "--config", config, "--out", str(self.out)])

        assert result.exit_code == 0, result.output
        assert convergence.call_args.args[0] == [10, 50]
        lines = (self.out / "exit_probability.csv").read_text().splitlines()
        assert lines[0].startswith("N,replicas,estimate")
        assert len(lines) == 3
        errors = read_manifest(self.out)["summary"]["exit_probability_errors"]
        assert errors == pytest.approx([0.179, 0.119])

    def test_three_dimensional_death_block_uses_the_desk_preset(self, mocker, tmp_path):
        scan = mocker.patch.object(commands, "death_block_scan", return_value=(None, []))
        config = write_config(tmp_path, d=3, N=1, cell_size=1.0, beta=1.0, gamma=1.0)
        result = self.runner.invoke(args=["sim", "death-block", "--config", config, "--out", str(self.out)])

        assert result.exit_code == 1
        assert scan.call_args.args[1] == [8, 27]
        assert read_manifest(self.out)["summary"]["passing_b"] is None
