# tests/unit/test_outputs.py
import json

import numpy as np
import pandas as pd
import pytest

from services import outputs
from services.outputs import MANIFEST, SENTINEL, RunDirectory, dumps_json, read_manifest, sha256_file


@pytest.fixture
def rundir(tmp_path, mocker):
    mocker.patch.object(outputs, "build_id", return_value="v0.1.0")
    return RunDirectory(tmp_path / "run").start()


def test_start_leaves_a_sentinel(rundir):
    assert (rundir.path / SENTINEL).exists()
    assert not (rundir.path / MANIFEST).exists()


def test_finish_swaps_sentinel_for_manifest(rundir):
    rundir.write_table("phase", [{"beta": 1.0, "gamma": 0.5}])
    rundir.finish({"seed": 42}, extra={"summary": {"points": 1}})

    assert not (rundir.path / SENTINEL).exists()
    manifest = read_manifest(rundir.path)
    assert manifest["status"] == "completed"
    assert manifest["build_id"] == "v0.1.0"
    assert manifest["config"] == {"seed": 42}
    assert manifest["summary"] == {"points": 1}
    assert manifest["outputs"]["phase.csv"] == sha256_file(rundir.path / "phase.csv")


def test_restart_drops_an_old_manifest(rundir):
    rundir.finish({})
    again = RunDirectory(rundir.path).start()
    assert not again.manifest_path.exists()
    assert again.sentinel.exists()


def test_csv_format(rundir):
    path = rundir.write_table("checks", [{"check": "a", "estimate": 1 / 3, "passed": True},
                                         {"check": "b", "estimate": 2.0, "passed": False}],
                              columns=["check", "estimate", "passed"])
    data = path.read_bytes()
    assert b"\r\n" not in data
    assert data.decode().splitlines() == ["check,estimate,passed", "a,0.3333333333,True", "b,2,False"]


def test_missing_columns_are_blank(rundir):
    path = rundir.write_table("phase", [{"beta": 1.0}], columns=["beta", "gamma"])
    assert path.read_text().splitlines() == ["beta,gamma", "1,"]


def test_json_tables_use_null_for_missing(tmp_path):
    rd = RunDirectory(tmp_path, fmt="json").start()
    path = rd.write_table("phase", pd.DataFrame({"beta": [1.0, np.nan]}))
    assert path.suffix == ".json"
    assert json.loads(path.read_text()) == [{"beta": 1.0}, {"beta": None}]


def test_tables_are_byte_stable(tmp_path):
    rows = [{"x": float(v), "n": int(i)} for i, v in enumerate(np.linspace(0, 1, 7))]
    a = RunDirectory(tmp_path / "a").start().write_table("t", rows)
    b = RunDirectory(tmp_path / "b").start().write_table("t", rows)
    assert a.read_bytes() == b.read_bytes()


def test_dumps_json_handles_numpy_and_sets():
    text = dumps_json({"b": np.float64(0.5), "a": np.arange(3), "s": frozenset({3, 1})})
    assert json.loads(text) == {"a": [0, 1, 2], "b": 0.5, "s": [1, 3]}
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")


def test_budgets_reach_the_manifest(rundir):
    rundir.add_budget("beta=1,gamma=2", {"particles": 10, "steps": 3})
    rundir.finish({}, status="check-failed")
    manifest = read_manifest(rundir.manifest_path)
    assert manifest["status"] == "check-failed"
    assert manifest["budgets"] == {"beta=1,gamma=2": {"particles": 10, "steps": 3}}


def test_read_manifest_missing(tmp_path):
    assert read_manifest(tmp_path) is None


def test_build_id_falls_back_to_version(mocker):
    mocker.patch.object(outputs.subprocess, "run", side_effect=OSError("no git"))
    assert outputs.build_id() == "v0.1.0"
