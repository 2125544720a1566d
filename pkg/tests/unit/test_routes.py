import json
from base64 import b64encode

import pytest
from flask import current_app

from services.database import DatabaseError
from services.job_service import create_job, update_job
from services.outputs import RunDirectory


class TestRoutes:
    """Class-based tests for the run registry routes."""

    @pytest.fixture(autouse=True)
    def setup(self, client, app_context):
        """Set up the test client and the in-memory registry."""
        self.client = client
        self.db = current_app.extensions["db_manager"]

    def test_requires_auth(self):
        response = self.client.get('/runs/')
        assert response.status_code == 401

    def test_wrong_password(self):
        bad = b64encode(b"testuser:nope").decode("utf-8")
        response = self.client.get('/runs/', headers={'Authorization': f'Basic {bad}'})
        assert response.status_code == 401

    def test_empty_index(self, auth_headers):
        response = self.client.get('/runs/', headers=auth_headers)
        assert response.status_code == 200
        assert response.get_json() == {"runs": []}

    def test_index_filters_by_subcommand(self, auth_headers):
        create_job("wave-1", subcommand="wave", db=self.db)
        create_job("op-sim-1", subcommand="op-sim", db=self.db)

        response = self.client.get('/runs/?subcommand=wave', headers=auth_headers)
        runs = response.get_json()["runs"]
        assert [r["id"] for r in runs] == ["wave-1"]

    def test_missing_run(self, auth_headers):
        response = self.client.get('/runs/does-not-exist', headers=auth_headers)
        assert response.status_code == 404
        assert response.get_json()["error"] == "Run not found"

    def test_run_status_includes_manifest(self, auth_headers, tmp_path):
        rundir = RunDirectory(tmp_path / "wave-2").start()
        rundir.write_json("wave_summary", {"c": 2.0})
        rundir.finish({"seed": 1})
        create_job("wave-2", subcommand="wave", db=self.db)
        update_job("wave-2", pct=100, result={"run_dir": str(rundir.path), "exit_code": 0}, done=True, db=self.db)

        response = self.client.get('/runs/wave-2', headers=auth_headers)
        assert response.status_code == 200
        assert response.headers["Cache-Control"] == "no-store"
        body = response.get_json()
        assert body["status"] == "completed"
        assert body["manifest"]["config"] == {"seed": 1}
        assert "wave_summary.json" in body["manifest"]["outputs"]

    def test_running_job_has_no_manifest(self, auth_headers):
        create_job("scan-1", subcommand="phase-scan", db=self.db)

        body = json.loads(self.client.get('/runs/scan-1', headers=auth_headers).data)
        assert body["done"] is False
        assert "manifest" not in body

    def test_registry_failure_is_503(self, auth_headers, mocker):
        mocker.patch("app.routes.runs.list_jobs", side_effect=DatabaseError("database is locked"))

        response = self.client.get('/runs/', headers=auth_headers)
        assert response.status_code == 503
        assert response.get_json() == {"error": "run registry unavailable"}
