"""Registry rows for simulation runs: creation, progress lines, final status and lookups."""
import json
import os

from flask import current_app

STATUS_RUNNING = "running"
STATUS_COMPLETED = "completed"
STATUS_FAILED = "failed"
STATUS_ABORTED = "aborted"
FINISHED = (STATUS_COMPLETED, STATUS_FAILED, STATUS_ABORTED)


def _registry(db):
    return current_app.extensions["db_manager"] if db is None else db


def create_job(job_id, subcommand=None, db=None):
    db = _registry(db)
    db.execute_query(
        "INSERT INTO jobs (id, subcommand, pid, status, pct, log) VALUES (?, ?, ?, ?, ?, ?)",
        (job_id, subcommand, os.getpid(), STATUS_RUNNING, 0, json.dumps([])),
        auto_commit=True,
    )


def update_job(job_id, pct=None, message=None, error=None, result=None, done=False, db=None):
    """
    Append a progress line and move the run to its next status.

    Args:
        job_id: run identifier
        pct: progress percentage (0-100)
        message: log line to append
        error: failure message; marks the run failed
        result: JSON-serialisable summary (run directory, exit code, output digests)
        done: the run finished without error
    """
    db = _registry(db)
    with db.transaction():
        row = db.execute_query("SELECT log, result FROM jobs WHERE id=?", (job_id,)).fetchone()
        logs = json.loads(row["log"]) if row else []
        if message:
            logs.append(message)

        if error:
            status = STATUS_FAILED
        elif done:
            status = STATUS_COMPLETED
        else:
            status = STATUS_RUNNING

        # keep an earlier result when a later progress update carries none
        if result is not None:
            result_json = json.dumps(result, sort_keys=True)
        else:
            result_json = row["result"] if row else None

        db.execute_query(
            "UPDATE jobs SET pct=?, log=?, error=?, result=?, status=?, updated_at=CURRENT_TIMESTAMP WHERE id=?",
            (pct or 0, json.dumps(logs), error, result_json, status, job_id),
        )


def _row_to_job(row):
    result = None
    if row["result"]:
        try:
            result = json.loads(row["result"])
        except (json.JSONDecodeError, TypeError):
            result = row["result"]

    return {
        "id": row["id"],
        "subcommand": row["subcommand"],
        "pct": row["pct"] or 0,
        "log": json.loads(row["log"] or "[]"),
        "done": row["status"] in FINISHED,
        "error": row["error"],
        "result": result,
        "status": row["status"],
        "created_at": str(row["created_at"]) if row["created_at"] is not None else None,
    }


def get_job(job_id, db=None):
    """Registry entry as a dict, or None for an unknown id."""
    row = _registry(db).execute_query("SELECT * FROM jobs WHERE id=?", (job_id,)).fetchone()
    return _row_to_job(row) if row else None


def list_jobs(limit=50, subcommand=None, db=None):
    """Most recent runs first."""
    db = _registry(db)
    if subcommand:
        cursor = db.execute_query(
            "SELECT * FROM jobs WHERE subcommand=? ORDER BY created_at DESC, rowid DESC LIMIT ?",
            (subcommand, int(limit)),
        )
    else:
        cursor = db.execute_query("SELECT * FROM jobs ORDER BY created_at DESC, rowid DESC LIMIT ?", (int(limit),))
    return [_row_to_job(row) for row in cursor.fetchall()]


def make_progress(job_id, db=None):
    """Progress callback `(message, pct)` for the simulators, writing to the registry."""
    db = _registry(db)

    def progress(message, pct=None):
        update_job(job_id, pct=pct, message=message, db=db)

    return progress
