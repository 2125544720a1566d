# app/routes/runs.py
from flask import Blueprint, current_app, jsonify, request
import logging

from services.auth import auth
from services.job_service import get_job, list_jobs
from services.outputs import read_manifest


runs_bp = Blueprint('runs', __name__, url_prefix='/runs')

logger = logging.getLogger(__name__)


def _registry():
    return current_app.extensions["db_manager"]


@runs_bp.route('/', methods=['GET'])
@auth.login_required
def index():
    """Recorded runs, newest first. ?subcommand= filters, ?limit= caps the list."""
    limit = request.args.get('limit', default=50, type=int)
    subcommand = request.args.get('subcommand') or None
    jobs = list_jobs(limit=max(1, min(limit, 500)), subcommand=subcommand, db=_registry())
    return jsonify({"runs": jobs})


@runs_bp.route('/<job_id>', methods=['GET'])
@auth.login_required
def run_status(job_id):
    job = get_job(job_id, db=_registry())
    if not job:
        return jsonify({"error": "Run not found"}), 404

    result = job.get("result") or {}
    if isinstance(result, dict) and result.get("run_dir"):
        try:
            job["manifest"] = read_manifest(result["run_dir"])
        except (OSError, ValueError) as e:
            logger.warning("manifest for %s unreadable: %s", job_id, e)
            job["manifest"] = None

    resp = jsonify(job)
    resp.headers["Cache-Control"] = "no-store"
    return resp
