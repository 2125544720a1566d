# /app/__init__.py
import os
import json
import time
import logging
from pathlib import Path

from dotenv import load_dotenv
from flask import Flask, g, jsonify, request

from config import ProductionConfig
from services.database import DatabaseError, abort_stale_runs, create_db_manager, init_db, init_db_command
from services.config_service import ConfigManager
from app.routes import runs_bp
from app.commands import sim


load_dotenv()

logger = logging.getLogger(__name__)


def init_sentry():
    """Initialize Sentry error tracking if SENTRY_DSN is configured."""
    sentry_dsn = os.getenv("SENTRY_DSN")
    if not sentry_dsn:
        return

    try:
        import sentry_sdk
        from sentry_sdk.integrations.flask import FlaskIntegration
        from sentry_sdk.integrations.logging import LoggingIntegration

        environment = os.getenv("FLASK_ENV") or os.getenv("ENV") or "development"

        sentry_sdk.init(
            dsn=sentry_dsn,
            environment=environment,
            integrations=[
                FlaskIntegration(),
                # warnings from long scans become breadcrumbs, errors become events
                LoggingIntegration(level=logging.WARNING, event_level=logging.ERROR),
            ],
            traces_sample_rate=float(os.getenv("SENTRY_TRACES_SAMPLE_RATE", "0.0")),
            send_default_pii=False,
            attach_stacktrace=True,
            debug=os.getenv("SENTRY_DEBUG", "0") == "1",
        )
        logging.info(f"Sentry initialized for environment: {environment}")
    except ImportError:
        logging.warning("sentry-sdk not installed, error tracking disabled")
    except Exception as e:
        logging.error(f"Failed to initialize Sentry: {e}")


def _resolve_path(app: Flask, key: str, default_rel: str, *, base: Path, is_file: bool = False):
    """
    Anchor a relative config path under `base` and create its directory.
    Absolute values are used as-is; ':memory:' passes through for an in-memory registry.
    """
    val = app.config.get(key)
    if val == ":memory:":
        return val
    p = Path(val or default_rel)
    if not p.is_absolute():
        p = (base / p).resolve()
    (p.parent if is_file else p).mkdir(parents=True, exist_ok=True)
    app.config[key] = str(p)
    return p


def _configure_logging(app: Flask):
    logging.basicConfig(
        level=logging.DEBUG if app.config.get("DEBUG") else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        force=True,  # prevent duplicate handlers in some reload scenarios
    )


def _register_request_hooks(app: Flask):
    @app.before_request
    def start_timer():
        g.start_time = time.time()

    @app.after_request
    def log_duration(response):
        if hasattr(g, "start_time"):
            logger.debug("%s %s -> %d in %.3fs", request.method, request.path, response.status_code,
                         time.time() - g.start_time)
        return response

    @app.errorhandler(DatabaseError)
    def registry_unavailable(e):
        logger.error("run registry error: %s", e.message)
        return jsonify({"error": "run registry unavailable"}), 503


def create_app(config_name: str = ""):
    init_sentry()

    app = Flask(__name__, instance_relative_config=True)
    app.config.from_object(ProductionConfig)
    app.secret_key = os.getenv("FLASK_SECRET", os.urandom(24))

    # JSON first so an explicit config class (e.g. Testing) has the last word
    app.config.update(ConfigManager().config)
    if config_name:
        app.config.from_object(f"config.{config_name}Config")

    project_root = Path(__file__).resolve().parent.parent
    instance_root = Path(app.instance_path)
    instance_root.mkdir(parents=True, exist_ok=True)
    app.config["PROJECT_ROOT"] = str(project_root)
    app.config["INSTANCE_ROOT"] = str(instance_root)

    _resolve_path(app, "EXPORT_ROOT", app.config.get("EXPORT_ROOT_SUBDIR", "runs"), base=instance_root)
    _resolve_path(app, "database", "reaction_runs.db", base=instance_root, is_file=True)

    _configure_logging(app)
    logging.debug("export_root=%s  database=%s", app.config["EXPORT_ROOT"], app.config["database"])

    app.config["USERS"] = json.loads(os.getenv("USERS", "{}"))

    # one registry connection shared by the CLI and the runs blueprint
    registry = create_db_manager(app.config["database"])
    init_db(registry)
    abort_stale_runs(registry)
    app.extensions["db_manager"] = registry

    app.register_blueprint(runs_bp)
    _register_request_hooks(app)

    app.cli.add_command(init_db_command)  # type: ignore
    app.cli.add_command(sim)  # type: ignore

    return app
