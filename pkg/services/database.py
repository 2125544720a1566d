"""SQLite run registry: one row per `flask sim ...` invocation, shared by the CLI and /runs."""
import os
import sqlite3
import threading
from contextlib import contextmanager

import click
import logging
from flask import current_app
from flask.cli import with_appcontext


logger = logging.getLogger(__name__)

REGISTRY_SCHEMA = 1

_TABLES = {
    "jobs": '''
        CREATE TABLE IF NOT EXISTS jobs (
            id TEXT PRIMARY KEY,
            subcommand TEXT,
            pid INTEGER,          -- process that owns a running row
            status TEXT,          -- 'running', 'completed', 'failed', 'aborted'
            pct INTEGER,
            log TEXT,             -- JSON array of progress lines
            error TEXT,
            result TEXT,          -- JSON: run directory, exit code, output digests
            created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
            updated_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
        );
    ''',
    "registry_meta": '''
        CREATE TABLE IF NOT EXISTS registry_meta (
            key TEXT PRIMARY KEY,
            value TEXT
        );
    ''',
}

_INDEXES = (
    "CREATE INDEX IF NOT EXISTS jobs_by_subcommand ON jobs (subcommand, created_at);",
)


class DatabaseError(Exception):
    """Raised when the run registry cannot be read or written."""
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class DatabaseManager:
    """Thin wrapper over one sqlite3 connection.

    Replica worker threads report progress through the same connection, so every statement
    runs under a lock.
    """

    def __init__(self, connection):
        self.connection = connection
        self._lock = threading.RLock()

    def close(self):
        if self.connection:
            try:
                self.connection.close()
            except Exception as e:
                raise DatabaseError(f"Failed to close the registry: {e}")

    def __del__(self):
        try:
            self.close()
        except DatabaseError as e:
            logger.error(f"Warning: {e}")

    def execute_query(self, query, params=None, auto_commit=False):
        """
        Execute one statement and return its cursor.

        :param query: SQL with `?` placeholders.
        :param params: list or tuple of values, defaults to none.
        :param auto_commit: commit straight after executing.
        :raises DatabaseError: if sqlite rejects the statement.
        """
        if params is None:
            params = []
        with self._lock:
            try:
                cursor = self.connection.cursor()
                cursor.execute(query, params)
                if auto_commit:
                    self.commit()
                return cursor
            except Exception as e:
                raise DatabaseError(f"Database query failed: {e}")

    def commit(self):
        with self._lock:
            try:
                self.connection.commit()
            except Exception as e:
                raise DatabaseError(f"Commit failed: {e}")

    def rollback(self):
        with self._lock:
            try:
                self.connection.rollback()
                logger.info("Registry transaction rolled back.")
            except Exception as e:
                raise DatabaseError(f"Rollback failed: {e}")

    @contextmanager
    def transaction(self):
        """Read-modify-write block: commits on exit, rolls back if the body raises."""
        with self._lock:
            try:
                yield self
            except Exception:
                self.rollback()
                raise
            else:
                self.commit()


def create_db_manager(db_file: str):
    """
    Open the registry with a connection usable from worker threads.
    """
    connection = sqlite3.connect(
        db_file,
        timeout=30.0,
        detect_types=sqlite3.PARSE_DECLTYPES,
        check_same_thread=False
    )
    if db_file != ":memory:":
        connection.execute("PRAGMA journal_mode=WAL;")
    connection.execute("PRAGMA synchronous=NORMAL;")
    connection.row_factory = sqlite3.Row
    return DatabaseManager(connection)


def registry_schema(db_manager: DatabaseManager):
    row = db_manager.execute_query("SELECT value FROM registry_meta WHERE key='schema'").fetchone()
    return int(row["value"]) if row else None


def init_db(db_manager: DatabaseManager):
    """
    Create the registry tables if they do not exist and stamp the schema version.
    """
    try:
        logger.info("Initializing the run registry...")
        for name, schema in _TABLES.items():
            logger.debug(f"Creating table: {name} (if required)")
            db_manager.execute_query(schema)
        for index in _INDEXES:
            db_manager.execute_query(index)
        found = registry_schema(db_manager)
        if found is None:
            db_manager.execute_query("INSERT INTO registry_meta (key, value) VALUES ('schema', ?)",
                                     (str(REGISTRY_SCHEMA),))
        elif found != REGISTRY_SCHEMA:
            logger.warning("registry schema %s differs from %s; run `flask init-db --reset`", found,
                           REGISTRY_SCHEMA)
        db_manager.commit()
    except DatabaseError as e:
        logger.error(f"An error occurred: {e}")


def _alive(pid) -> bool:
    if not pid:
        return False
    try:
        os.kill(int(pid), 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def abort_stale_runs(db_manager: DatabaseManager) -> int:
    """Runs left 'running' by a process that no longer exists can never finish."""
    rows = db_manager.execute_query("SELECT id, pid FROM jobs WHERE status='running'").fetchall()
    stale = [row["id"] for row in rows if not _alive(row["pid"])]
    with db_manager.transaction():
        for job_id in stale:
            db_manager.execute_query("UPDATE jobs SET status='aborted', pct=0 WHERE id=?", (job_id,))
    if stale:
        logger.warning("marked %d stale run(s) as aborted", len(stale))
    return len(stale)


@click.command('init-db')
@click.option("--reset", is_flag=True, default=False, help="Drop every recorded run first.")
@with_appcontext
def init_db_command(reset):
    """
    Create the run registry tables.
    """
    db_manager = current_app.extensions['db_manager']
    if reset:
        for name in _TABLES:
            db_manager.execute_query(f"DROP TABLE IF EXISTS {name}")
        db_manager.commit()
        click.echo("run registry cleared")
    init_db(db_manager)
    click.echo(f"run registry ready (schema {REGISTRY_SCHEMA})")
