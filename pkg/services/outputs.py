"""Run directories: byte-stable tables, digests and an atomically written manifest.

A run directory holds a `.partial` sentinel while the run is in progress. The manifest is
written to a temporary file and moved into place, and only then is the sentinel removed,
so a directory never holds both.
"""
import hashlib
import json
import logging
import os
import subprocess
import time
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import numpy as np
import pandas as pd

from services.reaction import __version__


logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SENTINEL = ".partial"
FLOAT_FORMAT = "%.10g"


def sha256_file(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _plain(value):
    """numpy scalars and arrays to JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (set, frozenset)):
        return sorted(_plain(v) for v in value)
    return value


def dumps_json(obj: Any) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def table_frame(rows: Union[pd.DataFrame, Iterable[dict]], columns: Optional[list] = None) -> pd.DataFrame:
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    if columns is not None:
        frame = frame.reindex(columns=columns)
    return frame


def build_id() -> str:
    """`git describe` of the working tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent.parent)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class RunDirectory:
    """Output directory of one subcommand invocation."""

    def __init__(self, path: Union[str, Path], fmt: str = "csv"):
        self.path = Path(path)
        self.fmt = fmt
        self.outputs: Dict[str, str] = {}
        self.budgets: Dict[str, Any] = {}
        self._started = None

    @property
    def sentinel(self) -> Path:
        return self.path / SENTINEL

    @property
    def manifest_path(self) -> Path:
        return self.path / MANIFEST

    def start(self) -> "RunDirectory":
        self.path.mkdir(parents=True, exist_ok=True)
        if self.manifest_path.exists():
            logger.info("replacing the manifest of an earlier run in %s", self.path)
            self.manifest_path.unlink()
        self.sentinel.write_text("running\n")
        self._started = time.monotonic()
        return self

    def _record(self, path: Path) -> str:
        digest = sha256_file(path)
        self.outputs[path.name] = digest
        logger.debug("wrote %s (sha256 %s)", path, digest[:12])
        return digest

    def write_table(self, name: str, rows, columns: Optional[list] = None, fmt: Optional[str] = None) -> Path:
        """`name` without extension; CSV uses '\\n' line endings and %.10g floats."""
        fmt = fmt or self.fmt
        frame = table_frame(rows, columns)
        if fmt == "csv":
            path = self.path / f"{name}.csv"
            data = frame.to_csv(index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
            _atomic_write(path, data.encode("utf-8"))
        else:
            path = self.path / f"{name}.json"
            records = frame.astype(object).where(frame.notna(), None).to_dict(orient="records")
            _atomic_write(path, dumps_json(records).encode("utf-8"))
        self._record(path)
        return path

    def write_json(self, name: str, obj: Any) -> Path:
        path = self.path / f"{name}.json"
        _atomic_write(path, dumps_json(obj).encode("utf-8"))
        self._record(path)
        return path

    def add_budget(self, stage: str, consumed: Dict[str, Any]):
        self.budgets[stage] = consumed

    def finish(self, config: dict, status: str = "completed", extra: Optional[dict] = None) -> Path:
        wall = time.monotonic() - self._started if self._started is not None else 0.0
        manifest = {
            "config": config,
            "build_id": build_id(),
            "status": status,
            "wall_time_seconds": round(wall, 3),
            "budgets": self.budgets,
            "outputs": dict(sorted(self.outputs.items())),
        }
        if extra:
            manifest.update(extra)
        _atomic_write(self.manifest_path, dumps_json(manifest).encode("utf-8"))
        if self.sentinel.exists():
            self.sentinel.unlink()
        return self.manifest_path


def read_manifest(path: Union[str, Path]) -> Optional[dict]:
    path = Path(path)
    target = path / MANIFEST if path.is_dir() else path
    if not target.exists():
        return None
    with open(target, "r") as f:
        return json.load(f)
