# services/config_bridge.py
"""Project-wide simulation defaults: config.json's `simulation` section, then REACTION_* variables."""
from __future__ import annotations

import json
import logging
import os
from typing import Any

from flask import current_app, has_app_context

from services.config_service import ConfigManager
from services.exceptions import ConfigValidationError


logger = logging.getLogger(__name__)

ENV_PREFIX = "REACTION_"
_CM = ConfigManager()


def _dig(d: dict | None, *keys: str) -> Any | None:
    node = d
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            return None
        node = node[k]
    return node


def _section(section: str):
    root = _CM.get(section, default=None)
    if root is None and has_app_context():
        root = current_app.config.get(section)
    if root is None:
        err = _CM.last_load_error
        if err:
            raise ConfigValidationError(
                f"config.json is invalid ({_CM.resolved_path}): line {err.lineno}, column {err.colno}: {err.msg}"
            )
    return root


def get_cfg(*keys: str, section: str = "simulation", default=None):
    """
    Read the `simulation` section (or another one) of config.json.
    - get_cfg()             -> the whole section
    - get_cfg("a", "b")     -> section['a']['b']
    - get_cfg("a.b")        -> dotted path
    A leading key equal to `section` is dropped, and Flask app.config is the fallback.
    """
    if len(keys) == 1 and isinstance(keys[0], str) and "." in keys[0]:
        keys = tuple(keys[0].split("."))
    if keys and keys[0] == section:
        keys = keys[1:]

    root = _section(section)
    if root is None:
        return default
    if not keys:
        return root

    val = _dig(root, *keys)
    if val is None and has_app_context():
        val = _dig(current_app.config.get(section, {}), *keys)
    return default if val is None else val


def env_overrides(environ=None) -> dict:
    """REACTION_SEED=7, REACTION_THREADS=4, ... as run-config values (JSON literals)."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key == "n":
            key = "N"
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    if out:
        logger.info("simulation defaults overridden from the environment: %s", ", ".join(sorted(out)))
    return out


def simulation_defaults(environ=None) -> dict:
    """Defaults every RunConfig is merged over: config.json first, environment second."""
    defaults = dict(get_cfg(default={}) or {})
    defaults.update(env_overrides(environ))
    return defaults

