import json
import os
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

from services.exceptions import ConfigValidationError


# Configure logging
logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FORMATS = ("csv", "json")
PLACEMENTS = ("uniform", "center")
_MAX_SEED = 2 ** 64

# subcommands whose simulators bin occupation on the grid and need pitch <= 1/N
_DIRECT_SUBCOMMANDS = {"nutrient-compare", "decomposition-suite", "phase-scan", "psi-bisect",
                       "death-block", "life-block"}


class ConfigManager:
    """Read-only view of config.json; runs take their settings from RunConfig."""

    def __init__(self, config_path="config.json"):
        self._config_path = config_path
        if os.path.isabs(config_path):
            self._resolved_path = config_path
        else:
            self._resolved_path = os.path.join(os.path.dirname(os.path.dirname(__file__)), self._config_path)
        self._last_load_error = None
        self.config = self._load_config()

    @property
    def last_load_error(self):
        return self._last_load_error

    @property
    def resolved_path(self):
        return self._resolved_path

    def _load_config(self):
        """Load configuration from the file or initialize an empty config."""
        path = self._resolved_path
        if os.path.exists(path):
            try:
                with open(path, "r") as f:
                    return json.load(f)
            except json.JSONDecodeError as e:
                self._last_load_error = e
                logger.error(f"Invalid JSON in {path}. Loading empty configuration.")
        return {}

    def get(self, *keys, default=None):
        """
        Access nested values.
        Supports both:
          get("a", "b", "c")  and  get("a.b.c")
        """
        if len(keys) == 1 and isinstance(keys[0], str) and "." in keys[0]:
            keys = keys[0].split(".")

        node = self.config
        for k in keys:
            if isinstance(node, dict) and k in node:
                node = node[k]
            else:
                return default
        return node


def _number(data: dict, key: str, default, *, integer=False, minimum=None, positive=False, allow_none=False):
    value = data.get(key, default)
    if value is None:
        if allow_none:
            return None
        raise ConfigValidationError(f"'{key}' is required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(f"'{key}' must be a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise ConfigValidationError(f"'{key}' must be an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if positive and not value > 0:
        raise ConfigValidationError(f"'{key}' must be positive, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigValidationError(f"'{key}' must be >= {minimum}, got {value}")
    return value


@dataclass
class RunConfig:
    """One validated run: model parameters, engine levels, replication and output settings."""
    subcommand: str
    beta: float = 1.0
    gamma: float = 1.0
    d: int = 1
    half_width: float = 4.0
    N: int = 100
    cell_size: float = 0.01
    dt: Optional[float] = None
    placement: str = "uniform"
    max_particles: Optional[int] = None
    max_steps: Optional[int] = None
    replicas: int = 200
    horizon: float = 20.0
    seed: int = 42
    threads: int = 1
    out: str = "runs"
    format: str = "csv"
    options: Dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data: dict, subcommand: str, defaults: Optional[dict] = None) -> "RunConfig":
        """Merge `data` over `defaults` (the simulation section of config.json) and validate."""
        if not isinstance(data, dict):
            raise ConfigValidationError("run config must be a JSON object")
        merged = dict(defaults or {})
        merged.update(data)
        version = merged.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigValidationError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        known = set(cls.__dataclass_fields__) - {"subcommand"}
        unknown = sorted(k for k in data if k not in known)
        if unknown:
            raise ConfigValidationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(subcommand=subcommand, **{k: v for k, v in merged.items() if k in known})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Optional[str], subcommand: str, defaults: Optional[dict] = None) -> "RunConfig":
        data = {}
        if path:
            try:
                with open(path, "r") as f:
                    data = json.load(f)
            except FileNotFoundError:
                raise ConfigValidationError(f"config file not found: {path}")
            except json.JSONDecodeError as e:
                raise ConfigValidationError(f"invalid JSON in {path}: line {e.lineno}, column {e.colno}: {e.msg}")
        return cls.from_dict(data, subcommand, defaults)

    def override(self, **flags) -> "RunConfig":
        """Apply CLI flags that were given (None means not given) and re-validate."""
        values = asdict(self)
        values.update({k: v for k, v in flags.items() if v is not None})
        cfg = RunConfig(**values)
        cfg.validate()
        return cfg

    def validate(self):
        raw = asdict(self)
        self.beta = _number(raw, "beta", None, minimum=0.0)
        self.gamma = _number(raw, "gamma", None, minimum=0.0)
        self.d = _number(raw, "d", None, integer=True)
        if self.d not in (1, 2, 3):
            raise ConfigValidationError(f"'d' must be 1, 2 or 3, got {self.d}")
        self.half_width = _number(raw, "half_width", None, positive=True)
        self.N = _number(raw, "N", None, integer=True, minimum=1)
        self.cell_size = _number(raw, "cell_size", None, positive=True)
        self.dt = _number(raw, "dt", None, positive=True, allow_none=True)
        if self.dt is not None and self.dt > 1.0 / (2 * self.N) * (1 + 1e-9):
            raise ConfigValidationError(f"dt={self.dt} exceeds the stability cap 1/(2N) = {1.0 / (2 * self.N)}")
        if self.subcommand in _DIRECT_SUBCOMMANDS and self.cell_size > 1.0 / self.N * (1 + 1e-9):
            raise ConfigValidationError(f"cell_size={self.cell_size} is coarser than 1/N = {1.0 / self.N}")
        if self.placement not in PLACEMENTS:
            raise ConfigValidationError(f"'placement' must be one of {PLACEMENTS}, got {self.placement!r}")
        self.max_particles = _number(raw, "max_particles", None, integer=True, minimum=1, allow_none=True)
        self.max_steps = _number(raw, "max_steps", None, integer=True, minimum=1, allow_none=True)
        self.replicas = _number(raw, "replicas", None, integer=True, minimum=1)
        self.horizon = _number(raw, "horizon", None, positive=True)
        self.seed = _number(raw, "seed", None, integer=True, minimum=0)
        if self.seed >= _MAX_SEED:
            raise ConfigValidationError(f"'seed' must fit in 64 bits, got {self.seed}")
        self.threads = _number(raw, "threads", None, integer=True, minimum=1)
        if self.format not in FORMATS:
            raise ConfigValidationError(f"'format' must be one of {FORMATS}, got {self.format!r}")
        if not isinstance(self.options, dict):
            raise ConfigValidationError("'options' must be an object")
        return self

    def option(self, key: str, default=None):
        return self.options.get(key, default)

    def as_dict(self) -> dict:
        return asdict(self)
