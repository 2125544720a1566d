"""Seeded random streams.

Two flavours of randomness are used by the simulators:

* ``RngStream.generator()`` - a numpy ``Generator`` on the counter-based Philox bit
  generator, keyed by (master seed, stream id). Used for draws that are consumed in a
  fixed order (lattice sites, thresholds, resampling).
* keyed draws (``keyed_uniform`` / ``keyed_normal``) - a stateless hash of
  (key, step, slot) -> U(0,1). Every particle carries a 64-bit lineage key, so its fate
  at a given step does not depend on how many other particles exist or in which order
  they are stored. This is what makes replicas batchable and parameter sweeps
  pathwise comparable.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from services.exceptions import InvalidArgumentError


logger = logging.getLogger(__name__)

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_STEP_SALT = _U64(0xD1B54A32D192ED03)
_SLOT_SALT = _U64(0x8CB92BA72F3D8DD7)
_CHILD_SALT = _U64(0xA24BAED4963EE407)
_TWO_POW_53 = float(2 ** 53)
_MAX_SEED = 2 ** 64


def _splitmix(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finaliser applied element-wise to uint64 arrays (wrap-around arithmetic)."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=_U64) + _GOLDEN
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _mix(keys: np.ndarray, step, slot) -> np.ndarray:
    with np.errstate(over="ignore"):
        step_term = np.asarray(step, dtype=np.int64).astype(_U64) * _STEP_SALT
        slot_term = _U64(slot) * _SLOT_SALT
        return _splitmix(_splitmix(np.asarray(keys, dtype=_U64) ^ step_term) ^ slot_term)


def keyed_uniform(keys: np.ndarray, step, slot: int) -> np.ndarray:
    """U(0,1) draws, one per key, determined by (key, step, slot) alone; never 0 or 1."""
    bits = _mix(keys, step, slot)
    return ((bits >> _U64(11)).astype(np.float64) + 0.5) / _TWO_POW_53


def keyed_normal(keys: np.ndarray, step, slot: int) -> np.ndarray:
    """Standard normal draws via Box-Muller on slots (slot, slot + 1)."""
    u1 = keyed_uniform(keys, step, slot)
    u2 = keyed_uniform(keys, step, slot + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def child_keys(keys: np.ndarray, step, slot: int) -> np.ndarray:
    """Lineage keys for offspring created at `step` through event `slot`."""
    with np.errstate(over="ignore"):
        return _splitmix(_mix(keys, step, slot) ^ _CHILD_SALT)


def derive_keys(base, labels) -> np.ndarray:
    """Independent-looking keys for labels under a base key (scalar or per-label array)."""
    labels = np.asarray(labels, dtype=np.int64).astype(_U64)
    base = np.broadcast_to(np.asarray(base, dtype=_U64), labels.shape)
    return _splitmix(_splitmix(base) ^ _splitmix(labels))


def stream_id(*parts: Union[str, int, float]) -> int:
    """Stable 63-bit id for a (subcommand, grid point, replica) style tuple.

    sha256 over the '|' joined text form; floats use repr so 0.1 and 0.10 agree.
    """
    text = "|".join(repr(float(p)) if isinstance(p, float) else str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class RngStream:
    """(master seed, stream id) pair; equal pairs reproduce identical draws."""
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < _MAX_SEED):
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.stream) < 0:
            raise InvalidArgumentError(f"stream id must be non-negative, got {self.stream}")

    @property
    def key(self) -> int:
        """64-bit root key for keyed draws of this stream."""
        mixed = _splitmix(np.array([int(self.seed)], dtype=_U64) ^ _splitmix(np.array([int(self.stream)], dtype=_U64)))
        return int(mixed[0])

    def generator(self) -> np.random.Generator:
        """Philox generator seeded by (seed, stream); sequential draws for this stream only."""
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *parts: Union[str, int, float]) -> "RngStream":
        """A sub-stream whose id is derived from this stream and `parts`."""
        return RngStream(self.seed, stream_id(self.stream, *parts))

    def spawn(self, count: int) -> list:
        return [self.child("replica", i) for i in range(count)]
