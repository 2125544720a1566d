"""Trigger sets: the map T, its smallest fixed point and the two-stage decomposition.

An instance is a finite label set A with thresholds e, direct inputs f and pairwise
contributions M (M[b, a] is what label b adds to label a once b is triggered). A label
triggers when f(a) + sum_{b in B} M(b, a) > e(a); equality does not trigger.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Hashable, Iterable, List, Optional, Tuple, Union

import numpy as np

from services.exceptions import InvalidArgumentError, InvariantViolationError


logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 20


def _non_negative(values, name: str, shape: Tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != shape:
        raise InvalidArgumentError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidArgumentError(f"{name} must be finite and non-negative")
    return arr


@dataclass(frozen=True)
class TriggerInstance:
    labels: Tuple[Hashable, ...]
    e: np.ndarray
    f: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError("labels must be distinct")
        n = len(labels)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "e", _non_negative(self.e, "e", (n,)))
        object.__setattr__(self, "f", _non_negative(self.f, "f", (n,)))
        object.__setattr__(self, "M", _non_negative(self.M, "M", (n, n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def index_of(self, subset: Iterable[Hashable]) -> np.ndarray:
        position = {label: i for i, label in enumerate(self.labels)}
        try:
            return np.array(sorted(position[b] for b in set(subset)), dtype=np.int64)
        except KeyError as exc:
            raise InvalidArgumentError(f"label {exc.args[0]!r} is not in the instance") from None

    def labels_of(self, mask: np.ndarray) -> FrozenSet[Hashable]:
        return frozenset(self.labels[i] for i in np.flatnonzero(mask))

    def restricted(self, keep: np.ndarray, e: Optional[np.ndarray] = None,
                   f: Optional[np.ndarray] = None) -> "TriggerInstance":
        """Sub-instance on the labels where `keep` is true, optionally with new e and f."""
        idx = np.flatnonzero(keep)
        e = self.e if e is None else e
        f = self.f if f is None else f
        return TriggerInstance(tuple(self.labels[i] for i in idx), e[idx], f[idx], self.M[np.ix_(idx, idx)])


@dataclass(frozen=True)
class TwoStageSplit:
    f_minus: np.ndarray
    f_plus: np.ndarray
    M_minus: np.ndarray
    M_plus: np.ndarray

    def check(self, inst: TriggerInstance):
        n = inst.size
        f_minus = _non_negative(self.f_minus, "f_minus", (n,))
        f_plus = _non_negative(self.f_plus, "f_plus", (n,))
        m_minus = _non_negative(self.M_minus, "M_minus", (n, n))
        m_plus = _non_negative(self.M_plus, "M_plus", (n, n))
        # one rounding per entry is the most a split built as (x, total - x) can lose
        if not np.allclose(f_minus + f_plus, inst.f, rtol=1e-12, atol=0.0):
            raise InvalidArgumentError("f_minus + f_plus does not reproduce f")
        if not np.allclose(m_minus + m_plus, inst.M, rtol=1e-12, atol=0.0):
            raise InvalidArgumentError("M_minus + M_plus does not reproduce M")
        return f_minus, f_plus, m_minus, m_plus


@dataclass(frozen=True)
class TwoStageResult:
    s_minus: FrozenSet[Hashable]
    s_plus: FrozenSet[Hashable]
    e_hat: Dict[Hashable, float]
    f_hat: Dict[Hashable, float]

    @property
    def union(self) -> FrozenSet[Hashable]:
        return self.s_minus | self.s_plus


def _apply(inst: TriggerInstance, mask: np.ndarray) -> np.ndarray:
    drive = inst.f + inst.M[mask].sum(axis=0)
    return drive > inst.e


def map_T(inst: TriggerInstance, B: Iterable[Hashable]) -> FrozenSet[Hashable]:
    """T(B) = {a : f(a) + sum_{b in B} M(b, a) > e(a)}."""
    mask = np.zeros(inst.size, dtype=bool)
    mask[inst.index_of(B)] = True
    return inst.labels_of(_apply(inst, mask))


def _fixed_point_mask(inst: TriggerInstance, start: Optional[np.ndarray] = None) -> Tuple[np.ndarray, List[np.ndarray]]:
    mask = np.zeros(inst.size, dtype=bool) if start is None else start.copy()
    trace = [mask]
    for _ in range(inst.size + 1):
        nxt = _apply(inst, mask)
        if np.array_equal(nxt, mask):
            return mask, trace
        mask = nxt
        trace.append(mask)
    raise InvariantViolationError(f"T^n(empty) did not stabilise within {inst.size + 1} steps")


def smallest_fixed_point(inst: TriggerInstance) -> FrozenSet[Hashable]:
    """lim T^n(empty); reached after at most |A| applications."""
    mask, _ = _fixed_point_mask(inst)
    return inst.labels_of(mask)


def iterate_trace(inst: TriggerInstance, start: Iterable[Hashable] = ()) -> List[FrozenSet[Hashable]]:
    """The chain B, T(B), T^2(B), ... up to the first repeat."""
    start_mask = np.zeros(inst.size, dtype=bool)
    start_mask[inst.index_of(start)] = True
    _, trace = _fixed_point_mask(inst, start_mask)
    return [inst.labels_of(m) for m in trace]


def brute_force_smallest_fixed_point(inst: TriggerInstance) -> FrozenSet[Hashable]:
    """Minimal fixed point by exhaustive search over all subsets."""
    if inst.size > BRUTE_FORCE_LIMIT:
        raise InvalidArgumentError(
            f"brute force over 2^{inst.size} subsets refused (limit |A| <= {BRUTE_FORCE_LIMIT})")
    fixed = []
    for size in range(inst.size + 1):
        for combo in itertools.combinations(range(inst.size), size):
            mask = np.zeros(inst.size, dtype=bool)
            mask[list(combo)] = True
            if np.array_equal(_apply(inst, mask), mask):
                fixed.append(mask)
    if not fixed:
        raise InvariantViolationError("monotone map without a fixed point")
    smallest = np.logical_and.reduce(fixed)
    if not any(np.array_equal(smallest, m) for m in fixed):
        raise InvariantViolationError("fixed points have no least element")
    return inst.labels_of(smallest)


def two_stage(inst: TriggerInstance, split: TwoStageSplit) -> TwoStageResult:
    """Trigger with (f-, M-) first, then finish on the untriggered labels with the residual thresholds."""
    f_minus, f_plus, m_minus, m_plus = split.check(inst)
    first = TriggerInstance(inst.labels, inst.e, f_minus, m_minus)
    s_minus, _ = _fixed_point_mask(first)

    e_hat = inst.e - f_minus - m_minus[s_minus].sum(axis=0)
    f_hat = f_plus + m_plus[s_minus].sum(axis=0)
    rest = ~s_minus
    if np.any(e_hat[rest] < 0):
        bad = [inst.labels[i] for i in np.flatnonzero(rest & (e_hat < 0))]
        raise InvariantViolationError(f"negative residual threshold for untriggered labels {bad}")

    second = inst.restricted(rest, e=e_hat, f=f_hat)
    s_plus = smallest_fixed_point(second)
    return TwoStageResult(
        s_minus=inst.labels_of(s_minus),
        s_plus=s_plus,
        e_hat={inst.labels[i]: float(e_hat[i]) for i in np.flatnonzero(rest)},
        f_hat={inst.labels[i]: float(f_hat[i]) for i in np.flatnonzero(rest)},
    )


def random_instance(rng: np.random.Generator, size: int, f_density: float = 0.3,
                    m_density: float = 0.3) -> TriggerInstance:
    """Exponential thresholds, sparse uniform inputs; ties have probability zero."""
    e = rng.exponential(1.0, size)
    f = np.where(rng.random(size) < f_density, rng.random(size) * 2.0, 0.0)
    M = np.where(rng.random((size, size)) < m_density, rng.random((size, size)), 0.0)
    np.fill_diagonal(M, 0.0)
    return TriggerInstance(tuple(range(1, size + 1)), e, f, M)


def random_split(rng: np.random.Generator, inst: TriggerInstance) -> TwoStageSplit:
    share_f = rng.random(inst.size) * (rng.random(inst.size) < 0.7)
    share_m = rng.random(inst.M.shape) * (rng.random(inst.M.shape) < 0.7)
    f_minus = inst.f * share_f
    m_minus = inst.M * share_m
    return TwoStageSplit(f_minus, inst.f - f_minus, m_minus, inst.M - m_minus)


def instance_from_dict(data: dict) -> Tuple[TriggerInstance, Optional[TwoStageSplit]]:
    """Parse {"labels", "e", "f", "M"[, "split": {"f_minus", "M_minus"}]}; M[b][a] is b's push on a."""
    try:
        labels = tuple(data["labels"])
        inst = TriggerInstance(labels, data["e"], data["f"], data["M"] if labels else np.zeros((0, 0)))
    except KeyError as exc:
        raise InvalidArgumentError(f"instance is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"malformed instance: {exc}") from None
    split = None
    if data.get("split"):
        raw_split = data["split"]
        f_minus = np.asarray(raw_split.get("f_minus", np.zeros(inst.size)), dtype=float)
        m_minus = np.asarray(raw_split.get("M_minus", np.zeros((inst.size, inst.size))), dtype=float)
        split = TwoStageSplit(f_minus, inst.f - f_minus, m_minus, inst.M - m_minus)
        split.check(inst)
    return inst, split


def instance_to_dict(inst: TriggerInstance, split: Optional[TwoStageSplit] = None) -> dict:
    out = {
        "labels": list(inst.labels),
        "e": inst.e.tolist(),
        "f": inst.f.tolist(),
        "M": inst.M.tolist(),
    }
    if split is not None:
        out["split"] = {"f_minus": np.asarray(split.f_minus).tolist(),
                        "M_minus": np.asarray(split.M_minus).tolist()}
    return out


def load_instance(path: Union[str, Path]) -> Tuple[TriggerInstance, Optional[TwoStageSplit]]:
    try:
        with open(path, "r") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"cannot read instance file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidArgumentError("instance file must hold a JSON object")
    return instance_from_dict(data)


def sorted_labels(labels: Iterable[Hashable]) -> List[Hashable]:
    """Labels in a stable order for printing (numbers before strings)."""
    return sorted(labels, key=lambda v: (not isinstance(v, (int, float)), str(v) if not isinstance(v, (int, float)) else v))
