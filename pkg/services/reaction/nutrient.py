"""Reaction runs: the discrete-nutrient package approximation and the direct depletion simulator.

Package approximation: the nutrient is a stack of packages N^-1 * 1(cell) per grid cell.
Every package carries an exponential threshold; once the occupation functional of its
cell (occupation mass / cell volume) exceeds the threshold the package fires and a fresh
DW(D, gamma) component of mass beta * <psi, 1> is injected uniformly into the cell.

Direct simulator: one particle system whose net creation rate at x is
beta * f(x) * exp(-u(0, t, x)) - gamma, with the occupation density read per grid cell.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from services.exceptions import BudgetExceededError, InvalidArgumentError
from services.reaction.core import BoundaryMeasure, BoxDomain, FiniteMeasure, Params
from services.reaction.dw_engine import (
    SLOT_SEED,
    ParticleSystem,
    advance,
    seed_measure,
    stability_cap,
    time_grid,
)
from services.reaction.rng import RngStream, derive_keys, keyed_uniform
from services.reaction.trigger import TriggerInstance


logger = logging.getLogger(__name__)

# labels under a replica's root key
_COMPONENT_ZERO = 0
_PACKAGE_COMPONENTS = 1
_THRESHOLDS = 2


def _grid_function(f, domain: BoxDomain, cell_size: float) -> np.ndarray:
    shape = domain.grid_shape(cell_size)
    if callable(f):
        values = np.asarray(f(domain.cell_centers(cell_size)), dtype=float).reshape(shape)
    else:
        values = np.asarray(f, dtype=float)
        if values.shape == ():
            values = np.full(shape, float(values))
    if values.shape != shape:
        raise InvalidArgumentError(f"nutrient grid has shape {values.shape}, expected {shape}")
    if not np.all(np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
        raise InvalidArgumentError("nutrient level must lie in [0, 1]")
    return values


@dataclass
class NutrientPackages:
    """floor(N * cell average of f) packages of weight 1/N in every grid cell."""
    domain: BoxDomain
    cell_size: float
    N: int
    counts: np.ndarray

    @property
    def cell_volume(self) -> float:
        return self.cell_size ** self.domain.d

    @property
    def package_integral(self) -> float:
        """<psi_k, 1> = cell volume / N."""
        return self.cell_volume / self.N

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def level(self) -> np.ndarray:
        """f = sum_k psi_k as a cell grid."""
        return self.counts / self.N

    def packages(self) -> List[tuple]:
        """(flat cell id, index within cell, weight) per package."""
        out = []
        for cell in np.flatnonzero(self.counts.ravel()):
            for j in range(int(self.counts.ravel()[cell])):
                out.append((int(cell), j, 1.0 / self.N))
        return out

    def package_cells(self) -> tuple:
        flat = self.counts.ravel().astype(np.int64)
        cells = np.repeat(np.arange(flat.size), flat)
        within = np.arange(cells.size) - np.repeat(np.cumsum(flat) - flat, flat)
        return cells, within

    def plus(self, other: "NutrientPackages") -> "NutrientPackages":
        if (other.domain, other.cell_size, other.N) != (self.domain, self.cell_size, self.N):
            raise InvalidArgumentError("package sets live on different grids")
        if np.any(self.counts + other.counts > self.N):
            raise InvalidArgumentError("combined nutrient exceeds 1")
        return NutrientPackages(self.domain, self.cell_size, self.N, self.counts + other.counts)


def build_packages(domain: BoxDomain, N: int, f, cell_size: Optional[float] = None) -> NutrientPackages:
    """Packages for nutrient level f (grid of cell averages, callable on cell centres, or constant)."""
    if int(N) < 1:
        raise InvalidArgumentError(f"N must be >= 1, got {N}")
    N = int(N)
    h = float(cell_size) if cell_size is not None else 1.0 / N
    values = _grid_function(f, domain, h)
    if h * math.sqrt(domain.d) > 1.0 / N + 1e-12:
        logger.warning("package cells have diameter %.4g > 1/N = %.4g", h * math.sqrt(domain.d), 1.0 / N)
    # a hair of slack so that f = k/N exactly is not floored to k - 1
    counts = np.floor(values * N + 1e-9).astype(np.int64)
    return NutrientPackages(domain, h, N, counts)


@dataclass
class TriggerEvent:
    cell: int
    index: int
    threshold: float
    time: float
    particles: int


@dataclass
class NutrientRunResult:
    domain: BoxDomain
    cell_size: float
    N: int
    dt: float
    horizon: float
    times: np.ndarray
    mass_path: np.ndarray
    exit: BoundaryMeasure
    occupation: FiniteMeasure
    v_times: np.ndarray
    v_path: np.ndarray
    triggers: List[TriggerEvent]
    extinct: bool
    extinction_time: Optional[float]
    tallies: Dict[str, int]
    steps: int

    @property
    def trigger_times(self) -> np.ndarray:
        return np.array([t.time for t in self.triggers])

    @property
    def triggered(self) -> frozenset:
        return frozenset((t.cell, t.index) for t in self.triggers)

    def total_occupation(self) -> float:
        return self.occupation.total()

    def exit_total(self) -> float:
        return self.exit.total()

    def final_mass(self) -> float:
        return float(self.mass_path[-1])


class _Recorder:
    """Per-replica paths shared by both simulators."""

    def __init__(self, sys: ParticleSystem, snap_steps: np.ndarray, level: Callable[[], np.ndarray]):
        self.sys = sys
        self.snap_steps = set(int(k) for k in snap_steps)
        self.level = level
        self.times = [0.0]
        self.masses = [sys.alive_mass()]
        self.v_times = [0.0]
        self.v_path = [level()]
        self.extinction_step = np.where(sys.alive_counts() == 0, 0, -1)

    def record(self, k: int):
        counts = self.sys.alive_counts()
        self.times.append(self.sys.time)
        self.masses.append(counts / self.sys.N)
        self.extinction_step = np.where((self.extinction_step < 0) & (counts == 0), k, self.extinction_step)
        if k in self.snap_steps:
            self.v_times.append(self.sys.time)
            self.v_path.append(self.level())

    def results(self, dt: float, horizon: float, triggers: List[List[TriggerEvent]]) -> List[NutrientRunResult]:
        sys = self.sys
        if self.v_times[-1] < sys.time:
            self.v_times.append(sys.time)
            self.v_path.append(self.level())
        masses = np.asarray(self.masses)
        v_path = np.stack(self.v_path)
        shape = sys.domain.grid_shape(sys.cell_size)
        out = []
        for owner in range(sys.n_owners):
            ext = int(self.extinction_step[owner])
            out.append(NutrientRunResult(
                domain=sys.domain,
                cell_size=sys.cell_size,
                N=sys.N,
                dt=dt,
                horizon=float(horizon),
                times=np.asarray(self.times),
                mass_path=masses[:, owner],
                exit=sys.exit_measure(owner),
                occupation=FiniteMeasure(sys.domain, sys.cell_size, sys.occupation[owner].reshape(shape).copy()),
                v_times=np.asarray(self.v_times),
                v_path=v_path[:, owner].reshape((len(v_path),) + shape),
                triggers=triggers[owner],
                extinct=ext >= 0,
                extinction_time=ext * dt if ext >= 0 else None,
                tallies={name: int(v[owner]) for name, v in sys.tallies.items()},
                steps=len(self.times) - 1,
            ))
        return out


def _snapshots(steps: int, count: int) -> np.ndarray:
    return np.unique(np.rint(np.linspace(0, steps, max(count, 1) + 1)).astype(np.int64))


def package_keys(pkgs: NutrientPackages, root_key: int) -> tuple:
    """(component keys, thresholds) per package in (cell, index) order for one replica."""
    cells, within = pkgs.package_cells()
    comp_base = int(derive_keys(root_key, [_PACKAGE_COMPONENTS])[0])
    thr_base = int(derive_keys(root_key, [_THRESHOLDS])[0])
    comp_keys = derive_keys(derive_keys(comp_base, cells), within)
    thresholds = -np.log(keyed_uniform(derive_keys(derive_keys(thr_base, cells), within), 0, 0))
    return comp_keys, thresholds


def component_zero_key(root_key: int) -> int:
    return int(derive_keys(root_key, [_COMPONENT_ZERO])[0])


def _inject(sys: ParticleSystem, pkgs: NutrientPackages, key: np.uint64, cell: int, beta: float,
            owner: int) -> int:
    """Add the component of one fired package: floor(beta * vol + U) particles uniform in the cell."""
    keys = np.asarray([key], dtype=np.uint64)
    count = int(np.floor(beta * pkgs.cell_volume + keyed_uniform(keys, 0, SLOT_SEED)[0]))
    if count == 0:
        return 0
    member_keys = derive_keys(key, np.arange(count))
    centre = pkgs.domain.cell_centers(pkgs.cell_size)[cell]
    offsets = np.stack([keyed_uniform(member_keys, 0, SLOT_SEED + 1 + i) for i in range(pkgs.domain.d)], axis=1)
    positions = centre + pkgs.cell_size * (offsets - 0.5)
    sys.add_particles(positions, member_keys, np.full(count, owner, dtype=np.int64), origin_step=sys.step)
    return count


class _TriggerBook:
    """Sorted thresholds per cell and the number already fired, for one replica."""

    def __init__(self, pkgs: NutrientPackages, root_key: int):
        cells, within = pkgs.package_cells()
        keys, thresholds = package_keys(pkgs, root_key)
        order = np.lexsort((thresholds, cells))
        self.cells = cells[order]
        self.within = within[order]
        self.keys = keys[order]
        self.thresholds = thresholds[order]
        flat = pkgs.counts.ravel().astype(np.int64)
        self.start = np.cumsum(flat) - flat
        self.size = flat
        self.fired = np.zeros_like(flat)

    def next_threshold(self) -> np.ndarray:
        idx = self.start + self.fired
        out = np.full(self.size.shape, np.inf)
        open_cells = self.fired < self.size
        out[open_cells] = self.thresholds[idx[open_cells]]
        return out

    def fire(self, functional: np.ndarray) -> List[int]:
        """Fire every package whose threshold is strictly below its cell functional; returns sorted positions."""
        fired = []
        candidates = np.flatnonzero(functional > self.next_threshold())
        for cell in candidates:
            while self.fired[cell] < self.size[cell]:
                pos = self.start[cell] + self.fired[cell]
                if not functional[cell] > self.thresholds[pos]:
                    break
                fired.append(int(pos))
                self.fired[cell] += 1
        return fired

    def remaining(self) -> np.ndarray:
        return self.size - self.fired


def simulate_nutrient_approx_replicas(mu: FiniteMeasure, pkgs: NutrientPackages, p: Params, N: int,
                                      horizon: float, streams: Sequence[RngStream], *,
                                      dt: Optional[float] = None, placement: str = "uniform",
                                      snapshot_count: int = 16, max_particles: Optional[int] = None,
                                      max_steps: Optional[int] = None) -> List[NutrientRunResult]:
    """Time-ordered package approximation, one replica per stream."""
    if int(N) != pkgs.N:
        raise InvalidArgumentError(f"packages were built for N={pkgs.N}, not N={N}")
    domain = pkgs.domain
    if not domain.contains_box(mu.domain):
        raise InvalidArgumentError("initial measure must be supported in the domain")
    dt, steps = time_grid(horizon, stability_cap(pkgs.N, p.gamma), dt)
    if max_steps is not None and steps > max_steps:
        raise BudgetExceededError(f"{steps} steps needed but the step budget is {max_steps}",
                                  consumed={"steps": 0, "particles": 0, "time": 0.0})

    R = len(streams)
    sys = ParticleSystem(domain, pkgs.cell_size, pkgs.N, n_owners=R)
    books = []
    for owner, stream in enumerate(streams):
        seed_measure(sys, mu, component_zero_key(stream.key), owner, placement)
        books.append(_TriggerBook(pkgs, stream.key))
    triggers: List[List[TriggerEvent]] = [[] for _ in range(R)]
    volume = pkgs.cell_volume

    def level():
        return np.stack([b.remaining() for b in books]) / pkgs.N

    recorder = _Recorder(sys, _snapshots(steps, snapshot_count), level)
    rates = None
    for k in range(1, steps + 1):
        if len(sys.positions) == 0:
            break
        rates = np.full(len(sys.positions), p.gamma)
        advance(sys, dt, rates, max_particles)
        for owner, book in enumerate(books):
            # simultaneous firings are handled in cell order
            for pos in book.fire(sys.occupation[owner] / volume):
                added = 0
                if p.beta > 0:
                    added = _inject(sys, pkgs, book.keys[pos], int(book.cells[pos]), p.beta, owner)
                triggers[owner].append(TriggerEvent(int(book.cells[pos]), int(book.within[pos]),
                                                    float(book.thresholds[pos]), sys.time, added))
        recorder.record(k)
    return recorder.results(dt, horizon, triggers)


def simulate_nutrient_approx(mu: FiniteMeasure, pkgs: NutrientPackages, p: Params, N: int,
                             horizon: float, rng: RngStream, **kwargs) -> NutrientRunResult:
    return simulate_nutrient_approx_replicas(mu, pkgs, p, N, horizon, [rng], **kwargs)[0]


def simulate_direct_replicas(mu: Union[FiniteMeasure, BoundaryMeasure], f, p: Params, domain: BoxDomain, horizon: float, N: int,
                             streams: Sequence[RngStream], *, cell_size: Optional[float] = None,
                             dt: Optional[float] = None, placement: str = "uniform",
                             snapshot_count: int = 16, max_particles: Optional[int] = None,
                             max_steps: Optional[int] = None) -> List[NutrientRunResult]:
    """Particles see the net rate gamma - beta f(x) exp(-occupation density at x)."""
    N = int(N)
    h = float(cell_size) if cell_size is not None else mu.cell_size
    if h > 1.0 / N * (1 + 1e-9):
        raise InvalidArgumentError(f"grid pitch {h} is coarser than 1/N = {1.0 / N}")
    if not domain.contains_box(mu.domain):
        raise InvalidArgumentError("initial measure must be supported in the domain")
    nutrient = _grid_function(f, domain, h).ravel()
    bound = max(p.gamma, abs(p.gamma - p.beta * float(nutrient.max(initial=0.0))))
    dt, steps = time_grid(horizon, stability_cap(N, bound), dt)
    if max_steps is not None and steps > max_steps:
        raise BudgetExceededError(f"{steps} steps needed but the step budget is {max_steps}",
                                  consumed={"steps": 0, "particles": 0, "time": 0.0})

    R = len(streams)
    sys = ParticleSystem(domain, h, N, n_owners=R)
    for owner, stream in enumerate(streams):
        seed_measure(sys, mu, component_zero_key(stream.key), owner, placement)
    volume = h ** domain.d

    def level():
        return nutrient[None, :] * np.exp(-sys.occupation / volume)

    recorder = _Recorder(sys, _snapshots(steps, snapshot_count), level)
    for k in range(1, steps + 1):
        if len(sys.positions) == 0:
            break
        cells = domain.cell_index(sys.positions, h)
        v = nutrient[cells] * np.exp(-sys.occupation[sys.owners, cells] / volume)
        advance(sys, dt, p.gamma - p.beta * v, max_particles)
        recorder.record(k)
    return recorder.results(dt, horizon, [[] for _ in range(R)])


def simulate_direct(mu: Union[FiniteMeasure, BoundaryMeasure], f, p: Params, domain: BoxDomain, horizon: float, N: int,
                    rng: RngStream, **kwargs) -> NutrientRunResult:
    return simulate_direct_replicas(mu, f, p, domain, horizon, N, [rng], **kwargs)[0]


@dataclass
class ComponentRealisation:
    """Standalone component occupations turned into a trigger instance."""
    instance: TriggerInstance
    base_occupation: np.ndarray
    package_occupation: np.ndarray
    all_extinct: bool


def component_instance(mu: FiniteMeasure, pkgs: NutrientPackages, p: Params, horizon: float,
                       rng: RngStream, *, dt: Optional[float] = None, placement: str = "uniform",
                       max_particles: Optional[int] = None) -> ComponentRealisation:
    """(A, e, f, M) from the same component realisations the time-ordered run would use.

    f(k) is the functional of package k's cell under the mu-component, M(b, k) the one
    produced by the component of package b. Labels are (cell, index) pairs.
    """
    domain = pkgs.domain
    dt, steps = time_grid(horizon, stability_cap(pkgs.N, p.gamma), dt)
    cells, within = pkgs.package_cells()
    keys, thresholds = package_keys(pkgs, rng.key)
    P = len(cells)
    sys = ParticleSystem(domain, pkgs.cell_size, pkgs.N, n_owners=P + 1)
    seed_measure(sys, mu, component_zero_key(rng.key), 0, placement)
    if p.beta > 0:
        for i in range(P):
            _inject(sys, pkgs, keys[i], int(cells[i]), p.beta, i + 1)
    for _ in range(steps):
        if len(sys.positions) == 0:
            break
        advance(sys, dt, np.full(len(sys.positions), p.gamma), max_particles)

    volume = pkgs.cell_volume
    functional = sys.occupation / volume
    f = functional[0, cells]
    M = functional[1:, :][:, cells] if P else np.zeros((0, 0))
    labels = tuple(zip(cells.tolist(), within.tolist()))
    inst = TriggerInstance(labels, thresholds, f, M)
    return ComponentRealisation(inst, sys.occupation[0].copy(), sys.occupation[1:].copy(), len(sys.positions) == 0)
