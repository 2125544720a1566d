"""Branching particle approximation of Dawson-Watanabe processes on a box.

Particles carry mass 1/N, move as Brownian motion with generator Lap (variance 2 dt per
coordinate and step), branch critically at rate N and are killed (eta > 0) or duplicated
(eta < 0) at rate |eta|. A particle whose step leaves the box is frozen on the boundary
at the straight-line crossing point and counted in the exit measure.

Several replicas share one particle cloud; `owners` tells them apart. Every random draw
is keyed by the particle lineage, the step since the particle's component started, and an
event slot, so a replica's path is the same whether it runs alone or in a batch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from services.exceptions import BudgetExceededError, InvalidArgumentError, StepSizeError
from services.reaction.core import BoundaryMeasure, BoxDomain, FiniteMeasure
from services.reaction.rng import RngStream, child_keys, derive_keys, keyed_normal, keyed_uniform


logger = logging.getLogger(__name__)

SLOT_BRANCH = 0
SLOT_COIN = 1
SLOT_SPLIT = 3
SLOT_BIRTH = 4
SLOT_SEED = 5
SLOT_MOVE = 8

TALLY_NAMES = ("seeded", "splits", "branch_deaths", "eta_deaths", "eta_births", "exits")

# relative slack on the stability cap so that horizon/ceil(horizon/cap) never trips it
_CAP_SLACK = 1e-9


@dataclass
class RateField:
    """Per-cell mass annihilation (> 0) or creation (< 0) rate."""
    domain: BoxDomain
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        shape = self.domain.grid_shape(self.cell_size)
        values = np.asarray(self.values, dtype=float)
        if values.shape == ():
            values = np.full(shape, float(values))
        if values.shape != shape:
            raise InvalidArgumentError(f"rate field has shape {values.shape}, expected {shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("rate field has non-finite values")
        self.values = values

    @classmethod
    def constant(cls, domain: BoxDomain, cell_size: float, value: float) -> "RateField":
        return cls(domain, cell_size, np.full(domain.grid_shape(cell_size), float(value)))

    @classmethod
    def from_function(cls, domain: BoxDomain, cell_size: float,
                      fn: Callable[[np.ndarray], np.ndarray]) -> "RateField":
        values = np.asarray(fn(domain.cell_centers(cell_size)), dtype=float)
        return cls(domain, cell_size, values.reshape(domain.grid_shape(cell_size)))

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def at(self, points: np.ndarray) -> np.ndarray:
        if len(points) == 0:
            return np.zeros(0)
        return self.values.ravel()[self.domain.cell_index(points, self.cell_size)]


@dataclass(frozen=True)
class Particle:
    position: tuple
    mass: float
    status: str  # "alive" or "frozen"; dead particles are dropped


@dataclass(frozen=True)
class EngineConfig:
    """Particle-level settings shared by the block, scan and command layers."""
    N: int = 100
    cell_size: float = 0.05
    horizon: float = 20.0
    dt: Optional[float] = None
    placement: str = "uniform"
    max_particles: Optional[int] = None
    max_steps: Optional[int] = None
    snapshot_count: int = 16

    def __post_init__(self):
        if int(self.N) < 1:
            raise InvalidArgumentError(f"N must be >= 1, got {self.N}")
        if not self.cell_size > 0:
            raise InvalidArgumentError(f"cell size must be positive, got {self.cell_size}")
        if not self.horizon > 0:
            raise InvalidArgumentError(f"horizon must be positive, got {self.horizon}")
        if self.placement not in ("uniform", "center"):
            raise InvalidArgumentError(f"unknown placement rule {self.placement!r}")

    def run_kwargs(self) -> dict:
        return {"dt": self.dt, "placement": self.placement, "max_particles": self.max_particles,
                "max_steps": self.max_steps, "snapshot_count": self.snapshot_count}


def stability_cap(N: int, bound: float) -> float:
    """Largest admissible step: min(1/(2N), 1/(2 bound))."""
    cap = 1.0 / (2.0 * N)
    if bound > 0:
        cap = min(cap, 1.0 / (2.0 * bound))
    return cap


def time_grid(horizon: float, cap: float, dt: Optional[float] = None):
    """(dt, steps) covering [0, horizon] with equal steps no larger than `cap`."""
    if not (horizon > 0 and math.isfinite(horizon)):
        raise InvalidArgumentError(f"horizon must be positive and finite, got {horizon}")
    if dt is None:
        steps = max(1, math.ceil(horizon / cap - _CAP_SLACK))
        return horizon / steps, steps
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if dt > cap * (1 + _CAP_SLACK):
        raise StepSizeError(f"dt={dt} exceeds the stability cap {cap}")
    steps = max(1, int(round(horizon / dt)))
    return horizon / steps, steps


def _empty_points(d: int) -> np.ndarray:
    return np.zeros((0, d))


@dataclass
class ParticleSystem:
    """Alive particles plus the occupation and exit accumulators of one or more replicas."""
    domain: BoxDomain
    cell_size: float
    N: int
    n_owners: int = 1
    track_occupation: bool = True
    time: float = 0.0
    step: int = 0
    positions: np.ndarray = None
    keys: np.ndarray = None
    origins: np.ndarray = None
    owners: np.ndarray = None
    occupation: np.ndarray = None
    exit_points: List[np.ndarray] = field(default_factory=list)
    exit_owners: List[np.ndarray] = field(default_factory=list)
    tallies: Dict[str, np.ndarray] = None

    def __post_init__(self):
        if int(self.N) < 1:
            raise InvalidArgumentError(f"approximation level N must be >= 1, got {self.N}")
        if int(self.n_owners) < 1:
            raise InvalidArgumentError("a particle system needs at least one replica")
        self.N = int(self.N)
        d = self.domain.d
        self.ncells = int(np.prod(self.domain.grid_shape(self.cell_size)))
        if self.positions is None:
            self.positions = _empty_points(d)
            self.keys = np.zeros(0, dtype=np.uint64)
            self.origins = np.zeros(0, dtype=np.int64)
            self.owners = np.zeros(0, dtype=np.int64)
        if self.occupation is None:
            rows = self.n_owners if self.track_occupation else 0
            self.occupation = np.zeros((rows, self.ncells))
        if self.tallies is None:
            self.tallies = {name: np.zeros(self.n_owners, dtype=np.int64) for name in TALLY_NAMES}

    @property
    def particle_mass(self) -> float:
        return 1.0 / self.N

    def alive_counts(self) -> np.ndarray:
        return np.bincount(self.owners, minlength=self.n_owners)

    def alive_mass(self) -> np.ndarray:
        return self.alive_counts() / self.N

    def _tally(self, name: str, owners: np.ndarray):
        if len(owners):
            self.tallies[name] += np.bincount(owners, minlength=self.n_owners)

    def add_particles(self, positions: np.ndarray, keys: np.ndarray, owners: np.ndarray,
                      origin_step: Optional[int] = None):
        """Insert particles; those on the boundary are frozen at once, those outside rejected."""
        positions = np.asarray(positions, dtype=float).reshape(-1, self.domain.d)
        keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
        owners = np.asarray(owners, dtype=np.int64).reshape(-1)
        if len(positions) == 0:
            return
        if not np.all(self.domain.contains(positions, closed=True)):
            raise InvalidArgumentError("initial particles must lie in the closed domain")
        origin = self.step if origin_step is None else int(origin_step)
        self._tally("seeded", owners)
        inside = self.domain.contains(positions)
        if not np.all(inside):
            self._freeze(positions[~inside], owners[~inside])
        self.positions = np.concatenate([self.positions, positions[inside]])
        self.keys = np.concatenate([self.keys, keys[inside]])
        self.owners = np.concatenate([self.owners, owners[inside]])
        self.origins = np.concatenate([self.origins, np.full(int(inside.sum()), origin, dtype=np.int64)])

    def _freeze(self, points: np.ndarray, owners: np.ndarray):
        self.exit_points.append(points)
        self.exit_owners.append(owners)
        self._tally("exits", owners)

    def exit_measure(self, owner: int = 0) -> BoundaryMeasure:
        if not self.exit_points:
            return BoundaryMeasure.empty(self.domain, self.cell_size)
        points = np.concatenate(self.exit_points)
        owners = np.concatenate(self.exit_owners)
        mine = points[owners == owner]
        return BoundaryMeasure.from_points(self.domain, self.cell_size, mine, self.particle_mass)

    def occupation_measure(self, owner: int = 0) -> FiniteMeasure:
        shape = self.domain.grid_shape(self.cell_size)
        if not self.track_occupation:
            raise InvalidArgumentError("occupation was not tracked for this system")
        return FiniteMeasure(self.domain, self.cell_size, self.occupation[owner].reshape(shape).copy())

    def particles(self, owner: int = 0) -> Iterator[Particle]:
        """Alive and frozen particles of one replica."""
        for pos in self.positions[self.owners == owner]:
            yield Particle(tuple(pos), self.particle_mass, "alive")
        for pts, own in zip(self.exit_points, self.exit_owners):
            for pos in pts[own == owner]:
                yield Particle(tuple(pos), self.particle_mass, "frozen")

    def reconciliation_gap(self) -> np.ndarray:
        """Per replica: alive - (seeded + splits + births - deaths - exits); zero when bookkeeping holds."""
        t = self.tallies
        expected = t["seeded"] + t["splits"] + t["eta_births"] - t["branch_deaths"] - t["eta_deaths"] - t["exits"]
        return self.alive_counts() - expected


def seed_measure(sys: ParticleSystem, mu: Union[FiniteMeasure, BoundaryMeasure], base_key: int,
                 owner: int = 0, placement: str = "uniform", origin_step: Optional[int] = None):
    """Place floor(m N + U) particles per cell (or boundary atom) of mass m.

    `placement` is "uniform" (keyed uniform position inside the cell) or "center".
    """
    if placement not in ("uniform", "center"):
        raise InvalidArgumentError(f"unknown placement rule {placement!r}")
    N = sys.N
    if isinstance(mu, BoundaryMeasure):
        atoms = np.flatnonzero(mu.masses > 0)
        atom_keys = derive_keys(base_key, atoms)
        counts = np.floor(mu.masses[atoms] * N + keyed_uniform(atom_keys, 0, SLOT_SEED)).astype(np.int64)
        if counts.sum() == 0:
            return
        within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        keys = derive_keys(np.repeat(atom_keys, counts), within)
        positions = np.repeat(mu.points[atoms], counts, axis=0)
    else:
        flat = mu.mass.ravel()
        cells = np.flatnonzero(flat > 0)
        cell_keys = derive_keys(base_key, cells)
        counts = np.floor(flat[cells] * N + keyed_uniform(cell_keys, 0, SLOT_SEED)).astype(np.int64)
        if counts.sum() == 0:
            return
        within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        keys = derive_keys(np.repeat(cell_keys, counts), within)
        h = mu.cell_size
        centers = mu.domain.cell_centers(h)[np.repeat(cells, counts)]
        if placement == "center":
            positions = centers
        else:
            offsets = np.stack([keyed_uniform(keys, 0, SLOT_SEED + 1 + i) for i in range(mu.domain.d)], axis=1)
            positions = centers + h * (offsets - 0.5)
    sys.add_particles(positions, keys, np.full(len(keys), owner, dtype=np.int64), origin_step)


def _crossing(start: np.ndarray, end: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """First point where the segment start->end meets the closed boundary, snapped onto its face."""
    lo, hi = domain.lower_array, domain.upper_array
    delta = end - start
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(end >= hi, (hi - start) / delta, np.inf)
        frac = np.minimum(frac, np.where(end <= lo, (lo - start) / delta, np.inf))
    axis = np.argmin(frac, axis=1)
    rows = np.arange(len(start))
    t = np.clip(frac[rows, axis], 0.0, 1.0)
    point = start + t[:, None] * delta
    upper = end[rows, axis] >= hi[axis]
    point[rows, axis] = np.where(upper, hi[axis], lo[axis])
    return np.clip(point, lo, hi)


def advance(sys: ParticleSystem, dt: float, rates: np.ndarray,
            max_particles: Optional[int] = None) -> ParticleSystem:
    """One Euler step with per-particle net rates (positive kills, negative creates)."""
    n = len(sys.positions)
    if n == 0:
        sys.time += dt
        sys.step += 1
        return sys

    N = sys.N
    if sys.track_occupation:
        cells = sys.domain.cell_index(sys.positions, sys.cell_size)
        hits = np.bincount(sys.owners * sys.ncells + cells, minlength=sys.n_owners * sys.ncells)
        sys.occupation += hits.reshape(sys.n_owners, sys.ncells) * (dt / N)

    local = sys.step - sys.origins
    keys = sys.keys
    # competing clocks: one uniform picks branching (prob N dt), an eta event (prob |eta| dt) or nothing;
    # the stability cap keeps the two probabilities summing to at most 1
    u = keyed_uniform(keys, local, SLOT_BRANCH)
    branch = u < N * dt
    eta_event = ~branch & (u < (N + np.abs(rates)) * dt)
    heads = keyed_uniform(keys, local, SLOT_COIN) < 0.5
    branch_death = branch & heads
    split = branch & ~heads
    eta_death = eta_event & (rates > 0)
    birth = eta_event & (rates < 0)

    sys._tally("branch_deaths", sys.owners[branch_death])
    sys._tally("eta_deaths", sys.owners[eta_death])
    sys._tally("splits", sys.owners[split])
    sys._tally("eta_births", sys.owners[birth])

    survive = ~(branch_death | eta_death)
    parts = [survive, split, birth]
    positions = np.concatenate([sys.positions[m] for m in parts])
    owners = np.concatenate([sys.owners[m] for m in parts])
    origins = np.concatenate([sys.origins[m] for m in parts])
    new_keys = np.concatenate([keys[survive],
                               child_keys(keys[split], local[split], SLOT_SPLIT),
                               child_keys(keys[birth], local[birth], SLOT_BIRTH)])

    if max_particles is not None:
        live = np.bincount(owners, minlength=sys.n_owners)
        if live.max(initial=0) > max_particles:
            raise BudgetExceededError(
                f"particle budget {max_particles} exceeded at t={sys.time:.6g}",
                consumed={"particles": int(live.max()), "steps": sys.step, "time": sys.time},
            )

    step_local = sys.step - origins
    scale = math.sqrt(2.0 * dt)
    moves = np.stack([keyed_normal(new_keys, step_local, SLOT_MOVE + 2 * i) for i in range(sys.domain.d)], axis=1)
    moved = positions + scale * moves

    inside = sys.domain.contains(moved)
    if not np.all(inside):
        out = ~inside
        sys._freeze(_crossing(positions[out], moved[out], sys.domain), owners[out])

    sys.positions = moved[inside]
    sys.keys = new_keys[inside]
    sys.owners = owners[inside]
    sys.origins = origins[inside]
    sys.time += dt
    sys.step += 1
    return sys


def dw_step(sys: ParticleSystem, dt: float, eta: RateField, domain: BoxDomain,
            max_particles: Optional[int] = None) -> ParticleSystem:
    """Advance `sys` in place by one step of length dt and return it."""
    if domain != sys.domain:
        raise InvalidArgumentError("step domain differs from the particle system domain")
    cap = stability_cap(sys.N, eta.bound)
    if not (dt > 0 and dt <= cap * (1 + _CAP_SLACK)):
        raise StepSizeError(f"dt={dt} outside (0, {cap}] for N={sys.N}, |eta|<={eta.bound}")
    return advance(sys, dt, eta.at(sys.positions), max_particles)


@dataclass
class DwRunResult:
    """Recorded outputs of one replica."""
    domain: BoxDomain
    cell_size: float
    N: int
    dt: float
    horizon: float
    times: np.ndarray
    mass_path: np.ndarray
    snapshot_times: np.ndarray
    occupation_snapshots: Optional[np.ndarray]
    exit: BoundaryMeasure
    extinct: bool
    extinction_time: Optional[float]
    tallies: Dict[str, int]
    steps: int
    final_positions: np.ndarray

    @property
    def occupation(self) -> FiniteMeasure:
        """u_[0,horizon] (equal to u_[0,inf) when extinct)."""
        return self.occupation_at_interval(0.0, float(self.snapshot_times[-1]))

    def final_mass(self) -> float:
        return float(self.mass_path[-1])

    def total_occupation(self) -> float:
        return float(self.occupation_snapshots[-1].sum())

    def _cumulative(self, t: float) -> np.ndarray:
        if self.occupation_snapshots is None:
            raise InvalidArgumentError("occupation was not tracked for this run")
        times = self.snapshot_times
        t = min(max(t, 0.0), float(times[-1]))
        j = int(np.searchsorted(times, t, side="right"))
        if j >= len(times):
            return self.occupation_snapshots[-1]
        lo, hi = times[j - 1], times[j]
        w = 0.0 if hi == lo else (t - lo) / (hi - lo)
        return (1 - w) * self.occupation_snapshots[j - 1] + w * self.occupation_snapshots[j]

    def occupation_at_interval(self, s: float, t: float) -> FiniteMeasure:
        """u_[s,t], linearly interpolated between recorded snapshots."""
        shape = self.domain.grid_shape(self.cell_size)
        mass = np.maximum(self._cumulative(t) - self._cumulative(s), 0.0)
        return FiniteMeasure(self.domain, self.cell_size, mass.reshape(shape))

    def exit_total(self) -> float:
        return self.exit.total()


def _snapshot_steps(snapshot_times: Optional[Sequence[float]], dt: float, steps: int,
                    count: int) -> np.ndarray:
    if snapshot_times is None:
        marks = np.linspace(0, steps, max(count, 1) + 1)
        idx = np.rint(marks).astype(np.int64)
    else:
        idx = np.rint(np.asarray(snapshot_times, dtype=float) / dt).astype(np.int64)
    idx = np.clip(np.concatenate([[0], idx, [steps]]), 0, steps)
    return np.unique(idx)


def simulate_dw_replicas(mu: Union[FiniteMeasure, BoundaryMeasure], eta: RateField, domain: BoxDomain,
                         horizon: float, N: int, streams: Sequence[RngStream], *,
                         dt: Optional[float] = None, placement: str = "uniform",
                         snapshot_times: Optional[Sequence[float]] = None, snapshot_count: int = 16,
                         track_occupation: bool = True, max_particles: Optional[int] = None,
                         max_steps: Optional[int] = None, stop_on_extinction: bool = True,
                         progress: Optional[Callable[[str, int], None]] = None) -> List[DwRunResult]:
    """Run one replica per stream in a single vectorized cloud."""
    if not streams:
        raise InvalidArgumentError("at least one stream is required")
    if not domain.contains_box(mu.domain):
        raise InvalidArgumentError("initial measure must be supported in the domain")
    if eta.domain != domain:
        raise InvalidArgumentError("rate field must be defined on the simulation domain")
    dt, steps = time_grid(horizon, stability_cap(int(N), eta.bound), dt)
    if max_steps is not None and steps > max_steps:
        raise BudgetExceededError(f"{steps} steps needed but the step budget is {max_steps}",
                                  consumed={"steps": 0, "particles": 0, "time": 0.0})

    R = len(streams)
    sys = ParticleSystem(domain, eta.cell_size, N, n_owners=R, track_occupation=track_occupation)
    for owner, stream in enumerate(streams):
        seed_measure(sys, mu, stream.key, owner, placement)

    snap_steps = _snapshot_steps(snapshot_times, dt, steps, snapshot_count)
    snaps = []
    masses = [sys.alive_mass()]
    times = [0.0]
    extinction_step = np.where(sys.alive_counts() == 0, 0, -1)
    if 0 in snap_steps:
        snaps.append(sys.occupation.copy())

    logger.debug("dw run: %d replicas, N=%d, dt=%.4g, %d steps", R, sys.N, dt, steps)
    for k in range(1, steps + 1):
        if stop_on_extinction and len(sys.positions) == 0:
            break
        dw_step(sys, dt, eta, domain, max_particles)
        counts = sys.alive_counts()
        masses.append(counts / sys.N)
        times.append(sys.time)
        extinction_step = np.where((extinction_step < 0) & (counts == 0), k, extinction_step)
        if k in snap_steps:
            snaps.append(sys.occupation.copy())
        if progress is not None and steps >= 10 and k % max(1, steps // 10) == 0:
            progress(f"dw step {k}/{steps}", int(100 * k / steps))

    while len(snaps) < len(snap_steps):
        snaps.append(sys.occupation.copy())
    masses = np.asarray(masses)
    times = np.asarray(times)
    snap_times = snap_steps * dt
    gaps = sys.reconciliation_gap()
    if np.any(gaps != 0):
        logger.warning("particle bookkeeping does not reconcile: %s", gaps.tolist())

    results = []
    for owner in range(R):
        ext = int(extinction_step[owner])
        results.append(DwRunResult(
            domain=domain,
            cell_size=eta.cell_size,
            N=sys.N,
            dt=dt,
            horizon=float(horizon),
            times=times,
            mass_path=masses[:, owner],
            snapshot_times=snap_times,
            occupation_snapshots=np.stack([s[owner] for s in snaps]) if track_occupation else None,
            exit=sys.exit_measure(owner),
            extinct=ext >= 0,
            extinction_time=ext * dt if ext >= 0 else None,
            tallies={name: int(v[owner]) for name, v in sys.tallies.items()},
            steps=len(times) - 1,
            final_positions=sys.positions[sys.owners == owner].copy(),
        ))
    return results


def simulate_dw(mu: Union[FiniteMeasure, BoundaryMeasure], eta: RateField, domain: BoxDomain,
                horizon: float, N: int, rng: RngStream, **kwargs) -> DwRunResult:
    return simulate_dw_replicas(mu, eta, domain, horizon, N, [rng], **kwargs)[0]


def occupation_density(run: DwRunResult, s: float, t: float, x: Sequence[float], eps: float) -> float:
    """eps^-d * u_[s,t]([x, x+eps)^d) using cells whose centres fall in the box."""
    tol = 1e-12 * max(1.0, run.horizon)
    if not (0 <= s <= t <= run.horizon + tol):
        raise InvalidArgumentError(f"need 0 <= s <= t <= {run.horizon}, got s={s}, t={t}")
    if eps < run.cell_size * (1 - 1e-9):
        raise InvalidArgumentError(f"eps={eps} is finer than the grid pitch {run.cell_size}")
    point = np.asarray(x, dtype=float).reshape(1, -1)
    if point.shape[1] != run.domain.d or not run.domain.contains(point, closed=True)[0]:
        raise InvalidArgumentError(f"x={tuple(point[0])} lies outside the domain")
    if s == t:
        return 0.0
    return run.occupation_at_interval(s, t).box_mass(point[0], eps) / eps ** run.domain.d
