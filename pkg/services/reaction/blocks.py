"""Block construction for the life estimate and oriented site percolation.

Exit measures are iterated on the growing boxes D(n) = (-3nL, 3nL)^d. Generation j of the
lattice reads the exit measure on the face x1 = 3jL of D(j) through the windows
x_{j,k} + I_L, where x_{j,k} = (3jL, 2kL, 0) and I_L = {|x| <= L, x1 = 0} in sup norm.

Lattice arrays are indexed [j, k + G] for j = 0..G and k = -G..G; only sites with j + k
even carry a value.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from services.exceptions import BudgetExceededError, InvalidArgumentError
from services.reaction.core import BoundaryMeasure, BoxDomain, FiniteMeasure, Params
from services.reaction.dw_engine import EngineConfig
from services.reaction.nutrient import NutrientRunResult, simulate_direct, simulate_direct_replicas
from services.reaction.rng import RngStream
from services.reaction.stats import Proportion


logger = logging.getLogger(__name__)

# certified density bound for 3-dependent oriented percolation; far out of simulation reach
CERTIFIED_EPSILON = 6.0 ** -196
IID_CRITICAL_DENSITY = 0.7055

PROVENANCE_IID = "simulated-iid"
PROVENANCE_DEPENDENT = "simulated-k-dependent"
PROVENANCE_BLOCKS = "derived-from-blocks"

_REPLICA_CHUNK = 64


@dataclass(frozen=True)
class BlockConfig:
    L: float
    M: float
    d: int = 2

    def __post_init__(self):
        if not self.L > 0:
            raise InvalidArgumentError(f"length scale L must be positive, got {self.L}")
        if not self.M > 0:
            raise InvalidArgumentError(f"mass scale M must be positive, got {self.M}")
        if self.d not in (2, 3):
            raise InvalidArgumentError(f"block construction needs d in {{2, 3}}, got {self.d}")

    def box(self, n: int) -> BoxDomain:
        """D(n) = (-3nL, 3nL)^d."""
        return BoxDomain.centered(3.0 * n * self.L, self.d)

    def site_point(self, j: int, k: int) -> np.ndarray:
        point = np.zeros(self.d)
        point[0] = 3.0 * j * self.L
        point[1] = 2.0 * k * self.L
        return point

    def window(self, j: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Closed box x_{j,k} + I_L, flat in the first coordinate."""
        centre = self.site_point(j, k)
        half = np.full(self.d, self.L)
        half[0] = 0.0
        return centre - half, centre + half


def window_mass(mu: FiniteMeasure, L: float) -> float:
    """mu(I_L) for a gridded measure: cells within one pitch of x1 = 0 and sup norm <= L elsewhere."""
    centers = mu.domain.cell_centers(mu.cell_size)
    near = np.abs(centers[:, 0]) < mu.cell_size
    if mu.domain.d > 1:
        near &= np.all(np.abs(centers[:, 1:]) <= L + 1e-12, axis=1)
    return float(mu.mass.ravel()[near].sum())


def window_measure(domain: BoxDomain, cell_size: float, L: float, total: float) -> FiniteMeasure:
    """Mass `total` spread over the cells with x1 in [0, pitch] inside I_L's shadow."""
    lower = np.full(domain.d, -L)
    upper = np.full(domain.d, L)
    lower[0], upper[0] = 0.0, cell_size
    region = BoxDomain(tuple(lower), tuple(upper))
    return FiniteMeasure.uniform(domain, cell_size, total, region)


# ---------------------------------------------------------------------------
# Oriented site percolation
# ---------------------------------------------------------------------------

def parity_mask(generations: int) -> np.ndarray:
    j = np.arange(generations + 1)[:, None]
    k = np.arange(-generations, generations + 1)[None, :]
    return (j + k) % 2 == 0


@dataclass
class OpLattice:
    omega: np.ndarray
    provenance: str
    omega_tilde: Optional[np.ndarray] = None

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=bool)
        if omega.ndim != 2 or omega.shape[1] != 2 * omega.shape[0] - 1:
            raise InvalidArgumentError(f"lattice must have shape (G+1, 2G+1), got {omega.shape}")
        mask = parity_mask(omega.shape[0] - 1)
        # row 0 holds only the origin, which the cluster always contains
        mask[0] = False
        self.omega = omega & mask

    @property
    def generations(self) -> int:
        return self.omega.shape[0] - 1

    def site(self, j: int, k: int) -> int:
        G = self.generations
        if not (1 <= j <= G) or abs(k) > G or (j + k) % 2:
            raise InvalidArgumentError(f"({j}, {k}) is not a lattice site")
        return int(self.omega[j, k + G])


@dataclass(frozen=True)
class ClusterReport:
    size: int
    survived: bool
    max_generation: int
    reached: np.ndarray = field(repr=False, compare=False, default=None)


def _step_reach(prev: np.ndarray) -> np.ndarray:
    """Sites with a neighbour k +- 1 in the previous row (last axis)."""
    nxt = np.zeros_like(prev)
    nxt[..., 1:] |= prev[..., :-1]
    nxt[..., :-1] |= prev[..., 1:]
    return nxt


def op_cluster(lat: OpLattice) -> ClusterReport:
    """Cluster of the origin: (m, k_m) reached from (m-1, k_m +- 1) when omega(m, k_m) = 1."""
    G = lat.generations
    reached = np.zeros_like(lat.omega)
    reached[0, G] = True
    deepest = 0
    for m in range(1, G + 1):
        reached[m] = _step_reach(reached[m - 1]) & lat.omega[m]
        if not reached[m].any():
            break
        deepest = m
    return ClusterReport(int(reached.sum()), bool(reached[G].any()) if G > 0 else True, deepest, reached)


def op_uniforms(generations: int, rng: RngStream, k_dependence: int = 0) -> np.ndarray:
    """Site uniforms; for k > 0 the normal scores of overlapping (k+1)-blocks are averaged."""
    if int(k_dependence) < 0:
        raise InvalidArgumentError(f"dependence range must be >= 0, got {k_dependence}")
    G = int(generations)
    if G < 0:
        raise InvalidArgumentError(f"generations must be >= 0, got {generations}")
    gen = rng.generator()
    shape = (G + 1, 2 * G + 1)
    if k_dependence == 0:
        return gen.random(shape)
    s = int(k_dependence) + 1
    z = gen.standard_normal((shape[0] + s - 1, shape[1] + s - 1))
    # mean of s*s iid normals has variance 1/s^2
    blocks = sliding_window_view(z, (s, s)).mean(axis=(-1, -2)) * s
    return stats.norm.cdf(blocks)


def op_simulate(density: float, k_dependence: int, generations: int, rng: RngStream) -> OpLattice:
    """Sites open when their uniform falls below `density`; marginals are exact for any k."""
    if not 0.0 <= density <= 1.0:
        raise InvalidArgumentError(f"density must lie in [0, 1], got {density}")
    u = op_uniforms(generations, rng, k_dependence)
    return OpLattice(u < density, PROVENANCE_IID if k_dependence == 0 else PROVENANCE_DEPENDENT)


@dataclass
class DensitySweep:
    densities: np.ndarray
    survived: np.ndarray
    replicas: int
    generations: int
    level: float

    @property
    def fractions(self) -> np.ndarray:
        return self.survived / self.replicas

    def intervals(self) -> List[Tuple[float, float]]:
        return [Proportion(int(s), self.replicas).interval() for s in self.survived]

    @property
    def bracket(self) -> Tuple[float, float]:
        """(last density at or below the survival level, first density above it)."""
        above = np.flatnonzero(self.fractions > self.level)
        if len(above) == 0:
            return float(self.densities[-1]), 1.0
        first = int(above[0])
        low = float(self.densities[first - 1]) if first > 0 else 0.0
        return low, float(self.densities[first])


def estimate_critical_density(densities: Sequence[float], generations: int, replicas: int,
                              rng: RngStream, level: float = 0.1,
                              chunk: int = 200) -> DensitySweep:
    """Survival to `generations` for i.i.d. sites with one uniform field shared by every density."""
    densities = np.sort(np.asarray(densities, dtype=float))
    if densities.size == 0 or np.any((densities < 0) | (densities > 1)):
        raise InvalidArgumentError("densities must be a non-empty list in [0, 1]")
    G = int(generations)
    W = 2 * G + 1
    survived = np.zeros(len(densities), dtype=np.int64)
    for start in range(0, replicas, chunk):
        count = min(chunk, replicas - start)
        gen = rng.child("sweep", start).generator()
        reach = np.zeros((len(densities), count, W), dtype=bool)
        reach[:, :, G] = True
        for _ in range(G):
            u = gen.random((count, W))
            reach = _step_reach(reach) & (u[None, :, :] < densities[:, None, None])
            if not reach.any():
                break
        survived += reach.any(axis=2).sum(axis=1)
    logger.info("density sweep over %d replicas x %d generations: %s", replicas, G,
                dict(zip(densities.round(4).tolist(), (survived / replicas).round(4).tolist())))
    return DensitySweep(densities, survived, replicas, G, level)


# ---------------------------------------------------------------------------
# Exit-measure iteration and derived sites
# ---------------------------------------------------------------------------

@dataclass
class ExitSequence:
    mu: FiniteMeasure
    cfg: BlockConfig
    exits: List[BoundaryMeasure]
    stage_steps: List[int]

    @property
    def origin_mass(self) -> float:
        return window_mass(self.mu, self.cfg.L)

    def totals(self) -> np.ndarray:
        return np.array([e.total() for e in self.exits])


def carry_nutrient(run: NutrientRunResult, h: float):
    """Leftover nutrient inside the finished box, fresh nutrient 1 outside it."""
    old = run.domain
    leftover = run.v_path[-1].ravel()

    def level(points: np.ndarray) -> np.ndarray:
        out = np.ones(len(points))
        inside = old.contains(points)
        out[inside] = leftover[old.cell_index(points[inside], h)]
        return out

    return level


def iterate_exit_measures(mu: FiniteMeasure, p: Params, cfg: BlockConfig, n_max: int,
                          engine: EngineConfig, rng: RngStream) -> ExitSequence:
    """Stage n runs the reaction on D(n) from the previous exit measure until extinction.

    Stage 1 starts from (mu, 1) on D(1); later stages inherit the depleted nutrient inside
    the old box. Stage n draws from rng.child("stage", n).
    """
    if p.d != cfg.d:
        raise InvalidArgumentError(f"parameters are for d={p.d} but blocks for d={cfg.d}")
    h = engine.cell_size
    if not cfg.box(1).contains_box(mu.domain):
        raise InvalidArgumentError("initial measure must be supported in D(1)")
    source: Union[FiniteMeasure, BoundaryMeasure] = mu
    nutrient = 1.0
    exits: List[BoundaryMeasure] = []
    stage_steps: List[int] = []
    for n in range(1, int(n_max) + 1):
        domain = cfg.box(n)
        if source.total() == 0:
            exits.append(BoundaryMeasure.empty(domain, h))
            stage_steps.append(0)
            continue
        run = simulate_direct(source, nutrient, p, domain, engine.horizon, engine.N, rng.child("stage", n),
                              cell_size=h, dt=engine.dt, placement=engine.placement,
                              snapshot_count=1, max_particles=engine.max_particles,
                              max_steps=engine.max_steps)
        if not run.extinct:
            raise BudgetExceededError(
                f"stage {n} still has mass {run.final_mass():.4g} at horizon {engine.horizon}",
                consumed={"stage": n, "steps": run.steps, "time": run.horizon})
        logger.debug("stage %d: exit mass %.4g after %d steps", n, run.exit_total(), run.steps)
        exits.append(run.exit)
        stage_steps.append(run.steps)
        nutrient = carry_nutrient(run, h)
        source = run.exit
    return ExitSequence(mu, cfg, exits, stage_steps)


def blocks_to_sites(exits: Union[ExitSequence, Sequence[BoundaryMeasure]], cfg: Optional[BlockConfig] = None,
                    origin_mass: Optional[float] = None) -> OpLattice:
    """omega-tilde from window masses, then omega by the parent rule.

    omega(j, k) = 1 when both parents (j-1, k-1) and (j-1, k+1) have omega-tilde 0, and
    omega-tilde(j, k) otherwise. Parents outside the lattice count as 0.
    """
    if isinstance(exits, ExitSequence):
        cfg = cfg or exits.cfg
        origin_mass = exits.origin_mass if origin_mass is None else origin_mass
        exits = exits.exits
    if cfg is None:
        raise InvalidArgumentError("a block configuration is required")
    origin_mass = 0.0 if origin_mass is None else float(origin_mass)
    G = len(exits)
    W = 2 * G + 1
    parity = parity_mask(G)
    tilde = np.zeros((G + 1, W), dtype=bool)
    tilde[0, G] = origin_mass >= cfg.M
    for j in range(1, G + 1):
        exit_j = exits[j - 1]
        if exit_j.is_zero():
            continue
        for col in np.flatnonzero(parity[j]):
            lower, upper = cfg.window(j, col - G)
            tilde[j, col] = exit_j.mass_in_box(lower, upper) > cfg.M

    omega = np.zeros_like(tilde)
    for j in range(1, G + 1):
        left = np.zeros(W, dtype=bool)
        right = np.zeros(W, dtype=bool)
        left[1:] = tilde[j - 1, :-1]
        right[:-1] = tilde[j - 1, 1:]
        omega[j] = np.where(~left & ~right, True, tilde[j])
    return OpLattice(omega & parity, PROVENANCE_BLOCKS, omega_tilde=tilde & parity)


def survival_implies_exit(lat: OpLattice, exits: Sequence[BoundaryMeasure]) -> bool:
    """When omega-tilde(0,0) = 1, every generation the cluster reaches has a nonzero exit measure."""
    if lat.omega_tilde is None or not lat.omega_tilde[0, lat.generations]:
        return True
    report = op_cluster(lat)
    return all(not exits[j - 1].is_zero() for j in range(1, report.max_generation + 1))


def count_blocks(measure: Union[FiniteMeasure, BoundaryMeasure], L: float, M: float) -> int:
    """N_{L,M}(mu): sum over x in 2L Z^d of ceil(mu(x + [-L, L)^d) / M)."""
    if not (L > 0 and M > 0):
        raise InvalidArgumentError("L and M must be positive")
    if isinstance(measure, BoundaryMeasure):
        points, masses = measure.points, measure.masses
    else:
        points = measure.domain.cell_centers(measure.cell_size)
        masses = measure.mass.ravel()
    keep = masses > 0
    if not keep.any():
        return 0
    blocks = np.floor((points[keep] + L) / (2.0 * L)).astype(np.int64)
    _, inverse = np.unique(blocks, axis=0, return_inverse=True)
    sums = np.bincount(inverse.ravel(), weights=masses[keep])
    return int(np.ceil(sums / M - 1e-12).sum())


# ---------------------------------------------------------------------------
# Life block probe
# ---------------------------------------------------------------------------

@dataclass
class LifeBlockReport:
    cfg: BlockConfig
    initial_mass: float
    replicas: int
    censored: int
    failures: Dict[int, Proportion]

    def failure_estimate(self, k: int) -> float:
        return self.failures[k].estimate

    def failure_interval(self, k: int) -> Tuple[float, float]:
        return self.failures[k].interval()

    def as_dict(self) -> dict:
        out = {"L": self.cfg.L, "M": self.cfg.M, "d": self.cfg.d, "initial_mass": self.initial_mass,
               "replicas": self.replicas, "censored": self.censored}
        for k, prop in sorted(self.failures.items()):
            lo, hi = prop.interval()
            tag = "plus" if k > 0 else "minus"
            out[f"failure_{tag}"] = prop.estimate
            out[f"failure_{tag}_ci_low"] = lo
            out[f"failure_{tag}_ci_high"] = hi
        return out


def half_space_nutrient(points: np.ndarray) -> np.ndarray:
    return (points[:, 0] >= 0).astype(float)


def life_block_probe(p: Params, cfg: BlockConfig, engine: EngineConfig, reps: int, rng: RngStream,
                     f=half_space_nutrient, initial_mass: Optional[float] = None) -> LifeBlockReport:
    """Failure frequency of exit(x_{1,+-1} + I_L) <= M for runs on D_{3L} started on I_L.

    Replicas still alive at the horizon are censored and reported, not counted.
    """
    if p.d != cfg.d:
        raise InvalidArgumentError(f"parameters are for d={p.d} but blocks for d={cfg.d}")
    mass = cfg.M if initial_mass is None else float(initial_mass)
    if mass < cfg.M:
        raise InvalidArgumentError(f"initial mass {mass} is below the block mass {cfg.M}")
    domain = cfg.box(1)
    h = engine.cell_size
    mu = window_measure(domain, h, cfg.L, mass)
    streams = [rng.child("life", r) for r in range(int(reps))]
    fails = {1: 0, -1: 0}
    done = 0
    censored = 0
    for start in range(0, len(streams), _REPLICA_CHUNK):
        runs = simulate_direct_replicas(mu, f, p, domain, engine.horizon, engine.N,
                                        streams[start:start + _REPLICA_CHUNK], cell_size=h,
                                        dt=engine.dt, placement=engine.placement, snapshot_count=1,
                                        max_particles=engine.max_particles, max_steps=engine.max_steps)
        for run in runs:
            if not run.extinct:
                censored += 1
                continue
            done += 1
            for k in (1, -1):
                lower, upper = cfg.window(1, k)
                if run.exit.mass_in_box(lower, upper) <= cfg.M:
                    fails[k] += 1
    if done == 0 and reps > 0:
        raise BudgetExceededError(f"all {reps} life-block replicas were still alive at the horizon",
                                  consumed={"replicas": int(reps), "time": engine.horizon})
    if censored:
        logger.warning("life block probe: %d of %d replicas censored at horizon %.4g",
                       censored, reps, engine.horizon)
    return LifeBlockReport(cfg, mass, int(reps), censored,
                           {k: Proportion(v, done) for k, v in fails.items()})
