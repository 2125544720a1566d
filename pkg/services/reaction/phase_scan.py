"""Monte Carlo phase diagram: survival verdicts, the critical curve bracket and block checks.

Survival is read off the exit iteration on the boxes (-n L, n L)^d, n = 1..stages. Stage n
starts from the exit measure of stage n - 1 and the nutrient it left behind. A replica is
dead as soon as a stage goes extinct with a zero exit measure, and alive when the last stage
still exits. It is censored when a stage keeps mass past the horizon before either happens,
and over budget when a stage hits the particle or step limit. Censored and over-budget
replicas are reported and never folded into an estimate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.exceptions import BudgetExceededError, InvalidArgumentError, InvariantViolationError
from services.reaction.blocks import carry_nutrient, count_blocks
from services.reaction.core import BoundaryMeasure, BoxDomain, FiniteMeasure, Params
from services.reaction.dw_engine import EngineConfig, stability_cap
from services.reaction.nutrient import (
    NutrientRunResult,
    build_packages,
    simulate_direct,
    simulate_direct_replicas,
    simulate_nutrient_approx_replicas,
)
from services.reaction.replicas import chunks, run_replicas
from services.reaction.rng import RngStream
from services.reaction.stats import Proportion, RunningMoments, bonferroni, ks_two_sample


logger = logging.getLogger(__name__)

DEATH = "death-consistent"
LIFE = "life-consistent"
UNDECIDED = "undecided"

DEFAULT_LEVEL = 0.05
SURVIVAL_STAGES = 4
_CHUNK = 64

ALIVE = "alive"
DEAD = "dead"
CENSORED = "censored"
OVER_BUDGET = "over-budget"


def death_epsilon(d: int) -> float:
    """Block threshold 1/(4 * 3^d)."""
    return 1.0 / (4.0 * 3 ** d)


def stage_box(L_box: float, n: int, d: int) -> BoxDomain:
    """(-n L_box, n L_box)^d."""
    return BoxDomain.centered(n * L_box, d)


def _classify(run: NutrientRunResult, last_stage: bool) -> Optional[str]:
    """Tag after one stage; None when the replica goes on to the next box."""
    if run.exit.is_zero():
        return DEAD if run.extinct else CENSORED
    if last_stage:
        return ALIVE
    return None if run.extinct else CENSORED


def _direct_runs(mu, f, p: Params, domain: BoxDomain, horizon: float, engine: EngineConfig,
                 streams: Sequence[RngStream], dt: Optional[float]) -> List[NutrientRunResult]:
    return simulate_direct_replicas(mu, f, p, domain, horizon, engine.N, list(streams),
                                    cell_size=engine.cell_size, dt=dt, placement=engine.placement,
                                    snapshot_count=1, max_particles=engine.max_particles,
                                    max_steps=engine.max_steps)


def _direct_batch(mu, f, p: Params, domain: BoxDomain, engine: EngineConfig, streams: Sequence[RngStream],
                  horizon: Optional[float] = None, threads: int = 1, dt: Optional[float] = None,
                  desc: Optional[str] = None) -> List[NutrientRunResult]:
    """Direct runs in chunks of replicas; chunks may run on a thread pool."""
    horizon = engine.horizon if horizon is None else horizon
    step = engine.dt if dt is None else dt

    def run_chunk(batch):
        return _direct_runs(mu, f, p, domain, horizon, engine, batch, step)

    out: List[NutrientRunResult] = []
    for runs in run_replicas(run_chunk, chunks(list(streams), _CHUNK), threads=threads, desc=desc):
        out.extend(runs)
    return out


def _first_stage(mu, p: Params, domain: BoxDomain, horizon: float, engine: EngineConfig,
                 streams: Sequence[RngStream], threads: int, dt: Optional[float]) -> List[Optional[NutrientRunResult]]:
    """Stage one for every replica; None marks a replica that ran out of budget.

    A chunk that runs out of budget is rerun one replica at a time. Draws are keyed per
    replica, so the reruns reproduce the batched paths.
    """
    def run_chunk(batch):
        try:
            return _direct_runs(mu, 1.0, p, domain, horizon, engine, batch, dt)
        except BudgetExceededError:
            out = []
            for stream in batch:
                try:
                    out.extend(_direct_runs(mu, 1.0, p, domain, horizon, engine, [stream], dt))
                except BudgetExceededError:
                    out.append(None)
            return out

    out: List[Optional[NutrientRunResult]] = []
    for runs in run_replicas(run_chunk, chunks(list(streams), _CHUNK), threads=threads):
        out.extend(runs)
    return out


def _continue_stages(first: NutrientRunResult, p: Params, L_box: float, horizon: float, stages: int,
                     engine: EngineConfig, stream: RngStream, dt: Optional[float]) -> str:
    """Stages 2..stages of one replica whose first stage went extinct after exiting."""
    h = engine.cell_size
    run = first
    for n in range(2, stages + 1):
        try:
            run = simulate_direct(run.exit, carry_nutrient(run, h), p, stage_box(L_box, n, p.d), horizon,
                                  engine.N, stream.child("stage", n), cell_size=h, dt=dt,
                                  placement=engine.placement, snapshot_count=1,
                                  max_particles=engine.max_particles, max_steps=engine.max_steps)
        except BudgetExceededError:
            return OVER_BUDGET
        tag = _classify(run, n == stages)
        if tag is not None:
            return tag
    raise InvariantViolationError(f"exit iteration ended without a verdict after {stages} stages")


# ---------------------------------------------------------------------------
# Survival and the critical curve
# ---------------------------------------------------------------------------

@dataclass
class PhasePoint:
    beta: float
    gamma: float
    survival_estimate: float
    ci_low: float
    ci_high: float
    replicas: int
    censored: int
    verdict: str
    censor_box: float
    censor_horizon: float
    over_budget: int = 0
    stages: int = SURVIVAL_STAGES

    def as_row(self) -> dict:
        return {"beta": self.beta, "gamma": self.gamma, "survival": self.survival_estimate,
                "ci_low": self.ci_low, "ci_high": self.ci_high, "replicas": self.replicas,
                "censored": self.censored, "over_budget": self.over_budget, "stages": self.stages,
                "censor_box": self.censor_box, "censor_horizon": self.censor_horizon,
                "verdict": self.verdict}


def verdict_for(ci_low: float, ci_high: float, level: float) -> str:
    if ci_low > level:
        return LIFE
    if ci_high < level:
        return DEATH
    return UNDECIDED


def default_seed_measure(domain: BoxDomain, cell_size: float, mass: float = 1.0) -> FiniteMeasure:
    return FiniteMeasure.dirac(domain, cell_size, np.zeros(domain.d), mass)


def survival_probability(p: Params, mu: Optional[FiniteMeasure], L_box: float, horizon: float, reps: int,
                         engine: EngineConfig, rng: RngStream, level: float = DEFAULT_LEVEL,
                         threads: int = 1, dt: Optional[float] = None,
                         stages: int = SURVIVAL_STAGES) -> PhasePoint:
    """Fraction of decided replicas whose exit iteration still exits the last box, nutrient 1.

    Every stage runs for at most `horizon`. Stage one uses the replica stream itself and
    stage n its child ("stage", n).
    """
    stages = int(stages)
    if stages < 1:
        raise InvalidArgumentError(f"stages must be at least 1, got {stages}")
    domain = stage_box(L_box, 1, p.d)
    if mu is None:
        mu = default_seed_measure(domain, engine.cell_size)
    elif not domain.contains_box(mu.domain):
        raise InvalidArgumentError("initial measure must be supported in the censoring box")
    step = engine.dt if dt is None else dt
    streams = [rng.child("survival", r) for r in range(int(reps))]
    first = _first_stage(mu, p, domain, horizon, engine, streams, threads, step)

    tags: List[Optional[str]] = []
    pending = []
    for i, run in enumerate(first):
        tag = OVER_BUDGET if run is None else _classify(run, stages == 1)
        tags.append(tag)
        if tag is None:
            pending.append(i)
    if pending:
        chained = run_replicas(
            lambda i: _continue_stages(first[i], p, L_box, horizon, stages, engine, streams[i], step),
            pending, threads=threads)
        for i, tag in zip(pending, chained):
            tags[i] = tag

    alive = tags.count(ALIVE)
    censored = tags.count(CENSORED)
    over = tags.count(OVER_BUDGET)
    decided = len(tags) - censored - over
    if decided == 0 and reps > 0:
        raise BudgetExceededError(f"no replica decided: {censored} censored at horizon {horizon}, {over} over budget",
                                  consumed={"replicas": int(reps), "censored": censored, "over_budget": over,
                                            "time": horizon})
    prop = Proportion(alive, decided)
    lo, hi = prop.interval()
    if censored or over:
        logger.warning("(beta=%.4g, gamma=%.4g): %d censored and %d over budget of %d replicas",
                       p.beta, p.gamma, censored, over, reps)
    return PhasePoint(p.beta, p.gamma, prop.estimate, lo, hi, int(reps), censored,
                      verdict_for(lo, hi, level), float(L_box), float(horizon), over, stages)


@dataclass
class PsiBracket:
    beta: float
    gamma_low: float
    gamma_high: float
    undecided: bool
    points: List[PhasePoint] = field(default_factory=list)
    history: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def width(self) -> float:
        return self.gamma_high - self.gamma_low

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.gamma_low + self.gamma_high)


def estimate_psi(beta: float, tol: float, budget: int, engine: EngineConfig, rng: RngStream, *,
                 d: int = 3, mu: Optional[FiniteMeasure] = None, L_box: float = 4.0, horizon: Optional[float] = None,
                 reps: int = 200, level: float = DEFAULT_LEVEL, gamma_max: Optional[float] = None,
                 threads: int = 1, stages: int = SURVIVAL_STAGES) -> PsiBracket:
    """Bisection on gamma in [0, gamma_max] (default beta); every evaluation shares one stream set."""
    if not beta > 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta}")
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    lo, hi = 0.0, float(beta if gamma_max is None else gamma_max)
    horizon = engine.horizon if horizon is None else horizon
    # one step size for every gamma keeps the replicas coupled
    dt = engine.dt or stability_cap(engine.N, max(hi, beta))
    bracket = PsiBracket(beta, lo, hi, False, history=[(lo, hi)])
    evaluations = 0
    while hi - lo > tol:
        if evaluations >= budget:
            bracket.undecided = True
            logger.info("psi(%.4g): budget of %d evaluations spent at [%.4g, %.4g]", beta, budget, lo, hi)
            break
        mid = 0.5 * (lo + hi)
        point = survival_probability(Params(beta, mid, d), mu, L_box, horizon, reps, engine, rng,
                                     level=level, threads=threads, dt=dt, stages=stages)
        evaluations += 1
        bracket.points.append(point)
        if point.verdict == LIFE:
            lo = mid
        elif point.verdict == DEATH:
            hi = mid
        else:
            bracket.undecided = True
            logger.info("psi(%.4g): undecided at gamma=%.4g", beta, mid)
            break
        bracket.history.append((lo, hi))
    bracket.gamma_low, bracket.gamma_high = lo, hi
    return bracket


def certain_death_trend(p: Params, mu: Optional[FiniteMeasure], L_box: float, horizons: Sequence[float],
                        reps: int, engine: EngineConfig, rng: RngStream, threads: int = 1) -> Dict[str, object]:
    """Fraction of replicas not yet dead at each horizon, from one run to the largest horizon.

    Dead means extinct with a zero exit measure. A replica that reached the boundary of
    (-L_box, L_box)^d has left the box rather than died, so it counts as surviving at every
    horizon and is reported under `exited`; the box should be wide enough that few do.
    """
    horizons = sorted(float(t) for t in horizons)
    if not horizons or horizons[0] <= 0:
        raise InvalidArgumentError("horizons must be positive")
    domain = BoxDomain.centered(L_box, p.d)
    if mu is None:
        mu = default_seed_measure(domain, engine.cell_size)
    streams = [rng.child("trend", r) for r in range(int(reps))]
    runs = _direct_batch(mu, 1.0, p, domain, engine, streams, horizon=horizons[-1], threads=threads)
    exited = sum(1 for r in runs if not r.exit.is_zero())
    deaths = [r.extinction_time for r in runs if r.extinct and r.exit.is_zero()]
    props, extinct = [], []
    for t in horizons:
        died = sum(1 for s in deaths if s <= t)
        extinct.append(died)
        props.append(Proportion(len(runs) - died, len(runs)))
    if exited:
        logger.warning("certain-death trend: %d of %d replicas reached the boundary of the box of half-width %.4g",
                       exited, len(runs), L_box)
    estimates = [q.estimate for q in props]
    first, last = props[0].interval(), props[-1].interval()
    return {
        "horizons": horizons,
        "survival": estimates,
        "intervals": [q.interval() for q in props],
        "extinct": extinct,
        "exited": exited,
        "replicas": len(runs),
        "decreasing": all(a >= b for a, b in zip(estimates, estimates[1:])),
        "separated": last[1] < first[0],
    }


# ---------------------------------------------------------------------------
# Death blocks
# ---------------------------------------------------------------------------

@dataclass
class DeathBlockReport:
    L: float
    M: float
    d: int
    replicas: int
    p_exit_nonzero: float
    p_exit_nonzero_ci: Tuple[float, float]
    mean_exit_over_M: float
    mean_exit_over_M_ci: Tuple[float, float]
    mean_blocks: float
    epsilon0: float
    placements: Dict[str, dict] = field(default_factory=dict)

    @property
    def passes(self) -> bool:
        return self.p_exit_nonzero_ci[1] < self.epsilon0 and self.mean_exit_over_M_ci[1] < self.epsilon0

    def as_dict(self) -> dict:
        return {"L": self.L, "M": self.M, "d": self.d, "replicas": self.replicas,
                "p_exit_nonzero": self.p_exit_nonzero,
                "p_exit_nonzero_ci_high": self.p_exit_nonzero_ci[1],
                "mean_exit_over_M": self.mean_exit_over_M,
                "mean_exit_over_M_ci_high": self.mean_exit_over_M_ci[1],
                "mean_blocks": self.mean_blocks, "epsilon0": self.epsilon0, "passes": self.passes}


def _placement_point(name: str, L: float, h: float, d: int) -> np.ndarray:
    if name == "center":
        return np.zeros(d)
    if name == "corner":
        return np.full(d, L - 0.5 * h)
    raise InvalidArgumentError(f"unknown placement {name!r}")


def death_block_check(p: Params, L: float, M: float, reps: int, engine: EngineConfig, rng: RngStream,
                      placements: Sequence[str] = ("center", "corner"), threads: int = 1) -> DeathBlockReport:
    """Worst case over placements of P[exit of D_3L != 0] and E[exit(1)]/M from mass M in [-L, L]^d."""
    h = engine.cell_size
    domain = BoxDomain.centered(3.0 * L, p.d)
    eps0 = death_epsilon(p.d)
    worst = None
    details = {}
    for name in placements:
        mu = FiniteMeasure.dirac(domain, h, _placement_point(name, L, h, p.d), M)
        streams = [rng.child("death-block", name, r) for r in range(int(reps))]
        runs = _direct_batch(mu, 1.0, p, domain, engine, streams, threads=threads)
        alive = [r for r in runs if not r.extinct]
        if alive:
            raise BudgetExceededError(f"{len(alive)} death-block replicas still alive at horizon {engine.horizon}",
                                      consumed={"replicas": len(alive), "time": engine.horizon})
        nonzero = Proportion(sum(1 for r in runs if not r.exit.is_zero()), len(runs))
        ratio = RunningMoments.of([r.exit_total() / M for r in runs])
        blocks = RunningMoments.of([count_blocks(r.exit, L, M) for r in runs])
        ratio_ci = (max(0.0, ratio.mean - 1.96 * ratio.se), ratio.mean + 1.96 * ratio.se)
        entry = {"p_exit_nonzero": nonzero.estimate, "p_ci": nonzero.interval(),
                 "mean_exit_over_M": ratio.mean, "mean_ci": ratio_ci, "mean_blocks": blocks.mean}
        details[name] = entry
        score = max(entry["p_ci"][1], ratio_ci[1])
        if worst is None or score > worst[0]:
            worst = (score, entry)
    entry = worst[1]
    report = DeathBlockReport(L, M, p.d, int(reps), entry["p_exit_nonzero"], entry["p_ci"],
                              entry["mean_exit_over_M"], entry["mean_ci"], entry["mean_blocks"], eps0, details)
    logger.info("death block L=%.4g M=%.4g: p=%.4g mean=%.4g passes=%s", L, M, report.p_exit_nonzero,
                report.mean_exit_over_M, report.passes)
    return report


def scaled_block_sizes(b: float, d: int, pitch: float) -> Tuple[float, float]:
    """(L, M) = (b^(2/d), b) with L rounded to a whole number of grid pitches."""
    L = max(pitch, round(b ** (2.0 / d) / pitch) * pitch)
    return L, float(b)


def death_block_scan(p: Params, bs: Sequence[float], reps: int, engine: EngineConfig, rng: RngStream,
                     threads: int = 1) -> Tuple[Optional[float], List[DeathBlockReport]]:
    """First b (in the given order) whose scaled block passes, plus every report produced."""
    reports = []
    for b in bs:
        L, M = scaled_block_sizes(b, p.d, engine.cell_size)
        report = death_block_check(p, L, M, reps, engine, rng.child("b", b), threads=threads)
        reports.append(report)
        if report.passes:
            return float(b), reports
    return None, reports


# ---------------------------------------------------------------------------
# Decomposition suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Splits:
    mu_share: float = 0.4
    f_share: float = 0.5
    beta_share: float = 0.5
    gamma_extra: float = 0.5
    inner_fraction: float = 0.5
    nutrient_share: float = 0.5


@dataclass
class DecompositionCheck:
    name: str
    quantity: str
    statistic: float
    pvalue: float
    level: float
    one_sided: bool = False

    @property
    def passes(self) -> bool:
        return self.pvalue >= self.level


def _totals(runs: Sequence[Tuple[float, float]]) -> Tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(runs, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def _density(run: NutrientRunResult) -> np.ndarray:
    return run.occupation.mass / run.occupation.cell_volume


def decomposition_suite(p: Params, domain: BoxDomain, reps: int, engine: EngineConfig, rng: RngStream,
                        mu: Optional[FiniteMeasure] = None, splits: Splits = Splits(), level: float = 0.01,
                        threads: int = 1) -> List[DecompositionCheck]:
    """Two-stage constructions against one-shot runs, compared on total exit and occupation mass.

    Checks: mu split, nutrient split, sub-domain Markov property, beta split, gamma split, and
    nutrient-to-mass conversion (one-sided). Levels are Bonferroni corrected over all tests.
    """
    h = engine.cell_size
    if mu is None:
        mu = default_seed_measure(domain, h)
    R = int(reps)

    def one(mu0, f0, params, dom, stream):
        return simulate_direct(mu0, f0, params, dom, engine.horizon, engine.N, stream, cell_size=h,
                               dt=engine.dt, placement=engine.placement, snapshot_count=1,
                               max_particles=engine.max_particles, max_steps=engine.max_steps)

    def ensure(run: NutrientRunResult) -> NutrientRunResult:
        if not run.extinct:
            raise BudgetExceededError(f"decomposition run still alive at horizon {engine.horizon}",
                                      consumed={"time": engine.horizon})
        return run

    def collect(label, fn):
        streams = [rng.child("decomposition", label, r) for r in range(R)]
        return _totals(run_replicas(fn, streams, threads=threads, desc=label))

    def pair(run_a: NutrientRunResult, run_b: Optional[NutrientRunResult]):
        exit_mass = run_a.exit_total() + (run_b.exit_total() if run_b is not None else 0.0)
        occ = run_a.total_occupation() + (run_b.total_occupation() if run_b is not None else 0.0)
        return exit_mass, occ

    def baseline(stream):
        return pair(ensure(one(mu, 1.0, p, domain, stream)), None)

    def mu_split(stream):
        first = ensure(one(mu.scaled(splits.mu_share), 1.0, p, domain, stream.child(1)))
        second = ensure(one(mu.scaled(1.0 - splits.mu_share), first.v_path[-1], p, domain, stream.child(2)))
        return pair(first, second)

    def f_split(stream):
        f_minus = splits.f_share
        first = ensure(one(mu, f_minus, p, domain, stream.child(1)))
        depleted = np.exp(-_density(first))
        mass = p.beta * (1.0 - f_minus) * (1.0 - depleted) * first.occupation.cell_volume
        second = ensure(one(FiniteMeasure(domain, h, mass), depleted, p, domain, stream.child(2)))
        return pair(first, second)

    inner = BoxDomain(tuple(lo * splits.inner_fraction for lo in domain.lower),
                      tuple(hi * splits.inner_fraction for hi in domain.upper))
    inner_mass = _restrict_grid(mu, inner, h)
    if not math.isclose(float(inner_mass.sum()), mu.total(), rel_tol=1e-9, abs_tol=1e-12):
        raise InvalidArgumentError("the sub-domain check needs the initial measure inside the inner box")
    inner_mu = FiniteMeasure(inner, h, inner_mass)

    def markov(stream):
        first = ensure(one(inner_mu, 1.0, p, inner, stream.child(1)))
        ex = first.exit
        keep = domain.contains(ex.points) if len(ex.points) else np.zeros(0, dtype=bool)
        # exit mass already on the outer boundary stays there
        on_outer = float(ex.masses[~keep].sum())
        exit_mass, occ = on_outer, first.total_occupation()
        carried = BoundaryMeasure(inner, h, ex.points[keep], ex.masses[keep], ex.faces[keep])
        if carried.total() > 0:
            second = ensure(one(carried, carry_nutrient(first, h), p, domain, stream.child(2)))
            exit_mass += second.exit_total()
            occ += second.total_occupation()
        return exit_mass, occ

    def beta_split(stream):
        b_minus = p.beta * splits.beta_share
        first = ensure(one(mu, 1.0, p.with_beta(b_minus), domain, stream.child(1)))
        left = first.v_path[-1]
        mass = (p.beta - b_minus) * (1.0 - left) * first.occupation.cell_volume
        second = ensure(one(FiniteMeasure(domain, h, mass), left, p, domain, stream.child(2)))
        return pair(first, second)

    def gamma_split(stream):
        extra = splits.gamma_extra
        first = ensure(one(mu, 1.0, p.with_gamma(p.gamma + extra), domain, stream.child(1)))
        mass = extra * first.occupation.mass
        second = ensure(one(FiniteMeasure(domain, h, mass), first.v_path[-1], p, domain, stream.child(2)))
        return pair(first, second)

    g = splits.nutrient_share

    def converted(stream):
        extra = FiniteMeasure(domain, h, np.full(domain.grid_shape(h), p.beta * g * h ** domain.d))
        return pair(ensure(one(mu.merged(extra), 1.0 - g, p, domain, stream)), None)

    base_exit, base_occ = collect("one-shot", baseline)
    samples = {
        "mu-split": collect("mu-split", mu_split),
        "f-split": collect("f-split", f_split),
        "sub-domain": collect("sub-domain", markov),
        "beta-split": collect("beta-split", beta_split),
        "gamma-split": collect("gamma-split", gamma_split),
    }
    conv_exit, conv_occ = collect("converted", converted)

    tests = 2 * (len(samples) + 1)
    corrected = bonferroni(level, tests)
    checks = []
    for name, (ex, occ) in samples.items():
        for quantity, a, b in (("exit", base_exit, ex), ("occupation", base_occ, occ)):
            res = ks_two_sample(a, b, corrected)
            checks.append(DecompositionCheck(name, quantity, res.statistic, res.pvalue, corrected))
    # (mu, 1) against (mu + beta g dx, 1 - g): the converted run is stochastically larger
    for quantity, a, b in (("exit", base_exit, conv_exit), ("occupation", base_occ, conv_occ)):
        # null: the unconverted cdf lies above the converted one everywhere
        res = ks_two_sample(a, b, corrected, alternative="less")
        checks.append(DecompositionCheck("nutrient-conversion", quantity, res.statistic, res.pvalue,
                                         corrected, one_sided=True))
    failed = [c for c in checks if not c.passes]
    if failed:
        logger.warning("decomposition suite: %d of %d tests rejected", len(failed), len(checks))
    return checks


def _restrict_grid(mu: FiniteMeasure, inner: BoxDomain, h: float) -> np.ndarray:
    """Cell masses of `mu` re-binned on the grid of the sub-box `inner`."""
    out = np.zeros(inner.grid_shape(h))
    centers = mu.domain.cell_centers(mu.cell_size)
    flat = mu.mass.ravel()
    inside = inner.contains(centers) & (flat > 0)
    if inside.any():
        np.add.at(out.reshape(-1), inner.cell_index(centers[inside], h), flat[inside])
    return out


# ---------------------------------------------------------------------------
# Monotonicity under common random numbers
# ---------------------------------------------------------------------------

@dataclass
class MonotonicityReport:
    beta_grid: List[float]
    gamma_grid: List[float]
    replicas: int
    comparisons: int
    censored: int
    gamma_flips: int
    beta_flips: int
    trigger_violations: int

    @property
    def clean(self) -> bool:
        return self.gamma_flips == 0 and self.beta_flips == 0 and self.trigger_violations == 0


def monotonicity_scan(beta_grid: Sequence[float], gamma_grid: Sequence[float], mu: FiniteMeasure, f,
                      domain: BoxDomain, engine: EngineConfig, reps: int, rng: RngStream) -> MonotonicityReport:
    """Package-approximation runs on a (beta, gamma) grid with the same replica streams at every point.

    gamma up must never turn a dead replica alive and must shrink the trigger set; beta up the reverse.
    """
    betas = sorted(float(b) for b in beta_grid)
    gammas = sorted(float(g) for g in gamma_grid)
    if not betas or not gammas:
        raise InvalidArgumentError("beta and gamma grids must be non-empty")
    d = domain.d
    pkgs = build_packages(domain, engine.N, f, cell_size=engine.cell_size)
    dt = engine.dt or stability_cap(engine.N, max(gammas))
    streams = [rng.child("monotonicity", r) for r in range(int(reps))]
    grid: Dict[Tuple[int, int], List[NutrientRunResult]] = {}
    for i, b in enumerate(betas):
        for j, g in enumerate(gammas):
            runs = []
            for batch in chunks(streams, _CHUNK):
                runs.extend(simulate_nutrient_approx_replicas(
                    mu, pkgs, Params(b, g, d), engine.N, engine.horizon, list(batch), dt=dt,
                    placement=engine.placement, snapshot_count=1, max_particles=engine.max_particles,
                    max_steps=engine.max_steps))
            grid[(i, j)] = runs

    comparisons = censored = gamma_flips = beta_flips = violations = 0

    def compare(weak: NutrientRunResult, strong: NutrientRunResult):
        """`strong` has the larger beta or the smaller gamma."""
        nonlocal comparisons, censored, violations
        if not (weak.extinct and strong.extinct):
            censored += 1
            return 0
        comparisons += 1
        if not weak.triggered <= strong.triggered:
            violations += 1
        return int(strong.exit.is_zero() and not weak.exit.is_zero())

    for r in range(len(streams)):
        for i in range(len(betas)):
            for j in range(len(gammas) - 1):
                gamma_flips += compare(grid[(i, j + 1)][r], grid[(i, j)][r])
        for j in range(len(gammas)):
            for i in range(len(betas) - 1):
                beta_flips += compare(grid[(i, j)][r], grid[(i + 1, j)][r])
    report = MonotonicityReport(betas, gammas, len(streams), comparisons, censored, gamma_flips, beta_flips,
                                violations)
    if not report.clean:
        logger.warning("monotonicity scan found flips: gamma %d, beta %d, trigger %d",
                       gamma_flips, beta_flips, violations)
    return report
