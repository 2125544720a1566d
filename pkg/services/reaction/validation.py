"""Closed-form oracle checks for the particle engine and the nutrient simulators."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from services.exceptions import InvalidArgumentError
from services.reaction.core import BoxDomain, FiniteMeasure, Params
from services.reaction.dw_engine import RateField, simulate_dw_replicas, stability_cap, time_grid
from services.reaction.loglaplace import GridField, exit_nonzero_probability, riccati_lambda, solve_elliptic_loglaplace
from services.reaction.nutrient import build_packages, simulate_direct_replicas, simulate_nutrient_approx_replicas
from services.reaction.replicas import chunks, run_replicas
from services.reaction.rng import RngStream
from services.reaction.stats import KSResult, Proportion, RunningMoments, ks_two_sample, z_score


logger = logging.getLogger(__name__)

EXTINCTION_Z = 3.0
MOMENT_Z = 4.0
LAPLACE_Z = 3.0


@dataclass(frozen=True)
class CheckRow:
    check: str
    estimate: float
    oracle: float
    se: float
    z: float
    passed: bool

    def as_row(self) -> dict:
        return {"check": self.check, "estimate": self.estimate, "oracle": self.oracle,
                "se": self.se, "z": self.z, "passed": self.passed}


@dataclass(frozen=True)
class ValidationConfig:
    N: int = 200
    cell_size: float = 0.1
    replicas: int = 10000
    chunk: int = 500
    dt: Optional[float] = None
    # half-width of the box standing in for full space in the extinction and moment checks
    free_half_width: float = 10.0
    laplace_half_width: float = 4.0
    laplace_pitch: float = 0.05
    laplace_horizon: float = 80.0

    def __post_init__(self):
        if int(self.N) < 1:
            raise InvalidArgumentError(f"N must be >= 1, got {self.N}")
        if int(self.replicas) < 2:
            raise InvalidArgumentError(f"need at least 2 replicas, got {self.replicas}")
        if not self.cell_size > 0:
            raise InvalidArgumentError(f"cell size must be positive, got {self.cell_size}")
        if int(self.chunk) < 1:
            raise InvalidArgumentError(f"chunk must be >= 1, got {self.chunk}")


# (name, gamma, t, initial mass)
EXTINCTION_POINTS = (("extinction gamma=0 t=2", 0.0, 2.0, 1.0),
                     ("extinction gamma=1 t=1", 1.0, 1.0, 1.0))
FIRST_MOMENT_POINT = ("first moment gamma=0.5 t=1", 0.5, 1.0, 1.0)
SECOND_MOMENT_POINT = ("second moment gamma=0 t=1", 0.0, 1.0, 1.0)


def _row(name: str, estimate: float, oracle: float, se: float, threshold: float) -> CheckRow:
    z = z_score(estimate, oracle, se)
    passed = bool(abs(z) < threshold)
    logger.info("%s: estimate=%.6g oracle=%.6g se=%.3g z=%.2f", name, estimate, oracle, se, z)
    return CheckRow(name, float(estimate), float(oracle), float(se), float(z), passed)


def _dw_batch(cfg: ValidationConfig, mu: FiniteMeasure, gamma: float, domain: BoxDomain, horizon: float,
              streams: Sequence[RngStream], threads: int, desc: str):
    eta = RateField.constant(domain, mu.cell_size, gamma)

    def run_chunk(batch):
        return simulate_dw_replicas(mu, eta, domain, horizon, cfg.N, list(batch), dt=cfg.dt,
                                    track_occupation=False, snapshot_count=1)

    out = []
    for runs in run_replicas(run_chunk, chunks(list(streams), cfg.chunk), threads=threads, desc=desc):
        out.extend(runs)
    return out


def check_step_sizes(cfg: ValidationConfig):
    """Reject an unstable dt before any replica is started."""
    for _, gamma, t, _ in EXTINCTION_POINTS + (FIRST_MOMENT_POINT, SECOND_MOMENT_POINT):
        time_grid(t, stability_cap(cfg.N, gamma), cfg.dt)
    time_grid(cfg.laplace_horizon, stability_cap(cfg.N, 0.0), cfg.dt)


def extinction_checks(cfg: ValidationConfig, rng: RngStream, threads: int = 1) -> List[CheckRow]:
    """Fraction extinct by t against exp(-lambda_t mu(1))."""
    domain = BoxDomain.centered(cfg.free_half_width, 1)
    rows = []
    for name, gamma, t, mass in EXTINCTION_POINTS:
        mu = FiniteMeasure.dirac(domain, cfg.cell_size, [0.0], mass)
        streams = [rng.child("extinction", gamma, t, r) for r in range(cfg.replicas)]
        runs = _dw_batch(cfg, mu, gamma, domain, t, streams, threads, name)
        dead = np.array([r.final_mass() == 0.0 for r in runs], dtype=float)
        p_hat = float(dead.mean())
        oracle = math.exp(-riccati_lambda(gamma, t) * mass)
        se = math.sqrt(max(p_hat * (1.0 - p_hat), oracle * (1.0 - oracle)) / len(dead))
        rows.append(_row(name, p_hat, oracle, se, EXTINCTION_Z))
    return rows


def moment_checks(cfg: ValidationConfig, rng: RngStream, threads: int = 1) -> List[CheckRow]:
    """E U_t(1) = e^{-gamma t} mu(1) and, at gamma = 0, E U_t(1)^2 = mu(1)^2 + mu(1) t."""
    domain = BoxDomain.centered(cfg.free_half_width, 1)
    rows = []

    name, gamma, t, mass = FIRST_MOMENT_POINT
    mu = FiniteMeasure.dirac(domain, cfg.cell_size, [0.0], mass)
    streams = [rng.child("moment1", r) for r in range(cfg.replicas)]
    totals = np.array([r.final_mass() for r in _dw_batch(cfg, mu, gamma, domain, t, streams, threads, name)])
    m = RunningMoments.of(totals)
    rows.append(_row(name, m.mean, math.exp(-gamma * t) * mass, m.se, MOMENT_Z))

    name, gamma, t, mass = SECOND_MOMENT_POINT
    mu = FiniteMeasure.dirac(domain, cfg.cell_size, [0.0], mass)
    streams = [rng.child("moment2", r) for r in range(cfg.replicas)]
    totals = np.array([r.final_mass() for r in _dw_batch(cfg, mu, gamma, domain, t, streams, threads, name)])
    m = RunningMoments.of(totals ** 2)
    rows.append(_row(name, m.mean, mass * mass + mass * t, m.se, MOMENT_Z))
    return rows


def laplace_functional_check(cfg: ValidationConfig, rng: RngStream, threads: int = 1) -> CheckRow:
    """exp(-phi(0)) with Lap phi = phi^2/2 in (-4, 4), phi = 1 on the boundary, against E exp(-exit mass)."""
    domain = BoxDomain.centered(cfg.laplace_half_width, 1)
    phi = solve_elliptic_loglaplace(GridField.zeros(domain, cfg.laplace_pitch),
                                    GridField.constant(domain, cfg.laplace_pitch, 1.0))
    oracle = math.exp(-phi.value_at([0.0]))

    mu = FiniteMeasure.dirac(domain, cfg.cell_size, [0.0], 1.0)
    streams = [rng.child("laplace", r) for r in range(cfg.replicas)]
    runs = _dw_batch(cfg, mu, 0.0, domain, cfg.laplace_horizon, streams, threads, "laplace functional")
    alive = sum(1 for r in runs if not r.extinct)
    if alive:
        logger.warning("%d of %d replicas still alive at horizon %.3g", alive, len(runs), cfg.laplace_horizon)
    values = np.exp(-np.array([r.exit_total() for r in runs]))
    m = RunningMoments.of(values)
    return _row("laplace functional d=1 box (-4,4)", m.mean, oracle, m.se, LAPLACE_Z)


def run_engine_suite(cfg: ValidationConfig, rng: RngStream, threads: int = 1,
                     progress: Optional[Callable[[str, int], None]] = None) -> List[CheckRow]:
    check_step_sizes(cfg)
    rows: List[CheckRow] = []
    stages = (
        ("extinction", lambda: extinction_checks(cfg, rng, threads)),
        ("moments", lambda: moment_checks(cfg, rng, threads)),
        ("laplace", lambda: [laplace_functional_check(cfg, rng, threads)]),
    )
    for i, (label, stage) in enumerate(stages):
        if progress is not None:
            progress(f"validate-engine: {label}", int(100 * i / len(stages)))
        rows.extend(stage())
    if progress is not None:
        progress("validate-engine: done", 100)
    return rows


@dataclass(frozen=True)
class ExitProbabilityRow:
    N: int
    replicas: int
    estimate: float
    se: float
    oracle: float
    alive: int

    @property
    def error(self) -> float:
        return abs(self.estimate - self.oracle)

    def as_row(self) -> dict:
        return {"N": self.N, "replicas": self.replicas, "estimate": self.estimate, "se": self.se,
                "oracle": self.oracle, "error": self.error, "alive_at_horizon": self.alive}


def exit_probability_convergence(Ns: Sequence[int], replicas: int, rng: RngStream, half_width: float = 4.0,
                                 gamma: float = 0.0, cell_size: float = 0.1, pitch: float = 0.05,
                                 horizon: float = 80.0, chunk: int = 250,
                                 threads: int = 1) -> List[ExitProbabilityRow]:
    """P[exit != 0] of DW runs from a unit mass at the origin of a d=1 box, one row per N.

    The oracle is the elliptic value 1 - exp(-phi(0)) with phi = +inf on the boundary. The
    particle estimate approaches it from below as N grows.
    """
    domain = BoxDomain.centered(half_width, 1)
    oracle = exit_nonzero_probability(FiniteMeasure.dirac(domain, pitch, [0.0], 1.0), domain, gamma, pitch)
    mu = FiniteMeasure.dirac(domain, cell_size, [0.0], 1.0)
    out = []
    for N in Ns:
        cfg = ValidationConfig(N=int(N), cell_size=cell_size, replicas=replicas, chunk=chunk)
        time_grid(horizon, stability_cap(cfg.N, gamma), cfg.dt)
        streams = [rng.child("exit-probability", cfg.N, r) for r in range(cfg.replicas)]
        runs = _dw_batch(cfg, mu, gamma, domain, horizon, streams, threads, f"exit probability N={cfg.N}")
        alive = sum(1 for r in runs if not r.extinct)
        if alive:
            logger.warning("N=%d: %d of %d replicas still alive at horizon %.3g", cfg.N, alive, len(runs), horizon)
        hits = Proportion(sum(1 for r in runs if r.exit_total() > 0.0), len(runs))
        row = ExitProbabilityRow(cfg.N, len(runs), hits.estimate, hits.se, float(oracle), alive)
        logger.info("exit probability N=%d: estimate=%.4g oracle=%.4g se=%.3g", row.N, row.estimate,
                    row.oracle, row.se)
        out.append(row)
    return out


@dataclass(frozen=True)
class NutrientComparison:
    N: int
    replicas: int
    approx_mean: float
    direct_mean: float
    ks: KSResult

    def as_row(self) -> dict:
        return {"N": self.N, "replicas": self.replicas, "approx_mean_exit": self.approx_mean,
                "direct_mean_exit": self.direct_mean, "ks_statistic": self.ks.statistic,
                "pvalue": self.ks.pvalue, "passed": self.ks.passes}


def nutrient_compare(p: Params, Ns: Sequence[int], replicas: int, rng: RngStream, half_width: float = 4.0,
                     horizon: float = 60.0, level: float = 0.01, threads: int = 1,
                     chunk: int = 64) -> List[NutrientComparison]:
    """Total exit mass of the package approximation against the direct simulator, one KS test per N."""
    if p.d != 1:
        raise InvalidArgumentError("the nutrient comparison runs on a d=1 box")
    domain = BoxDomain.centered(half_width, 1)
    out = []
    for N in Ns:
        N = int(N)
        pitch = 1.0 / N
        mu = FiniteMeasure.dirac(domain, pitch, [0.0], 1.0)
        pkgs = build_packages(domain, N, 1.0, cell_size=pitch)
        streams = [rng.child("nutrient-compare", N, r) for r in range(int(replicas))]

        def approx_chunk(batch):
            return simulate_nutrient_approx_replicas(mu, pkgs, p, N, horizon, list(batch), snapshot_count=1)

        def direct_chunk(batch):
            return simulate_direct_replicas(mu, 1.0, p, domain, horizon, N, list(batch), cell_size=pitch,
                                            snapshot_count=1)

        approx = [r.exit_total() for runs in run_replicas(approx_chunk, chunks(streams, chunk), threads,
                                                          desc=f"approx N={N}") for r in runs]
        direct = [r.exit_total() for runs in run_replicas(direct_chunk, chunks(streams, chunk), threads,
                                                          desc=f"direct N={N}") for r in runs]
        ks = ks_two_sample(approx, direct, level=level)
        out.append(NutrientComparison(N, int(replicas), float(np.mean(approx)), float(np.mean(direct)), ks))
    return out
