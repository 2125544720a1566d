"""Travelling waves u = U(x - ct), v = V(x - ct) of the deterministic system.

Phase-plane system: U' = W, V' = UV/c, W' = gamma U - cW - UV. The quantity
W + cU + cV - gamma c log V is conserved along trajectories, so a wave that ends at the
fresh-nutrient state (0, 1, 0) starts from the depleted state (0, V_rear, 0) with
1 - V_rear + gamma log V_rear = 0. V_rear tends to 0 as gamma does.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from services.exceptions import InvalidArgumentError


logger = logging.getLogger(__name__)

ORIGIN = "origin"
NUTRIENT_ONE = "nutrient-one"
REAR = "rear"

LAUNCH_OFFSET = 1e-6
SETTLE_SPAN = 60.0
BLOWUP = 1e6


@dataclass(frozen=True)
class WaveState:
    U: float
    V: float
    W: float
    c: float
    gamma: float

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidArgumentError(f"wave speed must be positive, got {self.c}")

    def as_array(self) -> np.ndarray:
        return np.array([self.U, self.V, self.W])


@dataclass(frozen=True)
class Eigenpair:
    roots: Tuple[complex, complex]
    classification: str
    discriminant: float


def _check_speed(c: float):
    if not c > 0:
        raise InvalidArgumentError(f"wave speed must be positive, got {c}")


def rear_level(gamma: float) -> float:
    """Depleted nutrient level behind the wave; 0 when no root in (0, 1) exists."""
    if gamma <= 0 or gamma >= 1:
        return 0.0
    g = lambda v: 1.0 - v + gamma * math.log(v)
    lo = 1e-300
    if g(lo) >= 0:
        return 0.0
    return brentq(g, lo, gamma, xtol=1e-15, rtol=1e-14)


def eigenvalues(at: str, c: float, gamma: float) -> Eigenpair:
    """Roots of l^2 + c l - gamma (origin), l^2 + c l + (1 - gamma) (nutrient-one) or
    l^2 + c l - (gamma - V_rear) (rear)."""
    _check_speed(c)
    if at == ORIGIN:
        const = -gamma
    elif at == NUTRIENT_ONE:
        const = 1.0 - gamma
    elif at == REAR:
        const = -(gamma - rear_level(gamma))
    else:
        raise InvalidArgumentError(f"unknown equilibrium {at!r}")
    disc = c * c - 4.0 * const
    root = cmath.sqrt(disc)
    roots = ((-c - root) / 2.0, (-c + root) / 2.0)
    if disc > 0:
        kind = "real-split"
    elif disc == 0:
        kind = "real-double"
    else:
        kind = "complex"
    return Eigenpair(roots, kind, disc)


def wave_admissible(c: float, gamma: float) -> bool:
    """c^2 >= 4(1 - gamma); gamma > 1 is accepted but flagged since death then outruns reaction."""
    _check_speed(c)
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma}")
    if gamma > 1:
        logger.warning("gamma=%.4g > 1: the death term exceeds the reaction term", gamma)
    return c * c >= 4.0 * (1.0 - gamma)


def minimal_speed(gamma: float) -> float:
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma}")
    return 2.0 * math.sqrt(1.0 - gamma) if gamma < 1 else 0.0


def wave_rhs(c: float, gamma: float):
    def rhs(_, y):
        U, V, W = y
        return [W, U * V / c, gamma * U - c * W - U * V]

    return rhs


def first_integral(y: np.ndarray, c: float, gamma: float) -> np.ndarray:
    U, V, W = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return W + c * U + c * V - gamma * c * np.log(V)


@dataclass
class ShootResult:
    c: float
    gamma: float
    xi: np.ndarray
    trajectory: np.ndarray
    launch: WaveState
    stays_positive: bool
    terminal_distance: float
    closest_distance: float
    diverged: bool
    admissible: bool
    notes: list = field(default_factory=list)


def _launch(c: float, gamma: float, delta: float):
    v_rear = rear_level(gamma)
    if v_rear > 0:
        lam = eigenvalues(REAR, c, gamma).roots[1].real
        # unstable eigenvector (1, V_rear/(c lam), lam) is tangent to the conserved level set
        direction = np.array([1.0, v_rear / (c * lam), lam])
        start = np.array([0.0, v_rear, 0.0]) + delta * direction
        return start, lam, []
    lam = eigenvalues(ORIGIN, c, gamma).roots[1].real
    notes = ["no depleted rear state in (0, 1); launched from the origin with nutrient offset delta"]
    start = np.array([delta, delta, delta * lam])
    return start, lam, notes


def shoot(c: float, gamma: float, delta: float = LAUNCH_OFFSET, settle_span: float = SETTLE_SPAN,
          xi_max: float = None, rtol: float = 1e-10, atol: float = 1e-13) -> ShootResult:
    """Integrate from the unstable manifold of the rear state with an adaptive Runge-Kutta scheme.

    The span is the escape time log(1/delta)/lambda plus `settle_span`, so shrinking delta
    shifts the profile without moving its end point.
    """
    _check_speed(c)
    if not delta > 0:
        raise InvalidArgumentError(f"launch offset must be positive, got {delta}")
    start, lam, notes = _launch(c, gamma, delta)
    if xi_max is None:
        escape = math.log(1.0 / delta) / lam if lam > 1e-12 else 10.0 * settle_span
        xi_max = escape + settle_span

    def blowup(_, y):
        return BLOWUP - float(np.max(np.abs(y)))

    blowup.terminal = True
    sol = solve_ivp(wave_rhs(c, gamma), (0.0, xi_max), start, method="RK45", rtol=rtol, atol=atol,
                    events=blowup, dense_output=False, max_step=max(0.5, xi_max / 2000.0))
    traj = sol.y
    target = np.array([0.0, 1.0, 0.0])[:, None]
    dist = np.linalg.norm(traj - target, axis=0)
    diverged = sol.status == 1 or not np.all(np.isfinite(traj))
    stays_positive = bool(np.all(traj[0] > 0) and np.all(traj[1] > 0))
    if not sol.success:
        notes.append(sol.message)
    return ShootResult(
        c=c,
        gamma=gamma,
        xi=sol.t,
        trajectory=traj,
        launch=WaveState(*start.tolist(), c=c, gamma=gamma),
        stays_positive=stays_positive,
        terminal_distance=float(dist[-1]),
        closest_distance=float(dist.min()),
        diverged=bool(diverged),
        admissible=c * c >= 4.0 * (1.0 - gamma),
        notes=notes,
    )
