"""First and second moment oracles for DW(D, gamma) from the killed heat semigroup.

Grid functions live on the cell centres of the measure grid. The semigroup is advanced by
explicit Euler on the standard finite-volume Laplacian; boundary="dirichlet" kills mass
at the box faces (ghost value -u), boundary="free" reflects it and stands in for full
space when only total masses are queried.
"""
from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sps

from services.exceptions import InvalidArgumentError, StepSizeError
from services.reaction.core import BoxDomain, FiniteMeasure


logger = logging.getLogger(__name__)

BOUNDARIES = ("dirichlet", "free")
# fraction of the stability bound used when the caller does not fix the step
_DEFAULT_STEP_FRACTION = 0.9
QUADRATURE_NODES = 64

GridFunction = Union[np.ndarray, float, Callable[[np.ndarray], np.ndarray]]


def _second_difference(n: int, h: float, boundary: str) -> sps.csr_matrix:
    main = np.full(n, -2.0)
    if boundary == "dirichlet":
        main[0] = main[-1] = -3.0
    else:
        main[0] = main[-1] = -1.0
    if n == 1:
        main[:] = -4.0 if boundary == "dirichlet" else 0.0
        return sps.csr_matrix(main.reshape(1, 1) / h ** 2)
    off = np.ones(n - 1)
    return sps.diags([off, main, off], [-1, 0, 1], format="csr") / h ** 2


@lru_cache(maxsize=32)
def _laplacian_cached(shape: tuple, h: float, boundary: str) -> sps.csr_matrix:
    # kronsum(new, acc) = kron(I_acc, new) + kron(acc, I_new): earlier axes vary slowest
    lap = None
    for n in shape:
        block = _second_difference(n, h, boundary)
        lap = block if lap is None else sps.kronsum(block, lap, format="csr")
    return lap


def grid_laplacian(domain: BoxDomain, h: float, boundary: str = "dirichlet") -> sps.csr_matrix:
    """Sparse cell-centred Laplacian in C order of the grid."""
    if boundary not in BOUNDARIES:
        raise InvalidArgumentError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    return _laplacian_cached(tuple(domain.grid_shape(h)), float(h), boundary)


def explicit_step_bound(h: float, d: int) -> float:
    """Largest stable explicit Euler step for the d-dimensional grid Laplacian."""
    return h * h / (2.0 * d)


def _grid_values(g: GridFunction, domain: BoxDomain, h: float) -> np.ndarray:
    shape = domain.grid_shape(h)
    if callable(g):
        values = np.asarray(g(domain.cell_centers(h)), dtype=float)
    else:
        values = np.asarray(g, dtype=float)
        if values.shape == ():
            values = np.full(shape, float(values))
    values = values.reshape(-1)
    if values.size != int(np.prod(shape)):
        raise InvalidArgumentError(f"grid function has {values.size} values, expected {int(np.prod(shape))}")
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("grid function must be bounded")
    return values


class HeatSemigroup:
    """Explicit-Euler heat semigroup (generator Lap) on a box grid."""

    def __init__(self, domain: BoxDomain, h: float, boundary: str = "dirichlet",
                 dt: Optional[float] = None):
        self.domain = domain
        self.h = float(h)
        self.boundary = boundary
        self.lap = grid_laplacian(domain, h, boundary)
        self.bound = explicit_step_bound(h, domain.d)
        if dt is not None and dt > self.bound * (1 + 1e-12):
            raise StepSizeError(f"step {dt} exceeds the explicit stability bound {self.bound:.4g}")
        self.max_dt = self.bound * _DEFAULT_STEP_FRACTION if dt is None else float(dt)

    def apply(self, values: np.ndarray, t: float) -> np.ndarray:
        """G_t applied to a flat grid vector."""
        if t < 0:
            raise InvalidArgumentError(f"time must be non-negative, got {t}")
        if t == 0:
            return values.copy()
        steps = max(1, math.ceil(t / self.max_dt - 1e-12))
        dt = t / steps
        out = values.copy()
        for _ in range(steps):
            out = out + dt * (self.lap @ out)
        return out

    def path(self, values: np.ndarray, interval: float, count: int) -> np.ndarray:
        """States at interval*j/count for j = 0..count, shape (count+1, ncells)."""
        states = [values.copy()]
        for _ in range(count):
            states.append(self.apply(states[-1], interval / count))
        return np.stack(states)


def moment_oracle_first(mu: FiniteMeasure, g: GridFunction, t: float, gamma: float,
                        domain: Optional[BoxDomain] = None, boundary: str = "dirichlet",
                        dt: Optional[float] = None) -> float:
    """E[U_t(g)] = e^{-gamma t} mu(G_t g)."""
    domain = _check_domain(mu, domain)
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma}")
    semigroup = HeatSemigroup(domain, mu.cell_size, boundary, dt)
    gt = semigroup.apply(_grid_values(g, domain, mu.cell_size), t)
    return math.exp(-gamma * t) * float(np.dot(mu.mass.ravel(), gt))


def moment_oracle_second(mu: FiniteMeasure, g: GridFunction, h: GridFunction, s: float, t: float,
                         gamma: float, domain: Optional[BoxDomain] = None, boundary: str = "dirichlet",
                         dt: Optional[float] = None, nodes: int = QUADRATURE_NODES) -> float:
    """E[U_s(g) U_t(h)] for s <= t.

    mu(G_s g) mu(G_t h) + int_0^s mu(G_r[(G_{s-r} g)(G_{t-r} h)]) dr with the killing
    factors folded in; the integral uses the trapezoid rule on `nodes` intervals.
    """
    domain = _check_domain(mu, domain)
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma}")
    if s < 0 or t < 0:
        raise InvalidArgumentError(f"times must be non-negative, got s={s}, t={t}")
    if s > t:
        s, t, g, h = t, s, h, g
    pitch = mu.cell_size
    semigroup = HeatSemigroup(domain, pitch, boundary, dt)
    gv = _grid_values(g, domain, pitch)
    hv = _grid_values(h, domain, pitch)
    m0 = mu.mass.ravel()

    mean_g = math.exp(-gamma * s) * float(np.dot(m0, semigroup.apply(gv, s)))
    mean_h = math.exp(-gamma * t) * float(np.dot(m0, semigroup.apply(hv, t)))
    if s == 0:
        return mean_g * mean_h

    # index j is r_j = j s / nodes; g and h paths are stored in reverse time
    forward_mu = semigroup.path(m0, s, nodes)
    g_path = semigroup.path(gv, s, nodes)[::-1]
    h_path = semigroup.path(semigroup.apply(hv, t - s), s, nodes)[::-1]
    r = np.linspace(0.0, s, nodes + 1)
    integrand = np.einsum("ij,ij,ij->i", forward_mu, g_path, h_path) * np.exp(-gamma * (s + t - r))
    covariance = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(r)))
    return mean_g * mean_h + covariance


def _check_domain(mu: FiniteMeasure, domain: Optional[BoxDomain]) -> BoxDomain:
    if domain is not None and domain != mu.domain:
        raise InvalidArgumentError("moment oracles evaluate on the measure's own grid")
    return mu.domain
