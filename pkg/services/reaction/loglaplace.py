"""Deterministic oracles: log-Laplace equations, the Riccati extinction ODE and comparison functions.

Fields live on grid nodes, with the first and last node of every axis exactly on the box
boundary. The boundary layer is stored with the field; solvers only update interior nodes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.integrate import solve_bvp, solve_ivp, trapezoid
from scipy.interpolate import RegularGridInterpolator

from services.exceptions import InvalidArgumentError, NumericFailureError, StepSizeError
from services.reaction.core import BoxDomain, FiniteMeasure
from services.reaction.dw_engine import RateField


logger = logging.getLogger(__name__)

NEWTON_MAX_ITER = 60
RELAXATION_MAX_ITER = 20000
SOLVER_TOL = 1e-12
# explicit steps use this fraction of the diffusion stability bound
_STEP_FRACTION = 0.9


@dataclass
class GridField:
    """Node values over a box; +inf is allowed on boundary nodes only."""
    domain: BoxDomain
    pitch: float
    values: np.ndarray

    def __post_init__(self):
        shape = self.node_shape
        values = np.asarray(self.values, dtype=float)
        if values.shape == ():
            values = np.full(shape, float(values))
        if values.shape != shape:
            raise InvalidArgumentError(f"field has shape {values.shape}, expected {shape}")
        if np.any(np.isnan(values)):
            raise InvalidArgumentError("field contains NaN")
        if not np.all(np.isfinite(values[self.interior_slice])):
            raise InvalidArgumentError("field must be finite on interior nodes")
        self.values = values

    @property
    def node_shape(self) -> tuple:
        return tuple(n + 1 for n in self.domain.grid_shape(self.pitch))

    @property
    def interior_slice(self) -> tuple:
        return tuple(slice(1, -1) for _ in range(self.domain.d))

    @property
    def interior_shape(self) -> tuple:
        return tuple(n - 2 for n in self.node_shape)

    @classmethod
    def zeros(cls, domain: BoxDomain, pitch: float) -> "GridField":
        return cls(domain, pitch, np.zeros(tuple(n + 1 for n in domain.grid_shape(pitch))))

    @classmethod
    def constant(cls, domain: BoxDomain, pitch: float, value: float) -> "GridField":
        return cls(domain, pitch, np.full(tuple(n + 1 for n in domain.grid_shape(pitch)), float(value)))

    @classmethod
    def from_function(cls, domain: BoxDomain, pitch: float,
                      fn: Callable[[np.ndarray], np.ndarray]) -> "GridField":
        shape = tuple(n + 1 for n in domain.grid_shape(pitch))
        with np.errstate(divide="ignore"):
            values = np.asarray(fn(node_points(domain, pitch)), dtype=float)
        return cls(domain, pitch, values.reshape(shape))

    def nodes(self) -> np.ndarray:
        return node_points(self.domain, self.pitch)

    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.node_shape, dtype=bool)
        mask[self.interior_slice] = False
        return mask

    def interior_values(self) -> np.ndarray:
        return self.values[self.interior_slice]

    def with_interior(self, interior: np.ndarray) -> "GridField":
        values = self.values.copy()
        values[self.interior_slice] = np.asarray(interior).reshape(self.interior_shape)
        return GridField(self.domain, self.pitch, values)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at points of the closed box."""
        interp = RegularGridInterpolator(self.domain.node_axes(self.pitch), self.values,
                                         method="linear", bounds_error=False, fill_value=None)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(self.domain.contains(pts, closed=True)):
            raise InvalidArgumentError("interpolation point outside the field's box")
        with np.errstate(invalid="ignore"):
            return interp(pts)

    def value_at(self, point: Sequence[float]) -> float:
        return float(self.interpolate(np.asarray(point, dtype=float).reshape(1, -1))[0])

    def integrate(self, mu: FiniteMeasure) -> float:
        """mu(phi), with phi read at the cell centres of mu's grid."""
        flat = mu.mass.ravel()
        support = flat > 0
        if not support.any():
            return 0.0
        centers = mu.domain.cell_centers(mu.cell_size)[support]
        return float(np.dot(flat[support], self.interpolate(centers)))


def node_points(domain: BoxDomain, pitch: float) -> np.ndarray:
    mesh = np.meshgrid(*domain.node_axes(pitch), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _node_array(source, domain: BoxDomain, pitch: float, name: str) -> np.ndarray:
    shape = tuple(n + 1 for n in domain.grid_shape(pitch))
    if source is None:
        return np.zeros(shape)
    if isinstance(source, GridField):
        if source.domain != domain or not math.isclose(source.pitch, pitch):
            raise InvalidArgumentError(f"{name} lives on a different grid")
        return source.values
    if isinstance(source, RateField):
        return source.at(node_points(domain, pitch)).reshape(shape)
    arr = np.asarray(source, dtype=float)
    if arr.shape == ():
        return np.full(shape, float(arr))
    if arr.shape != shape:
        raise InvalidArgumentError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _time_source(source, domain: BoxDomain, pitch: float, name: str) -> Callable[[float], np.ndarray]:
    if callable(source) and not isinstance(source, (GridField, RateField)):
        return lambda tau: _node_array(source(tau), domain, pitch, name)
    fixed = _node_array(source, domain, pitch, name)
    return lambda tau: fixed


def _interior_laplacian(values: np.ndarray, pitch: float) -> np.ndarray:
    """Standard (2d+1)-point Laplacian at interior nodes."""
    d = values.ndim
    core = tuple(slice(1, -1) for _ in range(d))
    lap = -2.0 * d * values[core]
    for axis in range(d):
        lo = list(core)
        hi = list(core)
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        lap = lap + values[tuple(lo)] + values[tuple(hi)]
    return lap / pitch ** 2


def _interior_operator(interior_shape: tuple, pitch: float) -> sps.csr_matrix:
    """Laplacian on interior unknowns with the boundary values moved to the right-hand side."""
    lap = None
    for n in interior_shape:
        block = sps.diags([np.ones(n - 1), np.full(n, -2.0), np.ones(n - 1)], [-1, 0, 1], format="csr") / pitch ** 2
        lap = block if lap is None else sps.kronsum(block, lap, format="csr")
    return lap


def _boundary_term(boundary_values: np.ndarray, pitch: float) -> np.ndarray:
    full = boundary_values.copy()
    full[tuple(slice(1, -1) for _ in range(full.ndim))] = 0.0
    return _interior_laplacian(full, pitch).ravel()


def _reflect(values: np.ndarray):
    """Copy the neighbouring interior layer onto each face (zero normal derivative)."""
    for axis in range(values.ndim):
        first = [slice(None)] * values.ndim
        second = [slice(None)] * values.ndim
        first[axis], second[axis] = 0, 1
        values[tuple(first)] = values[tuple(second)]
        first[axis], second[axis] = -1, -2
        values[tuple(first)] = values[tuple(second)]


def solve_parabolic_loglaplace(h1: GridField, h2=None, h3=None, eta=None, t: float = 1.0,
                               dt: Optional[float] = None, boundary: str = "dirichlet") -> GridField:
    """phi_t for d/ds phi = Lap phi - eta phi - phi^2/2 + h2(t-s), phi_0 = h1, phi_s = h3(t-s) on the boundary.

    `h2` and `h3` may be constants, GridFields or callables of the remaining time t - s.
    boundary="free" replaces the Dirichlet data by a zero normal derivative, which makes
    spatially constant data evolve by the spatially free ODE. Time steps are explicit Euler.
    """
    if not t > 0:
        raise InvalidArgumentError(f"t must be positive, got {t}")
    if boundary not in ("dirichlet", "free"):
        raise InvalidArgumentError(f"boundary must be 'dirichlet' or 'free', got {boundary!r}")
    domain, pitch = h1.domain, h1.pitch
    forcing = _time_source(h2, domain, pitch, "h2")
    edge = _time_source(h3, domain, pitch, "h3")
    rates = _node_array(eta, domain, pitch, "eta")
    core = h1.interior_slice

    diffusion_bound = pitch ** 2 / (2.0 * domain.d)
    scale = float(np.max(np.abs(h1.values))) + float(np.max(np.abs(edge(t)))) + t * float(np.max(np.abs(forcing(t))))
    # comparison with the spatially free ODE bounds any stable solution by this
    blowup = 2.0 * (scale + 1.0) * math.exp(max(0.0, -float(rates.min(initial=0.0))) * t) + 1.0
    reaction_rate = float(np.max(np.abs(rates))) + scale + 1.0
    if dt is None:
        dt = min(_STEP_FRACTION * diffusion_bound, 0.25 / reaction_rate)
    elif dt > diffusion_bound * (1 + 1e-12):
        raise StepSizeError(f"step {dt} exceeds the explicit bound pitch^2/(2d) = {diffusion_bound:.4g}")
    steps = max(1, math.ceil(t / dt - 1e-12))
    dt = t / steps

    def set_boundary(values: np.ndarray, s: float):
        if boundary == "free":
            _reflect(values)
        else:
            interior = values[core].copy()
            values[...] = edge(t - s)
            values[core] = interior

    def rhs(values: np.ndarray, s: float) -> np.ndarray:
        inner = values[core]
        return (_interior_laplacian(values, pitch) - rates[core] * inner - 0.5 * inner * inner
                + forcing(t - s)[core])

    phi = h1.values.astype(float).copy()
    set_boundary(phi, 0.0)
    for k in range(steps):
        s = k * dt
        nxt = phi.copy()
        nxt[core] = phi[core] + dt * rhs(phi, s)
        set_boundary(nxt, s + dt)
        phi = nxt
        inner = phi[core]
        if not np.all(np.isfinite(inner)) or np.max(np.abs(inner), initial=0.0) > blowup:
            raise StepSizeError(f"parabolic solve blew up at s={s + dt:.4g}; reduce the step")
    return GridField(domain, pitch, phi)


def _elliptic_parts(h1: GridField, h2, eta):
    domain, pitch = h1.domain, h1.pitch
    if min(h1.node_shape) < 3:
        raise InvalidArgumentError("grid has no interior nodes")
    rates = _node_array(eta, domain, pitch, "eta")
    if np.any(rates < 0):
        raise InvalidArgumentError("elliptic solve requires eta >= 0")
    edge = _node_array(h2, domain, pitch, "h2")
    if not np.all(np.isfinite(edge)):
        raise InvalidArgumentError("boundary data must be finite; use a finite ramp for singular data")
    core = h1.interior_slice
    A = _interior_operator(h1.interior_shape, pitch)
    b = _boundary_term(edge, pitch)
    return A, b, h1.values[core].ravel(), rates[core].ravel(), edge


def _newton(A, b, source, rates, phi, tol, max_iter):
    def residual(p):
        return A @ p + b - 0.5 * p * p - rates * p + source

    r = residual(phi)
    norm = float(np.max(np.abs(r), initial=0.0))
    for it in range(max_iter):
        J = (A - sps.diags(phi + rates)).tocsc()
        delta = spla.spsolve(J, -r)
        if not np.all(np.isfinite(delta)):
            raise NumericFailureError("Newton step is not finite")
        step = 1.0
        while True:
            cand = phi + step * delta
            rc = residual(cand)
            nc = float(np.max(np.abs(rc), initial=0.0))
            if nc <= (1.0 - 1e-4 * step) * norm or nc == 0.0:
                break
            step *= 0.5
            if step < 1e-8:
                if float(np.max(np.abs(delta), initial=0.0)) <= tol * (1.0 + np.max(np.abs(phi), initial=0.0)):
                    return phi, it
                raise NumericFailureError(f"line search stalled at iteration {it}")
        phi, r, norm = cand, rc, nc
        if float(np.max(np.abs(step * delta), initial=0.0)) <= tol * (1.0 + np.max(np.abs(phi), initial=0.0)):
            return phi, it + 1
    raise NumericFailureError(f"Newton did not converge in {max_iter} iterations")


def _relaxation(A, b, source, rates, phi, tol, max_iter, pseudo_dt=1.0):
    """Semi-implicit pseudo-time stepping; the quadratic term is lagged by one iterate."""
    n = len(phi)
    eye = sps.identity(n, format="csc")
    A = A.tocsc()
    for it in range(max_iter):
        lhs = eye / pseudo_dt - A + sps.diags(rates + 0.5 * phi, format="csc")
        nxt = spla.splu(lhs).solve(phi / pseudo_dt + b + source)
        change = float(np.max(np.abs(nxt - phi), initial=0.0))
        phi = nxt
        if not np.all(np.isfinite(phi)):
            raise NumericFailureError("relaxation produced non-finite values")
        if change <= tol * (1.0 + np.max(np.abs(phi), initial=0.0)):
            return phi, it + 1
    raise NumericFailureError(f"relaxation did not converge in {max_iter} iterations")


def solve_elliptic_loglaplace(h1: GridField, h2=None, eta=None, method: str = "newton",
                              tol: float = SOLVER_TOL, max_iter: Optional[int] = None,
                              initial: Optional[GridField] = None) -> GridField:
    """phi with Lap phi = phi^2/2 + eta phi - h1 inside and phi = h2 on the boundary."""
    A, b, source, rates, edge = _elliptic_parts(h1, h2, eta)
    phi0 = np.zeros(len(source)) if initial is None else initial.interior_values().ravel().copy()
    if method == "newton":
        try:
            phi, iters = _newton(A, b, source, rates, phi0, tol, max_iter or NEWTON_MAX_ITER)
        except NumericFailureError as exc:
            logger.warning("Newton failed (%s); falling back to parabolic relaxation", exc.message)
            phi, iters = _relaxation(A, b, source, rates, phi0, tol, RELAXATION_MAX_ITER)
    elif method == "relaxation":
        phi, iters = _relaxation(A, b, source, rates, phi0, tol, max_iter or RELAXATION_MAX_ITER)
    else:
        raise InvalidArgumentError(f"unknown elliptic method {method!r}")
    logger.debug("elliptic %s solve converged in %d iterations", method, iters)
    return GridField(h1.domain, h1.pitch, edge).with_interior(phi)


def killed_exit_potential(domain: BoxDomain, gamma: float, pitch: float) -> GridField:
    """phi with Lap phi = gamma phi inside, phi = 1 on the boundary; mu(phi) is the mean exit mass of DW(D, gamma)."""
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma}")
    ones = GridField.constant(domain, pitch, 1.0)
    A, b, _, _, edge = _elliptic_parts(GridField.zeros(domain, pitch), ones, None)
    lhs = (A - gamma * sps.identity(A.shape[0])).tocsc()
    return GridField(domain, pitch, edge).with_interior(spla.spsolve(lhs, -b))


def exit_nonzero_probability(mu: FiniteMeasure, domain: BoxDomain, gamma: float, pitch: float,
                             ramp_max: float = 1e8, rel_tol: float = 1e-6) -> float:
    """P[exit measure of DW(D, gamma) from mu is non-zero] = 1 - exp(-mu(phi)), phi = +inf on the boundary.

    The infinite boundary data is approached by a continuation over boundary values 10, 100, ...
    """
    phi = None
    last = None
    level = 10.0
    while level <= ramp_max:
        phi = solve_elliptic_loglaplace(GridField.zeros(domain, pitch), GridField.constant(domain, pitch, level),
                                        gamma, initial=phi)
        value = phi.integrate(mu)
        if last is not None and abs(value - last) <= rel_tol * max(1.0, abs(value)):
            return -math.expm1(-value)
        last = value
        level *= 10.0
    logger.warning("boundary continuation stopped at %.3g without settling", ramp_max)
    return -math.expm1(-last)


def riccati_lambda(gamma: float, t: float) -> float:
    """Solution of d/dt l = -l^2/2 - gamma l with l -> inf at 0: 2 gamma/(e^{gamma t} - 1), or 2/t."""
    if not t > 0:
        raise InvalidArgumentError(f"t must be positive, got {t}")
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma}")
    if gamma == 0:
        return 2.0 / t
    return 2.0 * gamma / math.expm1(gamma * t)


def riccati_lambda_numeric(gamma: float, t: float, u0: float = 1e-12) -> float:
    """Numeric cross-check via u = 1/l, du/dt = gamma u + 1/2, u(0) = u0."""
    if not t > 0:
        raise InvalidArgumentError(f"t must be positive, got {t}")
    sol = solve_ivp(lambda s, u: gamma * u + 0.5, (0.0, t), [u0], method="Radau", rtol=1e-12, atol=1e-15)
    if not sol.success:
        raise NumericFailureError(f"Riccati integration failed: {sol.message}")
    return 1.0 / float(sol.y[0, -1])


@dataclass
class WitnessReport:
    holds: bool
    worst_margin: float
    worst_point: Optional[tuple]
    checked_nodes: int
    skipped_nodes: int = 0


def death_witness_check(w: GridField, eta=None, diffusion_coeff: float = 1.0,
                        laplacian=None) -> WitnessReport:
    """Check diffusion_coeff * Lap w <= w^2/2 - eta w at interior nodes and report the worst margin.

    `laplacian` (GridField or callable of points) supplies Lap w exactly; otherwise the
    node stencil is used and nodes whose stencil touches a non-finite value are skipped.
    """
    core = w.interior_slice
    values = w.values
    rates = _node_array(eta, w.domain, w.pitch, "eta")[core]
    if laplacian is None:
        with np.errstate(invalid="ignore"):
            lap = _interior_laplacian(values, w.pitch)
        usable = np.isfinite(lap)
    else:
        if isinstance(laplacian, GridField):
            lap = laplacian.values[core]
        else:
            lap = np.asarray(laplacian(node_points(w.domain, w.pitch)), dtype=float).reshape(w.node_shape)[core]
        usable = np.isfinite(lap)
    inner = values[core]
    margin = np.where(usable, 0.5 * inner * inner - rates * inner - diffusion_coeff * lap, np.inf)
    checked = int(usable.sum())
    if checked == 0:
        return WitnessReport(True, 0.0, None, 0, int(margin.size))
    idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
    worst = float(margin[idx])
    point = tuple(float(axis[i + 1]) for axis, i in zip(w.domain.node_axes(w.pitch), idx))
    return WitnessReport(worst >= 0.0, worst, point, checked, int(margin.size) - checked)


@dataclass(frozen=True)
class WitnessFunction:
    """w(x) = sum_i [offset + scale (x_i + a)^-2] + [offset + scale (a - x_i)^-2] on (-a, a)^d."""
    d: int
    half_width: float = 3.0
    scale: float = 12.0
    offset: float = 0.0

    def value(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        a = self.half_width
        with np.errstate(divide="ignore"):
            terms = self.scale * ((pts + a) ** -2.0 + (a - pts) ** -2.0)
        return terms.sum(axis=1) + 2.0 * self.d * self.offset

    def laplacian(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        a = self.half_width
        with np.errstate(divide="ignore"):
            terms = 6.0 * self.scale * ((pts + a) ** -4.0 + (a - pts) ** -4.0)
        return terms.sum(axis=1)

    def on_grid(self, pitch: float) -> GridField:
        domain = BoxDomain.centered(self.half_width, self.d)
        return GridField.from_function(domain, pitch, self.value)


def death_witness_function(d: int, half_width: float = 3.0, scale: float = 12.0,
                           beta_offset: float = 0.0) -> WitnessFunction:
    """The explicit death test function; beta_offset=beta gives the 2 beta shifted variant for eta = beta."""
    if d not in (1, 2, 3):
        raise InvalidArgumentError(f"dimension must be 1, 2 or 3, got {d}")
    if half_width <= 0:
        raise InvalidArgumentError("half width must be positive")
    return WitnessFunction(d, half_width, scale, 2.0 * beta_offset)


def support_escape_bound(mu: FiniteMeasure, w: Union[GridField, Callable[[np.ndarray], np.ndarray]]) -> float:
    """1 - exp(-mu(w)): bound on the chance of charging the complement of the box where w is a witness."""
    if isinstance(w, GridField):
        value = w.integrate(mu)
    else:
        flat = mu.mass.ravel()
        support = flat > 0
        value = float(np.dot(flat[support], w(mu.domain.cell_centers(mu.cell_size)[support])))
    if not math.isfinite(value):
        return 1.0
    return -math.expm1(-value)


def support_ramp(points: np.ndarray, radius: float, width: float) -> np.ndarray:
    """Smooth step in the sup-norm distance: 0 inside [-R, R]^d, 1 beyond R + width."""
    s = np.clip((np.max(np.abs(np.atleast_2d(points)), axis=1) - radius) / width, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def support_function(radius: float, forcing: float, eta: float, t: float, d: int,
                     pitch: float, ramp_width: float, margin: float = 2.0) -> GridField:
    """psi_t with psi_0 = 0 and forcing M * ramp on a box that extends the ramp by `margin`.

    For mu inside [-R, R]^d, exp(-mu(psi_t)) approximates the chance that the occupation
    up to t never charges the complement of the box (as M grows).
    """
    if ramp_width <= 0:
        raise InvalidArgumentError("ramp width must be positive")
    outer = radius + ramp_width + margin
    domain = BoxDomain.centered(outer, d)
    source = GridField.from_function(domain, pitch, lambda x: forcing * support_ramp(x, radius, ramp_width))
    return solve_parabolic_loglaplace(GridField.zeros(domain, pitch), source, None, eta, t, boundary="free")


def geometric_exit_bound(beta: float, gamma: float, c0: float, phi_hat0: float):
    """(r, bound) with r = c0 beta gamma^-1/2 and bound = phi_hat0 + r/(1-r) on mean exit mass per unit mass.

    The bound is infinite unless r < 1.
    """
    if gamma <= 0:
        raise InvalidArgumentError("gamma must be positive")
    r = c0 * beta / math.sqrt(gamma)
    return r, (phi_hat0 + r / (1.0 - r)) if r < 1.0 else math.inf


@dataclass
class SingularSolution:
    radii: np.ndarray
    psi: np.ndarray
    c0: float
    eps: float
    history: List[tuple] = field(default_factory=list)


def _radial_profile(eps: float, r_max: float, nodes: int):
    # y = r^2 psi in s = log r: y'' - 3y' + 2y = y^2/2 + e^{2s} y, y(log eps) = 4, y(log r_max) = 0
    s = np.linspace(math.log(eps), math.log(r_max), nodes)

    def fun(x, y):
        return np.vstack([y[1], 3.0 * y[1] - 2.0 * y[0] + 0.5 * y[0] ** 2 + np.exp(2.0 * x) * y[0]])

    def bc(ya, yb):
        return np.array([ya[0] - 4.0, yb[0]])

    r = np.exp(s)
    guess = np.vstack([4.0 * np.exp(-(r - eps)), -4.0 * r * np.exp(-(r - eps))])
    sol = solve_bvp(fun, bc, s, guess, tol=1e-8, max_nodes=200000)
    if not sol.success:
        raise NumericFailureError(f"radial boundary value problem failed: {sol.message}")
    fine = np.linspace(s[0], s[-1], 4 * nodes)
    y = sol.sol(fine)[0]
    radii = np.exp(fine)
    c0 = 4.0 * math.pi * float(trapezoid(y * radii, fine))
    return radii, y / radii ** 2, c0


def maximal_singular_solution(eps: float = 0.1, r_max: float = 12.0, nodes: int = 400,
                              rel_tol: float = 0.01, max_halvings: int = 8) -> SingularSolution:
    """Radial solution of psi'' + (2/r) psi' = psi^2/2 + psi with psi(eps) = 4/eps^2, psi(r_max) = 0.

    eps is halved until c0 = int psi dx settles to `rel_tol`.
    """
    if not (0 < eps < r_max):
        raise InvalidArgumentError("need 0 < eps < r_max")
    history = []
    previous = None
    for _ in range(max_halvings + 1):
        radii, psi, c0 = _radial_profile(eps, r_max, nodes)
        history.append((eps, c0))
        if previous is not None and abs(c0 - previous) <= rel_tol * abs(c0):
            return SingularSolution(radii, psi, c0, eps, history)
        previous = c0
        eps *= 0.5
    raise NumericFailureError(f"c0 did not settle under eps halving: {history}")
