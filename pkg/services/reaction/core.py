from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from services.exceptions import InvalidArgumentError


logger = logging.getLogger(__name__)

# Relative slack when checking that a grid pitch divides a box side.
_GRID_TOL = 1e-6
_FACE_TOL = 1e-9


def _as_vector(values, name: str) -> Tuple[float, ...]:
    try:
        vec = tuple(float(v) for v in values)
    except TypeError:
        vec = (float(values),)
    if not all(np.isfinite(vec)):
        raise InvalidArgumentError(f"{name} must be finite, got {vec}")
    return vec


@dataclass(frozen=True)
class BoxDomain:
    """Open box prod_i (lower_i, upper_i) in dimension 1, 2 or 3."""
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = _as_vector(self.lower, "lower")
        upper = _as_vector(self.upper, "upper")
        if len(lower) != len(upper):
            raise InvalidArgumentError(f"lower has {len(lower)} entries but upper has {len(upper)}")
        if len(lower) not in (1, 2, 3):
            raise InvalidArgumentError(f"dimension must be 1, 2 or 3, got {len(lower)}")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise InvalidArgumentError(f"empty box: lower={lower} upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def centered(cls, half_width: float, d: int) -> "BoxDomain":
        """D_L = (-L, L)^d."""
        if half_width <= 0:
            raise InvalidArgumentError(f"half width must be positive, got {half_width}")
        return cls((-half_width,) * d, (half_width,) * d)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper_array - self.lower_array))

    def scaled(self, c: float) -> "BoxDomain":
        """The box c^{-1} D."""
        if c <= 0:
            raise InvalidArgumentError(f"scale must be positive, got {c}")
        return BoxDomain(tuple(x / c for x in self.lower), tuple(x / c for x in self.upper))

    def translated(self, shift: Sequence[float]) -> "BoxDomain":
        shift = _as_vector(shift, "shift")
        return BoxDomain(tuple(a + s for a, s in zip(self.lower, shift)),
                         tuple(b + s for b, s in zip(self.upper, shift)))

    def contains(self, points: np.ndarray, closed: bool = False) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if closed:
            inside = (pts >= self.lower_array) & (pts <= self.upper_array)
        else:
            inside = (pts > self.lower_array) & (pts < self.upper_array)
        return inside.all(axis=1)

    def contains_box(self, other: "BoxDomain") -> bool:
        return bool(np.all(other.lower_array >= self.lower_array) and np.all(other.upper_array <= self.upper_array))

    def grid_shape(self, pitch: float) -> Tuple[int, ...]:
        """Number of cells of side `pitch` along each axis; the pitch must tile the box."""
        if not pitch > 0:
            raise InvalidArgumentError(f"grid pitch must be positive, got {pitch}")
        sides = (self.upper_array - self.lower_array) / pitch
        counts = np.rint(sides)
        if np.any(counts < 1) or np.any(np.abs(sides - counts) > _GRID_TOL * np.maximum(1.0, sides)):
            raise InvalidArgumentError(f"pitch {pitch} does not tile box {self.lower}..{self.upper}")
        return tuple(int(n) for n in counts)

    def cell_axes(self, pitch: float) -> list:
        """Cell centres along each axis."""
        shape = self.grid_shape(pitch)
        return [lo + pitch * (np.arange(n) + 0.5) for lo, n in zip(self.lower, shape)]

    def cell_centers(self, pitch: float) -> np.ndarray:
        """All cell centres, shape (ncells, d), in C order of the grid."""
        mesh = np.meshgrid(*self.cell_axes(pitch), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_index(self, points: np.ndarray, pitch: float) -> np.ndarray:
        """Flat cell index of each point; points on the closed boundary map to the adjacent cell."""
        shape = self.grid_shape(pitch)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((pts - self.lower_array) / pitch).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(shape) - 1)
        if len(pts) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(idx.T), shape)

    def node_axes(self, pitch: float) -> list:
        """Grid nodes along each axis with the first and last node exactly on the boundary."""
        shape = self.grid_shape(pitch)
        return [np.linspace(lo, hi, n + 1) for lo, hi, n in zip(self.lower, self.upper, shape)]


@dataclass
class FiniteMeasure:
    """Non-negative mass binned on a uniform grid of pitch `cell_size` over `domain`."""
    domain: BoxDomain
    cell_size: float
    mass: np.ndarray

    def __post_init__(self):
        shape = self.domain.grid_shape(self.cell_size)
        mass = np.asarray(self.mass, dtype=float)
        if mass.shape != shape:
            raise InvalidArgumentError(f"mass grid has shape {mass.shape}, expected {shape}")
        if not np.all(np.isfinite(mass)):
            raise InvalidArgumentError("measure has non-finite cell mass")
        if np.any(mass < 0):
            raise InvalidArgumentError("measure has negative cell mass")
        self.mass = mass

    @classmethod
    def zeros(cls, domain: BoxDomain, cell_size: float) -> "FiniteMeasure":
        return cls(domain, cell_size, np.zeros(domain.grid_shape(cell_size)))

    @classmethod
    def dirac(cls, domain: BoxDomain, cell_size: float, point: Sequence[float], mass: float = 1.0) -> "FiniteMeasure":
        """Mass concentrated in the cell containing `point`."""
        point = np.asarray(_as_vector(point, "point"))
        if not domain.contains(point)[0]:
            raise InvalidArgumentError(f"point {tuple(point)} lies outside the domain")
        mu = cls.zeros(domain, cell_size)
        flat = domain.cell_index(point, cell_size)[0]
        mu.mass.flat[flat] = mass
        return mu

    @classmethod
    def uniform(cls, domain: BoxDomain, cell_size: float, total: float,
                region: Optional[BoxDomain] = None) -> "FiniteMeasure":
        """Total mass spread evenly over the cells whose centres lie in `region` (default: everywhere)."""
        centers = domain.cell_centers(cell_size)
        inside = np.ones(len(centers), dtype=bool) if region is None else region.contains(centers, closed=True)
        if not inside.any():
            raise InvalidArgumentError("uniform region contains no cell centre")
        mass = np.zeros(len(centers))
        mass[inside] = total / inside.sum()
        return cls(domain, cell_size, mass.reshape(domain.grid_shape(cell_size)))

    @classmethod
    def from_density(cls, domain: BoxDomain, cell_size: float,
                     density: Callable[[np.ndarray], np.ndarray]) -> "FiniteMeasure":
        """Midpoint-rule binning of a density given as a function of (n, d) points."""
        centers = domain.cell_centers(cell_size)
        values = np.asarray(density(centers), dtype=float) * cell_size ** domain.d
        return cls(domain, cell_size, values.reshape(domain.grid_shape(cell_size)))

    @property
    def cell_volume(self) -> float:
        return self.cell_size ** self.domain.d

    def total(self) -> float:
        return float(self.mass.sum())

    def integrate(self, g) -> float:
        """mu(g) for g given as a grid array or as a function of cell centres."""
        if callable(g):
            values = np.asarray(g(self.domain.cell_centers(self.cell_size)), dtype=float)
        else:
            values = np.asarray(g, dtype=float)
        return float(np.dot(self.mass.ravel(), values.ravel()))

    def box_mass(self, x: Sequence[float], eps: float) -> float:
        """Mass of cells whose centres lie in [x, x+eps)^d."""
        x = np.asarray(_as_vector(x, "x"))
        centers = self.domain.cell_centers(self.cell_size)
        inside = np.all((centers >= x) & (centers < x + eps), axis=1)
        return float(self.mass.ravel()[inside].sum())

    def restricted(self, region: BoxDomain) -> "FiniteMeasure":
        """Keep only cells whose centres lie in the closed `region`."""
        centers = self.domain.cell_centers(self.cell_size)
        keep = region.contains(centers, closed=True).reshape(self.mass.shape)
        return FiniteMeasure(self.domain, self.cell_size, np.where(keep, self.mass, 0.0))

    def scaled(self, factor: float) -> "FiniteMeasure":
        if factor < 0:
            raise InvalidArgumentError(f"scale factor must be non-negative, got {factor}")
        return FiniteMeasure(self.domain, self.cell_size, self.mass * factor)

    def merged(self, other: "FiniteMeasure") -> "FiniteMeasure":
        if other.domain != self.domain or other.cell_size != self.cell_size:
            raise InvalidArgumentError("cannot merge measures on different grids")
        return FiniteMeasure(self.domain, self.cell_size, self.mass + other.mass)


@dataclass
class BoundaryMeasure:
    """Point masses frozen on the faces of a box.

    Face numbering: 2*axis for the lower face, 2*axis + 1 for the upper face.
    """
    domain: BoxDomain
    cell_size: float
    points: np.ndarray
    masses: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        d = self.domain.d
        self.points = np.asarray(self.points, dtype=float).reshape(-1, d)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1)
        if not (len(self.points) == len(self.masses) == len(self.faces)):
            raise InvalidArgumentError("points, masses and faces must have equal length")
        if np.any(self.masses < 0):
            raise InvalidArgumentError("boundary measure has negative mass")
        if np.any((self.faces < 0) | (self.faces >= 2 * d)):
            raise InvalidArgumentError("face index out of range")
        if len(self.points):
            axis = self.faces // 2
            bounds = np.where(self.faces % 2 == 1, self.domain.upper_array[axis], self.domain.lower_array[axis])
            on_face = np.abs(self.points[np.arange(len(self.points)), axis] - bounds)
            scale = max(1.0, float(np.max(np.abs(self.domain.upper_array - self.domain.lower_array))))
            if np.any(on_face > _FACE_TOL * scale):
                raise InvalidArgumentError("boundary entry does not lie on its face")

    @classmethod
    def empty(cls, domain: BoxDomain, cell_size: float) -> "BoundaryMeasure":
        return cls(domain, cell_size, np.zeros((0, domain.d)), np.zeros(0), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_points(cls, domain: BoxDomain, cell_size: float, points: np.ndarray,
                    mass_each: float) -> "BoundaryMeasure":
        """Attach each point to the nearest face and snap it exactly onto that face."""
        pts = np.array(points, dtype=float).reshape(-1, domain.d)
        if len(pts) == 0:
            return cls.empty(domain, cell_size)
        gaps = np.concatenate([np.abs(pts - domain.lower_array), np.abs(pts - domain.upper_array)], axis=1)
        # column j < d is the lower face of axis j, column d + j the upper face
        col = np.argmin(gaps, axis=1)
        axis = col % domain.d
        upper = col >= domain.d
        pts[np.arange(len(pts)), axis] = np.where(upper, domain.upper_array[axis], domain.lower_array[axis])
        faces = 2 * axis + upper.astype(np.int64)
        return cls(domain, cell_size, pts, np.full(len(pts), float(mass_each)), faces)

    def total(self) -> float:
        return float(self.masses.sum())

    def is_zero(self) -> bool:
        return not np.any(self.masses > 0)

    def surface_cells(self) -> np.ndarray:
        """Per entry, the cell index of the coordinates tangent to its face."""
        d = self.domain.d
        if d == 1 or len(self.points) == 0:
            return np.zeros((len(self.points), max(d - 1, 0)), dtype=np.int64)
        axis = self.faces // 2
        shape = np.asarray(self.domain.grid_shape(self.cell_size))
        out = np.empty((len(self.points), d - 1), dtype=np.int64)
        for i, a in enumerate(axis):
            others = [j for j in range(d) if j != a]
            rel = (self.points[i, others] - self.domain.lower_array[others]) / self.cell_size
            out[i] = np.clip(np.floor(rel).astype(np.int64), 0, shape[others] - 1)
        return out

    def binned(self) -> Dict[Tuple[int, Tuple[int, ...]], float]:
        """Mass per (face, surface cell)."""
        out: Dict[Tuple[int, Tuple[int, ...]], float] = {}
        for face, cell, m in zip(self.faces, self.surface_cells(), self.masses):
            key = (int(face), tuple(int(c) for c in cell))
            out[key] = out.get(key, 0.0) + float(m)
        return out

    def mass_in_box(self, lower: Sequence[float], upper: Sequence[float]) -> float:
        """Mass of entries inside the closed box [lower, upper] (degenerate sides allowed)."""
        lo = np.asarray(_as_vector(lower, "lower")) - _FACE_TOL
        hi = np.asarray(_as_vector(upper, "upper")) + _FACE_TOL
        if len(self.points) == 0:
            return 0.0
        inside = np.all((self.points >= lo) & (self.points <= hi), axis=1)
        return float(self.masses[inside].sum())

    def restricted_to(self, lower: Sequence[float], upper: Sequence[float]) -> "BoundaryMeasure":
        lo = np.asarray(_as_vector(lower, "lower")) - _FACE_TOL
        hi = np.asarray(_as_vector(upper, "upper")) + _FACE_TOL
        keep = np.all((self.points >= lo) & (self.points <= hi), axis=1) if len(self.points) else np.zeros(0, bool)
        return BoundaryMeasure(self.domain, self.cell_size, self.points[keep], self.masses[keep], self.faces[keep])

    def merged(self, other: "BoundaryMeasure") -> "BoundaryMeasure":
        if other.domain != self.domain:
            raise InvalidArgumentError("cannot merge exit measures of different domains")
        return BoundaryMeasure(self.domain, self.cell_size,
                               np.concatenate([self.points, other.points]),
                               np.concatenate([self.masses, other.masses]),
                               np.concatenate([self.faces, other.faces]))


@dataclass(frozen=True)
class Params:
    """Reaction rate beta, death rate gamma and dimension d."""
    beta: float
    gamma: float
    d: int = 3

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise InvalidArgumentError(f"beta must be a finite number >= 0, got {self.beta}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidArgumentError(f"gamma must be a finite number >= 0, got {self.gamma}")
        if self.d not in (1, 2, 3):
            raise InvalidArgumentError(f"dimension must be 1, 2 or 3, got {self.d}")

    def with_gamma(self, gamma: float) -> "Params":
        return Params(self.beta, gamma, self.d)

    def with_beta(self, beta: float) -> "Params":
        return Params(beta, self.gamma, self.d)


@dataclass(frozen=True)
class ScalingMap:
    """u~_t(A) = (a/c^d) u_{bt}(cA), v~_t(x) = e v_{bt}(cx)."""
    a: float
    b: float
    c: float
    e: float

    def __post_init__(self):
        for name in ("a", "b", "c", "e"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"scaling entry {name} must be > 0, got {value}")

    def inverse(self) -> "ScalingMap":
        return ScalingMap(1.0 / self.a, 1.0 / self.b, 1.0 / self.c, 1.0 / self.e)


@dataclass(frozen=True)
class TransformedCoefficients:
    """du = diffusion*Lap u + reaction*uv - death*u + sqrt(noise*u) W', dv = -depletion*uv."""
    diffusion: float
    reaction: float
    death: float
    noise: float
    depletion: float
    d: int
    domain: Optional[BoxDomain] = None
    exit_rescale: float = 1.0

    @classmethod
    def standard(cls, p: Params, domain: Optional[BoxDomain] = None) -> "TransformedCoefficients":
        return cls(1.0, p.beta, p.gamma, 1.0, 1.0, p.d, domain, 1.0)


def rescale_coefficients(coeffs: TransformedCoefficients, m: ScalingMap) -> TransformedCoefficients:
    """Apply the space-time-mass change of variables to a general equation of this family."""
    a, b, c, e = m.a, m.b, m.c, m.e
    cd = c ** coeffs.d
    return TransformedCoefficients(
        diffusion=coeffs.diffusion * b / c ** 2,
        reaction=coeffs.reaction * b / e,
        death=coeffs.death * b,
        noise=coeffs.noise * a * b / cd,
        depletion=coeffs.depletion * b / a,
        d=coeffs.d,
        domain=coeffs.domain.scaled(c) if coeffs.domain is not None else None,
        exit_rescale=coeffs.exit_rescale * a / cd,
    )


def scale_equation(p: Params, m: ScalingMap, domain: Optional[BoxDomain] = None) -> TransformedCoefficients:
    """Coefficients of the equation solved by the rescaled pair on c^{-1} D."""
    return rescale_coefficients(TransformedCoefficients.standard(p, domain), m)


def measure_pushforward(mu: FiniteMeasure, m: ScalingMap,
                        target_cell_size: Optional[float] = None,
                        per_volume: bool = False) -> FiniteMeasure:
    """Push mu forward under x -> x/c onto the box c^{-1} D with every cell mass multiplied by a.

    per_volume=True uses the factor a/c^d instead, the normalisation under which the
    rescaled process and its exit measures solve the transformed equation.

    With the default target pitch h/c cells map one-to-one; a coarser target pitch must be
    an integer multiple of h/c so that every source cell lands in exactly one target cell.
    """
    domain = mu.domain.scaled(m.c)
    base = mu.cell_size / m.c
    pitch = base if target_cell_size is None else float(target_cell_size)
    ratio = pitch / base
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > _GRID_TOL * ratio:
        raise InvalidArgumentError(f"target pitch {pitch} does not resolve the pushed-forward grid (pitch {base})")
    mass = mu.mass * (m.a / m.c ** mu.domain.d if per_volume else m.a)
    if k > 1:
        shape = domain.grid_shape(pitch)
        split = []
        for n in shape:
            split.extend([n, k])
        mass = mass.reshape(split).sum(axis=tuple(range(1, 2 * len(shape), 2)))
    return FiniteMeasure(domain, pitch, mass)


def reduce_noise_parameters(gamma0: float, sigma: float, d: int) -> Params:
    """Standard-form parameters for du = Lap u + uv - gamma0 u + sqrt(sigma u) W'.

    The linear change of variables gives beta = sigma^{-2/(4-d)} and gamma = gamma0 * beta.
    """
    if sigma <= 0:
        raise InvalidArgumentError(f"noise strength must be positive, got {sigma}")
    if gamma0 < 0:
        raise InvalidArgumentError(f"gamma0 must be non-negative, got {gamma0}")
    if d not in (1, 2, 3):
        raise InvalidArgumentError(f"dimension must be 1, 2 or 3, got {d}")
    beta = sigma ** (-2.0 / (4 - d))
    return Params(beta=beta, gamma=gamma0 * beta, d=d)
