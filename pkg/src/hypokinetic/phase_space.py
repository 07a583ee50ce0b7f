"""Periodic phase-space grid, the global equilibrium and the weighted L2 geometry.

Fields are stored as ``(nx, nv)`` arrays, x outer and v inner, so that a
flattened field has index ``i * nv + j``.  All weighted quantities use the
measure ``dx dv / F`` with ``F(x, v) = M(v) / lx``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

VELOCITY_RULES = ("gauss_hermite", "uniform_symmetric")


class GridMismatchError(ValueError):
    """Two fields living on different grids were combined."""


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    nx: int
    lx: float
    x_nodes: np.ndarray
    nv: int
    v_nodes: np.ndarray
    v_weights: np.ndarray
    maxwellian: np.ndarray
    velocity_rule: str = "gauss_hermite"

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def size(self) -> int:
        return self.nx * self.nv

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nv)

    @cached_property
    def equilibrium(self) -> np.ndarray:
        """Global equilibrium ``F(x_i, v_j) = M(v_j) / lx`` as an ``(nx, nv)`` array."""
        return np.broadcast_to(self.maxwellian / self.lx, self.shape).copy()

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Diagonal of the weighted Gram matrix: ``dx * w_j / F_ij``."""
        return self.dx * self.v_weights[None, :] / self.equilibrium

    @cached_property
    def sqrt_weights(self) -> np.ndarray:
        """Flattened square root of :attr:`node_weights` (maps to Euclidean coordinates)."""
        return np.sqrt(self.node_weights).ravel()

    @cached_property
    def local_equilibrium_vector(self) -> np.ndarray:
        """Unit vector ``sqrt(w_j M_j)`` spanning the range of Pi in one x-cell (Euclidean coordinates)."""
        return np.sqrt(self.v_weights * self.maxwellian)

    def moment(self, power: int) -> float:
        """Discrete ``int v^power M(v) dv``."""
        return float(np.sum(self.v_weights * self.v_nodes**power * self.maxwellian))

    @property
    def is_symmetric(self) -> bool:
        v = self.v_nodes
        order = np.argsort(v)
        return bool(
            np.allclose(v[order], -v[order][::-1], rtol=0, atol=1e-14)
            and np.allclose(self.v_weights[order], self.v_weights[order][::-1], rtol=1e-13, atol=0)
        )

    def zeros(self) -> Field:
        return Field(np.zeros(self.shape), self)

    def field(self, values) -> Field:
        return Field(np.asarray(values, dtype=float).reshape(self.shape), self)

    def random_field(self, rng: np.random.Generator) -> Field:
        return Field(rng.standard_normal(self.shape) * self.equilibrium, self)


@dataclass(frozen=True, eq=False)
class Field:
    """Real values ``f(x_i, v_j)`` attached to a :class:`PhaseGrid`."""

    values: np.ndarray
    grid: PhaseGrid = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("field contains non-finite entries")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _check(self, other: Field) -> None:
        if other.grid is not self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other: Field) -> Field:
        self._check(other)
        return Field(self.values + other.values, self.grid)

    def __sub__(self, other: Field) -> Field:
        self._check(other)
        return Field(self.values - other.values, self.grid)

    def __mul__(self, scalar: float) -> Field:
        return Field(self.values * scalar, self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> Field:
        return Field(-self.values, self.grid)


def build_grid(
    nx: int,
    lx: float,
    nv: int,
    velocity_rule: str = "gauss_hermite",
    *,
    v_max: float = 6.0,
    v_shift: float = 0.0,
) -> PhaseGrid:
    """Build a torus-by-velocity grid carrying a normalized standard Maxwellian.

    ``gauss_hermite`` folds the probabilists' Hermite weights with the
    Maxwellian, so moments of ``M`` are integrated exactly up to degree
    ``2 nv - 1``.  ``uniform_symmetric`` uses midpoints on ``[-v_max, v_max]``.
    A nonzero ``v_shift`` translates the velocity nodes while keeping the
    equilibrium values, so the equilibrium acquires a mean velocity ``v_shift``
    and the orthogonality diagnostics must flag it.
    """
    if int(nx) != nx or nx < 4 or nx % 2:
        raise ValueError(f"nx must be an even integer >= 4, got {nx}")
    if int(nv) != nv or nv < 4:
        raise ValueError(f"nv must be an integer >= 4, got {nv}")
    if nv % 2:
        raise ValueError(f"nv must be even for a symmetric velocity grid, got {nv}")
    if not lx > 0:
        raise ValueError(f"lx must be positive, got {lx}")
    nx, nv = int(nx), int(nv)

    if velocity_rule == "gauss_hermite":
        v, gh = hermegauss(nv)
        maxw = np.exp(-0.5 * v**2) / np.sqrt(2.0 * np.pi)
        # w_j M_j reproduces the Gauss-Hermite rule for int g(v) M(v) dv
        w = gh / np.sqrt(2.0 * np.pi) / maxw
    elif velocity_rule == "uniform_symmetric":
        h = 2.0 * v_max / nv
        v = -v_max + h * (np.arange(nv) + 0.5)
        w = np.full(nv, h)
        maxw = np.exp(-0.5 * v**2) / np.sqrt(2.0 * np.pi)
    else:
        raise ValueError(f"unknown velocity rule {velocity_rule!r}; expected one of {VELOCITY_RULES}")

    v = v + v_shift
    maxw = maxw / np.sum(w * maxw)

    x = lx * np.arange(nx) / nx
    return PhaseGrid(nx, float(lx), x, nv, v, w, maxw, velocity_rule)


def inner_product(f: Field, g: Field) -> float:
    """Weighted inner product ``<f, g> = sum dx w_j f g / F``."""
    f._check(g)
    return float(np.sum(f.grid.node_weights * f.values * g.values))


def norm(f: Field) -> float:
    """Weighted norm, computed in scaled form so it does not underflow for tiny fields."""
    y = f.grid.sqrt_weights * f.flat
    scale = float(np.max(np.abs(y)))
    if scale == 0.0:
        return 0.0
    return scale * float(np.sqrt(np.sum((y / scale) ** 2)))


def project_pi(f: Field) -> Field:
    """Projection onto local equilibria ``(sum_k w_k f_ik) M(v_j)``."""
    grid = f.grid
    rho = f.values @ grid.v_weights
    return Field(rho[:, None] * grid.maxwellian[None, :], grid)


def density(f: Field) -> np.ndarray:
    """Local density ``rho(x_i) = sum_k w_k f_ik``."""
    return f.values @ f.grid.v_weights


def mass(f: Field) -> float:
    """Unweighted total mass ``sum dx w_j f_ij``."""
    return float(f.grid.dx * np.sum(density(f)))


def fluctuation(f: Field) -> Field:
    """Subtract the global equilibrium carrying the same mass."""
    grid = f.grid
    return Field(f.values - mass(f) * grid.equilibrium, grid)


def sawtooth_mode(grid: PhaseGrid) -> np.ndarray:
    """Density profile ``(-1)^i`` of the highest resolvable x-mode.

    On an even periodic grid every real skew-symmetric derivative annihilates
    it, so ``(-1)^i M(v)`` is a second discrete global equilibrium.
    """
    return (-1.0) ** np.arange(grid.nx)


def sawtooth_mass(f: Field) -> float:
    """Component of the density along :func:`sawtooth_mode` (conserved by the discrete dynamics)."""
    return float(f.grid.dx * np.sum(sawtooth_mode(f.grid) * density(f)))


def admissible_part(f: Field) -> Field:
    """Remove both discrete equilibria (mass and sawtooth density) from ``f``."""
    grid = f.grid
    g = fluctuation(f)
    saw = sawtooth_mode(grid)[:, None] * grid.maxwellian[None, :] / grid.lx
    return Field(g.values - sawtooth_mass(g) * saw, grid)
