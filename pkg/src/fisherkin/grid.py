"""Cell-centered velocity grids, midpoint quadrature and difference stencils."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .kernels import pairwise_sum

FLOOR_RELATIVE = 1e-30


@dataclass(frozen=True)
class VelocityGrid:
    """Cube ``[-lmax, lmax]^d`` split into ``n^d`` cells, one node per cell center."""

    d: int
    n: int
    lmax: float

    @property
    def h(self) -> float:
        return 2.0 * self.lmax / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @cached_property
    def nodes(self) -> np.ndarray:
        return -self.lmax + (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def mesh(self) -> np.ndarray:
        """Coordinates, shape ``(d, n, ..., n)``, axis 0 slowest in memory."""
        return np.stack(np.meshgrid(*([self.nodes] * self.d), indexing="ij"))

    @cached_property
    def speed_squared(self) -> np.ndarray:
        return np.sum(self.mesh**2, axis=0)

    def bracket(self, k: float = 1.0) -> np.ndarray:
        """Japanese bracket ``(1 + |v|^2)^(k/2)`` per node."""
        return (1.0 + self.speed_squared) ** (0.5 * k)

    def params(self) -> dict:
        return {"d": self.d, "n": self.n, "lmax": self.lmax}


def make_grid(d: int, n: int, lmax: float) -> VelocityGrid:
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    if int(n) != n or n % 2:
        raise ValueError(f"points per axis must be even (no node at the origin), got {n}")
    if not 8 <= n <= 128:
        raise ValueError(f"points per axis must lie in [8, 128], got {n}")
    if not lmax > 0:
        raise ValueError(f"half-width must be positive, got {lmax}")
    return VelocityGrid(int(d), int(n), float(lmax))


@dataclass(frozen=True)
class WeightField:
    k: float
    values: np.ndarray


def weight(grid: VelocityGrid, k: float) -> WeightField:
    return WeightField(float(k), grid.bracket(k))


@dataclass(frozen=True, eq=False)
class Field:
    """Real values on a grid, no sign constraint."""

    grid: VelocityGrid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size != self.grid.size:
            raise ValueError(f"field has {vals.size} values, grid has {self.grid.size} nodes")
        vals = vals.reshape(self.grid.shape)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class Distribution(Field):
    """Nonnegative density on a grid."""

    allow_zero: bool = field(default=False, repr=False)

    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("distribution values must be finite")
        if np.any(self.values < 0):
            raise ValueError("distribution values must be nonnegative")
        if not self.allow_zero and not np.any(self.values > 0):
            raise ValueError("zero distribution must be constructed with Distribution.zeros")

    @classmethod
    def zeros(cls, grid: VelocityGrid, label: str = "zero") -> Distribution:
        return cls(grid, np.zeros(grid.shape), label, allow_zero=True)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    def with_values(self, values, label: str | None = None) -> Distribution:
        return Distribution(self.grid, values, self.label if label is None else label, allow_zero=True)

    def scaled(self, alpha: float) -> Distribution:
        return self.with_values(alpha * self.values)


def as_values(f, grid: VelocityGrid | None = None) -> tuple[np.ndarray, VelocityGrid]:
    """Split a Field or a raw array into (values, grid)."""
    if isinstance(f, Field):
        return f.values, f.grid
    if grid is None:
        raise TypeError("raw arrays need an explicit grid")
    vals = np.asarray(f, dtype=np.float64)
    if vals.size != grid.size:
        raise ValueError(f"field has {vals.size} values, grid has {grid.size} nodes")
    return vals.reshape(grid.shape), grid


def quadrature(values, grid: VelocityGrid) -> float:
    """Midpoint rule ``h^d * sum`` with pairwise reduction."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size != grid.size:
        raise ValueError(f"field has {vals.size} values, grid has {grid.size} nodes")
    return grid.cell_volume * pairwise_sum(vals)


def floor_value(values) -> float:
    vmax = float(np.max(values)) if np.size(values) else 0.0
    return FLOOR_RELATIVE * vmax if vmax > 0 else np.finfo(float).tiny


def floored(values) -> np.ndarray:
    return np.maximum(values, floor_value(values))


def derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order first derivative: central inside, one-sided on the edge layers."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def second_derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order second derivative along one axis."""
    g = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    out = np.empty_like(g)
    out[1:-1] = g[2:] - 2.0 * g[1:-1] + g[:-2]
    out[0] = 2.0 * g[0] - 5.0 * g[1] + 4.0 * g[2] - g[3]
    out[-1] = 2.0 * g[-1] - 5.0 * g[-2] + 4.0 * g[-3] - g[-4]
    return np.moveaxis(out / (h * h), 0, axis)


def gradient(values, grid: VelocityGrid) -> np.ndarray:
    vals, grid = as_values(values, grid)
    return np.stack([derivative(vals, grid.h, ax) for ax in range(grid.d)])


def laplacian(values, grid: VelocityGrid) -> np.ndarray:
    vals, grid = as_values(values, grid)
    return sum(second_derivative(vals, grid.h, ax) for ax in range(grid.d))


def partial(values: np.ndarray, h: float, orders) -> np.ndarray:
    """Mixed derivative with multi-index ``orders``; order-2 factors use the compact stencil."""
    out = np.asarray(values, dtype=np.float64)
    for ax, k in enumerate(orders):
        while k >= 2:
            out = second_derivative(out, h, ax)
            k -= 2
        if k == 1:
            out = derivative(out, h, ax)
    return out


def maxwellian(grid: VelocityGrid, rho: float = 1.0, u=None, T: float = 1.0) -> np.ndarray:
    """Nodal values of ``rho (2 pi T)^(-d/2) exp(-|v-u|^2 / 2T)``."""
    if T <= 0 or rho < 0:
        raise ValueError("need T > 0 and rho >= 0")
    u = np.zeros(grid.d) if u is None else np.asarray(u, dtype=float)
    d2 = sum((grid.mesh[i] - u[i]) ** 2 for i in range(grid.d))
    return rho * (2.0 * np.pi * T) ** (-0.5 * grid.d) * np.exp(-d2 / (2.0 * T))
