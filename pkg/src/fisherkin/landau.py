"""Hard-potential Landau operator in conservative collocated form.

The flux is ``J = a G(f) - d f`` with ``a = A * f``, ``d = A * G(f)`` and
``G`` the exponentially fitted gradient ``M D(f / M)`` relative to the
Maxwellian ``M`` sharing the moments of the field-building ``f``. The
operator is ``-D^T J`` with ``D^T`` the exact adjoint of the difference
stencil. Pairing each ``a`` with ``G f`` at one node and each ``d`` with
``f`` makes mass, momentum and energy conservation exact, and the fitting
makes the discrete Maxwellian of the grid an equilibrium up to rounding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.fft as sfft

from . import kernels
from .functionals import EXP_LIMIT, OverflowGuardError
from .grid import Distribution, VelocityGrid, as_values, derivative, floored, gradient, quadrature


def _require3(grid: VelocityGrid):
    if grid.d != 3:
        raise ValueError("the Landau operator is implemented for d = 3 only")


def pairing_token(values: np.ndarray, gamma: float) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(values, dtype=np.float64).tobytes())
    h.update(repr(float(gamma)).encode())
    return h.hexdigest()


def _kernel_values(z: np.ndarray, gamma: float) -> dict[str, np.ndarray]:
    r2 = np.sum(z * z, axis=0)
    r = np.sqrt(r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rg = np.where(r > 0, r**gamma, 0.0)
    out = {}
    for i in range(3):
        for j in range(i, 3):
            out[f"a{i}{j}"] = ((r2 if i == j else 0.0) - z[i] * z[j]) * rg
        out[f"b{i}"] = -2.0 * z[i] * rg
    out["divb"] = -2.0 * (3.0 + gamma) * rg
    return out


@lru_cache(maxsize=16)
def _kernel_hats(grid: VelocityGrid, gamma: float) -> dict[str, np.ndarray]:
    size = 2 * grid.n
    idx = sfft.fftfreq(size, 1.0 / size) * grid.h
    z = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"))
    return {k: sfft.rfftn(v) * grid.cell_volume for k, v in _kernel_values(z, gamma).items()}


def _kernel_lattice(grid: VelocityGrid, gamma: float) -> dict[str, np.ndarray]:
    idx = np.arange(-(grid.n - 1), grid.n) * grid.h
    z = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"))
    return {k: v * grid.cell_volume for k, v in _kernel_values(z, gamma).items()}


def reference_moments(vals: np.ndarray, grid: VelocityGrid) -> tuple[float, np.ndarray, float]:
    """Density, mean velocity and temperature of the nodal values."""
    rho = quadrature(vals, grid)
    if rho <= 0:
        return 0.0, np.zeros(3), 1.0
    u = np.array([quadrature(grid.mesh[i] * vals, grid) for i in range(3)]) / rho
    c2 = sum((grid.mesh[i] - u[i]) ** 2 for i in range(3))
    T = quadrature(c2 * vals, grid) / (3.0 * rho)
    return rho, u, max(T, 1e-12)


def fitting_tables(grid: VelocityGrid, u, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor ratios ``M(x_p)/M(x_{p+o})`` for ``o in -2..2`` and log-slopes per axis."""
    n, x = grid.n, grid.nodes
    ratio = np.ones((3, n, 5))
    slope = np.empty((3, n))
    for ax in range(3):
        ell = -((x - u[ax]) ** 2) / (2.0 * T)
        for o in range(-2, 3):
            lo, hi = max(0, -o), min(n, n - o)
            ratio[ax, lo:hi, o + 2] = np.exp(ell[lo:hi] - ell[lo + o : hi + o])
        slope[ax] = -(x - u[ax]) / T
    return ratio, slope


@dataclass(frozen=True, eq=False)
class LandauFields:
    """Coefficient fields built from one distribution.

    ``a`` and ``drift`` enter the operator; ``b = B * f`` and ``divb`` are
    the analytic drift and its divergence, used by bounds and the weak form.
    """

    grid: VelocityGrid
    gamma: float
    a: np.ndarray
    b: np.ndarray
    divb: np.ndarray
    drift: np.ndarray
    ratio: np.ndarray
    slope: np.ndarray
    reference: tuple
    token: str

    def operator(self) -> Callable[[np.ndarray], np.ndarray]:
        """Linear map ``y -> -D^T(a G(y) - drift y)`` with these fields frozen."""
        a, drift, ratio, slope, h = self.a, self.drift, self.ratio, self.slope, self.grid.h
        return lambda y: kernels.landau_apply(y, a, drift, ratio, slope, h)


def landau_fields(f: Distribution, gamma: float, method: str = "fft") -> LandauFields:
    """Kernel convolutions ``A * f``, ``B * f``, ``div B * f`` and the fitted drift."""
    vals, grid = as_values(f)
    _require3(grid)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    n = grid.n
    rho, u, T = reference_moments(vals, grid)
    ratio, slope = fitting_tables(grid, u, T)
    grad = kernels.fitted_gradient(vals, ratio, slope, grid.h)
    if method == "fft":
        hats = _kernel_hats(grid, float(gamma))
        fh = sfft.rfftn(vals, s=(2 * n,) * 3)
        size = (2 * n,) * 3

        def conv(key, spec=fh):
            return sfft.irfftn(spec * hats[key], s=size)[:n, :n, :n]

        gh = [sfft.rfftn(grad[j], s=size) for j in range(3)]

        def conv_drift(i):
            spec = sum(hats[f"a{min(i, j)}{max(i, j)}"] * gh[j] for j in range(3))
            return sfft.irfftn(spec, s=size)[:n, :n, :n]

    elif method == "direct":
        lat = _kernel_lattice(grid, float(gamma))

        def conv(key):
            return kernels.direct_convolve(vals, lat[key])

        def conv_drift(i):
            return sum(kernels.direct_convolve(grad[j], lat[f"a{min(i, j)}{max(i, j)}"]) for j in range(3))

    else:
        raise ValueError(f"unknown method {method!r}")
    a = np.empty((3, 3, n, n, n))
    for i in range(3):
        for j in range(i, 3):
            a[i, j] = conv(f"a{i}{j}")
            if j != i:
                a[j, i] = a[i, j]
    b = np.stack([conv(f"b{i}") for i in range(3)])
    divb = conv("divb")
    drift = np.stack([conv_drift(i) for i in range(3)])
    return LandauFields(grid, float(gamma), a, b, divb, drift, ratio, slope, (rho, tuple(u), T),
                        pairing_token(vals, gamma))


class StaleFieldsError(ValueError):
    """Fields were built from a different distribution."""


def landau_op(f: Distribution, fields: LandauFields) -> np.ndarray:
    """``Q_L(f, f)`` with fields that must come from the same ``f``."""
    vals, grid = as_values(f)
    if grid != fields.grid or pairing_token(vals, fields.gamma) != fields.token:
        raise StaleFieldsError("Landau fields were not built from this distribution")
    return fields.operator()(vals)


def entropy_production(f: Distribution, fields: LandauFields) -> float:
    """``-int Q_L(f, f) log f``."""
    vals, grid = as_values(f)
    q = landau_op(f, fields)
    return -quadrature(q * np.log(floored(vals)), grid)


# ---------------------------------------------------------------------------
# ellipticity and drift bounds

_DIRECTIONS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)], dtype=float
)
_DIRECTIONS /= np.linalg.norm(_DIRECTIONS, axis=1)[:, None]


def quadratic_form_ratios(fields: LandauFields, power: float) -> np.ndarray:
    """``a(v) xi . xi / <v>^power`` for the 26 lattice directions, shape ``(26, n, n, n)``."""
    a = fields.a
    w = fields.grid.bracket(power)
    return np.stack([np.einsum("i,ij...,j->...", xi, a, xi) / w for xi in _DIRECTIONS])


def ellipticity_constant(fields: LandauFields) -> float:
    """Smallest ``a(v) xi . xi / (<v>^gamma |xi|^2)`` over nodes and lattice directions."""
    return float(quadratic_form_ratios(fields, fields.gamma).min())


def upper_ellipticity_constant(fields: LandauFields) -> float:
    """Largest ``a(v) xi . xi / (<v>^(gamma+2) |xi|^2)`` over nodes and lattice directions."""
    return float(quadratic_form_ratios(fields, fields.gamma + 2.0).max())


@dataclass(frozen=True)
class DriftBounds:
    b_margin: float
    divb_margin: float
    b_ratio: float
    divb_ratio: float


def drift_bounds(f: Distribution, fields: LandauFields) -> DriftBounds:
    """Pointwise ``|b| <= 2 <v>^(gamma+1) m_2`` and ``|div b| <= 8 <v>^gamma m_2``.

    Margins are ``min(rhs - lhs)`` over nodes; ratios are ``max(lhs / rhs)``.
    """
    vals, grid = as_values(f)
    m2 = quadrature(grid.bracket(2.0) * vals, grid)
    g = fields.gamma
    bmag = np.sqrt(np.sum(fields.b**2, axis=0))
    rb = 2.0 * grid.bracket(g + 1.0) * m2
    rd = 8.0 * grid.bracket(g) * m2
    dmag = np.abs(fields.divb)
    with np.errstate(invalid="ignore", divide="ignore"):
        b_ratio = float(np.max(bmag / rb)) if m2 > 0 else 0.0
        d_ratio = float(np.max(dmag / rd)) if m2 > 0 else 0.0
    return DriftBounds(float(np.min(rb - bmag)), float(np.min(rd - dmag)), b_ratio, d_ratio)


# ---------------------------------------------------------------------------
# weak form


@dataclass(frozen=True)
class TestFunction:
    """A test field with its gradient ``(3, ...)`` and Hessian ``(3, 3, ...)``."""

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    __test__ = False


def constant_test_function(grid: VelocityGrid, c: float = 1.0) -> TestFunction:
    z = np.zeros(grid.shape)
    return TestFunction(np.full(grid.shape, c), np.stack([z] * 3), np.zeros((3, 3) + grid.shape))


def energy_test_function(grid: VelocityGrid) -> TestFunction:
    """``|v|^2``."""
    hess = np.zeros((3, 3) + grid.shape)
    for i in range(3):
        hess[i, i] = 2.0
    return TestFunction(grid.speed_squared, 2.0 * grid.mesh, hess)


def exp_test_function(grid: VelocityGrid, lam: float, s: float) -> TestFunction:
    """``exp(lam <v>^s)`` with analytic derivatives."""
    corner = 1.0 + 3.0 * grid.lmax**2
    if lam * corner ** (0.5 * s) > EXP_LIMIT:
        raise OverflowGuardError(f"exponential test function overflows: lambda={lam}, s={s}, L={grid.lmax}")
    br2 = 1.0 + grid.speed_squared
    br = np.sqrt(br2)
    phi = np.exp(lam * br**s)
    v = grid.mesh
    grad = lam * s * phi * br ** (s - 2.0) * v
    hess = np.empty((3, 3) + grid.shape)
    for i in range(3):
        for j in range(3):
            vij = v[i] * v[j]
            hess[i, j] = lam * s * phi * (
                (s - 2.0) * br ** (s - 4.0) * vij + (br ** (s - 2.0) if i == j else 0.0) + lam * s * br ** (2 * (s - 2.0)) * vij
            )
    return TestFunction(phi, grad, hess)


def weak_moment_rhs(f: Distribution, fields: LandauFields, phi: TestFunction) -> float:
    """``2 sum_j int f b_j d_j phi + sum_ij int f a_ij d_ij phi``."""
    vals, grid = as_values(f)
    first = 2.0 * quadrature(vals * np.sum(fields.b * phi.grad, axis=0), grid)
    second = quadrature(vals * np.einsum("ij...,ij...->...", fields.a, phi.hess), grid)
    return first + second


# ---------------------------------------------------------------------------
# energy estimate for grad sqrt f


@dataclass(frozen=True)
class SqrtEnergyTerms:
    """Pieces of the energy estimate for ``g_i = d_i sqrt f``.

    ``rhs_const_parts`` holds ``int <v>^-gamma |a^i g|^2`` and
    ``int <v>^-gamma |b^i sqrt f|^2``; ``a_bound`` and ``b_bound`` are the
    smallest constants with ``|a^i| <= A <v>^(gamma+1)`` and ``|b^i| <= B <v>^gamma``.
    """

    lhs_dirichlet: float
    rhs_weighted_fisher: float
    rhs_const_parts: tuple[float, float]
    g_norm2: float
    a_bound: float
    b_bound: float


def sqrt_energy_terms(f: Distribution, fields: LandauFields, i: int) -> SqrtEnergyTerms:
    vals, grid = as_values(f)
    if not 0 <= i < 3:
        raise ValueError("axis must be 0, 1 or 2")
    if not np.any(vals > 0):
        return SqrtEnergyTerms(0.0, 0.0, (0.0, 0.0), 0.0, 0.0, 0.0)
    h, gam = grid.h, fields.gamma
    sq = np.sqrt(floored(vals))
    g = gradient(sq, grid)
    gi = g[i]
    dgi = gradient(gi, grid)
    resid = dgi - (gi / sq) * g
    lhs = quadrature(grid.bracket(gam) * np.sum(resid**2, axis=0), grid)
    rhs = quadrature(grid.bracket(gam + 2.0) * np.sum(g * g, axis=0), grid)
    ai = derivative(fields.a, h, axis=2 + i)
    bi = derivative(fields.b, h, axis=1 + i)
    aig = np.einsum("jk...,k...->j...", ai, g)
    wneg = grid.bracket(-gam)
    part_a = quadrature(wneg * np.sum(aig**2, axis=0), grid)
    part_b = quadrature(wneg * np.sum(bi**2, axis=0) * vals, grid)
    a_norm = np.sqrt(np.sum(ai**2, axis=(0, 1)))
    b_norm = np.sqrt(np.sum(bi**2, axis=0))
    return SqrtEnergyTerms(
        lhs_dirichlet=lhs,
        rhs_weighted_fisher=rhs,
        rhs_const_parts=(part_a, part_b),
        g_norm2=quadrature(gi * gi, grid),
        a_bound=float(np.max(a_norm / grid.bracket(gam + 1.0))),
        b_bound=float(np.max(b_norm / grid.bracket(gam))),
    )


def max_eigenvalue(fields: LandauFields) -> float:
    """Largest eigenvalue of ``a(v)`` over all nodes."""
    a = np.moveaxis(fields.a.reshape(3, 3, -1), -1, 0)
    return float(np.linalg.eigvalsh(a)[:, -1].max())


__all__ = [
    "LandauFields",
    "StaleFieldsError",
    "TestFunction",
    "landau_fields",
    "landau_op",
    "entropy_production",
    "ellipticity_constant",
    "upper_ellipticity_constant",
    "drift_bounds",
    "weak_moment_rhs",
    "constant_test_function",
    "energy_test_function",
    "exp_test_function",
    "sqrt_energy_terms",
    "max_eigenvalue",
]
