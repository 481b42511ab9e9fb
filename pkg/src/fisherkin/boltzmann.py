"""Cutoff hard-potential Boltzmann operator: loss intensity, gain term, full operator.

Two gain-term routes are provided and kept independent:

* :func:`qplus_direct` integrates the sigma representation over lattice
  offsets and a product sigma quadrature, interpolating off-grid values;
* :func:`qplus_fast` uses the Carleman form with line/plane Fourier
  multipliers on a zero-padded grid (precomputed per grid and kernel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.special import j0, j1

from . import kernels
from .grid import Distribution, VelocityGrid, as_values, floored, gradient, laplacian, quadrature


def sphere_area(d: int) -> float:
    return 2.0 * math.pi if d == 2 else 4.0 * math.pi


class MissingPrecomputationError(RuntimeError):
    """The fast gain term was called before its plan was prepared."""


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelSpec:
    """Collision kernel ``b(cos theta) |u|^gamma``.

    ``b_const`` is set for a constant angular kernel; otherwise
    ``table_values`` holds ``b`` at the Gauss-Legendre nodes ``table_nodes`` in
    ``cos theta``. ``validation`` admits ``gamma = 0`` (Maxwell molecules).
    """

    gamma: float
    d: int = 3
    b_const: float | None = None
    table_nodes: tuple[float, ...] = ()
    table_values: tuple[float, ...] = ()
    validation: bool = False
    b_l1: float = field(default=float("nan"), compare=False)
    b_l2: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        lo = 0.0 if self.validation else np.nextafter(0.0, 1.0)
        if not (lo <= self.gamma <= 1.0):
            allowed = "[0, 1] in validation mode" if self.validation else "(0, 1]"
            raise ValueError(f"gamma must lie in {allowed}, got {self.gamma}")
        if self.d not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if self.b_const is not None:
            if self.b_const < 0 or not math.isfinite(self.b_const):
                raise ValueError("angular kernel must be finite and nonnegative")
            area = sphere_area(self.d)
            l1 = area * self.b_const
            l2 = math.sqrt(area) * self.b_const
        else:
            if self.d != 3:
                raise ValueError("tabulated angular kernels are supported for d = 3 only")
            vals = np.asarray(self.table_values, dtype=float)
            if vals.size == 0 or len(self.table_nodes) != vals.size:
                raise ValueError("tabulation needs matching nodes and values")
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ValueError("angular kernel must be finite and nonnegative")
            x, w = np.polynomial.legendre.leggauss(vals.size)
            if not np.allclose(x, self.table_nodes, rtol=0, atol=1e-13):
                raise ValueError("tabulation nodes must be Gauss-Legendre nodes in cos theta")
            l1 = 2.0 * math.pi * float(w @ vals)
            l2 = math.sqrt(2.0 * math.pi * float(w @ vals**2))
        for name, val in (("b_l1", l1), ("b_l2", l2)):
            given = getattr(self, name)
            if math.isnan(given):
                object.__setattr__(self, name, val)
            elif not math.isclose(given, val, rel_tol=1e-8, abs_tol=1e-14):
                raise ValueError(f"{name}={given} inconsistent with the angular kernel ({val})")

    @classmethod
    def constant(cls, gamma: float = 1.0, b_l1: float = 1.0, d: int = 3, validation: bool = False) -> KernelSpec:
        """Constant angular kernel normalized to the given L1 norm."""
        return cls(gamma=gamma, d=d, b_const=b_l1 / sphere_area(d), validation=validation)

    @classmethod
    def tabulated(cls, gamma: float, func, order: int = 16, validation: bool = False) -> KernelSpec:
        """Tabulate ``func(cos theta)`` at ``order`` Gauss-Legendre nodes."""
        x, _ = np.polynomial.legendre.leggauss(order)
        vals = np.asarray(func(x), dtype=float) * np.ones_like(x)
        return cls(gamma=gamma, d=3, table_nodes=tuple(x), table_values=tuple(vals), validation=validation)

    @property
    def is_constant(self) -> bool:
        return self.b_const is not None

    def b(self, cos_theta) -> np.ndarray:
        c = np.asarray(cos_theta, dtype=float)
        if self.is_constant:
            return np.full_like(c, self.b_const)
        nodes = np.asarray(self.table_nodes)
        coef = np.polynomial.legendre.legfit(nodes, np.asarray(self.table_values), nodes.size - 1)
        return np.maximum(np.polynomial.legendre.legval(c, coef), 0.0)

    def describe(self) -> dict:
        out = {"gamma": self.gamma, "d": self.d, "b_l1": self.b_l1, "b_l2": self.b_l2, "validation": self.validation}
        if self.is_constant:
            out["b_const"] = self.b_const
        else:
            out["table_values"] = list(self.table_values)
        return out


@dataclass(frozen=True)
class SigmaQuadrature:
    """Product rule on the unit sphere: Gauss-Legendre in cos theta, uniform azimuth."""

    n_theta: int = 8
    n_phi: int = 16

    @property
    def nodes(self) -> np.ndarray:
        x, _ = np.polynomial.legendre.leggauss(self.n_theta)
        phi = (np.arange(self.n_phi) + 0.5) * 2.0 * math.pi / self.n_phi
        c = np.repeat(x, self.n_phi)
        s = np.sqrt(1.0 - c * c)
        p = np.tile(phi, self.n_theta)
        return np.stack([s * np.cos(p), s * np.sin(p), c], axis=1)

    @property
    def weights(self) -> np.ndarray:
        _, w = np.polynomial.legendre.leggauss(self.n_theta)
        return np.repeat(w, self.n_phi) * (2.0 * math.pi / self.n_phi)

    @property
    def symmetric(self) -> bool:
        return self.n_theta % 2 == 0 and self.n_phi % 2 == 0


def _check(f: Distribution, kernel: KernelSpec, need3: bool = False):
    vals, grid = as_values(f)
    if grid.d != kernel.d:
        raise ValueError(f"kernel dimension {kernel.d} does not match grid dimension {grid.d}")
    if need3 and grid.d != 3:
        raise ValueError("the collision operator is implemented for d = 3 only")
    return vals, grid


# ---------------------------------------------------------------------------
# loss intensity R(f) = |b|_1 (f * |u|^gamma)


def _offsets(grid: VelocityGrid, size: int) -> np.ndarray:
    idx = sfft.fftfreq(size, 1.0 / size)
    return np.stack(np.meshgrid(*([idx * grid.h] * grid.d), indexing="ij"))


@lru_cache(maxsize=32)
def _power_kernel_hat(grid: VelocityGrid, power: float) -> np.ndarray:
    z = _offsets(grid, 2 * grid.n)
    r = np.sqrt(np.sum(z * z, axis=0))
    with np.errstate(divide="ignore"):
        kern = np.where(r > 0, r**power, 1.0 if power == 0 else 0.0)
    return sfft.rfftn(kern)


def power_convolution(vals: np.ndarray, grid: VelocityGrid, power: float, method: str = "fft") -> np.ndarray:
    """``h^d sum_w |v - w|^power f(w)``; the ``w = v`` term counts only for ``power = 0``."""
    if method == "fft":
        size = (2 * grid.n,) * grid.d
        out = sfft.irfftn(sfft.rfftn(vals, s=size) * _power_kernel_hat(grid, power), s=size)
        return out[(slice(0, grid.n),) * grid.d] * grid.cell_volume
    if method == "direct":
        if grid.d != 3:
            raise ValueError("direct convolution is implemented for d = 3")
        idx = np.arange(-(grid.n - 1), grid.n) * grid.h
        z = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"))
        r = np.sqrt(np.sum(z * z, axis=0))
        with np.errstate(divide="ignore"):
            kern = np.where(r > 0, r**power, 1.0 if power == 0 else 0.0)
        return kernels.direct_convolve(vals, kern) * grid.cell_volume
    raise ValueError(f"unknown method {method!r}")


def loss_intensity(f: Distribution, kernel: KernelSpec, method: str = "fft") -> np.ndarray:
    vals, grid = _check(f, kernel)
    return kernel.b_l1 * power_convolution(vals, grid, kernel.gamma, method)


def loss_laplacian_exact(f: Distribution, kernel: KernelSpec) -> np.ndarray:
    """Kernel form of the Laplacian of R: ``gamma (d+gamma-2) |b|_1 (f * |u|^(gamma-2))``.

    The singular self term is dropped, so this is a lower estimate near the diagonal.
    """
    vals, grid = _check(f, kernel)
    g = kernel.gamma
    return g * (grid.d + g - 2.0) * kernel.b_l1 * power_convolution(vals, grid, g - 2.0)


# ---------------------------------------------------------------------------
# direct gain term


def _sigma_rule(kernel: KernelSpec, sigma: SigmaQuadrature, same: bool):
    nodes, w = sigma.nodes, sigma.weights
    c = nodes[:, 2]
    if same and sigma.symmetric:
        up = c > 0
        return nodes[up], w[up] * (kernel.b(c[up]) + kernel.b(-c[up]))
    return nodes, w * kernel.b(c)


def qplus_direct(
    f: Distribution,
    g: Distribution,
    kernel: KernelSpec,
    sigma: SigmaQuadrature | None = None,
    interp: str = "cubic",
) -> np.ndarray:
    """Reference gain term ``Q+(f, g)(v) = int b |v - v*|^gamma f(v'*) g(v') dv* dsigma``.

    ``interp`` is ``"cubic"`` (tricubic Lagrange, default) or ``"linear"``
    (trilinear). When ``f`` and ``g`` coincide the integrand is even in sigma
    and only the upper hemisphere is evaluated.
    """
    fv, grid = _check(f, kernel, need3=True)
    gv, ggrid = _check(g, kernel, need3=True)
    if ggrid != grid:
        raise ValueError("f and g live on different grids")
    sigma = sigma or SigmaQuadrature()
    order = {"cubic": 4, "linear": 2}.get(interp)
    if order is None:
        raise ValueError("interp must be 'cubic' or 'linear'")
    same = f is g or np.array_equal(fv, gv)
    nodes, w = _sigma_rule(kernel, sigma, same)
    return kernels.qplus_shift(fv, gv, grid.h, kernel.gamma, nodes, w, order)


# ---------------------------------------------------------------------------
# fast gain term (Carleman form)


def hemisphere_directions(n_polar: int, n_azimuth: int) -> tuple[np.ndarray, np.ndarray]:
    """Directions with ``cos theta in (0, 1)``; weights sum to ``2 pi``."""
    x, w = np.polynomial.legendre.leggauss(n_polar)
    c = 0.5 * (x + 1.0)
    wc = 0.5 * w
    phi = (np.arange(n_azimuth) + 0.5) * 2.0 * math.pi / n_azimuth
    s = np.sqrt(1.0 - c * c)
    dirs = np.array([(si * np.cos(p), si * np.sin(p), ci) for ci, si in zip(c, s) for p in phi])
    wts = np.repeat(wc, n_azimuth) * (2.0 * math.pi / n_azimuth)
    return dirs, wts


def fit_exponential_sum(alpha: float, zmin: float, zmax: float, rank: int):
    """Fit ``z^alpha ~ sum_p c_p exp(-t_p z)`` on ``[zmin, zmax]`` in relative error.

    Returns ``(t, c, max_relative_error)``.
    """
    z = np.geomspace(zmin, zmax, 4000)
    t = np.geomspace(0.3 / zmax, 30.0 / zmin, rank)
    design = np.exp(-np.outer(z, t))
    wts = z ** (-alpha)
    c, *_ = np.linalg.lstsq(design * wts[:, None], z**alpha * wts, rcond=None)
    err = float(np.max(np.abs(design @ c - z**alpha) * wts))
    return t, c, err


def _radial_tables(t: np.ndarray, R: float, kmax: float, size: int = 8192, order: int = 600):
    """Line and plane transforms of ``exp(-t r^2)`` truncated at radius ``R``."""
    k = np.linspace(0.0, kmax * 1.001, size)
    x, w = np.polynomial.legendre.leggauss(order)
    r = 0.5 * R * (x + 1.0)
    w = 0.5 * R * w
    line = np.empty((t.size, size))
    plane = np.empty((t.size, size))
    for p, tp in enumerate(t):
        e = np.exp(-tp * r * r) * r * w
        line[p] = 2.0 * (np.cos(np.outer(k, r)) @ e)
        plane[p] = 2.0 * math.pi * (j0(np.outer(k, r)) @ e)
    return k, line, plane


def _closed_line(s: np.ndarray, R: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * (R * np.sin(R * s) / s + (np.cos(R * s) - 1.0) / s**2)
    small = s * R < 1e-4
    out[small] = R * R * (1.0 - (s[small] * R) ** 2 / 4.0)
    return out


def _closed_plane(q: np.ndarray, R: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * math.pi * R * j1(R * q) / q
    small = q * R < 1e-6
    out[small] = math.pi * R * R
    return out


CACHE_BYTES = 600 * 2**20


@dataclass(eq=False)
class FastPlan:
    """Precomputed Fourier multipliers for one (grid, kernel) pair."""

    grid: VelocityGrid
    kernel: KernelSpec
    n_polar: int
    n_azimuth: int
    rank: int
    directions: np.ndarray
    weights: np.ndarray
    t: np.ndarray
    c: np.ndarray
    fit_error: float
    loss_hat: np.ndarray
    _s: list = field(repr=False, default_factory=list)
    _q: list = field(repr=False, default_factory=list)
    _table: tuple | None = field(repr=False, default=None)
    _cached: list | None = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return 2 * self.grid.n

    def multipliers(self, e: int):
        """Yield ``(c_p, line_p, plane_p)`` for direction ``e``."""
        if self._cached is not None:
            yield from self._cached[e]
            return
        s, q = self._s[e], self._q[e]
        if self._table is None:
            yield 1.0, _closed_line(s, 2 * self.grid.lmax), _closed_plane(q, 2 * self.grid.lmax)
            return
        k, line, plane = self._table
        for p in range(self.t.size):
            yield self.c[p], np.interp(s, k, line[p]), np.interp(q, k, plane[p])


def prepare_fast(
    grid: VelocityGrid,
    kernel: KernelSpec,
    n_polar: int = 6,
    n_azimuth: int = 12,
    rank: int = 16,
) -> FastPlan:
    """Build and register the fast-path plan for ``(grid, kernel)``.

    ``gamma = 1`` uses closed-form multipliers; other ``gamma`` use an
    exponential-sum fit of rank ``rank`` for ``|z|^(gamma-1)``.
    """
    if grid.d != 3 or kernel.d != 3:
        raise ValueError("the fast path is implemented for d = 3 only")
    if not kernel.is_constant:
        raise ValueError("the fast path needs a constant angular kernel")
    size = 2 * grid.n
    R = 2.0 * grid.lmax
    k1 = 2.0 * math.pi * sfft.fftfreq(size, d=grid.h)
    k3 = 2.0 * math.pi * sfft.rfftfreq(size, d=grid.h)
    K = np.stack(np.meshgrid(k1, k1, k3, indexing="ij"))
    kk2 = np.sum(K * K, axis=0)
    dirs, wts = hemisphere_directions(n_polar, n_azimuth)
    alpha = 0.5 * (kernel.gamma - 1.0)
    if alpha == 0.0:
        t, c, err, table = np.zeros(1), np.ones(1), 0.0, None
    else:
        t, c, err = fit_exponential_sum(alpha, (grid.h / 8) ** 2, 2.0 * R * R, rank)
        table = _radial_tables(t, R, float(np.sqrt(kk2.max())))
    b0 = kernel.b_l1 / (4.0 * math.pi)
    plan = FastPlan(grid, kernel, n_polar, n_azimuth, t.size, dirs, wts, t, c, err, np.zeros(kk2.shape), _table=table)
    per_array = kk2.nbytes
    cache = 2 * t.size * len(dirs) * per_array <= CACHE_BYTES
    cached = [] if cache else None
    for e, w in zip(dirs, wts):
        s = np.abs(K[0] * e[0] + K[1] * e[1] + K[2] * e[2])
        q = np.sqrt(np.maximum(kk2 - s * s, 0.0))
        plan._s.append(s)
        plan._q.append(q)
        terms = list(plan.multipliers(len(plan._s) - 1))
        for cp, line, plane in terms:
            plan.loss_hat += 4.0 * b0 * w * cp * line * plane
        if cache:
            cached.append(terms)
    if cache:
        plan._cached = cached
        plan._s, plan._q = [], []
    _PLANS[_plan_key(grid, kernel)] = plan
    return plan


_PLANS: dict = {}


def _plan_key(grid: VelocityGrid, kernel: KernelSpec):
    return (grid, kernel)


def get_plan(grid: VelocityGrid, kernel: KernelSpec) -> FastPlan:
    try:
        return _PLANS[_plan_key(grid, kernel)]
    except KeyError:
        raise MissingPrecomputationError(
            "fast-path weights not prepared for this grid and kernel; call prepare_fast first"
        ) from None


def clear_plans() -> None:
    _PLANS.clear()


def qplus_fast(f: Distribution, g: Distribution, kernel: KernelSpec, plan: FastPlan | None = None) -> np.ndarray:
    """Fast gain term ``Q+(f, g)`` from a prepared plan."""
    fv, grid = _check(f, kernel, need3=True)
    gv, ggrid = _check(g, kernel, need3=True)
    if ggrid != grid:
        raise ValueError("f and g live on different grids")
    plan = plan or get_plan(grid, kernel)
    return _qplus_fast_values(fv, gv, plan)


def _qplus_fast_values(fv: np.ndarray, gv: np.ndarray, plan: FastPlan) -> np.ndarray:
    n, size = plan.grid.n, plan.size
    shape = (size,) * 3
    crop = (slice(0, n),) * 3
    b0 = plan.kernel.b_l1 / (4.0 * math.pi)
    fh = sfft.rfftn(fv, s=shape)
    same = fv is gv or np.array_equal(fv, gv)
    gh = fh if same else sfft.rfftn(gv, s=shape)
    out = np.zeros((n, n, n))
    for e, w in enumerate(plan.weights):
        for cp, line, plane in plan.multipliers(e):
            a_f = sfft.irfftn(fh * line, s=shape)[crop]
            b_f = sfft.irfftn(fh * plane, s=shape)[crop]
            if same:
                out += (4.0 * b0 * w * cp) * a_f * b_f
            else:
                a_g = sfft.irfftn(gh * line, s=shape)[crop]
                b_g = sfft.irfftn(gh * plane, s=shape)[crop]
                out += (2.0 * b0 * w * cp) * (a_f * b_g + a_g * b_f)
    return out


def loss_fast(f: Distribution, kernel: KernelSpec, plan: FastPlan | None = None) -> np.ndarray:
    """Loss intensity with the multiplier matched to the fast gain term.

    Using the same quadrature for gain and loss makes ``Q(M, M)`` vanish to
    the accuracy of the Fourier representation.
    """
    fv, grid = _check(f, kernel, need3=True)
    plan = plan or get_plan(grid, kernel)
    shape = (plan.size,) * 3
    return sfft.irfftn(sfft.rfftn(fv, s=shape) * plan.loss_hat, s=shape)[(slice(0, grid.n),) * 3]


# ---------------------------------------------------------------------------
# full operator


@dataclass(frozen=True)
class OperatorOptions:
    fast: bool = False
    sigma: SigmaQuadrature = field(default_factory=SigmaQuadrature)
    interp: str = "cubic"


def gain_and_loss(f: Distribution, kernel: KernelSpec, options: OperatorOptions | None = None):
    """``(Q+(f, f), R(f))`` from the selected route."""
    options = options or OperatorOptions()
    if options.fast:
        return qplus_fast(f, f, kernel), loss_fast(f, kernel)
    return qplus_direct(f, f, kernel, options.sigma, options.interp), loss_intensity(f, kernel)


def conservative_projection(q: np.ndarray, f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Remove the discrete mass, momentum and energy of ``q`` by the smallest f-weighted change.

    Solves ``min sum delta^2 / f`` subject to zero moments of ``q - delta``;
    the correction is ``f`` times a collision invariant, so it vanishes where ``f`` does.
    """
    basis = np.stack([np.ones(grid.shape), *grid.mesh, grid.speed_squared]).reshape(grid.d + 2, -1)
    fv = np.asarray(f).ravel()
    gram = (basis * fv) @ basis.T
    rhs = basis @ np.asarray(q).ravel()
    lam = np.linalg.solve(gram, rhs)
    return q - (fv * (lam @ basis)).reshape(grid.shape)


def collision(
    f: Distribution, kernel: KernelSpec, options: OperatorOptions | None = None, conserve: bool = False
) -> np.ndarray:
    """``Q(f, f) = Q+(f, f) - f R(f)``, optionally projected onto conservative fields."""
    vals, grid = _check(f, kernel, need3=True)
    gain, loss = gain_and_loss(f, kernel, options)
    q = gain - vals * loss
    if conserve and not f.is_zero:
        q = conservative_projection(q, vals, grid)
    return q


@dataclass(frozen=True)
class FisherRHS:
    term1: float
    term2: float
    term3: float
    term4: float

    @property
    def total(self) -> float:
        return self.term1 + self.term2 + self.term3 + self.term4

    @property
    def scale(self) -> float:
        return abs(self.term1) + abs(self.term2) + abs(self.term3) + abs(self.term4)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return self.term1, self.term2, self.term3, self.term4, self.total


def fisher_rhs_from(f: Distribution, gain: np.ndarray, loss: np.ndarray) -> FisherRHS:
    """The four terms of the Fisher-information derivative from given ``Q+`` and ``R``."""
    vals, grid = as_values(f)
    fl = floored(vals)
    logf = np.log(fl)
    sq = gradient(np.sqrt(fl), grid)
    gf = gradient(vals, grid)
    gl = gradient(logf, grid)
    gr = gradient(loss, grid)
    t1 = -2.0 * quadrature(logf * laplacian(gain, grid), grid)
    t2 = -4.0 * quadrature(np.sum(sq * sq, axis=0) * loss, grid)
    t3 = -2.0 * quadrature(np.sum(gf * gr, axis=0), grid)
    t4 = -quadrature(np.sum(gl * gl, axis=0) * gain, grid)
    return FisherRHS(t1, t2, t3, t4)


def fisher_rhs(f: Distribution, kernel: KernelSpec, options: OperatorOptions | None = None) -> FisherRHS:
    """Right-hand side of the Fisher-information derivative identity."""
    _check(f, kernel, need3=True)
    gain, loss = gain_and_loss(f, kernel, options)
    return fisher_rhs_from(f, gain, loss)


# ---------------------------------------------------------------------------
# Maxwell-molecule similarity solution


def bkw_rate(kernel: KernelSpec) -> float:
    """Relaxation rate of the similarity solution for ``gamma = 0`` and constant ``b``."""
    return kernel.b_l1 / 6.0


def bkw_scale(t: float, k0: float, rate: float) -> float:
    return 1.0 - (1.0 - k0) * math.exp(-rate * t)


def bkw_profile(grid: VelocityGrid, K: float) -> np.ndarray:
    """Unit-mass, unit-temperature similarity profile with scale ``K``."""
    r2 = grid.speed_squared
    return (2 * math.pi * K) ** -1.5 * np.exp(-r2 / (2 * K)) * ((5 * K - 3) / (2 * K) + (1 - K) / (2 * K * K) * r2)
