"""Scalar functionals of a distribution: moments, entropies, Fisher information, norms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.fft as sfft

from .grid import Distribution, Field, VelocityGrid, as_values, floored, gradient, partial, quadrature

# exp() of anything above this overflows a float64
EXP_LIMIT = 700.0


class OverflowGuardError(ValueError):
    """An exponential weight would overflow on the grid."""


def _vals(f, grid=None):
    return as_values(f, grid)


def conserved(f: Distribution) -> tuple[float, np.ndarray, float]:
    """Mass, momentum vector and energy ``int |v|^2 f``."""
    vals, grid = _vals(f)
    mass = quadrature(vals, grid)
    mom = np.array([quadrature(grid.mesh[i] * vals, grid) for i in range(grid.d)])
    energy = quadrature(grid.speed_squared * vals, grid)
    return mass, mom, energy


def moment(f: Distribution, k: float, weight: str = "japanese") -> float:
    """``int f |v|^k`` (``weight="absolute"``) or ``int f <v>^k`` (``"japanese"``)."""
    if k < 0:
        raise ValueError(f"moment order must be nonnegative, got {k}")
    vals, grid = _vals(f)
    if weight == "japanese":
        w = grid.bracket(k)
    elif weight == "absolute":
        w = grid.speed_squared ** (0.5 * k)
    else:
        raise ValueError(f"weight must be 'absolute' or 'japanese', got {weight!r}")
    return quadrature(w * vals, grid)


def entropy(f: Distribution, k: float = 0.0) -> tuple[float, float]:
    """Signed ``int f log f <v>^k`` and absolute ``int <v>^k f |log f|``, log floored."""
    if k < 0:
        raise ValueError(f"weight exponent must be nonnegative, got {k}")
    vals, grid = _vals(f)
    logf = np.log(floored(vals))
    w = grid.bracket(k)
    return quadrature(w * vals * logf, grid), quadrature(w * vals * np.abs(logf), grid)


def sqrt_gradient(f) -> np.ndarray:
    """Grid gradient of the floored square root."""
    vals, grid = _vals(f)
    return gradient(np.sqrt(floored(vals)), grid)


def fisher(f: Distribution, k: float = 0.0) -> float:
    """``4 int <v>^k |grad sqrt f|^2`` with the grid gradient."""
    if k < 0:
        raise ValueError(f"weight exponent must be nonnegative, got {k}")
    vals, grid = _vals(f)
    g = sqrt_gradient(f)
    return 4.0 * quadrature(grid.bracket(k) * np.sum(g * g, axis=0), grid)


def _exp_weight(grid: VelocityGrid, lam: float, s: float, weight: str = "japanese") -> np.ndarray:
    corner = math.sqrt(grid.d) * grid.lmax
    if weight == "japanese":
        top = lam * (1.0 + corner**2) ** (0.5 * s)
        base = grid.bracket(s)
    elif weight == "absolute":
        top = lam * corner**s
        base = grid.speed_squared ** (0.5 * s)
    else:
        raise ValueError(f"weight must be 'absolute' or 'japanese', got {weight!r}")
    if top > EXP_LIMIT:
        raise OverflowGuardError(
            f"exponential weight overflows: lambda={lam}, s={s}, L={grid.lmax} gives exponent {top:.1f}"
        )
    return np.exp(lam * base)


def exp_moment(f: Distribution, lam: float, s: float) -> float:
    """``int f exp(lam <v>^s)``."""
    if not lam >= 0:
        raise ValueError("lambda must be nonnegative")
    if not 0 < s <= 2:
        raise ValueError("s must lie in (0, 2]")
    vals, grid = _vals(f)
    return quadrature(vals * _exp_weight(grid, lam, s), grid)


def lebesgue_norm(f, p: float, q: float = 0.0) -> float:
    """``(int |f|^p <v>^(pq))^(1/p)``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    vals, grid = _vals(f)
    return quadrature(np.abs(vals) ** p * grid.bracket(p * q), grid) ** (1.0 / p)


def _multi_indices(d: int, order: int):
    return [beta for beta in product(range(order + 1), repeat=d) if sum(beta) == order]


def sobolev_norm(f, s: float, eta: float = 0.0, method: str = "auto") -> float:
    """Weighted Bessel-potential norm ``|| <xi>^s F(<v>^eta f) ||_2``.

    Integer ``s`` uses difference stencils with multinomial weights so that the
    continuous norm equals the Fourier one exactly; ``method="fourier"`` (the
    default for fractional ``s``) applies the symbol on a zero-padded grid.
    """
    if s < 0 or eta < 0:
        raise ValueError("need s >= 0 and eta >= 0")
    vals, grid = _vals(f)
    g = grid.bracket(eta) * vals
    if method == "auto":
        method = "stencil" if float(s).is_integer() else "fourier"
    if method == "stencil":
        if not float(s).is_integer():
            raise ValueError("stencil path needs integer s")
        order = int(s)
        total = 0.0
        for j in range(order + 1):
            for beta in _multi_indices(grid.d, j):
                coef = math.comb(order, j) * math.factorial(j) / math.prod(math.factorial(b) for b in beta)
                dg = partial(g, grid.h, beta)
                total += coef * quadrature(dg * dg, grid)
        return math.sqrt(total)
    if method == "fourier":
        size = 2 * grid.n
        spec = sfft.fftn(g, s=(size,) * grid.d)
        xi = 2.0 * np.pi * sfft.fftfreq(size, d=grid.h)
        xi2 = sum(np.meshgrid(*([xi**2] * grid.d), indexing="ij"))
        symbol = (1.0 + xi2) ** s
        total = grid.cell_volume * float(np.sum(symbol * np.abs(spec) ** 2)) / size**grid.d
        return math.sqrt(total)
    raise ValueError(f"unknown method {method!r}")


def grad_exp_tail(
    f: Distribution, c: float, s: float, weight: str = "japanese", form: str = "chain"
) -> float:
    """``int |grad f| exp(c w(v))`` with ``w = <v>^s`` or ``|v|^s``.

    ``form="chain"`` evaluates ``|grad f|`` as ``2 sqrt(f) |grad_h sqrt(f)|``,
    which keeps the discrete Cauchy-Schwarz bound against ``fisher`` exact;
    ``form="direct"`` differences ``f`` itself.
    """
    vals, grid = _vals(f)
    if form == "chain":
        g = sqrt_gradient(f)
        mag = 2.0 * np.sqrt(vals) * np.sqrt(np.sum(g * g, axis=0))
    elif form == "direct":
        g = gradient(vals, grid)
        mag = np.sqrt(np.sum(g * g, axis=0))
    else:
        raise ValueError(f"form must be 'chain' or 'direct', got {form!r}")
    return quadrature(mag * _exp_weight(grid, c, s, weight), grid)


def exp_moment_weighted(f: Distribution, lam: float, s: float, weight: str = "japanese") -> float:
    """``int f exp(lam w(v))`` with the same weight choice as :func:`grad_exp_tail`."""
    vals, grid = _vals(f)
    return quadrature(vals * _exp_weight(grid, lam, s, weight), grid)


# ---------------------------------------------------------------------------
# diagnostics records


@dataclass(frozen=True)
class DiagnosticsConfig:
    """Extra functionals recorded after the fixed columns, in this order."""

    entropy_k: tuple[float, ...] = ()
    fisher_k: tuple[float, ...] = ()
    moments: tuple[tuple[float, str], ...] = ()
    exp_moments: tuple[tuple[float, float], ...] = ()
    lp_norms: tuple[tuple[float, float], ...] = ()
    sobolev_norms: tuple[tuple[float, float], ...] = ()

    def columns(self) -> list[str]:
        cols = [f"entropy_k{_fmt(k)}" for k in self.entropy_k]
        cols += [f"fisher_k{_fmt(k)}" for k in self.fisher_k]
        cols += [f"moment_{'abs' if w == 'absolute' else 'jap'}_k{_fmt(k)}" for k, w in self.moments]
        cols += [f"expmoment_l{_fmt(lam)}_s{_fmt(s)}" for lam, s in self.exp_moments]
        cols += [f"lp_p{_fmt(p)}_q{_fmt(q)}" for p, q in self.lp_norms]
        cols += [f"sobolev_s{_fmt(s)}_eta{_fmt(e)}" for s, e in self.sobolev_norms]
        return cols

    def to_dict(self) -> dict:
        return {
            "entropy_k": list(self.entropy_k),
            "fisher_k": list(self.fisher_k),
            "moments": [list(m) for m in self.moments],
            "exp_moments": [list(m) for m in self.exp_moments],
            "lp_norms": [list(m) for m in self.lp_norms],
            "sobolev_norms": [list(m) for m in self.sobolev_norms],
        }

    @classmethod
    def from_dict(cls, data: dict) -> DiagnosticsConfig:
        unknown = set(data) - {"entropy_k", "fisher_k", "moments", "exp_moments", "lp_norms", "sobolev_norms"}
        if unknown:
            raise ValueError(f"unknown diagnostics keys: {sorted(unknown)}")
        return cls(
            entropy_k=tuple(float(k) for k in data.get("entropy_k", ())),
            fisher_k=tuple(float(k) for k in data.get("fisher_k", ())),
            moments=tuple((float(k), str(w)) for k, w in data.get("moments", ())),
            exp_moments=tuple((float(a), float(b)) for a, b in data.get("exp_moments", ())),
            lp_norms=tuple((float(a), float(b)) for a, b in data.get("lp_norms", ())),
            sobolev_norms=tuple((float(a), float(b)) for a, b in data.get("sobolev_norms", ())),
        )


def _fmt(x: float) -> str:
    return repr(float(x)).replace(".0", "") if float(x).is_integer() else repr(float(x))


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    momentum: tuple[float, ...]
    energy: float
    entropy: float
    fisher: float
    extras: dict[str, float] = field(default_factory=dict)

    @staticmethod
    def header(config: DiagnosticsConfig | None = None, d: int = 3) -> list[str]:
        mom = ["px", "py", "pz"][:d]
        return ["t", "mass", *mom, "energy", "entropy", "fisher", *(config.columns() if config else [])]

    def row(self) -> list[float]:
        return [self.t, self.mass, *self.momentum, self.energy, self.entropy, self.fisher, *self.extras.values()]

    def csv_row(self) -> str:
        return ",".join(repr(float(x)) for x in self.row())

    def is_finite(self) -> bool:
        return all(math.isfinite(x) for x in self.row())


def diagnostics(f: Distribution, t: float, config: DiagnosticsConfig | None = None) -> DiagnosticsRecord:
    config = config or DiagnosticsConfig()
    mass, mom, energy = conserved(f)
    extras: dict[str, float] = {}
    cols = iter(config.columns())
    for k in config.entropy_k:
        extras[next(cols)] = entropy(f, k)[0]
    for k in config.fisher_k:
        extras[next(cols)] = fisher(f, k)
    for k, w in config.moments:
        extras[next(cols)] = moment(f, k, w)
    for lam, s in config.exp_moments:
        extras[next(cols)] = exp_moment(f, lam, s)
    for p, q in config.lp_norms:
        extras[next(cols)] = lebesgue_norm(f, p, q)
    for s, eta in config.sobolev_norms:
        extras[next(cols)] = sobolev_norm(f, s, eta)
    return DiagnosticsRecord(
        t=float(t),
        mass=mass,
        momentum=tuple(float(x) for x in mom),
        energy=energy,
        entropy=entropy(f, 0.0)[0],
        fisher=fisher(f, 0.0),
        extras=extras,
    )


__all__ = [
    "OverflowGuardError",
    "conserved",
    "moment",
    "entropy",
    "fisher",
    "sqrt_gradient",
    "exp_moment",
    "exp_moment_weighted",
    "lebesgue_norm",
    "sobolev_norm",
    "grad_exp_tail",
    "DiagnosticsConfig",
    "DiagnosticsRecord",
    "diagnostics",
    "Field",
]
