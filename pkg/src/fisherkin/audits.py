"""Both sides of the analytic estimates, evaluated on states and trajectories.

Constants the estimates only assert to exist are fitted and reported; verdicts
test positivity, boundedness or stability of those fits.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate

from . import boltzmann as bz
from . import landau as la
from .functionals import (
    conserved,
    entropy,
    exp_moment,
    exp_moment_weighted,
    fisher,
    grad_exp_tail,
    lebesgue_norm,
    moment,
    sobolev_norm,
)
from .grid import Distribution, Field, floored, gradient, laplacian, quadrature

SCHEMA_VERSION = 1
MIN_INTERIOR_RECORDS = 20

PASS, FAIL, INFO = "pass", "fail", "informational"


@dataclass
class AuditReport:
    name: str
    lhs: float
    rhs: float
    fitted_constants: dict = field(default_factory=dict)
    margin: float = 0.0
    verdict: str = INFO
    tolerance: float = 0.0
    context: dict = field(default_factory=dict)

    @classmethod
    def judge(cls, name, lhs, rhs, tolerance=0.0, fitted=None, context=None, informational=False, margin=None):
        margin = rhs - lhs if margin is None else margin
        if informational:
            verdict = INFO
        else:
            verdict = PASS if margin >= -tolerance else FAIL
        return cls(name, float(lhs), float(rhs), dict(fitted or {}), float(margin), verdict, float(tolerance),
                   dict(context or {}))

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    def to_json(self) -> str:
        data = {"schema": SCHEMA_VERSION, **asdict(self)}
        return json.dumps(data, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, Fraction):
        return float(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _sort_key(r: AuditReport):
    return r.name, r.context.get("t", r.context.get("t_end", 0.0))


def write_reports(path, reports: Iterable[AuditReport]) -> None:
    lines = [r.to_json() for r in sorted(reports, key=_sort_key)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_reports(path) -> list[AuditReport]:
    out = []
    for line in Path(path).read_text().splitlines():
        data = json.loads(line)
        data.pop("schema", None)
        out.append(AuditReport(**data))
    return out


def _states(trajectory) -> list[tuple[float, Distribution]]:
    states = getattr(trajectory, "states", trajectory)
    states = list(states)
    times = [t for t, _ in states]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("trajectory times must be strictly increasing")
    return states


def _central_differences(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order derivative at interior points of a possibly nonuniform series."""
    hl = t[1:-1] - t[:-2]
    hr = t[2:] - t[1:-1]
    return (hl**2 * y[2:] - hr**2 * y[:-2] + (hr**2 - hl**2) * y[1:-1]) / (hl * hr * (hl + hr))


def _plan_for(f: Distribution, kernel: bz.KernelSpec, options: bz.OperatorOptions | None):
    if options is not None and options.fast:
        try:
            bz.get_plan(f.grid, kernel)
        except bz.MissingPrecomputationError:
            bz.prepare_fast(f.grid, kernel)


# ---------------------------------------------------------------------------
# state audits


def audit_loss_lower_bound(f: Distribution, kernel: bz.KernelSpec) -> AuditReport:
    """Fit ``kappa0 = min R(f) / <v>^gamma``; positive means coercive."""
    mass, mom, energy = conserved(f)
    grid = f.grid
    r = bz.loss_intensity(f, kernel)
    kappa = float(np.min(r / grid.bracket(kernel.gamma)))
    ctx = {"mass": mass, "energy_bracket": moment(f, 2.0), "momentum": [float(x) for x in mom]}
    centred = np.max(np.abs(mom)) <= 1e-6 * mass
    if not centred:
        ctx["note"] = "momentum hypothesis violated; coercivity not asserted"
    return AuditReport.judge("loss_lower_bound", 0.0, kappa, 0.0, {"kappa0": kappa}, ctx,
                             informational=not centred, margin=kappa if centred else None)


def audit_laplacian_loss(f: Distribution, kernel: bz.KernelSpec) -> AuditReport:
    """Interior ``0 <= lap_h R(f)`` and a fitted bound on ``max lap_h R(f)``."""
    grid = f.grid
    r = bz.loss_intensity(f, kernel)
    lap = laplacian(r, grid)[(slice(1, -1),) * grid.d]
    s = max(0.0, (4.0 - grid.d) / 2.0)
    bracket = lebesgue_norm(f, 1.0) + sobolev_norm(f, s)
    peak = float(np.max(np.abs(lap)))
    tol = grid.h**2 * peak
    low = float(np.min(lap))
    fitted = {"C_laplacian": float(np.max(lap)) / bracket if bracket > 0 else 0.0}
    ctx = {"max_lap": float(np.max(lap)), "bracket": bracket, "sobolev_order": s}
    return AuditReport.judge("laplacian_loss", 0.0, low, tol, fitted, ctx, margin=low)


def audit_interpolation(f: Distribution, s: float, tau: float) -> AuditReport:
    """``||f||_{L^1_s} <= C_tau ||f||_{L^2_{s+tau}}`` with ``C_tau = ||<.>^-tau||_{L^2}``."""
    d = f.grid.d
    if 2 * tau <= d:
        raise ValueError(f"need 2 tau > d for a finite constant, got tau={tau}, d={d}")
    area = bz.sphere_area(d)
    val, _ = integrate.quad(lambda r: r ** (d - 1) * (1 + r * r) ** (-tau), 0, np.inf)
    c_tau = math.sqrt(area * val)
    lhs = lebesgue_norm(f, 1.0, s)
    rhs = c_tau * lebesgue_norm(f, 2.0, s + tau)
    return AuditReport.judge("interpolation", lhs, rhs, 1e-6 * rhs, {"C_tau": c_tau}, {"s": s, "tau": tau})


def audit_qplus_regularity(pairs: Sequence[tuple[Distribution, Distribution]], kernel: bz.KernelSpec,
                           s: float = 1.0, eta: float = 0.0, method: str = "fast") -> AuditReport:
    """Uniformity over ``pairs`` of the gain-term smoothing ratio."""
    ratios = []
    skipped = 0
    for f, g in pairs:
        if f.is_zero or g.is_zero:
            skipped += 1
            continue
        if method == "fast":
            _plan_for(f, kernel, bz.OperatorOptions(fast=True))
            q = bz.qplus_fast(g, f, kernel)
        else:
            q = bz.qplus_direct(g, f, kernel)
        d = f.grid.d
        lhs = sobolev_norm(Field(f.grid, q), s + (d - 1) / 2.0, eta)
        w = eta + 1.0 + kernel.gamma
        bracket = sobolev_norm(g, s, w) * sobolev_norm(f, s, w) + (
            lebesgue_norm(g, 1.0, eta + kernel.gamma) * lebesgue_norm(f, 1.0, eta + kernel.gamma)
        )
        ratios.append(lhs / bracket)
    ctx = {"pairs": len(ratios), "skipped": skipped, "s": s, "eta": eta}
    if not ratios:
        return AuditReport.judge("qplus_regularity", 0.0, 0.0, 0.0, {}, ctx, informational=True)
    rmax, rmed = float(np.max(ratios)), float(np.median(ratios))
    ctx["ratios"] = [float(x) for x in ratios]
    return AuditReport.judge("qplus_regularity", rmax, 3.0 * rmed, 0.0, {"C_d": rmax}, ctx)


def llogl_constant(k: float, eps: float, d: int = 3) -> float:
    """``(2/e) int exp(-<v>^eps / 2) <v>^k dv`` over the whole space."""
    area = bz.sphere_area(d)
    # substitute x = <v>^eps / 2 so the integrand is a tempered gamma density
    p = 1.0 / eps

    def integrand(x):
        u = (2.0 * x) ** p
        return math.exp(-x) * u ** (k + 1) * (u * u - 1.0) ** (0.5 * (d - 2)) * p * u / x

    peak = max(1.0, (k + d) / eps)
    top = peak + 60.0 * math.sqrt(peak) + 60.0
    val, _ = integrate.quad(integrand, 0.5, top, points=[peak], limit=500)
    return 2.0 / math.e * area * val


def audit_llogl(f: Distribution, k: float, eps: float, delta: float) -> AuditReport:
    """The plain and the Fisher-controlled ``L log L`` bounds with explicit constants."""
    grid = f.grid
    vals = f.values
    signed, absolute = entropy(f, k)
    mk = moment(f, k)
    mke = moment(f, k + eps)
    ck = llogl_constant(k, eps, grid.d)
    rhs_plain = signed + 2.0 * mke + ck

    weighted = 0.25 * fisher(f, k)
    g = grid.bracket(0.5 * k) * np.sqrt(floored(vals))
    dg = gradient(g, grid)
    dirichlet = quadrature(np.sum(dg * dg, axis=0), grid)
    c_split = dirichlet / (weighted + mk) if weighted + mk > 0 else 0.0
    c_split_explicit = max(2.0, 0.5 * k * k)
    log_mk = math.log(mk) if mk > 0 else 0.0
    d = grid.d
    rhs_fisher = (
        delta / math.pi * c_split * (weighted + mk)
        + mk * log_mk
        - d * (1.0 + 0.5 * math.log(delta)) * mk
        + 2.0 * mke
        + ck
    )
    margin = min(rhs_plain - absolute, rhs_fisher - absolute)
    tol = 1e-6 * max(abs(rhs_plain), abs(rhs_fisher))
    k_delta = (delta / math.pi * c_split * mk + mk * log_mk - d * (1 + 0.5 * math.log(delta)) * mk) / (
        (1 + abs(log_mk)) * mk
    ) if mk > 0 else 0.0
    fitted = {"C_k_eps": ck, "C_split": c_split, "C_split_explicit": c_split_explicit, "K_k_delta": k_delta}
    ctx = {"k": k, "eps": eps, "delta": delta, "rhs_plain": rhs_plain, "rhs_fisher": rhs_fisher,
           "margin_plain": rhs_plain - absolute, "margin_fisher": rhs_fisher - absolute}
    return AuditReport.judge("llogl", absolute, min(rhs_plain, rhs_fisher), tol, fitted, ctx, margin=margin)


# ---------------------------------------------------------------------------
# trajectory audits


def audit_log_lower_bound(trajectory, eps: float) -> AuditReport:
    """Fit ``C(t)`` in ``|log f| <= C(t) (1 + log+(1/t)) <v>^(2+eps) + f`` per record."""
    fits, times, zero_note = [], [], False
    for t, f in _states(trajectory):
        if t <= 0:
            continue
        vals = f.values
        zero_note |= bool(np.any(vals == 0))
        excess = np.maximum(np.abs(np.log(floored(vals))) - vals, 0.0)
        raw = float(np.max(excess / f.grid.bracket(2.0 + eps)))
        fits.append(raw / (1.0 + max(0.0, math.log(1.0 / t))))
        times.append(t)
    ctx = {"eps": eps, "t_range": [times[0], times[-1]] if times else []}
    if zero_note:
        ctx["note"] = "zero values evaluated through the floor"
    if not fits:
        return AuditReport.judge("log_lower_bound", 0.0, 0.0, 0.0, {}, ctx, informational=True)
    sup, med = max(fits), float(np.median(fits))
    ctx["fits"] = fits
    return AuditReport.judge("log_lower_bound", sup / med, 10.0, 0.0, {"C_eps": sup}, ctx)


def audit_fisher_identity(trajectory, kernel: bz.KernelSpec, options: bz.OperatorOptions | None = None,
                          median_tol: float = 0.05, max_tol: float = 0.15) -> AuditReport:
    """Time-differenced Fisher information against the identity's right-hand side."""
    states = _states(trajectory)
    t = np.array([s[0] for s in states])
    info = np.array([fisher(f) for _, f in states])
    ctx = {"records": len(states), "t_range": [float(t[0]), float(t[-1])] if len(t) else []}
    if len(states) < 3:
        return AuditReport.judge("fisher_identity", 0.0, 0.0, 0.0, {}, ctx, informational=True)
    dI = _central_differences(t, info)
    gaps, lhs_over_scale, rhs_over_scale = [], [], []
    for (_, f), lhs in zip(states[1:-1], dI):
        _plan_for(f, kernel, options)
        rhs = bz.fisher_rhs(f, kernel, options)
        lhs_over_scale.append(float(lhs / rhs.scale))
        rhs_over_scale.append(float(rhs.total / rhs.scale))
        if max(abs(lhs), abs(rhs.total)) <= 1e-6 * rhs.scale:
            gaps.append(0.0)
        else:
            gaps.append(abs(lhs - rhs.total) / abs(rhs.total))
    med, mx = float(np.median(gaps)), float(np.max(gaps))
    ctx.update({"gaps": gaps, "median_tol": median_tol, "max_tol": max_tol,
                "lhs_over_scale": lhs_over_scale, "rhs_over_scale": rhs_over_scale})
    few = len(gaps) < MIN_INTERIOR_RECORDS
    if few:
        ctx["note"] = f"only {len(gaps)} interior records"
    margin = min(median_tol - med, max_tol - mx)
    return AuditReport.judge("fisher_identity", med, median_tol, 0.0, {"median_gap": med, "max_gap": mx}, ctx,
                             informational=few, margin=margin)


def _cumulative_trapezoid(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def audit_weighted_fisher_integral(trajectory, k: float, gamma: float) -> AuditReport:
    """Cumulative ``4 int_0^t int <v>^(k+gamma) |grad sqrt f|^2`` against ``C_k (1 + t)``."""
    states = _states(trajectory)
    t = np.array([s[0] for s in states])
    integrand = np.array([fisher(f, k + gamma) for _, f in states])
    cum = _cumulative_trapezoid(t, integrand)
    ratio = cum / (1.0 + t)
    t_end = t[-1]
    mid = float(np.interp(0.5 * t_end, t, ratio))
    sup = float(np.max(ratio))
    burn = t >= 0.1 * t_end
    tail = ratio[burn]
    monotone = bool(np.all(np.diff(tail) <= 1e-9 * max(sup, 1e-300)))
    bounded = sup <= 2.0 * mid
    ctx = {"k": k, "t_end": float(t_end), "nonincreasing_after_burn_in": monotone, "ratio_mid": mid,
           "records": len(states)}
    margin = max(2.0 * mid - sup, 0.0 if monotone else -math.inf)
    return AuditReport.judge("weighted_fisher_integral", sup, 2.0 * mid, 0.0, {"C_k": sup}, ctx, margin=margin)


def _fit_affine_envelope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Smallest ``A x_mean + C`` with ``y <= A x + C`` and ``A, C >= 0``."""
    cands = [(max(0.0, float(np.max(y / x))) if np.all(x > 0) else math.inf, 0.0), (0.0, max(0.0, float(np.max(y))))]
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            if x[i] != x[j]:
                a = (y[i] - y[j]) / (x[i] - x[j])
                cands.append((a, y[i] - a * x[i]))
    xm = float(np.mean(x))
    best = None
    for a, c in cands:
        if a < 0 or c < 0 or not math.isfinite(a):
            continue
        if np.all(y <= a * x + c + 1e-12 * (abs(a * x) + abs(c))):
            if best is None or a * xm + c < best[0] * xm + best[1]:
                best = (a, c)
    return best


def audit_energy_estimate(trajectory, gamma: float) -> AuditReport:
    """``d/dt ||g_i||^2 + a0 D_i <= A0 W + C1`` with ``(A0, C1)`` fitted on the first third."""
    states = _states(trajectory)
    ctx = {"records": len(states)}
    if len(states) < 6:
        return AuditReport.judge("energy_estimate", 0.0, 0.0, 0.0, {}, ctx, informational=True)
    t = np.array([s[0] for s in states])
    terms, a0 = [], math.inf
    for _, f in states:
        fields = la.landau_fields(f, gamma)
        a0 = min(a0, la.ellipticity_constant(fields))
        terms.append([la.sqrt_energy_terms(f, fields, i) for i in range(3)])
    interior = t[1:-1]
    n_fit = max(2, len(interior) // 3)
    worst, fits = math.inf, {}
    lhs_all, rhs_all = [], []
    for i in range(3):
        g2 = np.array([row[i].g_norm2 for row in terms])
        dirichlet = np.array([row[i].lhs_dirichlet for row in terms])[1:-1]
        w = np.array([row[i].rhs_weighted_fisher for row in terms])[1:-1]
        lhs = _central_differences(t, g2) + a0 * dirichlet
        A0, C1 = _fit_affine_envelope(w[:n_fit], lhs[:n_fit])
        fits[f"A0_axis{i}"], fits[f"C1_axis{i}"] = A0, C1
        rhs = A0 * w + C1
        rest = slice(n_fit, None)
        rel = (rhs[rest] - lhs[rest]) + 0.05 * np.abs(rhs[rest])
        worst = min(worst, float(np.min(rel)) if rel.size else math.inf)
        lhs_all.append(float(np.max(lhs[rest])) if rel.size else 0.0)
        rhs_all.append(float(np.max(rhs[rest])) if rel.size else 0.0)
    fits["a0"] = a0
    ctx["fit_window"] = [float(interior[0]), float(interior[n_fit - 1])]
    few = len(interior) - n_fit < 1
    return AuditReport.judge("energy_estimate", max(lhs_all), max(rhs_all), 0.0, fits, ctx,
                             informational=few, margin=worst)


def emergence_exponent(gamma: float, s: float) -> float:
    return (4.0 + (2.0 - s) * gamma) / ((4.0 - s) * gamma)


def audit_exp_moments(trajectory, lam: float, s: float, gamma: float) -> AuditReport:
    """Propagation of ``int f exp(lam <v>^s)`` and emergence with weight ``min(1, t^beta)``."""
    states = _states(trajectory)
    t = np.array([st[0] for st in states])
    prop = np.array([exp_moment(f, lam, s) for _, f in states])
    beta = emergence_exponent(gamma, s)
    emerg = np.array([exp_moment(f, min(1.0, tt**beta), s) for tt, f in states])
    n_ref = max(1, int(math.ceil(0.1 * len(states))))
    ref = float(np.max(prop[:n_ref]))
    sup = float(np.max(prop))
    running = np.maximum.accumulate(emerg)
    mid = float(np.interp(0.5 * t[-1], t, running))
    stab = float(running[-1] / mid) if mid > 0 else math.inf
    finite = bool(np.all(np.isfinite(emerg)))
    fitted = {"beta": beta, "C_propagation": sup, "C_emergence": float(running[-1])}
    ctx = {"lambda": lam, "s": s, "reference": ref, "emergence_final_over_mid": stab,
           "t_range": [float(t[0]), float(t[-1])]}
    margin = (1.1 * ref - sup) if finite else -math.inf
    return AuditReport.judge("exp_moments", sup, 1.1 * ref, 0.0, fitted, ctx, margin=margin)


def audit_gradient_tail(trajectory, c: float, gamma: float, t_from: float = 0.5) -> AuditReport:
    """``int |grad f| e^{(c/2)<v>^gamma} <= I(f)^(1/2) (int f e^{c<v>^gamma})^(1/2)`` per record."""
    states = _states(trajectory)
    margins, direct, lhs_window = [], [], []
    for t, f in states:
        lhs = grad_exp_tail(f, 0.5 * c, gamma)
        rhs = math.sqrt(fisher(f) * exp_moment_weighted(f, c, gamma))
        # rounding allowance only; the chain-form bound is exact in exact arithmetic
        margins.append(rhs * (1.0 + 1e-12) - lhs)
        direct.append((rhs - grad_exp_tail(f, 0.5 * c, gamma, form="direct")) / rhs)
        if t >= t_from:
            lhs_window.append(lhs)
    ctx = {"c": c, "t_from": t_from, "min_margin": min(margins), "min_relative_margin_direct_stencil": min(direct)}
    if not lhs_window:
        return AuditReport.judge("gradient_tail", 0.0, 0.0, 0.0, {}, ctx, informational=True)
    sup, med = max(lhs_window), float(np.median(lhs_window))
    margin = min(min(margins), 10.0 * med - sup)
    return AuditReport.judge("gradient_tail", sup, 10.0 * med, 0.0, {"C_tail": sup}, ctx, margin=margin)


# ---------------------------------------------------------------------------
# exponents


def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def required_exponents(gamma, d: int, eps, s_exp=None) -> dict[str, Fraction]:
    """Weight and regularity thresholds as exact rationals.

    ``nu_min`` is a strict lower bound; ``mu_min`` and ``eta_min`` are the
    matching non-strict thresholds at ``nu = nu_min``.  ``s_exp`` is the tail
    exponent used for ``beta`` and defaults to ``gamma``.
    """
    g, e = _exact(gamma), _exact(eps)
    if not 0 < g <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    if not e > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    se = g if s_exp is None else _exact(s_exp)
    if not 0 < se < 2:
        raise ValueError(f"tail exponent must lie in (0, 2), got {s_exp}")
    nu = 3 + g + Fraction(d, 2)
    mu = nu + 1 + g / 2
    return {
        "s": max(Fraction(0), Fraction(5 - d, 2)),
        "eta1": (6 + 2 * g + d + 3 * e) / 2,
        "eta2": (4 + 2 * g + d + 3 * e) / 2,
        "nu_min": nu,
        "mu_min": mu,
        "eta_min": mu + d,
        "beta": (4 + (2 - se) * g) / ((4 - se) * g),
    }


AUDIT_NAMES = (
    "loss_lower_bound",
    "laplacian_loss",
    "log_lower_bound",
    "qplus_regularity",
    "interpolation",
    "fisher_identity",
    "llogl",
    "weighted_fisher_integral",
    "energy_estimate",
    "exp_moments",
    "gradient_tail",
)
