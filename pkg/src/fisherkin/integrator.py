"""Time stepping, scenarios, trajectories and the binary snapshot format."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import boltzmann as bz
from . import landau as la
from .functionals import DiagnosticsConfig, DiagnosticsRecord, conserved, diagnostics
from .grid import Distribution, VelocityGrid, floor_value, make_grid, maxwellian, quadrature

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario."""


class NumericalAbort(RuntimeError):
    """The state became non-finite or a step was refused."""

    def __init__(self, message: str, last_good: str | None = None, trajectory=None):
        super().__init__(message)
        self.last_good = last_good
        self.trajectory = trajectory


class StepTooLargeError(NumericalAbort):
    pass


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    """Flat description of one run; see ``Scenario.from_dict``."""

    equation: str = "landau"
    gamma: float = 1.0
    b_l1: float = 1.0
    b_table: list = field(default_factory=list)
    validation: bool = False
    n: int = 32
    lmax: float = 8.0
    initial: str = "maxwellian"
    rho: float = 1.0
    u: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    T: float = 1.0
    centers: list = field(default_factory=lambda: [[1.2, 0.0, 0.0], [-1.2, 0.0, 0.0]])
    temperatures: list = field(default_factory=lambda: [0.8, 0.8])
    weights: list = field(default_factory=lambda: [0.5, 0.5])
    poly: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    snapshot: str = ""
    dt: float | str = "auto"
    t_end: float = 1.0
    diag_every: int = 1
    snapshot_every: int = 0
    conserve: bool = False
    fast_path: bool = False
    floor: bool = False
    audits: list = field(default_factory=list)
    sigma_theta: int = 8
    sigma_phi: int = 16
    interp: str = "cubic"
    fast_polar: int = 6
    fast_azimuth: int = 12
    fast_rank: int = 16
    landau_scheme: str = "rkl2"
    energy_tol: float = 1e-4
    dt_max: float = 0.1
    dt_initial: float = 1e-4
    diagnostics: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.equation not in ("boltzmann", "landau"):
            raise ScenarioError(f"equation must be 'boltzmann' or 'landau', got {self.equation!r}")
        if not (isinstance(self.t_end, (int, float)) and self.t_end > 0):
            raise ScenarioError("t_end must be positive")
        if not (self.dt == "auto" or (isinstance(self.dt, (int, float)) and self.dt > 0)):
            raise ScenarioError("dt must be 'auto' or a positive number")
        if int(self.diag_every) != self.diag_every or self.diag_every < 1:
            raise ScenarioError("diag_every must be a positive integer")
        if int(self.snapshot_every) != self.snapshot_every or self.snapshot_every < 0:
            raise ScenarioError("snapshot_every must be a nonnegative integer")
        if self.initial not in ("maxwellian", "bimodal", "squashed", "snapshot"):
            raise ScenarioError(f"unknown initial kind {self.initial!r}")
        if self.initial == "snapshot" and not self.snapshot:
            raise ScenarioError("initial 'snapshot' needs a snapshot path")
        if self.interp not in ("cubic", "linear"):
            raise ScenarioError("interp must be 'cubic' or 'linear'")
        if self.landau_scheme not in ("rkl2", "rk2"):
            raise ScenarioError("landau_scheme must be 'rkl2' or 'rk2'")
        if len(self.centers) != len(self.temperatures) or len(self.centers) != len(self.weights):
            raise ScenarioError("bimodal centers, temperatures and weights must have equal length")
        try:
            make_grid(3, self.n, self.lmax)
            self.kernel()
            DiagnosticsConfig.from_dict(self.diagnostics)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a key/value object")
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> Scenario:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"malformed scenario JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path) -> Scenario:
        return cls.from_json(Path(path).read_text())

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def grid(self) -> VelocityGrid:
        return make_grid(3, self.n, self.lmax)

    def kernel(self) -> bz.KernelSpec:
        if self.b_table:
            vals = np.asarray(self.b_table, dtype=float)
            x, _ = np.polynomial.legendre.leggauss(vals.size)
            return bz.KernelSpec(self.gamma, 3, None, tuple(x), tuple(vals), self.validation)
        return bz.KernelSpec.constant(self.gamma, self.b_l1, 3, self.validation)

    def diagnostics_config(self) -> DiagnosticsConfig:
        return DiagnosticsConfig.from_dict(self.diagnostics)

    def operator_options(self) -> bz.OperatorOptions:
        return bz.OperatorOptions(self.fast_path, bz.SigmaQuadrature(self.sigma_theta, self.sigma_phi), self.interp)


def initial_distribution(scenario: Scenario) -> Distribution:
    grid = scenario.grid()
    kind = scenario.initial
    if kind == "maxwellian":
        vals = maxwellian(grid, scenario.rho, scenario.u, scenario.T)
    elif kind == "bimodal":
        vals = sum(
            w * maxwellian(grid, 1.0, c, T) for c, T, w in zip(scenario.centers, scenario.temperatures, scenario.weights)
        )
    elif kind == "squashed":
        r2 = grid.speed_squared
        poly = sum(c * r2**p for p, c in enumerate(scenario.poly))
        if np.any(poly < 0):
            raise ScenarioError("squashed polynomial must be nonnegative on the grid")
        vals = maxwellian(grid, 1.0, scenario.u, scenario.T) * poly
        vals *= scenario.rho / quadrature(vals, grid)
    else:
        f, _, _ = read_snapshot(scenario.snapshot)
        if f.grid != grid:
            raise ScenarioError("snapshot grid does not match scenario grid")
        return f
    f = Distribution(grid, vals, label=f"{kind} initial data")
    if "loss_lower_bound" in scenario.audits and scenario.equation == "boltzmann":
        mass, mom, _ = conserved(f)
        if np.max(np.abs(mom)) > 1e-6 * mass:
            raise ScenarioError("the loss lower-bound audit needs zero total momentum")
    return f


# ---------------------------------------------------------------------------
# stability and one-step updates


def stable_dt(f: Distribution, equation: str, kernel: bz.KernelSpec) -> float:
    """Explicit step limit: ``0.5 / max R(f)`` or ``0.25 h^2 / max eig a``."""
    if f.is_zero:
        raise ValueError("stable step undefined for the zero distribution")
    if equation == "boltzmann":
        return 0.5 / float(np.max(bz.loss_intensity(f, kernel)))
    if equation == "landau":
        fields_ = la.landau_fields(f, kernel.gamma)
        return 0.25 * f.grid.h**2 / la.max_eigenvalue(fields_)
    raise ValueError(f"unknown equation {equation!r}")


def rkl2_stages(dt: float, rho: float) -> int:
    """Fewest second-order Legendre stages stable for ``dt`` at spectral radius ``rho``."""
    s = 2
    while dt > (2.0 / rho) * (s * s + s - 2) / 4.0:
        s += 1
    return s


def rkl2(y0: np.ndarray, dt: float, op: Callable[[np.ndarray], np.ndarray], stages: int) -> np.ndarray:
    """Second-order Runge-Kutta-Legendre super-step for ``y' = op(y)``."""
    s = stages
    w1 = 4.0 / (s * s + s - 2)
    b = np.array([1.0 / 3.0 if j < 2 else (j * j + j - 2) / (2.0 * j * (j + 1)) for j in range(s + 1)])
    a = 1.0 - b
    l0 = op(y0)
    prev, cur = y0, y0 + b[1] * w1 * dt * l0
    for j in range(2, s + 1):
        mu = (2 * j - 1) / j * b[j] / b[j - 1]
        nu = -(j - 1) / j * b[j] / b[j - 2]
        mt = mu * w1
        gt = -a[j - 1] * mt
        nxt = mu * cur + nu * prev + (1.0 - mu - nu) * y0 + mt * dt * op(cur) + gt * dt * l0
        prev, cur = cur, nxt
    return cur


def spectral_radius(op: Callable[[np.ndarray], np.ndarray], shape, iterations: int = 20) -> float:
    """Power-iteration estimate of the largest ``|eigenvalue|`` of ``op``."""
    vec = np.random.default_rng(0).standard_normal(shape)
    est = 0.0
    for _ in range(iterations):
        img = op(vec)
        norm = np.linalg.norm(img)
        if norm == 0:
            return 0.0
        est = norm / np.linalg.norm(vec)
        vec = img / norm
    return est


def _restore_moments(new: np.ndarray, target: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    basis = np.stack([np.ones(grid.shape), *grid.mesh, grid.speed_squared]).reshape(5, -1)
    w = grid.cell_volume
    nv = new.ravel()
    gram = (basis * nv) @ basis.T * w
    rhs = (basis @ target.ravel() - basis @ nv) * w
    lam = np.linalg.solve(gram, rhs)
    return (nv * (1.0 + lam @ basis)).reshape(grid.shape)


@dataclass
class StepLog:
    steps: int = 0
    rejected: int = 0
    clipped_mass: float = 0.0
    floor_mass: float = 0.0
    stages: int = 0


class Stepper:
    """Advances one equation; owns caches and the clipped-mass log."""

    SAFETY = 1.3

    def __init__(self, equation: str, kernel: bz.KernelSpec, grid: VelocityGrid, *, conserve: bool = False,
                 options: bz.OperatorOptions | None = None, floor: bool = False, landau_scheme: str = "rkl2",
                 energy_tol: float = 1e-4, dt_max: float = 0.1, dt_initial: float = 1e-4,
                 fast_polar: int = 6, fast_azimuth: int = 12, fast_rank: int = 16):
        if equation not in ("boltzmann", "landau"):
            raise ValueError(f"unknown equation {equation!r}")
        self.equation = equation
        self.kernel = kernel
        self.grid = grid
        self.conserve = conserve
        self.options = options or bz.OperatorOptions()
        self.floor = floor
        self.landau_scheme = landau_scheme
        self.energy_tol = energy_tol
        self.dt_max = dt_max
        self.dt_next = dt_initial
        self.log = StepLog()
        self._energy0: float | None = None
        if equation == "boltzmann" and self.options.fast:
            try:
                bz.get_plan(grid, kernel)
            except bz.MissingPrecomputationError:
                bz.prepare_fast(grid, kernel, fast_polar, fast_azimuth, fast_rank)

    @classmethod
    def from_scenario(cls, sc: Scenario) -> Stepper:
        return cls(sc.equation, sc.kernel(), sc.grid(), conserve=sc.conserve, options=sc.operator_options(),
                   floor=sc.floor, landau_scheme=sc.landau_scheme, energy_tol=sc.energy_tol, dt_max=sc.dt_max,
                   dt_initial=sc.dt_initial, fast_polar=sc.fast_polar, fast_azimuth=sc.fast_azimuth,
                   fast_rank=sc.fast_rank)

    # -- helpers

    def _clip(self, vals: np.ndarray, count: bool = True) -> np.ndarray:
        neg = vals < 0
        if np.any(neg):
            if count:
                self.log.clipped_mass += -quadrature(np.where(neg, vals, 0.0), self.grid)
            vals = np.where(neg, 0.0, vals)
        return vals

    def _finish(self, f: Distribution, vals: np.ndarray) -> Distribution:
        if not np.all(np.isfinite(vals)):
            raise NumericalAbort("non-finite values after step")
        vals = self._clip(vals)
        if self.conserve:
            vals = self._clip(_restore_moments(vals, f.values, self.grid))
        if self.floor:
            fl = floor_value(vals)
            low = vals < fl
            self.log.floor_mass += quadrature(np.where(low, fl - vals, 0.0), self.grid)
            vals = np.where(low, fl, vals)
        self.log.steps += 1
        return f.with_values(vals)

    def boltzmann_rhs(self, vals: np.ndarray) -> np.ndarray:
        d = Distribution(self.grid, vals, allow_zero=True)
        return bz.collision(d, self.kernel, self.options, conserve=self.conserve)

    def stable_dt(self, f: Distribution) -> float:
        return stable_dt(f, self.equation, self.kernel)

    # -- steps

    def step(self, f: Distribution, dt: float) -> Distribution:
        """One step of size ``dt``; refuses steps above the stability limit."""
        if self.equation == "boltzmann":
            limit = self.stable_dt(f)
            if dt > limit * (1.0 + 1e-9):
                raise StepTooLargeError(f"dt too large: {dt:.4g} exceeds stable limit {limit:.4g}")
            k1 = self.boltzmann_rhs(f.values)
            mid = self._clip(f.values + 0.5 * dt * k1)
            k2 = self.boltzmann_rhs(mid)
            return self._finish(f, f.values + dt * k2)
        if self.landau_scheme == "rk2":
            limit = self.stable_dt(f)
            if dt > limit * (1.0 + 1e-9):
                raise StepTooLargeError(f"dt too large: {dt:.4g} exceeds stable limit {limit:.4g}")
            q1 = la.landau_fields(f, self.kernel.gamma).operator()(f.values)
            mid = self._clip(f.values + 0.5 * dt * q1)
            q2 = la.landau_fields(f.with_values(mid), self.kernel.gamma).operator()(mid)
            return self._finish(f, f.values + dt * q2)
        return self._finish(f, self._landau_superstep(f, dt))

    def _landau_superstep(self, f: Distribution, dt: float) -> np.ndarray:
        gamma = self.kernel.gamma
        op0 = la.landau_fields(f, gamma).operator()
        rho = self.SAFETY * spectral_radius(op0, f.values.shape)
        s_half = rkl2_stages(0.5 * dt, rho)
        half = self._clip(rkl2(f.values, 0.5 * dt, op0, s_half), count=False)
        op1 = la.landau_fields(f.with_values(half), gamma).operator()
        s_full = rkl2_stages(dt, rho)
        self.log.stages += s_half + s_full
        return rkl2(f.values, dt, op1, s_full)

    def adaptive_step(self, f: Distribution, t_left: float) -> tuple[Distribution, float]:
        """Landau step with the energy defect as local error estimate; returns ``(f, dt)``."""
        grid = self.grid
        e_now = quadrature(grid.speed_squared * f.values, grid)
        if self._energy0 is None:
            self._energy0 = e_now
        scale = max(self._energy0, 1e-300)
        dt = min(self.dt_next, self.dt_max, t_left)
        while True:
            new = self._landau_superstep(f, dt)
            if not np.all(np.isfinite(new)):
                err, fac = math.inf, 0.2
            else:
                err = abs(quadrature(grid.speed_squared * (new - f.values), grid)) / scale
                tol = 0.5 * self.energy_tol * dt
                fac = min(2.0, max(0.2, 0.9 * math.sqrt(tol / max(err, 1e-300))))
                if err <= tol:
                    break
            self.log.rejected += 1
            dt *= fac
            if dt < 1e-12:
                raise NumericalAbort("adaptive step size underflow")
        self.dt_next = dt * fac
        return self._finish(f, new), dt

    def advance(self, f: Distribution, dt_spec, t_left: float) -> tuple[Distribution, float]:
        """One step under the scenario's dt policy; returns ``(f, dt_taken)``."""
        if dt_spec == "auto":
            if self.equation == "landau" and self.landau_scheme == "rkl2":
                return self.adaptive_step(f, t_left)
            dt = min(self.stable_dt(f), t_left)
        else:
            dt = min(float(dt_spec), t_left)
        return self.step(f, dt), dt


def step(f: Distribution, dt: float, equation: str, kernel: bz.KernelSpec, **options) -> Distribution:
    """One explicit second-order step; see :class:`Stepper` for options."""
    return Stepper(equation, kernel, f.grid, **options).step(f, dt)


# ---------------------------------------------------------------------------
# snapshots

SNAPSHOT_MAGIC = b"FKSNAP\x00\x01"
SNAPSHOT_VERSION = 1
SNAPSHOT_PREFIX = 64


def write_snapshot(path, f: Distribution, t: float) -> str:
    """Write a snapshot; returns the SHA-256 of the file bytes."""
    header = {
        "d": f.grid.d,
        "n": f.grid.n,
        "lmax": f.grid.lmax,
        "t": float(t),
        "label": f.label,
        "byte_order": "LE",
        "element": "f64",
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    prefix = SNAPSHOT_MAGIC + struct.pack("<IQ", SNAPSHOT_VERSION, len(hbytes))
    prefix += b"\x00" * (SNAPSHOT_PREFIX - len(prefix))
    payload = prefix + hbytes + np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def read_snapshot(path) -> tuple[Distribution, float, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < SNAPSHOT_PREFIX or raw[:8] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    header = json.loads(raw[SNAPSHOT_PREFIX : SNAPSHOT_PREFIX + hlen])
    if header.get("byte_order") != "LE" or header.get("element") != "f64":
        raise ValueError(f"{path}: unsupported element encoding")
    grid = make_grid(header["d"], header["n"], header["lmax"])
    body = raw[SNAPSHOT_PREFIX + hlen :]
    if len(body) != 8 * grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {len(body) // 8}")
    vals = np.frombuffer(body, dtype="<f8").reshape(grid.shape).astype(np.float64)
    return Distribution(grid, vals, header.get("label", ""), allow_zero=True), header["t"], header


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    records: list[DiagnosticsRecord] = field(default_factory=list)
    states: list[tuple[float, Distribution]] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)
    steps: int = 0
    clipped_mass: float = 0.0
    status: str = "complete"
    message: str = ""
    scenario: Scenario | None = None

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([r.row()[idx] for r in self.records])

    def csv_text(self) -> str:
        lines = [",".join(self.columns)] + [r.csv_row() for r in self.records]
        return "\n".join(lines) + "\n"


class RunObserver:
    """Hooks called by :func:`run`; the CLI writer subclasses this."""

    def on_record(self, record: DiagnosticsRecord) -> None:
        pass

    def on_snapshot(self, step: int, t: float, f: Distribution) -> None:
        pass

    def on_abort(self, t: float, f: Distribution) -> str | None:
        return None


def run(scenario: Scenario, observer: RunObserver | None = None, keep_states: bool = True,
        initial: Distribution | None = None) -> Trajectory:
    """Advance the scenario to ``t_end`` recording diagnostics and snapshots."""
    observer = observer or RunObserver()
    config = scenario.diagnostics_config()
    f = initial if initial is not None else initial_distribution(scenario)
    stepper = Stepper.from_scenario(scenario)
    traj = Trajectory(columns=DiagnosticsRecord.header(config), scenario=scenario)

    def record(t, state):
        rec = diagnostics(state, t, config)
        if not rec.is_finite():
            raise NumericalAbort(f"non-finite diagnostics at t={t}")
        traj.records.append(rec)
        observer.on_record(rec)

    def snapshot(steps, t, state):
        if keep_states:
            traj.states.append((t, state))
        observer.on_snapshot(steps, t, state)

    t, steps = 0.0, 0
    record(t, f)
    if scenario.snapshot_every:
        snapshot(0, t, f)
    t_end = float(scenario.t_end)
    fixed = scenario.dt != "auto"
    try:
        while t_end - t > 1e-12 * t_end:
            f_new, dt = stepper.advance(f, scenario.dt, t_end - t)
            steps += 1
            t = min(steps * float(scenario.dt), t_end) if fixed else t + dt
            f = f_new
            if steps % scenario.diag_every == 0:
                record(t, f)
            if scenario.snapshot_every and steps % scenario.snapshot_every == 0:
                snapshot(steps, t, f)
    except NumericalAbort as exc:
        traj.status = "aborted"
        traj.message = str(exc)
        traj.steps = steps
        traj.clipped_mass = stepper.log.clipped_mass
        exc.last_good = observer.on_abort(t, f)
        exc.trajectory = traj
        raise
    traj.steps = steps
    traj.clipped_mass = stepper.log.clipped_mass
    log.info("run finished: %d steps, clipped mass %.3e", steps, traj.clipped_mass)
    return traj
