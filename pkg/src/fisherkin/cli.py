"""Command-line entry points: ``run``, ``audit``, ``exponents`` and ``info``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import __version__
from . import audits as au
from ._backend import backend
from .functionals import DiagnosticsRecord
from .grid import Distribution
from .integrator import NumericalAbort, RunObserver, Scenario, ScenarioError, read_snapshot, run, write_snapshot

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_AUDIT = 0, 1, 2, 3

log = logging.getLogger("fisherkin")

AUDIT_DEFAULTS = {
    "eps": 0.5,
    "k": 0.0,
    "lambda": 0.1,
    "s": 1.0,
    "c": 0.1,
    "tau": 2.0,
    "interp_s": 2.0,
    "delta": 1.0,
    "llogl_k": 2.0,
    "t_from": 0.5,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunWriter(RunObserver):
    """Streams diagnostics and snapshots into a staging directory."""

    def __init__(self, staging: Path, final: Path, columns: list[str]):
        self.staging = staging
        self.final = final
        (staging / "snapshots").mkdir()
        self.csv = open(staging / "diagnostics.csv", "w", newline="")
        self.csv.write(",".join(columns) + "\n")
        self.rows = 0

    def on_record(self, record: DiagnosticsRecord) -> None:
        self.csv.write(record.csv_row() + "\n")
        self.csv.flush()
        self.rows += 1

    def on_snapshot(self, step: int, t: float, f: Distribution) -> None:
        write_snapshot(self.staging / "snapshots" / f"snap_{step:08d}.fks", f, t)

    def on_abort(self, t: float, f: Distribution) -> str:
        write_snapshot(self.staging / "snapshots" / "lastgood.fks", f, t)
        return str(self.final / "snapshots" / "lastgood.fks")

    def close(self) -> None:
        self.csv.close()

    def hashes(self) -> dict[str, str]:
        files = sorted(p for p in self.staging.rglob("*") if p.is_file() and p.name != "manifest.json")
        return {str(p.relative_to(self.staging)): _sha256(p) for p in files}


def _publish(staging: Path, final: Path, force: bool) -> None:
    if final.exists():
        if not force:
            raise UsageError(f"{final} appeared during the run; refusing to overwrite")
        shutil.rmtree(final)
    os.replace(staging, final)


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be positive")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass
    os.environ["OMP_NUM_THREADS"] = str(n)


def _parse_params(items) -> dict[str, float]:
    params = dict(AUDIT_DEFAULTS)
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or key not in AUDIT_DEFAULTS:
            raise UsageError(f"bad audit parameter {item!r}; known keys: {sorted(AUDIT_DEFAULTS)}")
        try:
            params[key] = float(value)
        except ValueError as exc:
            raise UsageError(f"audit parameter {key} must be a number") from exc
    return params


def _parse_audit_names(text: str | None) -> list[str]:
    if not text:
        return []
    names = [n.strip() for n in text.split(",") if n.strip()]
    unknown = [n for n in names if n not in au.AUDIT_NAMES]
    if unknown:
        raise UsageError(f"unknown audit(s) {unknown}; known: {', '.join(au.AUDIT_NAMES)}")
    return names


def run_audits(names, states, scenario: Scenario, params: dict) -> list[au.AuditReport]:
    """Apply named audits to ``(t, Distribution)`` states of one scenario."""
    kernel = scenario.kernel()
    gamma = kernel.gamma
    options = scenario.operator_options()
    reports = []

    def per_state(fn):
        for t, f in states:
            rep = fn(f)
            rep.context["t"] = t
            reports.append(rep)

    for name in names:
        if name == "loss_lower_bound":
            per_state(lambda f: au.audit_loss_lower_bound(f, kernel))
        elif name == "laplacian_loss":
            per_state(lambda f: au.audit_laplacian_loss(f, kernel))
        elif name == "interpolation":
            per_state(lambda f: au.audit_interpolation(f, params["interp_s"], params["tau"]))
        elif name == "llogl":
            per_state(lambda f: au.audit_llogl(f, params["llogl_k"], params["eps"], params["delta"]))
        elif name == "qplus_regularity":
            method = "fast" if kernel.is_constant else "direct"
            reports.append(au.audit_qplus_regularity([(f, f) for _, f in states], kernel, method=method))
        elif name == "log_lower_bound":
            reports.append(au.audit_log_lower_bound(states, params["eps"]))
        elif name == "fisher_identity":
            reports.append(au.audit_fisher_identity(states, kernel, options))
        elif name == "weighted_fisher_integral":
            reports.append(au.audit_weighted_fisher_integral(states, params["k"], gamma))
        elif name == "energy_estimate":
            reports.append(au.audit_energy_estimate(states, gamma))
        elif name == "exp_moments":
            reports.append(au.audit_exp_moments(states, params["lambda"], params["s"], gamma))
        elif name == "gradient_tail":
            reports.append(au.audit_gradient_tail(states, params["c"], gamma, params["t_from"]))
    for rep in reports:
        rep.context.setdefault("scenario", scenario.digest())
    return reports


GNUPLOT_HINTS = """\
# gnuplot -persist < hints.gp
set datafile separator ','
set key autotitle columnhead
set multiplot layout 2,2
set title 'mass'; plot '{csv}' using 1:2 with lines
set title 'energy'; plot '{csv}' using 1:'energy' with lines
set title 'entropy'; plot '{csv}' using 1:'entropy' with lines
set title 'Fisher information'; plot '{csv}' using 1:'fisher' with lines
unset multiplot
"""


def cmd_run(args) -> int:
    try:
        scenario = Scenario.from_file(args.scenario)
    except OSError as exc:
        raise UsageError(f"cannot read scenario: {exc}") from exc
    overrides = {}
    if args.conserve:
        overrides["conserve"] = True
    if args.fast:
        overrides["fast_path"] = True
    if args.diag_every is not None:
        overrides["diag_every"] = args.diag_every
    if args.snapshot_every is not None:
        overrides["snapshot_every"] = args.snapshot_every
    names = _parse_audit_names(args.audit)
    if names:
        overrides["audits"] = sorted(set(scenario.audits) | set(names))
        # audits read snapshot states, so keep one per record unless told otherwise
        if not overrides.get("snapshot_every", scenario.snapshot_every):
            overrides["snapshot_every"] = overrides.get("diag_every", scenario.diag_every)
    if overrides:
        scenario = Scenario.from_dict({**scenario.to_dict(), **overrides})
    params = _parse_params(args.param)
    _set_threads(args.threads)

    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    writer = RunWriter(staging, out, DiagnosticsRecord.header(scenario.diagnostics_config()))
    status, code, traj, message = "complete", EXIT_OK, None, ""
    try:
        traj = run(scenario, writer, keep_states=bool(names))
    except NumericalAbort as exc:
        status, code, traj, message = "aborted", EXIT_ABORT, exc.trajectory, str(exc)
        print(f"numerical abort: {exc}; last good state in {exc.last_good}", file=sys.stderr)
    except ScenarioError:
        writer.close()
        shutil.rmtree(staging)
        raise
    finally:
        writer.close()

    failed = False
    if names and traj is not None and traj.states:
        reports = run_audits(names, traj.states, scenario, params)
        au.write_reports(staging / "audits.jsonl", reports)
        failed = any(not r.passed for r in reports)

    manifest = {
        "version": __version__,
        "backend": backend(),
        "status": status,
        "message": message,
        "scenario": scenario.to_dict(),
        "scenario_digest": scenario.digest(),
        "steps": traj.steps if traj else 0,
        "records": writer.rows,
        "t_final": traj.records[-1].t if traj and traj.records else 0.0,
        "clipped_mass": traj.clipped_mass if traj else 0.0,
        "files": writer.hashes(),
    }
    (staging / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _publish(staging, out, args.force)
    if args.gnuplot_hints:
        print(GNUPLOT_HINTS.format(csv=out / "diagnostics.csv"))
    if code == EXIT_OK and failed:
        code = EXIT_AUDIT
    return code


def load_run(directory) -> tuple[Scenario, list[tuple[float, Distribution]]]:
    """Scenario and snapshot states of a finished run directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise UsageError(f"{directory} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    scenario = Scenario.from_dict(manifest["scenario"])
    states = []
    for path in sorted((directory / "snapshots").glob("snap_*.fks")):
        expected = manifest["files"].get(str(path.relative_to(directory)))
        if expected is not None and expected != _sha256(path):
            raise UsageError(f"{path} does not match its manifest hash")
        f, t, _ = read_snapshot(path)
        states.append((t, f))
    states.sort(key=lambda s: s[0])
    return scenario, states


def cmd_audit(args) -> int:
    names = _parse_audit_names(args.audit)
    if not names:
        raise UsageError("--audit needs at least one audit name")
    params = _parse_params(args.param)
    scenario, states = load_run(args.dir)
    if not states:
        raise UsageError(f"{args.dir} has no snapshots to audit")
    reports = run_audits(names, states, scenario, params)
    au.write_reports(Path(args.dir) / "audits.jsonl", reports)
    for r in reports:
        print(f"{r.name:26s} {r.verdict:13s} margin={r.margin:.4g}")
    return EXIT_AUDIT if any(not r.passed for r in reports) else EXIT_OK


def cmd_exponents(args) -> int:
    try:
        ex = au.required_exponents(args.gamma, args.d, args.eps, args.s_exp)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = {k: float(v) for k, v in ex.items()}
    out["exact"] = {k: str(v) for k, v in ex.items()}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_info(args) -> int:
    try:
        f, t, header = read_snapshot(args.snapshot)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    from .functionals import conserved, fisher

    mass, mom, energy = conserved(f)
    info = {**header, "mass": mass, "momentum": mom.tolist(), "energy": energy}
    if not f.is_zero:
        info["fisher"] = fisher(f)
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fisherkin", description="Kinetic collision solvers with Fisher-information audits.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="advance a scenario and write diagnostics")
    r.add_argument("--scenario", required=True, metavar="PATH")
    r.add_argument("--out", required=True, metavar="DIR")
    r.add_argument("--force", action="store_true", help="replace an existing output directory")
    r.add_argument("--conserve", action="store_true", help="project onto conserved moments")
    r.add_argument("--fast", action="store_true", help="use the fast Boltzmann gain term")
    r.add_argument("--threads", type=int, metavar="N")
    r.add_argument("--diag-every", type=int, metavar="K")
    r.add_argument("--snapshot-every", type=int, metavar="K")
    r.add_argument("--audit", metavar="NAME[,NAME...]")
    r.add_argument("--param", action="append", metavar="KEY=VALUE")
    r.add_argument("--gnuplot-hints", action="store_true", help="print a gnuplot script for the CSV")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit", help="audit the snapshots of a finished run")
    a.add_argument("dir", metavar="DIR")
    a.add_argument("--audit", required=True, metavar="NAME[,NAME...]")
    a.add_argument("--param", action="append", metavar="KEY=VALUE")
    a.set_defaults(func=cmd_audit)

    e = sub.add_parser("exponents", help="print weight and regularity thresholds")
    e.add_argument("gamma", type=float)
    e.add_argument("d", type=int)
    e.add_argument("eps", type=float)
    e.add_argument("--s-exp", type=float, default=None, help="tail exponent for beta (default gamma)")
    e.set_defaults(func=cmd_exponents)

    i = sub.add_parser("info", help="describe a snapshot file")
    i.add_argument("snapshot")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        return args.func(args)
    except (UsageError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
