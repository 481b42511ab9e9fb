import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fisherkin.boltzmann import KernelSpec, OperatorOptions, loss_intensity
from fisherkin.functionals import conserved
from fisherkin.grid import Distribution, make_grid, maxwellian, quadrature
from fisherkin.integrator import (
    SNAPSHOT_MAGIC,
    NumericalAbort,
    RunObserver,
    Scenario,
    ScenarioError,
    Stepper,
    StepTooLargeError,
    initial_distribution,
    read_snapshot,
    rkl2,
    rkl2_stages,
    run,
    spectral_radius,
    stable_dt,
    write_snapshot,
)

from conftest import smooth_field

# Frozen output of tests/oracles/generate.py: 0.5 / R(M) at the box corner, n = 32, L = 8
STABLE_DT_N32_L8 = 0.037042825136002205

HARD = KernelSpec.constant(1.0)
FAST = OperatorOptions(fast=True)
G16 = make_grid(3, 16, 6.0)


def bimodal(grid):
    return Distribution(grid, 0.5 * maxwellian(grid, 1.0, [1.2, 0, 0], 0.8) + 0.5 * maxwellian(grid, 1.0, [-1.2, 0, 0], 0.8))


def l1(a, b, grid):
    return quadrature(np.abs(a - b), grid)


class TestScenario:
    def test_defaults_valid(self):
        sc = Scenario()
        assert sc.equation == "landau" and sc.n == 32

    def test_unknown_key(self):
        with pytest.raises(ScenarioError, match="unknown scenario keys"):
            Scenario.from_dict({"equation": "landau", "viscosity": 1})

    def test_malformed_json(self):
        with pytest.raises(ScenarioError, match="malformed"):
            Scenario.from_json("{equation: landau")

    @pytest.mark.parametrize(
        "bad",
        [
            {"equation": "vlasov"},
            {"t_end": 0},
            {"dt": -1},
            {"dt": "fast"},
            {"diag_every": 0},
            {"initial": "uniform"},
            {"initial": "snapshot"},
            {"n": 7},
            {"gamma": 0.0},
            {"interp": "spline"},
            {"weights": [1.0]},
            {"diagnostics": {"bogus": []}},
        ],
    )
    def test_invalid_values(self, bad):
        with pytest.raises(ScenarioError):
            Scenario.from_dict(bad)

    def test_validation_mode_admits_maxwell_molecules(self):
        assert Scenario(gamma=0.0, validation=True).kernel().gamma == 0.0

    @given(st.floats(0.1, 1.0), st.integers(8, 64).filter(lambda n: n % 2 == 0), st.floats(0.01, 10))
    def test_roundtrip_and_digest(self, gamma, n, t_end):
        sc = Scenario(gamma=gamma, n=n, t_end=t_end)
        again = Scenario.from_json(json.dumps(sc.to_dict()))
        assert again == sc
        assert again.digest() == sc.digest()
        assert Scenario(gamma=gamma, n=n, t_end=t_end * 2).digest() != sc.digest()

    def test_from_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"equation": "boltzmann", "n": 16}))
        assert Scenario.from_file(p).equation == "boltzmann"


class TestInitialData:
    def test_bimodal_mass(self):
        f = initial_distribution(Scenario(initial="bimodal", n=32, lmax=8))
        assert quadrature(f.values, f.grid) == pytest.approx(1.0, abs=1e-6)

    def test_squashed_normalized(self):
        f = initial_distribution(Scenario(initial="squashed", n=16, lmax=6, rho=2.0, poly=[1.0, 0.5]))
        assert quadrature(f.values, f.grid) == pytest.approx(2.0, rel=1e-14)

    def test_squashed_negative_polynomial(self):
        with pytest.raises(ScenarioError):
            initial_distribution(Scenario(initial="squashed", n=16, lmax=6, poly=[1.0, -1.0]))

    def test_loss_audit_needs_centred_data(self):
        sc = Scenario(equation="boltzmann", n=16, lmax=6, u=[0.5, 0, 0], audits=["loss_lower_bound"])
        with pytest.raises(ScenarioError, match="momentum"):
            initial_distribution(sc)

    def test_snapshot_initial(self, tmp_path):
        f = bimodal(G16)
        write_snapshot(tmp_path / "a.fks", f, 0.0)
        g = initial_distribution(Scenario(initial="snapshot", snapshot=str(tmp_path / "a.fks"), n=16, lmax=6))
        np.testing.assert_array_equal(g.values, f.values)
        with pytest.raises(ScenarioError):
            initial_distribution(Scenario(initial="snapshot", snapshot=str(tmp_path / "a.fks"), n=32, lmax=6))


class TestStableDt:
    def test_boltzmann_oracle(self, unit_maxwellian32):
        dt = stable_dt(unit_maxwellian32, "boltzmann", HARD)
        assert dt == 0.5 / np.max(loss_intensity(unit_maxwellian32, HARD))
        assert dt == pytest.approx(STABLE_DT_N32_L8, rel=1e-3)

    def test_landau_scales_with_h2(self):
        # the largest eigenvalue of a sits at the corner node and grows like its radius cubed
        dts, corner = [], []
        for n in (16, 32):
            g = make_grid(3, n, 6.0)
            dts.append(stable_dt(Distribution(g, maxwellian(g)), "landau", HARD))
            corner.append(g.lmax - g.h / 2)
        assert dts[0] / dts[1] == pytest.approx(4.0 * (corner[1] / corner[0]) ** 3, rel=0.01)

    def test_zero_distribution(self):
        with pytest.raises(ValueError):
            stable_dt(Distribution.zeros(G16), "boltzmann", HARD)

    def test_unknown_equation(self):
        with pytest.raises(ValueError):
            stable_dt(bimodal(G16), "euler", HARD)


class TestSuperStep:
    @given(st.floats(1e-3, 100), st.floats(0.1, 50))
    def test_stage_count_is_minimal(self, dt, rho):
        s = rkl2_stages(dt, rho)
        assert dt <= (2 / rho) * (s * s + s - 2) / 4
        if s > 2:
            t = s - 1
            assert dt > (2 / rho) * (t * t + t - 2) / 4

    def test_second_order_on_decay(self):
        lam = np.array([0.1, 1.0, 5.0])
        op = lambda y: -lam * y
        errs = []
        for dt in (0.2, 0.1):
            s = rkl2_stages(dt, lam.max())
            errs.append(np.max(np.abs(rkl2(np.ones(3), dt, op, s) - np.exp(-lam * dt))))
        assert errs[0] / errs[1] == pytest.approx(8.0, rel=0.3)

    @given(st.floats(1.0, 200.0))
    def test_stable_beyond_explicit_limit(self, dt_factor):
        lam = np.linspace(0, 1000.0, 50)
        dt = dt_factor / lam.max()
        y = rkl2(np.ones(50), dt, lambda v: -lam * v, rkl2_stages(dt, lam.max()))
        assert np.all(np.abs(y) <= 1.0 + 1e-12)

    def test_spectral_radius(self):
        lam = np.linspace(-3.0, 0.0, 40)
        assert spectral_radius(lambda v: lam * v, (40,), iterations=200) == pytest.approx(3.0, rel=0.05)
        assert spectral_radius(lambda v: 0 * v, (4,)) == 0.0


class TestBoltzmannStep:
    def test_equilibrium(self):
        st_ = Stepper("boltzmann", HARD, G16, options=FAST)
        f = Distribution(G16, maxwellian(G16))
        dt = 0.02
        g = st_.step(f, dt)
        assert l1(g.values, f.values, G16) <= 1e-3 * dt

    def test_mass_drift(self, grid32):
        st_ = Stepper("boltzmann", HARD, grid32, options=FAST)
        f = bimodal(grid32)
        g = st_.step(f, 0.02)
        assert abs(quadrature(g.values - f.values, grid32)) <= 1e-6 * quadrature(f.values, grid32)

    def test_rejects_large_step(self):
        st_ = Stepper("boltzmann", HARD, G16, options=FAST)
        f = bimodal(G16)
        with pytest.raises(StepTooLargeError):
            st_.step(f, 1.01 * st_.stable_dt(f))
        st_.step(f, st_.stable_dt(f))

    def test_richardson_order(self):
        st_ = Stepper("boltzmann", HARD, G16, options=FAST)
        f = bimodal(G16)
        gaps = []
        for dt in (0.04, 0.02):
            one = st_.step(f, dt)
            two = st_.step(st_.step(f, dt / 2), dt / 2)
            gaps.append(l1(one.values, two.values, G16))
        assert gaps[0] / gaps[1] == pytest.approx(8.0, rel=0.3)

    def test_conserve_flag(self):
        st_ = Stepper("boltzmann", HARD, G16, options=FAST, conserve=True)
        f = bimodal(G16)
        m0, p0, e0 = conserved(f)
        for _ in range(3):
            f = st_.step(f, 0.04)
        m, p, e = conserved(f)
        assert abs(m - m0) <= 1e-12 * m0
        assert np.max(np.abs(p - p0)) <= 1e-12 * m0
        assert abs(e - e0) <= 1e-12 * e0

    def test_nan_aborts(self):
        st_ = Stepper("boltzmann", HARD, G16, options=FAST)
        f = bimodal(G16)
        with pytest.raises(NumericalAbort):
            st_._finish(f, np.full(G16.shape, np.nan))


class TestLandauStep:
    @pytest.mark.parametrize("n", [16, 32])
    def test_mass_exact_up_to_clipping(self, n):
        g = make_grid(3, n, 6.0)
        st_ = Stepper("landau", HARD, g)
        f = bimodal(g)
        h = st_.step(f, 0.01)
        assert abs(quadrature(h.values - f.values, g) - st_.log.clipped_mass) <= 1e-13

    def test_richardson_order(self):
        st_ = Stepper("landau", HARD, G16)
        f = bimodal(G16)
        gaps = []
        # the ratio approaches 8 only once the step resolves the fastest relaxing modes
        for dt in (0.005, 0.0025):
            one = st_.step(f, dt)
            two = st_.step(st_.step(f, dt / 2), dt / 2)
            gaps.append(l1(one.values, two.values, G16))
        assert gaps[0] / gaps[1] == pytest.approx(8.0, rel=0.3)

    def test_explicit_scheme_limit(self):
        st_ = Stepper("landau", HARD, G16, landau_scheme="rk2")
        f = bimodal(G16)
        limit = st_.stable_dt(f)
        with pytest.raises(StepTooLargeError):
            st_.step(f, 2 * limit)
        g = st_.step(f, limit)
        assert abs(quadrature(g.values - f.values, G16)) <= 1e-13

    def test_conserve_flag(self):
        st_ = Stepper("landau", HARD, G16, conserve=True)
        f = bimodal(G16)
        m0, p0, e0 = conserved(f)
        for _ in range(3):
            f = st_.step(f, 0.02)
        m, p, e = conserved(f)
        assert abs(m - m0) <= 1e-12 * m0
        assert np.max(np.abs(p - p0)) <= 1e-12 * m0
        assert abs(e - e0) <= 1e-12 * e0

    def test_adaptive_controls_energy(self):
        st_ = Stepper("landau", HARD, G16, energy_tol=1e-4, dt_initial=1e-3)
        f = bimodal(G16)
        e0 = conserved(f)[2]
        t = 0.0
        while t < 0.5:
            f, dt = st_.adaptive_step(f, 0.5 - t)
            t += dt
        assert t == pytest.approx(0.5)
        assert abs(conserved(f)[2] - e0) <= 1e-4 * 0.5 * e0

    def test_clipped_mass_small_at_default_resolution(self, grid32):
        st_ = Stepper("landau", HARD, grid32)
        f = bimodal(grid32)
        dt = 0.02
        for _ in range(3):
            f = st_.step(f, dt)
        assert st_.log.clipped_mass <= 1e-8 * 1.0 * 3 * dt

    def test_floor_flag(self):
        st_ = Stepper("landau", HARD, G16, floor=True)
        vals = bimodal(G16).values.copy()
        vals[:2] = 0.0
        g = st_.step(Distribution(G16, vals), 0.005)
        assert g.values.min() > 0
        assert st_.log.floor_mass >= 0


class TestSnapshot:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1e6, allow_nan=False))
    def test_bit_exact_roundtrip(self, tmp_path_factory, seed, t):
        rng = np.random.default_rng(seed)
        g = make_grid(3, 8, 4.0)
        f = Distribution(g, rng.random(g.shape) * 10.0 ** rng.integers(-300, 300, g.shape), "random")
        path = tmp_path_factory.mktemp("snap") / "x.fks"
        write_snapshot(path, f, t)
        back, tb, header = read_snapshot(path)
        assert back.values.tobytes() == f.values.tobytes()
        assert tb == t and back.label == "random"
        assert back.grid == g

    def test_layout(self, tmp_path):
        g = make_grid(3, 8, 4.0)
        f = Distribution(g, maxwellian(g))
        path = tmp_path / "x.fks"
        write_snapshot(path, f, 1.5)
        raw = path.read_bytes()
        assert raw[:8] == SNAPSHOT_MAGIC
        version, hlen = struct.unpack("<IQ", raw[8:20])
        assert version == 1
        header = json.loads(raw[64 : 64 + hlen])
        assert header == {"byte_order": "LE", "d": 3, "element": "f64", "label": "", "lmax": 4.0, "n": 8, "t": 1.5}
        body = np.frombuffer(raw[64 + hlen :], dtype="<f8")
        assert body.size == 512
        # row-major with v1 slowest
        assert body[1] == f.values[0, 0, 1]

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.fks"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(ValueError):
            read_snapshot(path)

    def test_rejects_truncated(self, tmp_path):
        g = make_grid(3, 8, 4.0)
        path = tmp_path / "t.fks"
        write_snapshot(path, Distribution(g, maxwellian(g)), 0.0)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            read_snapshot(path)


class Recorder(RunObserver):
    def __init__(self):
        self.records, self.snaps, self.aborted = [], [], None

    def on_record(self, record):
        self.records.append(record.t)

    def on_snapshot(self, step, t, f):
        self.snaps.append(step)

    def on_abort(self, t, f):
        self.aborted = t
        return "lastgood.fks"


class TestRun:
    def landau(self, **kw):
        base = dict(equation="landau", initial="bimodal", n=16, lmax=6, dt=0.01, t_end=0.1)
        base.update(kw)
        return Scenario(**base)

    def test_schedule(self):
        obs = Recorder()
        tr = run(self.landau(diag_every=2, snapshot_every=5), obs)
        assert tr.steps == 10
        np.testing.assert_allclose(tr.times(), [0, 0.02, 0.04, 0.06, 0.08, 0.1], atol=1e-15)
        assert obs.snaps == [0, 5, 10]
        assert [t for t, _ in tr.states] == pytest.approx([0, 0.05, 0.1])
        assert tr.status == "complete"

    def test_deterministic_csv(self):
        a = run(self.landau()).csv_text()
        b = run(self.landau()).csv_text()
        assert a == b
        assert a.splitlines()[0] == "t,mass,px,py,pz,energy,entropy,fisher"

    def test_entropy_monotone_boltzmann(self):
        sc = Scenario(equation="boltzmann", initial="bimodal", n=16, lmax=6, dt=0.05, t_end=1.0, fast_path=True)
        H = run(sc).column("entropy")
        assert np.all(np.diff(H) <= 1e-3 * np.abs(H[:-1]))

    def test_abort_attaches_partial_trajectory(self):
        sc = Scenario(equation="boltzmann", initial="bimodal", n=16, lmax=6, dt=5.0, t_end=10.0, fast_path=True)
        obs = Recorder()
        with pytest.raises(StepTooLargeError) as info:
            run(sc, obs)
        assert info.value.trajectory.status == "aborted"
        assert len(info.value.trajectory.records) == 1
        assert info.value.last_good == "lastgood.fks"
        assert obs.aborted == 0.0

    def test_adaptive_run_reaches_end(self):
        tr = run(self.landau(dt="auto", t_end=0.2, dt_initial=1e-3))
        assert tr.times()[-1] == pytest.approx(0.2)
        assert np.all(np.diff(tr.times()) > 0)

    def test_extra_columns(self):
        tr = run(self.landau(diagnostics={"moments": [[4, "absolute"]]}, t_end=0.02))
        assert tr.columns[-1] == "moment_abs_k4"
        assert tr.column("moment_abs_k4").shape == (3,)
