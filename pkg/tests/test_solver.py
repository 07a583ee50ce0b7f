import csv

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from hypokinetic import operators as ops
from hypokinetic.phase_space import Field, admissible_part, mass, norm, sawtooth_mass
from hypokinetic.solver import (
    KineticSystem,
    Scenario,
    StabilityError,
    Stepper,
    certify,
    collision_exponent,
    dissipation,
    entropy,
    entropy_form,
    fit_decay_rate,
    initial_field,
    integrate,
    integrate_raw,
    slowest_decay,
    step,
)


@pytest.fixture(scope="module")
def scen():
    return Scenario(nx=16, nv=8, t_end=2.0)


@pytest.fixture(scope="module")
def system(scen):
    return scen.system()


class TestSystem:
    def test_exponents(self):
        assert collision_exponent("parabolic") == 2
        assert collision_exponent("highfield") == 1
        assert collision_exponent("kinetic") == 1

    def test_scaled_operators(self, scen):
        sys = KineticSystem(scen.transport, scen.collision(), 0.1, "parabolic")
        np.testing.assert_allclose(sys.T_eff.matrix, scen.transport.matrix * 10)
        np.testing.assert_allclose(sys.L_eff.matrix, scen.collision().matrix * 100)

    @pytest.mark.parametrize("kwargs", [
        dict(kn=0.5, scaling="kinetic"),
        dict(kn=0.0, scaling="parabolic"),
        dict(kn=1.0, scaling="diffusive"),
        dict(collision_rule="crank_nicolson"),
    ])
    def test_rejects(self, scen, kwargs):
        with pytest.raises(ValueError):
            KineticSystem(scen.transport, scen.collision(), **kwargs)

    def test_max_dt(self, system):
        grid = system.grid
        assert system.max_dt() == pytest.approx(0.5 * grid.dx / np.max(np.abs(grid.v_nodes)))


class TestStepper:
    def test_stability_guard(self, system):
        with pytest.raises(StabilityError):
            Stepper(system, 2 * system.max_dt())
        Stepper(system, 2 * system.max_dt(), check_stability=False)
        with pytest.raises(ValueError):
            Stepper(system, 0.0)

    @pytest.mark.parametrize("rule", ["exponential", "implicit"])
    def test_structured_matches_dense(self, scen, rule):
        sys = KineticSystem(scen.transport, scen.collision(), collision_rule=rule)
        dt = 0.5 * sys.max_dt()
        E = la.expm(-dt * sys.T_eff.matrix)
        Lm = sys.L_eff.matrix
        R = la.expm(dt * Lm) if rule == "exponential" else la.inv(np.eye(len(Lm)) - dt * Lm)
        np.testing.assert_allclose(Stepper(sys, dt).matrix, R @ E, atol=1e-12)

    def test_dense_fallback(self, scen, rng):
        # a collision operator that couples cells forces the dense path
        grid = scen.grid
        sys = scen.system()
        coupled = ops.KineticOperator(sys.L.matrix + 1e-3 * np.roll(sys.L.matrix, grid.nv, axis=0), "collision", grid)
        sys2 = KineticSystem(sys.T, coupled)
        st_ = Stepper(sys2, 0.5 * sys2.max_dt())
        assert not st_._structured
        f = rng.standard_normal(grid.size)
        expected = la.expm(st_.dt * coupled.matrix) @ la.expm(-st_.dt * sys.T.matrix) @ f
        np.testing.assert_allclose(st_(f), expected, atol=1e-12)

    def test_transport_is_isometry(self, system, rng):
        st_ = Stepper(system, system.max_dt())
        f = system.grid.random_field(rng)
        moved = Field(st_.transport(f.flat).reshape(f.grid.shape), f.grid)
        assert norm(moved) == pytest.approx(norm(f), rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["exponential", "implicit"]))
    def test_step_contracts_and_conserves(self, scen, seed, rule):
        sys = KineticSystem(scen.transport, scen.collision(), collision_rule=rule)
        f = scen.grid.random_field(np.random.default_rng(seed))
        g = step(f, sys, sys.max_dt())
        assert norm(g) <= norm(f) * (1 + 1e-12)
        assert mass(g) == pytest.approx(mass(f), abs=1e-13)
        assert sawtooth_mass(g) == pytest.approx(sawtooth_mass(f), abs=1e-13)

    def test_first_order_convergence(self, system):
        f0 = initial_field(system.grid)
        t = 0.5
        exact = la.expm(t * (system.L_eff.matrix - system.T_eff.matrix)) @ f0.flat
        errs = []
        for n in (40, 80, 160):
            _, snaps = integrate_raw(system, f0.flat, t / n, t, save_every=n)
            errs.append(np.linalg.norm(snaps[-1] - exact))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


class TestEntropy:
    def test_form_matches_definition(self, system, rng):
        f = system.grid.random_field(rng)
        h = entropy_form(system, 0.3)
        assert h(f.flat) == pytest.approx(entropy(f, system.A_eff, 0.3), rel=1e-12)

    def test_eps_range(self, system):
        f = system.grid.zeros()
        with pytest.raises(ValueError):
            entropy(f, system.A_eff, 1.0)
        with pytest.raises(ValueError):
            dissipation(f, system, -0.1)

    def test_dissipation_eps_zero(self, system, rng):
        f = system.grid.random_field(rng)
        Lf = system.L_eff(f)
        expected = -float(np.sum(f.grid.node_weights * Lf.values * f.values))
        assert dissipation(f, system, 0.0) == pytest.approx(expected, rel=1e-12)

    def test_dissipation_is_minus_entropy_rate(self, system, rng):
        # d/dt H along the exact flow
        f = admissible_part(system.grid.random_field(rng))
        eps = 0.2
        G = system.L_eff.matrix - system.T_eff.matrix
        h = entropy_form(system, eps)
        s = 1e-6
        rate = (h(la.expm(s * G) @ f.flat) - h(la.expm(-s * G) @ f.flat)) / (2 * s)
        assert -rate == pytest.approx(dissipation(f, system, eps), rel=1e-6)

    def test_entropy_decreases_with_certified_eps(self, scen):
        sys = scen.system()
        _, plan = certify(sys)
        traj = integrate(sys, scen.initial_field(), scen.time_step(), 2.0, plan.eps0)
        assert traj.max_entropy_increase <= 1e-10
        assert np.all(traj.dissipations >= -1e-12)


class TestIntegrate:
    def test_trajectory_decays_within_certificate(self, scen):
        sys = scen.system()
        _, plan = certify(sys)
        f0 = scen.initial_field()
        traj = integrate(sys, f0, scen.time_step(), scen.t_end)
        envelope = plan.c_eps * np.exp(-plan.lambda_lower * traj.times) * norm(admissible_part(f0))
        assert np.all(traj.norms <= envelope * (1 + 1e-10))
        assert np.max(np.abs(traj.masses - traj.masses[0])) <= 1e-12

    def test_save_every(self, scen):
        sys = scen.system()
        dt = scen.time_step()
        n = int(round(scen.t_end / dt))
        traj = integrate(sys, scen.initial_field(), dt, scen.t_end, save_every=7, keep_fields=True)
        assert len(traj.times) == 1 + n // 7 + (n % 7 != 0)
        assert traj.times[-1] == pytest.approx(scen.t_end)
        assert len(traj.fields_saved) == len(traj.times)

    def test_rejects_short_run(self, system):
        with pytest.raises(ValueError):
            integrate(system, system.grid.zeros(), 0.1, 0.01)

    def test_csv_round_trip(self, scen, tmp_path):
        traj = integrate(scen.system(), scen.initial_field(), scen.time_step(), 0.5)
        path = tmp_path / "sub" / "norms.csv"
        traj.write_csv(path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "norm", "entropy", "dissipation", "mass"]
        got = np.array(rows[1:], dtype=float)
        np.testing.assert_array_equal(got[:, 1], traj.norms)

    def test_slowest_decay_dominates_certificate(self, scen):
        sys = scen.system()
        _, plan = certify(sys)
        assert plan.lambda_lower <= slowest_decay(sys) + 1e-8


class TestFit:
    def test_exact_exponential(self):
        t = np.linspace(0, 5, 101)
        assert fit_decay_rate(t, 3 * np.exp(-0.7 * t)) == pytest.approx(0.7, rel=1e-10)

    def test_floor_drops_plateau(self):
        t = np.linspace(0, 10, 201)
        y = np.maximum(np.exp(-8 * t), 1e-15)
        assert fit_decay_rate(t, y) < 1.0
        assert fit_decay_rate(t, y, floor=1e-12) == pytest.approx(8.0, rel=1e-8)

    def test_validation(self):
        t = np.arange(10.0)
        with pytest.raises(ValueError):
            fit_decay_rate(t, np.exp(-t), window=0.0)
        with pytest.raises(ValueError):
            fit_decay_rate(t[:3], np.exp(-t[:3]))
        with pytest.raises(ValueError):
            fit_decay_rate(t, np.zeros(10))


class TestScenario:
    def test_time_step_lands_on_end(self, scen):
        dt = scen.time_step()
        assert dt <= scen.system().max_dt()
        assert scen.t_end / dt == pytest.approx(round(scen.t_end / dt), abs=1e-9)

    @pytest.mark.parametrize("kwargs", [
        dict(model="boltzmann"),
        dict(kn=0.1),
        dict(scaling="parabolic", kn=1.5),
        dict(dt=-1.0),
        dict(save_every=0),
        dict(collision_rule="rk4"),
        dict(t_end=0.01, dt=0.1),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            Scenario(**kwargs)

    def test_initial_fields(self, scen):
        f = scen.initial_field()
        assert mass(f) == pytest.approx(0.0, abs=1e-13)
        r = initial_field(scen.grid, "random", seed=3)
        np.testing.assert_array_equal(r.values, initial_field(scen.grid, "random", seed=3).values)
        assert sawtooth_mass(r) == pytest.approx(0.0, abs=1e-13)
        with pytest.raises(ValueError):
            initial_field(scen.grid, "gaussian")

    def test_anisotropic_collision(self):
        s = Scenario(model="anisotropic", nx=8, nv=8)
        assert ops.check_assumptions(s.transport, s.collision()).ok

    def test_sigma_must_be_positive(self):
        class Neg:
            def values(self, x, z):
                return np.full_like(x, -1.0)

        with pytest.raises(ValueError):
            Scenario(nx=8, nv=8, sigma=Neg()).collision()
