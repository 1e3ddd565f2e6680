import numpy as np
import pytest

from boris_sdc.errors import DivergenceError, ParameterError
from boris_sdc.fields import (
    ParticleEnsemble,
    PenningForce,
    PenningParams,
    analytic_solution,
)
from boris_sdc.integrators import (
    StepConfig,
    classical_boris_step,
    collocation_end_update,
    picard_sweep,
    residual_norm,
    run_trajectory,
    sdc_sweep,
    sweep_initialize,
    run_trajectory as _run,
)
from boris_sdc.quadrature import NodeFamily, build_rule

LOB = NodeFamily.GAUSS_LOBATTO
LEG = NodeFamily.GAUSS_LEGENDRE


def make_model(params=None, x0=(10.0, 0, 0), v0=(100.0, 0, 100.0)):
    params = params or PenningParams()
    ens = ParticleEnsemble.single(np.asarray(x0, float), np.asarray(v0, float))
    return PenningForce(params, ens)


class _ConstForce:
    """Minimal force model with constant acceleration, for exactness checks."""

    def __init__(self, a):
        self._a = np.asarray(a, float).reshape(1, 3)
        self.alpha = np.ones((1, 1))
        self.rhs_evals = 0

    def e_field(self, x):
        self.rhs_evals += 1
        return np.broadcast_to(self._a, x.shape).copy()

    def b_at(self, x):
        return np.zeros_like(x)

    def accel(self, e, v, b):
        return e + np.cross(v, b)

    def energy(self, x, v):
        return 0.0


class TestReductions:
    def test_m2_one_sweep_is_classical_boris(self, single_model):
        dt = 0.015625
        rule = build_rule(LOB, 2, 0.0, dt)
        x0 = single_model.charge  # placeholder to silence linters
        x = np.array([[10.0, 0, 0]])
        v = np.array([[100.0, 0, 100.0]])
        ws = sweep_initialize((x, v), rule, single_model)
        sdc_sweep(ws, rule, single_model)
        (xc, vc), _ = classical_boris_step((x, v), dt, make_model())
        assert np.max(np.abs(ws.X[2] - xc)) <= 1e-14 * np.max(np.abs(xc))
        assert np.max(np.abs(ws.V[2] - vc)) <= 1e-14 * np.max(np.abs(vc))

    @pytest.mark.parametrize("M", [2, 3, 5])
    def test_k1_is_classical_boris_on_node_grid(self, M):
        dt = 0.03
        rule = build_rule(LOB, M, 0.0, dt)
        model = make_model()
        x = np.array([[10.0, 0, 0]])
        v = np.array([[100.0, 0, 100.0]])
        ws = sweep_initialize((x, v), rule, model)
        sdc_sweep(ws, rule, model)

        model2 = make_model()
        xs, vs = x, v
        cache = None
        for m in range(1, M + 1):
            if rule.dtau[m] == 0.0:
                continue
            (xs, vs), cache = classical_boris_step((xs, vs), rule.dtau[m], model2, cache)
        assert np.max(np.abs(ws.X[M] - xs)) <= 1e-13 * np.max(np.abs(xs))
        assert np.max(np.abs(ws.V[M] - vs)) <= 1e-13 * np.max(np.abs(vs))

    @pytest.mark.parametrize("M", [2, 3, 5])
    def test_lobatto_end_update_equals_last_node_at_convergence(self, M):
        dt = 0.02
        rule = build_rule(LOB, M, 0.0, dt)
        model = make_model()
        x = np.array([[10.0, 0, 0]])
        v = np.array([[100.0, 0, 100.0]])
        ws = sweep_initialize((x, v), rule, model)
        for _ in range(60):
            sdc_sweep(ws, rule, model)
            if residual_norm(ws, rule) < 1e-13:
                break
        x1, v1 = collocation_end_update(ws, rule)
        assert np.max(np.abs(x1 - ws.X[M])) <= 1e-13 * np.max(np.abs(x1))
        assert np.max(np.abs(v1 - ws.V[M])) <= 1e-13 * np.max(np.abs(v1))


class TestForceFreeLimits:
    def test_sweep_reproduces_straight_drift(self):
        params = PenningParams(omega_e=0.0, omega_b=0.0)
        model = make_model(params)
        rule = build_rule(LOB, 3, 0.0, 0.5)
        x = np.array([[1.0, 2.0, 3.0]])
        v = np.array([[0.5, -1.0, 2.0]])
        ws = sweep_initialize((x, v), rule, model)
        sdc_sweep(ws, rule, model)
        for m in range(4):
            assert np.allclose(ws.X[m], x + rule.taus[m] * v, atol=0.0)
            assert np.allclose(ws.V[m], v, atol=0.0)

    def test_zero_force_zero_velocity_residual(self):
        params = PenningParams(omega_e=0.0, omega_b=0.0)
        model = make_model(params)
        rule = build_rule(LOB, 3, 0.0, 0.5)
        ws = sweep_initialize((np.zeros((1, 3)), np.zeros((1, 3))), rule, model)
        assert residual_norm(ws, rule) == 0.0

    def test_zero_force_end_update_is_drift(self):
        params = PenningParams(omega_e=0.0, omega_b=0.0)
        model = make_model(params)
        rule = build_rule(LOB, 3, 0.0, 0.5)
        x = np.array([[1.0, 0.0, 0.0]])
        v = np.array([[2.0, 0.0, -1.0]])
        ws = sweep_initialize((x, v), rule, model)
        x1, v1 = collocation_end_update(ws, rule)
        assert np.allclose(x1, x + 0.5 * v, atol=0.0)
        assert np.allclose(v1, v, atol=0.0)

    def test_legendre_midpoint_exact_for_constant_force(self):
        model = _ConstForce([0.3, -0.7, 1.1])
        dt = 0.4
        rule = build_rule(LEG, 1, 0.0, dt)
        x = np.array([[1.0, 2.0, 3.0]])
        v = np.array([[0.1, 0.2, 0.3]])
        ws = sweep_initialize((x, v), rule, model)
        sdc_sweep(ws, rule, model)
        x1, v1 = collocation_end_update(ws, rule)
        assert np.allclose(x1, x + dt * v + 0.5 * dt**2 * model._a, rtol=1e-15)
        assert np.allclose(v1, v + dt * model._a, rtol=1e-15)


class TestResidual:
    def test_converged_state_has_tiny_residual(self, single_model):
        rule = build_rule(LOB, 3, 0.0, 0.01)
        x = np.array([[10.0, 0, 0]])
        v = np.array([[100.0, 0, 100.0]])
        ws = sweep_initialize((x, v), rule, single_model)
        for _ in range(40):
            sdc_sweep(ws, rule, single_model)
        scale = np.max(np.abs(ws.V))
        assert residual_norm(ws, rule) <= 1e-13 * scale

    def test_initial_residual_nonzero_for_nonzero_force(self, single_model):
        rule = build_rule(LOB, 3, 0.0, 0.01)
        ws = sweep_initialize(
            (np.array([[10.0, 0, 0]]), np.array([[100.0, 0, 100.0]])), rule, single_model
        )
        assert residual_norm(ws, rule) > 0


class TestPicard:
    def test_fixed_point_in_one_sweep_without_force(self):
        params = PenningParams(omega_e=0.0, omega_b=0.0)
        model = make_model(params)
        rule = build_rule(LOB, 3, 0.0, 0.5)
        x = np.array([[1.0, 0, 0]])
        v = np.array([[0.0, 2.0, 0]])
        ws = sweep_initialize((x, v), rule, model)
        picard_sweep(ws, rule, model)
        r1 = residual_norm(ws, rule)
        picard_sweep(ws, rule, model)
        assert residual_norm(ws, rule) == pytest.approx(r1, abs=1e-30)
        assert r1 <= 1e-14

    def test_small_step_contracts_residual(self, single_model):
        rule = build_rule(LOB, 3, 0.0, 1e-4)
        ws = sweep_initialize(
            (np.array([[10.0, 0, 0]]), np.array([[100.0, 0, 100.0]])), rule, single_model
        )
        r0 = residual_norm(ws, rule)
        picard_sweep(ws, rule, single_model)
        r1 = residual_norm(ws, rule)
        assert r1 <= r0 / 10.0

    def test_converged_picard_matches_sdc_fixed_point(self, single_model):
        rule = build_rule(LOB, 3, 0.0, 1e-3)
        u0 = (np.array([[10.0, 0, 0]]), np.array([[100.0, 0, 100.0]]))
        ws_p = sweep_initialize(u0, rule, single_model)
        for _ in range(200):
            picard_sweep(ws_p, rule, single_model)
        ws_s = sweep_initialize(u0, rule, single_model)
        for _ in range(30):
            sdc_sweep(ws_s, rule, single_model)
        assert np.allclose(ws_p.X, ws_s.X, rtol=1e-11)
        assert np.allclose(ws_p.V, ws_s.V, rtol=1e-11)


class TestAccounting:
    def test_sdc_eval_count(self):
        model = make_model()
        rule = build_rule(LOB, 3, 0.0, 0.01)
        cfg = StepConfig(rule=rule, iterations=4)
        rec = run_trajectory(
            (np.array([10.0, 0, 0]), np.array([100.0, 0, 100.0])),
            n_steps=7, dt=0.01, config=cfg, model=model, engine="python",
        )
        assert rec.total_rhs_evals == 7 * (1 + 4 * 3)
        assert model.rhs_evals == rec.total_rhs_evals
        assert rec.total_iterations == 7 * 4

    def test_boris_eval_count(self):
        model = make_model()
        rule = build_rule(LOB, 2, 0.0, 0.01)
        cfg = StepConfig(rule=rule, method="boris")
        rec = run_trajectory(
            (np.array([10.0, 0, 0]), np.array([100.0, 0, 100.0])),
            n_steps=9, dt=0.01, config=cfg, model=model, engine="python",
        )
        assert rec.total_rhs_evals == 9 + 1
        assert np.all(np.diff(rec.rhs_evals) >= 0)

    def test_initialize_eval_modes(self, single_model):
        rule = build_rule(LOB, 3, 0.0, 0.01)
        u0 = (np.array([[10.0, 0, 0]]), np.array([[100.0, 0, 100.0]]))
        ws = sweep_initialize(u0, rule, single_model)
        assert ws.rhs_evals == 1
        ws2 = sweep_initialize(u0, rule, single_model, reevaluate=True)
        assert ws2.rhs_evals == rule.M + 1
        assert np.allclose(ws.F, ws2.F)


class TestStepConfig:
    def test_mode_validation(self):
        rule = build_rule(LOB, 3, 0.0, 0.01)
        with pytest.raises(ParameterError):
            StepConfig(rule=rule)  # neither iterations nor tol
        with pytest.raises(ParameterError):
            StepConfig(rule=rule, iterations=2, tol=1e-8)
        with pytest.raises(ParameterError):
            StepConfig(rule=rule, iterations=0)
        with pytest.raises(ParameterError):
            StepConfig(rule=rule, tol=-1.0)
        with pytest.raises(ParameterError):
            StepConfig(rule=rule, iterations=1, precision="quad")


class TestResidualMode:
    def test_tolerance_reached_and_recorded(self, table1):
        model = make_model()
        dt = 0.015625
        rule = build_rule(LOB, 5, 0.0, dt)
        cfg = StepConfig(rule=rule, tol=1e-10, k_max=50)
        rec = run_trajectory(
            (table1["x0"], table1["v0"]), n_steps=4, dt=dt, config=cfg,
            model=model, engine="python",
        )
        assert rec.k_max_exhausted == 0
        assert np.all(rec.residuals[1:] <= 1e-10)
        assert np.all(rec.iterations[1:] >= 1)

    def test_huge_tolerance_is_one_sweep(self, table1):
        model = make_model()
        dt = 0.015625
        rule = build_rule(LOB, 3, 0.0, dt)
        cfg = StepConfig(rule=rule, tol=1e12)
        rec = run_trajectory(
            (table1["x0"], table1["v0"]), n_steps=3, dt=dt, config=cfg,
            model=model, engine="python",
        )
        cfg1 = StepConfig(rule=rule, iterations=1)
        rec1 = run_trajectory(
            (table1["x0"], table1["v0"]), n_steps=3, dt=dt, config=cfg1,
            model=make_model(), engine="python",
        )
        assert np.all(rec.iterations[1:] == 1)
        assert np.allclose(rec.x_final, rec1.x_final, rtol=1e-15)

    def test_k_max_exhaustion_is_flagged_not_raised(self, table1):
        model = make_model()
        dt = 0.4  # under-resolved: the iteration cannot reach 1e-12
        rule = build_rule(LOB, 3, 0.0, dt)
        cfg = StepConfig(rule=rule, tol=1e-12, k_max=3)
        rec = run_trajectory(
            (table1["x0"], table1["v0"]), n_steps=2, dt=dt, config=cfg,
            model=model, engine="python",
        )
        assert rec.k_max_exhausted == 2


class TestTrajectories:
    def test_classical_boris_order_two(self, table1):
        model_err = []
        t_end = 1.0
        xa, _ = analytic_solution(table1["params"], table1["x0"], table1["v0"], t_end)
        for n in (512, 1024, 2048):
            model = make_model()
            rule = build_rule(LOB, 2, 0.0, t_end / n)
            cfg = StepConfig(rule=rule, method="boris")
            rec = run_trajectory(
                (table1["x0"], table1["v0"]), n, t_end / n, cfg, model,
                stride=n, engine="python",
            )
            model_err.append(abs(rec.x_final[0, 0] - xa[0]) / abs(xa[0]))
        orders = np.diff(np.log(model_err)) / np.log(0.5)
        assert np.all(np.abs(orders - 2.0) < 0.1)

    def test_verlet_solver_matches_boris(self, table1):
        dt = 1.0 / 256
        args = ((table1["x0"], table1["v0"]), 64, dt)
        rule = build_rule(LOB, 2, 0.0, dt)
        rec_b = run_trajectory(*args, StepConfig(rule=rule, method="boris"),
                               make_model(), engine="python")
        rec_v = run_trajectory(*args, StepConfig(rule=rule, method="verlet"),
                               make_model(), engine="python")
        assert np.allclose(rec_b.x_final, rec_v.x_final, rtol=1e-12)
        assert np.allclose(rec_b.v_final, rec_v.v_final, rtol=1e-12)

    def test_pure_rotation_preserves_speed(self):
        params = PenningParams(omega_e=0.0, omega_b=25.0)
        model = make_model(params, x0=(1.0, 0, 0), v0=(0.0, 3.0, 0))
        rule = build_rule(LOB, 2, 0.0, 0.01)
        cfg = StepConfig(rule=rule, method="boris")
        rec = run_trajectory(
            (np.array([1.0, 0, 0]), np.array([0.0, 3.0, 0])), 1000, 0.01, cfg,
            model, stride=100, engine="python",
        )
        assert np.linalg.norm(rec.v_final) == pytest.approx(3.0, rel=1e-13)

    def test_divergence_raises_with_partial_record(self, table1):
        # axial oscillation resolved far past its explicit stability limit
        model = make_model()
        dt = 0.6
        rule = build_rule(LOB, 2, 0.0, dt)
        cfg = StepConfig(rule=rule, method="boris")
        with pytest.raises(DivergenceError) as info:
            run_trajectory(
                (table1["x0"], table1["v0"]), 2000, dt, cfg, model,
                stride=10, engine="python",
            )
        assert info.value.step > 0
        assert info.value.record is not None
        assert info.value.record.sample_steps.size > 0

    def test_compensated_tracks_standard_on_short_run(self, table1):
        dt = 0.015625
        rule = build_rule(LOB, 3, 0.0, dt)
        out = {}
        for mode in ("std", "compensated"):
            cfg = StepConfig(rule=rule, iterations=2, precision=mode)
            rec = run_trajectory(
                (table1["x0"], table1["v0"]), 200, dt, cfg, make_model(),
                stride=200, engine="python",
            )
            out[mode] = rec.x_final
        assert np.allclose(out["std"], out["compensated"], rtol=1e-12)

    def test_sdc_order_four_m3_k2(self, table1):
        errs = []
        t_end = table1["t_end"]
        xa, _ = analytic_solution(table1["params"], table1["x0"], table1["v0"], t_end)
        for n in (256, 512, 1024):
            rule = build_rule(LOB, 3, 0.0, t_end / n)
            cfg = StepConfig(rule=rule, iterations=2)
            rec = run_trajectory(
                (table1["x0"], table1["v0"]), n, t_end / n, cfg, make_model(),
                stride=n, engine="python",
            )
            errs.append(abs(rec.x_final[0, 0] - xa[0]) / abs(xa[0]))
        orders = np.diff(np.log(errs)) / np.log(0.5)
        assert np.all(orders > 3.0)


@pytest.mark.parametrize("method,kw", [
    ("boris", {}),
    ("boris-sdc", dict(iterations=3)),
    ("boris-sdc", dict(tol=1e-9, k_max=30)),
])
@pytest.mark.parametrize("n_particles", [1, 4])
def test_numba_engine_matches_python(method, kw, n_particles):
    rng = np.random.default_rng(5)
    params = PenningParams()
    if n_particles == 1:
        ens = ParticleEnsemble.single([10.0, 0, 0], [100.0, 0, 100.0])
    else:
        ens = ParticleEnsemble(
            x=np.array([10.0, 0, 0]) + 1e-3 * rng.normal(size=(n_particles, 3)),
            v=np.array([100.0, 0, 100.0]) + rng.normal(size=(n_particles, 3)),
            charge=np.ones(n_particles),
            mass=np.ones(n_particles),
            lam=0.01,
        )
    dt = 0.015625
    rule = build_rule(LOB, 3, 0.0, dt)
    cfg = StepConfig(rule=rule, method=method, **kw)
    u0 = (ens.x, ens.v)
    recs = {}
    for engine in ("python", "numba"):
        model = PenningForce(params, ens)
        recs[engine] = run_trajectory(u0, 50, dt, cfg, model, stride=10, engine=engine)
    a, b = recs["python"], recs["numba"]
    assert np.allclose(a.x_final, b.x_final, rtol=1e-12)
    assert np.allclose(a.v_final, b.v_final, rtol=1e-12)
    assert a.total_rhs_evals == b.total_rhs_evals
    assert a.total_iterations == b.total_iterations
    assert np.allclose(a.energies, b.energies, rtol=1e-12)
    assert np.array_equal(a.sample_steps, b.sample_steps)
