"""Time-stepping engine: classical Boris, SDC sweeps, Picard iteration.

A step on ``[t_n, t_n + dt]`` keeps position/velocity/force values at the
collocation nodes in a :class:`SweepWorkspace`.  One SDC sweep applies
velocity-Verlet node to node with correction terms assembled from the
previous iterate via the difference matrices ``S``, ``Sx``, ``SQ``; the
velocity update is solved explicitly with the Boris rotation.  Iterating
sweeps converges to the collocation solution, monitored by
:func:`residual_norm`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boris import boris_velocity_update
from .errors import DivergenceError, ParameterError
from .fields import PenningForce
from .quadrature import QuadratureRule

__all__ = [
    "StepConfig",
    "SweepWorkspace",
    "TrajectoryRecord",
    "classical_boris_step",
    "sweep_initialize",
    "sdc_sweep",
    "picard_sweep",
    "residual_norm",
    "collocation_end_update",
    "run_trajectory",
]

_METHODS = ("boris", "verlet", "boris-sdc", "picard", "collocation")


@dataclass
class StepConfig:
    """How one time step is iterated.

    Exactly one of ``iterations`` (fixed sweep count) or ``tol``
    (residual tolerance with cap ``k_max``) must be set for the iterative
    methods; plain ``boris``/``verlet`` ignore both.  ``precision``
    selects plain or compensated accumulation of the per-step increments
    across a long run.
    """

    rule: QuadratureRule
    iterations: int | None = None
    tol: float | None = None
    k_max: int = 100
    precision: str = "std"
    method: str = "boris-sdc"

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        if self.method == "collocation" and self.tol is None:
            self.tol = 1e-13
            self.iterations = None
        if self.method in ("boris-sdc", "picard", "collocation"):
            if (self.iterations is None) == (self.tol is None):
                raise ParameterError("set exactly one of iterations or tol")
            if self.iterations is not None and self.iterations < 1:
                raise ParameterError("iterations must be >= 1")
            if self.tol is not None and (self.tol <= 0 or self.k_max < 1):
                raise ParameterError("tol must be > 0 with k_max >= 1")
        if self.precision not in ("std", "compensated"):
            raise ParameterError(f"unknown precision mode {self.precision!r}")


class SweepWorkspace:
    """Node values of one step: previous iterate and updated iterate.

    Arrays have shape ``(M+1, N, 3)``.  Node 0 always holds the step's
    initial condition.  ``rhs_evals`` counts field evaluations spent on
    this workspace.
    """

    def __init__(self, X, V, F, E, B):
        self.X, self.V, self.F, self.E, self.B = X, V, F, E, B
        self.rhs_evals = 0

    @property
    def n_nodes(self) -> int:
        return self.X.shape[0]


def sweep_initialize(u0, rule: QuadratureRule, model: PenningForce,
                     reevaluate: bool = False) -> SweepWorkspace:
    """Copy the initial condition to all nodes and fill forces.

    With ``reevaluate`` False (default) a single field evaluation covers
    every copied node; True evaluates per node, costing M+1 evaluations.
    """
    x0, v0 = u0
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    m1 = rule.M + 1
    X = np.repeat(x0[None, :, :], m1, axis=0)
    V = np.repeat(v0[None, :, :], m1, axis=0)
    E = np.empty_like(X)
    B = np.empty_like(X)
    F = np.empty_like(X)
    if reevaluate:
        for m in range(m1):
            E[m] = model.e_field(X[m])
    else:
        E[:] = model.e_field(x0)[None]
    B[:] = model.b_at(x0)[None]
    F[:] = model.accel(E[0], v0, B[0])[None]
    ws = SweepWorkspace(X, V, F, E, B)
    ws.rhs_evals = m1 if reevaluate else 1
    return ws


def sdc_sweep(ws: SweepWorkspace, rule: QuadratureRule, model: PenningForce) -> SweepWorkspace:
    """One node-to-node sweep of the velocity-Verlet preconditioner.

    Fully explicit in the positions; the velocity update folds the
    previous-iterate correction into the Boris rotation solve.  Costs M
    field evaluations.
    """
    S, Sx, SQ, dtau = rule.S, rule.Sx, rule.SQ, rule.dtau
    Xo, Vo, Fo, Eo, Bo = ws.X, ws.V, ws.F, ws.E, ws.B
    Xn = Xo.copy()
    Vn = Vo.copy()
    Fn = Fo.copy()
    En = Eo.copy()
    Bn = Bo.copy()
    v0 = Vo[0]
    M = rule.M
    for m in range(M):
        dm = dtau[m + 1]
        x_new = Xn[m] + dm * v0
        for l in range(1, m + 1):
            x_new = x_new + Sx[m + 1, l] * (Fn[l] - Fo[l])
        for l in range(1, M + 1):
            x_new = x_new + SQ[m + 1, l] * Fo[l]
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(m, "non-finite node position in sweep")
        e_new = model.e_field(x_new)
        b_new = model.b_at(x_new)
        sum_s = np.zeros_like(v0)
        for l in range(1, M + 1):
            sum_s = sum_s + S[m + 1, l] * Fo[l]
        if dm == 0.0:
            v_new = Vn[m] + sum_s
        else:
            c_k = sum_s / dm - 0.5 * (Fo[m + 1] + Fo[m])
            e_mid = 0.5 * (En[m] + e_new)
            v_new = boris_velocity_update(
                Vn[m], dm, model.alpha, e_mid, Bn[m], b_new, c_k
            )
        Xn[m + 1] = x_new
        Vn[m + 1] = v_new
        En[m + 1] = e_new
        Bn[m + 1] = b_new
        Fn[m + 1] = model.accel(e_new, v_new, b_new)
    ws.X, ws.V, ws.F, ws.E, ws.B = Xn, Vn, Fn, En, Bn
    ws.rhs_evals += M
    return ws


def picard_sweep(ws: SweepWorkspace, rule: QuadratureRule, model: PenningForce) -> SweepWorkspace:
    """One unpreconditioned fixed-point sweep of the collocation system."""
    Q, QQ = rule.Q, rule.QQ
    x0, v0 = ws.X[0], ws.V[0]
    F = ws.F
    M = rule.M
    q_row = Q.sum(axis=1)
    Xn = ws.X.copy()
    Vn = ws.V.copy()
    for m in range(1, M + 1):
        x_new = x0 + q_row[m] * v0
        v_new = v0.copy()
        for l in range(1, M + 1):
            x_new = x_new + QQ[m, l] * F[l]
            v_new = v_new + Q[m, l] * F[l]
        Xn[m] = x_new
        Vn[m] = v_new
    if not np.all(np.isfinite(Xn)) or not np.all(np.isfinite(Vn)):
        raise DivergenceError(0, "non-finite node state in Picard sweep")
    ws.X, ws.V = Xn, Vn
    for m in range(1, M + 1):
        ws.E[m] = model.e_field(ws.X[m])
        ws.B[m] = model.b_at(ws.X[m])
        ws.F[m] = model.accel(ws.E[m], ws.V[m], ws.B[m])
    ws.rhs_evals += M
    return ws


def residual_norm(ws: SweepWorkspace, rule: QuadratureRule, u0=None) -> float:
    """Defect of the current node values in the collocation system.

    Maximum over nodes 1..M of the Euclidean norm over all particle
    components, taken separately for the position and velocity blocks
    and combined by max.
    """
    if u0 is None:
        x0, v0 = ws.X[0], ws.V[0]
    else:
        x0 = np.atleast_2d(np.asarray(u0[0], dtype=float))
        v0 = np.atleast_2d(np.asarray(u0[1], dtype=float))
    Q, QQ = rule.Q, rule.QQ
    q_row = Q.sum(axis=1)
    r = 0.0
    for m in range(1, rule.M + 1):
        rx = x0 + q_row[m] * v0 - ws.X[m]
        rv = v0 - ws.V[m]
        for l in range(1, rule.M + 1):
            rx = rx + QQ[m, l] * ws.F[l]
            rv = rv + Q[m, l] * ws.F[l]
        r = max(r, float(np.linalg.norm(rx)), float(np.linalg.norm(rv)))
    return r


def collocation_end_update(ws: SweepWorkspace, rule: QuadratureRule, u0=None):
    """Step-end state from the full-interval quadrature of the node forces.

    For Lobatto nodes this coincides with the last-node values once the
    node values solve the collocation system; for Legendre nodes it is
    the only way to reach the step end.
    """
    if u0 is None:
        x0, v0 = ws.X[0], ws.V[0]
    else:
        x0 = np.atleast_2d(np.asarray(u0[0], dtype=float))
        v0 = np.atleast_2d(np.asarray(u0[1], dtype=float))
    q = rule.q
    qQ = q @ rule.Q
    v1 = v0.copy()
    x1 = x0 + q.sum() * v0
    for l in range(1, rule.M + 1):
        v1 = v1 + q[l] * ws.F[l]
        x1 = x1 + qQ[l] * ws.F[l]
    return x1, v1


def _trapezoidal_velocity_solve(v_old, dt, alpha, e_mid, b_old, b_new, c_term):
    """Direct 3x3 linear solve of the implicit trapezoidal velocity update."""
    n = v_old.shape[0]
    alpha = np.broadcast_to(alpha, (n, 1))
    rhs = v_old + dt * (
        alpha * e_mid + c_term + 0.5 * alpha * np.cross(v_old, b_old)
    )
    out = np.empty_like(v_old)
    for i in range(n):
        bx, by, bz = b_new[i]
        a = 0.5 * dt * alpha[i, 0]
        # (I - a [.]x b) v = rhs with (v x b) written as a matrix product
        mat = np.array(
            [
                [1.0, -a * bz, a * by],
                [a * bz, 1.0, -a * bx],
                [-a * by, a * bx, 1.0],
            ]
        )
        out[i] = np.linalg.solve(mat, rhs[i])
    return out


def classical_boris_step(state, dt, model: PenningForce, cache=None, solver="boris"):
    """One velocity-Verlet step with the Boris velocity solve.

    ``state`` is ``(x, v)`` with shape (N, 3).  ``cache`` holds the fields
    already evaluated at ``x`` so a trajectory costs one field evaluation
    per step; it is filled on first use.  Returns ``(x', v'), cache'``.
    ``solver='verlet'`` replaces the rotation by a direct linear solve of
    the same implicit update.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    x, v = state
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if cache is None:
        cache = (model.e_field(x), model.b_at(x))
    e0, b0 = cache
    f0 = model.accel(e0, v, b0)
    x1 = x + dt * (v + 0.5 * dt * f0)
    e1 = model.e_field(x1)
    b1 = model.b_at(x1)
    e_mid = 0.5 * (e0 + e1)
    if solver == "verlet":
        v1 = _trapezoidal_velocity_solve(v, dt, model.alpha, e_mid, b0, b1, 0.0)
    else:
        v1 = boris_velocity_update(v, dt, model.alpha, e_mid, b0, b1, 0.0)
    return (x1, v1), (e1, b1)


@dataclass
class TrajectoryRecord:
    """Strided samples plus final state of one trajectory run."""

    sample_steps: np.ndarray
    times: np.ndarray
    energies: np.ndarray
    residuals: np.ndarray
    iterations: np.ndarray
    rhs_evals: np.ndarray
    xs: np.ndarray | None
    vs: np.ndarray | None
    x_final: np.ndarray = field(default=None)
    v_final: np.ndarray = field(default=None)
    total_steps: int = 0
    total_rhs_evals: int = 0
    total_iterations: int = 0
    k_max_exhausted: int = 0

    def truncate(self, n_samples: int) -> "TrajectoryRecord":
        for name in ("sample_steps", "times", "energies", "residuals",
                     "iterations", "rhs_evals"):
            setattr(self, name, getattr(self, name)[:n_samples])
        if self.xs is not None:
            self.xs = self.xs[:n_samples]
            self.vs = self.vs[:n_samples]
        return self


def _kahan_add(state, comp, inc):
    y = inc - comp
    t = state + y
    comp[...] = (t - state) - y
    state[...] = t


def run_trajectory(
    u0,
    n_steps: int,
    dt: float,
    config: StepConfig,
    model: PenningForce,
    stride: int = 1,
    record_states: bool = True,
    engine: str = "auto",
) -> TrajectoryRecord:
    """Integrate ``n_steps`` steps of size ``dt`` from ``u0 = (x0, v0)``.

    Per step the configured method runs its sweep loop (fixed count or
    residual-controlled), then advances to the step end: Lobatto rules
    take the last node, Legendre rules the quadrature end update.
    Samples are recorded every ``stride`` steps plus the final step.
    Raises :class:`DivergenceError` carrying the partial record when the
    state stops being finite.
    """
    if n_steps < 1:
        raise ParameterError("n_steps must be >= 1")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if engine == "auto":
        engine = "numba" if _numba_supported(config, model) else "python"
    if engine == "numba":
        from . import _kernels

        return _kernels.run_trajectory_numba(
            u0, n_steps, dt, config, model, stride, record_states
        )
    return _run_trajectory_python(u0, n_steps, dt, config, model, stride, record_states)


def _numba_supported(config: StepConfig, model) -> bool:
    if config.method not in ("boris", "boris-sdc", "collocation"):
        return False
    if not isinstance(model, PenningForce):
        return False
    try:
        from . import _kernels  # noqa: F401
    except Exception:  # pragma: no cover - numba missing or broken
        return False
    return True


def _run_trajectory_python(u0, n_steps, dt, config, model, stride, record_states):
    x = np.atleast_2d(np.asarray(u0[0], dtype=float)).copy()
    v = np.atleast_2d(np.asarray(u0[1], dtype=float)).copy()
    n = x.shape[0]
    compensated = config.precision == "compensated"
    comp_x = np.zeros_like(x)
    comp_v = np.zeros_like(v)

    rule = config.rule
    take_last_node = rule.right_endpoint_is_node
    n_samples_max = n_steps // stride + 2
    rec = TrajectoryRecord(
        sample_steps=np.zeros(n_samples_max, dtype=np.int64),
        times=np.zeros(n_samples_max),
        energies=np.zeros(n_samples_max),
        residuals=np.full(n_samples_max, np.nan),
        iterations=np.zeros(n_samples_max, dtype=np.int64),
        rhs_evals=np.zeros(n_samples_max, dtype=np.int64),
        xs=np.zeros((n_samples_max, n, 3)) if record_states else None,
        vs=np.zeros((n_samples_max, n, 3)) if record_states else None,
    )
    isample = 0

    def sample(step, res, iters):
        nonlocal isample
        rec.sample_steps[isample] = step
        rec.times[isample] = step * dt
        rec.energies[isample] = model.energy(x, v)
        rec.residuals[isample] = res
        rec.iterations[isample] = iters
        rec.rhs_evals[isample] = model.rhs_evals
        if record_states:
            rec.xs[isample] = x
            rec.vs[isample] = v
        isample += 1

    model.rhs_evals = 0
    sample(0, np.nan, 0)
    cache = None
    for step in range(1, n_steps + 1):
        res = np.nan
        iters = 0
        if config.method in ("boris", "verlet"):
            (x1, v1), cache = classical_boris_step(
                (x, v), dt, model, cache=cache, solver=config.method
            )
            iters = 1
        else:
            ws = sweep_initialize((x, v), rule, model)
            one_sweep = sdc_sweep if config.method != "picard" else picard_sweep
            try:
                if config.iterations is not None:
                    for _ in range(config.iterations):
                        one_sweep(ws, rule, model)
                        iters += 1
                else:
                    while True:
                        one_sweep(ws, rule, model)
                        iters += 1
                        res = residual_norm(ws, rule)
                        if res <= config.tol:
                            break
                        if iters >= config.k_max:
                            rec.k_max_exhausted += 1
                            break
            except DivergenceError as err:
                raise DivergenceError(step, record=rec.truncate(isample)) from err
            if take_last_node:
                x1, v1 = ws.X[rule.M], ws.V[rule.M]
            else:
                x1, v1 = collocation_end_update(ws, rule)
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(v1))):
            raise DivergenceError(step, record=rec.truncate(isample))
        if compensated:
            # cache stays valid: the compensated state differs from x1
            # by at most one rounding of the increment
            _kahan_add(x, comp_x, x1 - x)
            _kahan_add(v, comp_v, v1 - v)
        else:
            x, v = x1.copy(), v1.copy()
        rec.total_iterations += iters
        if step % stride == 0 or step == n_steps:
            sample(step, res, iters)

    rec.truncate(isample)
    rec.x_final = x
    rec.v_final = v
    rec.total_steps = n_steps
    rec.total_rhs_evals = model.rhs_evals
    return rec
