"""Dense update/iteration operators for the linear single-particle problem,
and the spectral-radius stability, convergence and energy-conservation maps.

For the linear trap force the collocation system, the velocity-Verlet
preconditioner and the sweep iteration are all explicit dense matrices on
the stacked node vector ``(x_0, v_0, ..., x_M, v_M)``.  The one-step
update operator of a method maps ``(x, v)`` at the step start to the step
end; its spectral radius decides stability, while the spectral radius of
the iteration matrix ``K_sdc`` decides convergence of the sweeps.

Maps are computed on a grid of ``(eps * omega_e * dt, omega_b * dt)`` with
the step normalized to ``dt = 1``.  Stability and convergence maps use the
planar ``(x, y, vx, vy)`` subsystem: the axial motion decouples, carries no
magnetic-field dependence, and for a repulsive axial force is physically
unbounded, which would mask the planar stability structure the maps are
meant to show.  The energy diagnostic uses the full six-dimensional phase
space.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericalError, ParameterError
from .fields import PenningParams
from .quadrature import NodeFamily, QuadratureRule, build_rule
from .verlet import VerletMatrices

__all__ = [
    "LinearSystemOperators",
    "GridMap",
    "build_linear_rhs",
    "force_blocks",
    "assemble_operators",
    "spectral_radius",
    "classical_boris_matrix",
    "energy_matrix",
    "energy_diagnostic",
    "stability_map",
    "convergence_map",
    "energy_map",
]

STABILITY_THRESHOLD = 1.0 + 1e-9
_REFINE_BAND = 1.0 + 2e-5  # LAPACK noise at defective unit eigenvalues
_MAP_METHODS = ("boris", "verlet", "collocation", "boris-sdc", "picard")

_IX = np.array([[1.0], [0.0]])
_IV = np.array([[0.0], [1.0]])
_IXV = np.array([[0.0, 1.0], [0.0, 0.0]])


def _worker_count() -> int:
    env = os.environ.get("BORIS_SDC_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"BORIS_SDC_THREADS={env!r} is not an integer")
    return os.cpu_count() or 1


def force_blocks(params: PenningParams, dim: int = 3):
    """Position and velocity blocks of the linear acceleration map."""
    if dim == 3:
        a_x = -params.epsilon * params.omega_e**2 * np.diag([1.0, 1.0, -2.0])
        a_v = params.omega_b * np.array([[0.0, 1, 0], [-1, 0, 0], [0, 0, 0]])
    elif dim == 2:
        a_x = -params.epsilon * params.omega_e**2 * np.eye(2)
        a_v = params.omega_b * np.array([[0.0, 1.0], [-1.0, 0.0]])
    else:
        raise ParameterError("dim must be 2 or 3")
    return a_x, a_v


def build_linear_rhs(params: PenningParams) -> np.ndarray:
    """6x6 block mapping (x, v) to (0, a) for the linear trap force."""
    a_x, a_v = force_blocks(params, dim=3)
    out = np.zeros((6, 6))
    out[3:, :3] = a_x
    out[3:, 3:] = a_v
    return out


def energy_matrix(params: PenningParams, mass: float = 1.0) -> np.ndarray:
    """Total energy as a quadratic form u^T H u on (x, y, z, vx, vy, vz)."""
    w2 = params.epsilon * params.omega_e**2
    return 0.5 * mass * np.diag([w2, w2, -2.0 * w2, 1.0, 1.0, 1.0])


class _RuleEmbeddings:
    """Parameter-independent dense embeddings of one rule's matrices."""

    def __init__(self, rule: QuadratureRule, dim: int):
        M = rule.M
        eye_d = np.eye(dim)
        emb = lambda R, P: np.kron(R, np.kron(P, eye_d))
        n = (M + 1) * 2 * dim
        self.rule = rule
        self.dim = dim
        self.n = n
        self.M = M
        self.I = np.eye(n)
        self.Q_coll = emb(rule.QQ, _IX) + emb(rule.Q, _IV)
        self.C_coll = self.I + emb(rule.Q, _IXV)
        self.Q_vv = emb(rule.verlet.Qx, _IX) + emb(rule.verlet.QT, _IV)
        self.C_vv = self.I + emb(rule.verlet.QE, _IXV)
        self.T_P = np.kron(np.ones((M + 1, 1)), np.eye(2 * dim))
        self.T_R = np.zeros((2 * dim, n))
        self.T_R[:, -2 * dim:] = np.eye(2 * dim)
        q = rule.q[None, :]
        self.Ct_coll = self.T_R + emb(q, _IXV)
        self.Qt_coll = emb(q @ rule.Q, _IX) + emb(q, _IV)

    def f_matrix(self, a_x: np.ndarray, a_v: np.ndarray) -> np.ndarray:
        return np.kron(np.eye(self.M + 1), np.hstack([a_x, a_v]))


@lru_cache(maxsize=32)
def _unit_embeddings(M: int, dim: int) -> _RuleEmbeddings:
    rule = build_rule(NodeFamily.GAUSS_LOBATTO, M, 0.0, 1.0)
    return _RuleEmbeddings(rule, dim)


@dataclass
class LinearSystemOperators:
    """All dense operators of one parameter point, plus the sweep count."""

    dim: int
    k: int
    F: np.ndarray
    M_coll: np.ndarray
    C_coll: np.ndarray
    Q_coll: np.ndarray
    M_vv: np.ndarray
    C_vv: np.ndarray
    Q_vv: np.ndarray
    K_sdc: np.ndarray
    P_sdc: np.ndarray
    P_coll: np.ndarray
    Pt_sdc: np.ndarray
    Pt_coll: np.ndarray
    T_P: np.ndarray
    T_R: np.ndarray
    Ct_coll: np.ndarray
    Qt_coll: np.ndarray
    H: np.ndarray


def assemble_operators(
    params: PenningParams,
    rule: QuadratureRule,
    verlet: VerletMatrices | None = None,
    k: int = 1,
    dim: int = 3,
) -> LinearSystemOperators:
    """Assemble every operator of the linear problem for ``k`` sweeps.

    ``verlet`` defaults to the matrices carried by the rule; passing a
    mismatched set is rejected.
    """
    if verlet is not None and verlet is not rule.verlet:
        if verlet.QE.shape != rule.verlet.QE.shape or not np.allclose(
            verlet.QE, rule.verlet.QE
        ):
            raise ParameterError("verlet matrices do not match the rule")
    if k < 0:
        raise ParameterError("sweep count k must be >= 0")
    emb = _RuleEmbeddings(rule, dim)
    a_x, a_v = force_blocks(params, dim)
    F = emb.f_matrix(a_x, a_v)
    M_coll = emb.I - emb.Q_coll @ F
    M_vv = emb.I - emb.Q_vv @ F
    try:
        rhs = np.hstack([(emb.Q_coll - emb.Q_vv) @ F, emb.C_coll])
        sol = np.linalg.solve(M_vv, rhs)
        K_sdc = sol[:, : emb.n]
        MvvC = sol[:, emb.n:]
        P_coll = np.linalg.solve(M_coll, emb.C_coll)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"singular system matrix: {err}") from None
    P_sdc = np.eye(emb.n)
    for _ in range(k):
        P_sdc = K_sdc @ P_sdc + MvvC
    Pt_sdc = emb.Ct_coll @ emb.T_P + emb.Qt_coll @ F @ P_sdc @ emb.T_P
    Pt_coll = emb.Ct_coll @ emb.T_P + emb.Qt_coll @ F @ P_coll @ emb.T_P
    H = energy_matrix(params) if dim == 3 else None
    return LinearSystemOperators(
        dim=dim, k=k, F=F,
        M_coll=M_coll, C_coll=emb.C_coll, Q_coll=emb.Q_coll,
        M_vv=M_vv, C_vv=emb.C_vv, Q_vv=emb.Q_vv,
        K_sdc=K_sdc, P_sdc=P_sdc, P_coll=P_coll,
        Pt_sdc=Pt_sdc, Pt_coll=Pt_coll,
        T_P=emb.T_P, T_R=emb.T_R, Ct_coll=emb.Ct_coll, Qt_coll=emb.Qt_coll,
        H=H,
    )


def spectral_radius(operator: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a dense (non-symmetric) operator."""
    operator = np.asarray(operator, dtype=float)
    if operator.ndim != 2 or operator.shape[0] != operator.shape[1]:
        raise ParameterError("operator must be square")
    if not np.all(np.isfinite(operator)):
        return np.inf
    try:
        return float(np.max(np.abs(np.linalg.eigvals(operator))))
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"eigenvalue computation failed: {err}") from None


def classical_boris_matrix(params: PenningParams, dt: float = 1.0) -> np.ndarray:
    """6x6 one-step matrix of the classical scheme, by basis propagation."""
    from .fields import ParticleEnsemble, PenningForce
    from .integrators import classical_boris_step

    out = np.zeros((6, 6))
    for j in range(6):
        u = np.zeros(6)
        u[j] = 1.0
        ens = ParticleEnsemble.single(u[:3], u[3:])
        model = PenningForce(params, ens)
        (x1, v1), _ = classical_boris_step((ens.x, ens.v), dt, model)
        out[:3, j] = x1[0]
        out[3:, j] = v1[0]
    return out


def _params_from_point(a: float, b: float) -> PenningParams:
    return PenningParams(
        alpha=1.0, omega_e=abs(a), omega_b=b, epsilon=-1 if a < 0 else 1
    )


@dataclass
class _PointResult:
    rho: float
    k: int
    status: int  # 0 ok, 1 singular solve, 2 overflow


def _evaluate_point(emb: _RuleEmbeddings, a: float, b: float, method: str,
                    tol: float, k_max: int, refine: bool) -> _PointResult:
    params = _params_from_point(a, b)
    a_x, a_v = force_blocks(params, emb.dim)
    F = emb.f_matrix(a_x, a_v)
    k = 0
    converged = True
    try:
        if method == "collocation":
            P = np.linalg.solve(emb.I - emb.Q_coll @ F, emb.C_coll)
        elif method == "picard":
            K_it = emb.Q_coll @ F
            MC = emb.C_coll
            P, k, converged = _iterate_to_tolerance(emb, F, K_it, MC, tol, k_max)
        else:  # boris / verlet / boris-sdc share the Verlet preconditioner
            M_vv = emb.I - emb.Q_vv @ F
            rhs = np.hstack([(emb.Q_coll - emb.Q_vv) @ F, emb.C_coll])
            sol = np.linalg.solve(M_vv, rhs)
            K_it = sol[:, : emb.n]
            MC = sol[:, emb.n:]
            if method in ("boris", "verlet"):
                P = K_it + MC
                k = 1
            else:
                P, k, converged = _iterate_to_tolerance(emb, F, K_it, MC, tol, k_max)
    except np.linalg.LinAlgError:
        return _PointResult(np.nan, k, 1)
    if P is None or not np.all(np.isfinite(P)):
        return _PointResult(np.inf, k, 2)
    Pt = emb.Ct_coll @ emb.T_P + emb.Qt_coll @ F @ P @ emb.T_P
    if not np.all(np.isfinite(Pt)):
        return _PointResult(np.inf, k, 2)
    rho = spectral_radius(Pt)
    if refine and STABILITY_THRESHOLD < rho < _REFINE_BAND:
        # Near-defective points need extended precision.  A one-sweep or
        # direct operator is re-assembled as is; an iterate that met the
        # residual tolerance is within that tolerance of the collocation
        # operator, so the cheap direct re-assembly settles it too.  An
        # iterate that hit k_max keeps its double-precision value.
        from ._highprec import refine_spectral_radius

        if method in ("boris", "verlet"):
            rho = refine_spectral_radius(a, b, emb.M, "sdc", 1, emb.dim)
        elif method == "collocation" or converged:
            rho = refine_spectral_radius(a, b, emb.M, "collocation", 0, emb.dim)
    return _PointResult(rho, k, 0)


def _iterate_to_tolerance(emb, F, K_it, MC, tol, k_max):
    """Iterate the update operator until the operator residual meets tol.

    The residual of the iterate, ``C_coll T_P - M_coll P T_P``, is measured
    in the Frobenius norm.  Returns the reached operator, the sweep count
    and whether the tolerance was met; the operator of the last finite
    iterate is kept on overflow.
    """
    M_coll = emb.I - emb.Q_coll @ F
    CT = emb.C_coll @ emb.T_P
    P = np.eye(emb.n)
    k = 0
    while k < k_max:
        P_next = K_it @ P + MC
        k += 1
        if not np.all(np.isfinite(P_next)):
            return P, k, False  # previous iterate was still finite
        P = P_next
        res = CT - M_coll @ (P @ emb.T_P)
        if np.sqrt(np.sum(res * res)) <= tol:
            return P, k, True
    return P, k, False


@dataclass
class GridMap:
    """One scalar value per (a, b) grid point plus classification columns."""

    a_values: np.ndarray
    b_values: np.ndarray
    value: np.ndarray
    physical_stable: np.ndarray
    numerical_stable: np.ndarray
    k_used: np.ndarray
    status: np.ndarray

    @property
    def stable_count(self) -> int:
        return int(np.sum(self.numerical_stable))


def physical_mask(a_values, b_values) -> np.ndarray:
    """True where the planar revolution frequencies are real (stable trap)."""
    a = np.asarray(a_values)[:, None]
    b = np.asarray(b_values)[None, :]
    eps = np.where(a < 0, -1.0, 1.0)
    return b * b >= -4.0 * eps * a * a


def _run_grid(point_fn, a_values, b_values):
    a_values = np.asarray(a_values, dtype=float)
    b_values = np.asarray(b_values, dtype=float)
    na, nb = a_values.size, b_values.size
    value = np.empty((na, nb))
    k_used = np.zeros((na, nb), dtype=np.int64)
    status = np.zeros((na, nb), dtype=np.int64)

    def row(i):
        out = [point_fn(a_values[i], b_values[j]) for j in range(nb)]
        return i, out

    workers = min(_worker_count(), na)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, range(na)))
    else:
        rows = [row(i) for i in range(na)]
    for i, out in rows:
        for j, res in enumerate(out):
            value[i, j] = res.rho
            k_used[i, j] = res.k
            status[i, j] = res.status
    return a_values, b_values, value, k_used, status


def stability_map(
    a_values,
    b_values,
    method: str = "boris-sdc",
    M: int = 3,
    tol: float = 1e-12,
    k_max: int = 100,
    refine: bool = True,
) -> GridMap:
    """Spectral radius of the one-step update operator over the grid.

    The classical scheme is the single-sweep two-node operator; Boris-SDC
    points iterate to the residual tolerance, capped at ``k_max`` sweeps,
    and are classified by the operator actually reached.
    """
    if method not in _MAP_METHODS:
        raise ParameterError(f"unknown map method {method!r}")
    emb = _unit_embeddings(2 if method in ("boris", "verlet") else M, 2)
    point = lambda a, b: _evaluate_point(emb, a, b, method, tol, k_max, refine)
    a_values, b_values, value, k_used, status = _run_grid(point, a_values, b_values)
    mask = physical_mask(a_values, b_values)
    stable = (value <= STABILITY_THRESHOLD) & (status == 0)
    return GridMap(a_values, b_values, value, mask, stable, k_used, status)


def convergence_map(a_values, b_values, M: int = 3, method: str = "boris-sdc") -> GridMap:
    """Spectral radius of the sweep iteration matrix over the grid."""
    emb = _unit_embeddings(M, 2)

    def point(a, b):
        params = _params_from_point(a, b)
        a_x, a_v = force_blocks(params, emb.dim)
        F = emb.f_matrix(a_x, a_v)
        try:
            if method == "picard":
                K_it = emb.Q_coll @ F
            else:
                K_it = np.linalg.solve(
                    emb.I - emb.Q_vv @ F, (emb.Q_coll - emb.Q_vv) @ F
                )
            return _PointResult(spectral_radius(K_it), 0, 0)
        except np.linalg.LinAlgError:
            return _PointResult(np.nan, 0, 1)

    a_values, b_values, value, k_used, status = _run_grid(point, a_values, b_values)
    mask = physical_mask(a_values, b_values)
    convergent = (value < 1.0) & (status == 0)
    return GridMap(a_values, b_values, value, mask, convergent, k_used, status)


def energy_diagnostic(
    params: PenningParams,
    rule: QuadratureRule | None,
    tol: float = 1e-12,
    k_max: int = 100,
) -> float:
    """Largest diagonal magnitude of ``Pt^T H Pt - H`` at the point.

    ``rule=None`` is the zero-step-size limit, where the update is the
    identity and the diagnostic vanishes identically.
    """
    if rule is None:
        return 0.0
    emb = _RuleEmbeddings(rule, 3)
    a_x, a_v = force_blocks(params, 3)
    F = emb.f_matrix(a_x, a_v)
    M_vv = emb.I - emb.Q_vv @ F
    rhs = np.hstack([(emb.Q_coll - emb.Q_vv) @ F, emb.C_coll])
    sol = np.linalg.solve(M_vv, rhs)
    P, _, _ = _iterate_to_tolerance(emb, F, sol[:, : emb.n], sol[:, emb.n:], tol, k_max)
    Pt = emb.Ct_coll @ emb.T_P + emb.Qt_coll @ F @ P @ emb.T_P
    H = energy_matrix(params)
    if not np.all(np.isfinite(Pt)):
        return np.inf
    h_hat = Pt.T @ H @ Pt - H
    return float(np.max(np.abs(np.diag(h_hat))))


def energy_map(a_values, b_values, M: int = 3, tol: float = 1e-12,
               k_max: int = 100) -> GridMap:
    """Step-to-step energy-form defect of the iterated update over the grid."""
    emb = _unit_embeddings(M, 3)

    def point(a, b):
        params = _params_from_point(a, b)
        a_x, a_v = force_blocks(params, 3)
        F = emb.f_matrix(a_x, a_v)
        try:
            M_vv = emb.I - emb.Q_vv @ F
            rhs = np.hstack([(emb.Q_coll - emb.Q_vv) @ F, emb.C_coll])
            sol = np.linalg.solve(M_vv, rhs)
        except np.linalg.LinAlgError:
            return _PointResult(np.nan, 0, 1)
        P, k, _ = _iterate_to_tolerance(emb, F, sol[:, : emb.n], sol[:, emb.n:], tol, k_max)
        Pt = emb.Ct_coll @ emb.T_P + emb.Qt_coll @ F @ P @ emb.T_P
        if not np.all(np.isfinite(Pt)):
            return _PointResult(np.inf, k, 2)
        H = energy_matrix(params)
        h_hat = Pt.T @ H @ Pt - H
        return _PointResult(float(np.max(np.abs(np.diag(h_hat)))), k, 0)

    a_values, b_values, value, k_used, status = _run_grid(point, a_values, b_values)
    mask = physical_mask(a_values, b_values)
    conserving = (value <= 1e-8) & (status == 0)
    return GridMap(a_values, b_values, value, mask, conserving, k_used, status)
