"""Penning-trap fields, softened Coulomb interaction and analytic reference.

Field conventions (cgs units): the trap magnetic field is
``B = (omega_b / alpha) e_z`` and the external electric field derives from
an ideal quadrupole potential,

    E_ext(x) = -epsilon * omega_e**2 / alpha * diag(1, 1, -2) @ x.

``epsilon = -1`` confines the particle along z (the Penning configuration),
``epsilon = +1`` lets it escape along z.  The inter-particle field uses
Plummer softening with length ``lam`` to remove the Coulomb pole.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, UnsupportedRegimeError

__all__ = [
    "PenningParams",
    "ParticleEnsemble",
    "AnalyticCoefficients",
    "PenningForce",
    "e_ext",
    "e_int",
    "b_field",
    "lorentz_force",
    "external_potential",
    "total_energy",
    "center_of_mass",
    "analytic_coefficients",
    "analytic_solution",
]

_EXT_DIAG = np.array([1.0, 1.0, -2.0])


@dataclass(frozen=True)
class PenningParams:
    """Trap parameters: charge-to-mass ratio and field frequencies."""

    alpha: float = 1.0
    omega_e: float = 4.9
    omega_b: float = 25.0
    epsilon: int = -1

    def __post_init__(self):
        if self.epsilon not in (-1, 1):
            raise ParameterError("epsilon must be -1 or +1")
        if self.omega_e < 0 or self.omega_b < 0:
            raise ParameterError("field frequencies must be non-negative")
        if self.alpha == 0:
            raise ParameterError("charge-to-mass ratio must be non-zero")

    @property
    def physically_stable(self) -> bool:
        """Planar revolution frequencies are real."""
        return self.omega_b**2 >= -4.0 * self.epsilon * self.omega_e**2


@dataclass
class ParticleEnsemble:
    """Positions, velocities, charges and masses of N particles in 3D."""

    x: np.ndarray
    v: np.ndarray
    charge: np.ndarray
    mass: np.ndarray
    lam: float = 0.01  # Coulomb smoothing length (cm); spec default

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.charge = np.atleast_1d(np.asarray(self.charge, dtype=float))
        self.mass = np.atleast_1d(np.asarray(self.mass, dtype=float))
        n = self.x.shape[0]
        if self.x.shape != (n, 3) or self.v.shape != (n, 3):
            raise ParameterError("x and v must have shape (N, 3)")
        if self.charge.shape != (n,) or self.mass.shape != (n,):
            raise ParameterError("charge and mass must have shape (N,)")
        if np.any(self.mass <= 0):
            raise ParameterError("masses must be positive")
        if n > 1 and self.lam <= 0:
            raise ParameterError("lam must be positive for N > 1")

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]

    @classmethod
    def single(cls, x0, v0, charge=1.0, mass=1.0, lam=0.01) -> "ParticleEnsemble":
        return cls(
            x=np.asarray(x0, dtype=float).reshape(1, 3),
            v=np.asarray(v0, dtype=float).reshape(1, 3),
            charge=np.array([charge], dtype=float),
            mass=np.array([mass], dtype=float),
            lam=lam,
        )

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.x.copy(), self.v.copy(), self.charge.copy(), self.mass.copy(), self.lam
        )


def e_ext(params: PenningParams, x: np.ndarray) -> np.ndarray:
    """External quadrupole field at positions ``x`` (shape (..., 3))."""
    x = np.asarray(x, dtype=float)
    return (-params.epsilon * params.omega_e**2 / params.alpha) * (_EXT_DIAG * x)


def e_int(ensemble: ParticleEnsemble, i: int) -> np.ndarray:
    """Softened Coulomb field from all other particles at particle i."""
    return e_int_all(ensemble)[i]


def e_int_all(ensemble: ParticleEnsemble) -> np.ndarray:
    """Softened Coulomb field at every particle, direct O(N^2) sum."""
    x = ensemble.x
    n = x.shape[0]
    if n == 1:
        return np.zeros_like(x)
    diff = x[:, None, :] - x[None, :, :]  # diff[i, k] = x_i - x_k
    r2 = np.einsum("ikd,ikd->ik", diff, diff) + ensemble.lam**2
    inv = ensemble.charge[None, :] / (r2 * np.sqrt(r2))
    np.fill_diagonal(inv, 0.0)
    return np.einsum("ik,ikd->id", inv, diff)


def b_field(params: PenningParams, x: np.ndarray | None = None) -> np.ndarray:
    """Constant axial magnetic field, broadcast to the shape of ``x``."""
    b = np.array([0.0, 0.0, params.omega_b / params.alpha])
    if x is None:
        return b
    return np.broadcast_to(b, np.asarray(x).shape).copy()


def lorentz_force(params: PenningParams, ensemble: ParticleEnsemble, i: int, v) -> np.ndarray:
    """Acceleration of particle i at velocity ``v``: alpha_i (E + v x B)."""
    v = np.asarray(v, dtype=float)
    alpha_i = ensemble.charge[i] / ensemble.mass[i]
    e_total = e_ext(params, ensemble.x[i]) + e_int(ensemble, i)
    return alpha_i * (e_total + np.cross(v, b_field(params)))


def external_potential(params: PenningParams, x: np.ndarray) -> np.ndarray:
    """Quadrupole potential with E_ext = -grad(Phi)."""
    x = np.asarray(x, dtype=float)
    quad = x[..., 0] ** 2 + x[..., 1] ** 2 - 2.0 * x[..., 2] ** 2
    return params.epsilon * params.omega_e**2 / (2.0 * params.alpha) * quad


def total_energy(params: PenningParams, ensemble: ParticleEnsemble) -> float:
    """Kinetic plus external-potential plus softened pair energy."""
    kinetic = 0.5 * np.sum(ensemble.mass * np.einsum("id,id->i", ensemble.v, ensemble.v))
    ext = np.sum(ensemble.charge * external_potential(params, ensemble.x))
    pair = 0.0
    n = ensemble.n_particles
    if n > 1:
        diff = ensemble.x[:, None, :] - ensemble.x[None, :, :]
        r2 = np.einsum("ikd,ikd->ik", diff, diff) + ensemble.lam**2
        qq = ensemble.charge[:, None] * ensemble.charge[None, :]
        inv = qq / np.sqrt(r2)
        np.fill_diagonal(inv, 0.0)
        pair = 0.5 * float(np.sum(inv))
    return float(kinetic + ext + pair)


def center_of_mass(ensemble: ParticleEnsemble) -> np.ndarray:
    total = float(np.sum(ensemble.mass))
    if total <= 0:
        raise ParameterError("total mass must be positive")
    return (ensemble.mass[:, None] * ensemble.x).sum(axis=0) / total


@dataclass(frozen=True)
class AnalyticCoefficients:
    """Mode frequencies and amplitudes of the single-particle solution.

    ``omega_tilde`` drives the axial oscillation; ``omega_plus`` and
    ``omega_minus`` are the planar revolution frequencies, with amplitude
    pairs (r, i) for each rotating mode.
    """

    omega_tilde: float
    omega_plus: float
    omega_minus: float
    r_plus: float
    r_minus: float
    i_plus: float
    i_minus: float


def analytic_coefficients(params: PenningParams, x0, v0) -> AnalyticCoefficients:
    """Coefficients of the closed-form single-particle trajectory.

    Requires the confining configuration (epsilon = -1) with real,
    distinct revolution frequencies.
    """
    if params.epsilon != -1:
        raise UnsupportedRegimeError("analytic solution requires epsilon = -1")
    disc = params.omega_b**2 + 4.0 * params.epsilon * params.omega_e**2
    if disc <= 0:
        raise UnsupportedRegimeError(
            "physically unstable trap: omega_b**2 <= 4 omega_e**2"
        )
    x0 = np.asarray(x0, dtype=float).reshape(3)
    v0 = np.asarray(v0, dtype=float).reshape(3)
    root = np.sqrt(disc)
    omega_plus = 0.5 * (params.omega_b + root)
    omega_minus = 0.5 * (params.omega_b - root)
    r_minus = (omega_plus * x0[0] + v0[1]) / root
    i_minus = (omega_plus * x0[1] - v0[0]) / root
    return AnalyticCoefficients(
        omega_tilde=np.sqrt(2.0) * params.omega_e,
        omega_plus=omega_plus,
        omega_minus=omega_minus,
        r_plus=x0[0] - r_minus,
        r_minus=r_minus,
        i_plus=x0[1] - i_minus,
        i_minus=i_minus,
    )


def analytic_solution(params: PenningParams, x0, v0, t) -> tuple[np.ndarray, np.ndarray]:
    """Exact single-particle state at time ``t``.

    ``t`` may be scalar or an array; position and velocity are returned
    with shape ``(..., 3)``.  The planar motion is the sum of two rotating
    modes evaluated through explicit (real, imaginary) amplitude pairs;
    the axial motion is an independent harmonic oscillation.
    """
    c = analytic_coefficients(params, x0, v0)
    x0 = np.asarray(x0, dtype=float).reshape(3)
    v0 = np.asarray(v0, dtype=float).reshape(3)
    t = np.asarray(t, dtype=float)

    cp, sp = np.cos(c.omega_plus * t), np.sin(c.omega_plus * t)
    cm, sm = np.cos(c.omega_minus * t), np.sin(c.omega_minus * t)
    x = c.r_plus * cp + c.i_plus * sp + c.r_minus * cm + c.i_minus * sm
    y = c.i_plus * cp - c.r_plus * sp + c.i_minus * cm - c.r_minus * sm
    vx = c.omega_plus * (c.i_plus * cp - c.r_plus * sp) + c.omega_minus * (
        c.i_minus * cm - c.r_minus * sm
    )
    vy = -c.omega_plus * (c.i_plus * sp + c.r_plus * cp) - c.omega_minus * (
        c.i_minus * sm + c.r_minus * cm
    )

    wt = c.omega_tilde
    if wt == 0.0:
        z = x0[2] + v0[2] * t
        vz = np.broadcast_to(v0[2], t.shape).astype(float) if t.shape else v0[2]
    else:
        z = x0[2] * np.cos(wt * t) + v0[2] / wt * np.sin(wt * t)
        vz = -x0[2] * wt * np.sin(wt * t) + v0[2] * np.cos(wt * t)

    pos = np.stack(np.broadcast_arrays(x, y, z), axis=-1)
    vel = np.stack(np.broadcast_arrays(vx, vy, vz), axis=-1)
    return pos, vel


class PenningForce:
    """Force model used by the integrators.

    Evaluates electric and magnetic fields for an ensemble and counts
    field evaluations; one call to :meth:`e_field` is one right-hand-side
    evaluation regardless of the particle count.
    """

    def __init__(self, params: PenningParams, ensemble: ParticleEnsemble):
        self.params = params
        self.charge = ensemble.charge
        self.mass = ensemble.mass
        self.alpha = (ensemble.charge / ensemble.mass)[:, None]
        self.lam = ensemble.lam
        self.rhs_evals = 0
        self._b = np.array([0.0, 0.0, params.omega_b / params.alpha])

    @property
    def n_particles(self) -> int:
        return self.charge.size

    def e_field(self, x: np.ndarray) -> np.ndarray:
        """Total electric field at every particle position; counts one eval."""
        self.rhs_evals += 1
        e = e_ext(self.params, x)
        if x.shape[0] > 1:
            tmp = ParticleEnsemble(
                x, np.zeros_like(x), self.charge, self.mass, self.lam
            )
            e = e + e_int_all(tmp)
        return e

    def b_at(self, x: np.ndarray) -> np.ndarray:
        """Magnetic field at every particle position (constant here)."""
        return np.broadcast_to(self._b, x.shape)

    def accel(self, e: np.ndarray, v: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Acceleration from already-evaluated fields; free of eval cost."""
        return self.alpha * (e + np.cross(v, b))

    def f(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Full right-hand side; costs one field evaluation."""
        return self.accel(self.e_field(x), v, self.b_at(x))

    def energy(self, x: np.ndarray, v: np.ndarray) -> float:
        ens = ParticleEnsemble(x, v, self.charge, self.mass, self.lam)
        return total_energy(self.params, ens)
