"""The explicit rotation solve at the core of the Boris velocity update.

The implicit trapezoidal velocity update for a Lorentz force splits into
a half kick by all velocity-independent accelerations, an exact rotation
about the magnetic field, and a second half kick.  The rotation preserves
speed to machine precision, which is what makes the scheme attractive for
long-time magnetized-particle runs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["rotate", "boris_velocity_update"]


def rotate(v_minus: np.ndarray, t_vec: np.ndarray) -> np.ndarray:
    """Rotate ``v_minus`` by the Boris rotation with half-angle vector ``t_vec``.

    Implements ``v+ = v- + (v- + v- x t) x s`` with
    ``s = 2 t / (1 + |t|^2)``; valid for any magnitude of ``t``.
    Broadcasts over leading axes (vectors along the last axis).
    """
    v_minus = np.asarray(v_minus, dtype=float)
    t_vec = np.asarray(t_vec, dtype=float)
    t2 = np.sum(t_vec * t_vec, axis=-1, keepdims=True)
    s = 2.0 * t_vec / (1.0 + t2)
    v_prime = v_minus + np.cross(v_minus, t_vec)
    return v_minus + np.cross(v_prime, s)


def boris_velocity_update(
    v_old: np.ndarray,
    dt: float,
    alpha,
    e_mid: np.ndarray,
    b_old: np.ndarray,
    b_new: np.ndarray,
    c_term,
) -> np.ndarray:
    """Solve the trapezoidal velocity update explicitly via rotation.

    Solves, exactly and without a linear solve,

        (v_new - v_old)/dt = alpha*(e_mid + (v_new x b_new + v_old x b_old)/2)
                             + c_term,

    by folding the velocity-independent part of the magnetic term,
    ``c_b = alpha/2 * v_old x (b_old - b_new)``, into the known
    acceleration.  With ``b_old == b_new`` this is the classical scheme;
    ``c_term`` carries the extra known accelerations of an SDC sweep and
    is zero for a plain step.

    ``alpha`` may be scalar or per-particle with shape ``(N, 1)``.
    """
    v_old = np.asarray(v_old, dtype=float)
    c_b = 0.5 * alpha * np.cross(v_old, b_old - b_new)
    half_kick = 0.5 * dt * (alpha * e_mid + c_term + c_b)
    v_minus = v_old + half_kick
    v_plus = rotate(v_minus, 0.5 * dt * alpha * b_new)
    return v_plus + half_kick
