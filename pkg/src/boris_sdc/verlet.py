"""Composite velocity-Verlet propagation matrices over a set of nodes.

Running velocity-Verlet from node 0 through node M can be written with
four matrices acting on stacked node values: explicit-Euler and
implicit-Euler cumulative-step matrices ``QE`` and ``QI``, their average
``QT`` (trapezoidal velocity update), and the position matrix
``Qx = QE @ QT + (QE o QE) / 2`` with ``o`` the entrywise product.
These define the low-order preconditioner of the SDC iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = ["VerletMatrices", "build_verlet_matrices"]


@dataclass(frozen=True)
class VerletMatrices:
    """Low-order propagation matrices on one step's nodes.

    ``QE`` is strictly lower triangular, ``QI`` lower triangular with a
    zero first row, ``QT`` lower triangular, ``Qx`` strictly lower
    triangular.  All are ``(M+1) x (M+1)``.
    """

    taus: np.ndarray
    QE: np.ndarray
    QI: np.ndarray
    QT: np.ndarray
    Qx: np.ndarray


def build_verlet_matrices(taus: np.ndarray) -> VerletMatrices:
    """Build QE, QI, QT, Qx from the node times of one step.

    Row m of QE holds the substep lengths (dtau_1, ..., dtau_m) in
    columns 0..m-1; row m of QI holds the same values shifted one column
    right.
    """
    taus = np.asarray(taus, dtype=float)
    dtau = np.diff(taus)
    if np.any(dtau < 0):
        raise ParameterError("node times must be non-decreasing")
    n = taus.size
    QE = np.zeros((n, n))
    QI = np.zeros((n, n))
    for m in range(1, n):
        QE[m, : m] = dtau[: m]
        QI[m, 1 : m + 1] = dtau[: m]
    QT = 0.5 * (QE + QI)
    Qx = QE @ QT + 0.5 * (QE * QE)
    return VerletMatrices(taus=taus, QE=QE, QI=QI, QT=QT, Qx=Qx)
