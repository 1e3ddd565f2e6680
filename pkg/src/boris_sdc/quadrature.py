"""Collocation nodes and quadrature matrices for one time step.

Builds Gauss-Lobatto or Gauss-Legendre nodes on ``[t_left, t_right]`` with
the step start prepended as an extra node, plus the integration matrices
used by the collocation system and the node-to-node sweeps:

``Q``   integrates nodal samples from the step start to each node,
``QQ``  is the twice-iterated integral ``Q @ Q``,
``q``   holds the full-interval weights,
``S``, ``Sx``, ``SQ`` are first-difference (node-to-node) transforms of
``Q``, the Verlet position matrix and ``QQ`` respectively.

All matrices are ``(M+1) x (M+1)`` with a zero row and column for the
prepended start node, so matrix indices coincide with node indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ParameterError
from .verlet import VerletMatrices, build_verlet_matrices

__all__ = [
    "NodeFamily",
    "QuadratureRule",
    "make_nodes",
    "build_rule",
    "legendre_nodes",
    "lobatto_nodes",
    "gauss_legendre_rule",
]

_NEWTON_TOL = 1e-15
_NEWTON_MAX_ITER = 100


class NodeFamily(Enum):
    """Supported collocation node families.

    Gauss-Lobatto nodes include both interval endpoints; Gauss-Legendre
    nodes include neither.
    """

    GAUSS_LOBATTO = "lobatto"
    GAUSS_LEGENDRE = "legendre"

    @classmethod
    def parse(cls, name: str) -> "NodeFamily":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ParameterError(f"unknown node family {name!r}") from None


def _legendre(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Legendre polynomial P_n and derivative P_n' via the recurrence.

    The derivative formula requires |x| < 1 for n >= 1.
    """
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def legendre_nodes(M: int) -> np.ndarray:
    """Roots of P_M on (-1, 1), ascending.

    Closed forms for M <= 3, otherwise Newton iteration from Chebyshev
    initial guesses, converged to ``_NEWTON_TOL``.
    """
    if M < 1:
        raise ParameterError("Gauss-Legendre requires M >= 1")
    if M == 1:
        return np.array([0.0])
    if M == 2:
        r = 1.0 / np.sqrt(3.0)
        return np.array([-r, r])
    if M == 3:
        r = np.sqrt(3.0 / 5.0)
        return np.array([-r, 0.0, r])
    i = np.arange(M)
    x = np.cos(np.pi * (4 * i + 3) / (4 * M + 2))
    for _ in range(_NEWTON_MAX_ITER):
        p, dp = _legendre(M, x)
        dx = p / dp
        x -= dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    x = np.sort(x)
    return 0.5 * (x - x[::-1])  # enforce exact +/- symmetry


def lobatto_nodes(M: int) -> np.ndarray:
    """Gauss-Lobatto nodes on [-1, 1]: endpoints plus roots of P'_{M-1}."""
    if M < 2:
        raise ParameterError("Gauss-Lobatto requires M >= 2")
    if M == 2:
        return np.array([-1.0, 1.0])
    if M == 3:
        return np.array([-1.0, 0.0, 1.0])
    n = M - 1
    k = np.arange(1, n)
    x = np.cos(np.pi * k / n)
    for _ in range(_NEWTON_MAX_ITER):
        p, dp = _legendre(n, x)
        ddp = (2.0 * x * dp - n * (n + 1) * p) / (1.0 - x * x)
        dx = dp / ddp
        x -= dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    x = np.sort(x)
    inner = 0.5 * (x - x[::-1])
    return np.concatenate(([-1.0], inner, [1.0]))


def gauss_legendre_rule(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes and weights on [a, b]."""
    x = legendre_nodes(n)
    _, dp = _legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    if n == 1:
        w = np.array([2.0])
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weight matrices for one collocation time step.

    ``taus`` has length M+1 with ``taus[0] == t_left``; ``dtau[m]`` is
    ``taus[m] - taus[m-1]`` with ``dtau[0] == 0``.  ``q`` is the row of
    full-interval weights.  ``verlet`` holds the low-order propagation
    matrices built on the same nodes.
    """

    family: NodeFamily
    M: int
    t_left: float
    t_right: float
    taus: np.ndarray
    Q: np.ndarray
    QQ: np.ndarray
    S: np.ndarray
    Sx: np.ndarray
    SQ: np.ndarray
    q: np.ndarray
    dtau: np.ndarray
    verlet: VerletMatrices

    @property
    def dt(self) -> float:
        return self.t_right - self.t_left

    @property
    def right_endpoint_is_node(self) -> bool:
        """True when the last node coincides with the step end (Lobatto)."""
        return self.family is NodeFamily.GAUSS_LOBATTO


def make_nodes(family: NodeFamily, M: int, t_left: float, t_right: float) -> np.ndarray:
    """Collocation nodes on [t_left, t_right] with the start prepended.

    Returns an array of M+1 times; the M quadrature nodes are the standard
    Lobatto or Legendre points affinely mapped from [-1, 1].
    """
    if t_right <= t_left:
        raise ParameterError("t_right must exceed t_left")
    if family is NodeFamily.GAUSS_LOBATTO:
        ref = lobatto_nodes(M)
    elif family is NodeFamily.GAUSS_LEGENDRE:
        ref = legendre_nodes(M)
    else:
        raise ParameterError(f"unknown node family {family!r}")
    taus = t_left + 0.5 * (ref + 1.0) * (t_right - t_left)
    return np.concatenate(([t_left], taus))


def _lagrange_eval(nodes: np.ndarray, j: int, s: np.ndarray) -> np.ndarray:
    """Value of the j-th Lagrange basis polynomial over ``nodes`` at ``s``."""
    out = np.ones_like(s)
    for i, ti in enumerate(nodes):
        if i != j:
            out *= (s - ti) / (nodes[j] - ti)
    return out


def _first_difference(A: np.ndarray) -> np.ndarray:
    """Row m minus row m-1, keeping row 0 unchanged."""
    out = A.copy()
    out[1:] -= A[:-1]
    return out


def build_rule(
    family: NodeFamily,
    M: int,
    t_left: float,
    t_right: float,
    verlet: VerletMatrices | None = None,
) -> QuadratureRule:
    """Build all quadrature matrices for one step.

    Each entry ``Q[m, j]`` is the integral of the j-th Lagrange basis
    polynomial from the step start to node m, evaluated with an embedded
    Gauss-Legendre rule that is exact for the polynomial degree at hand.
    ``verlet`` must be built on the same nodes; it is constructed here
    when omitted.
    """
    taus = make_nodes(family, M, t_left, t_right)
    if verlet is None:
        verlet = build_verlet_matrices(taus)
    elif verlet.QE.shape[0] != M + 1 or not np.array_equal(verlet.taus, taus):
        raise ParameterError("verlet matrices built on different nodes")

    inner = taus[1:]
    n_gl = M // 2 + 2  # exact for degree <= M - 1, with margin
    Q = np.zeros((M + 1, M + 1))
    q = np.zeros(M + 1)
    for j in range(M):
        for m in range(1, M + 1):
            s, w = gauss_legendre_rule(n_gl, t_left, taus[m])
            Q[m, j + 1] = w @ _lagrange_eval(inner, j, s)
        s, w = gauss_legendre_rule(n_gl, t_left, t_right)
        q[j + 1] = w @ _lagrange_eval(inner, j, s)

    QQ = Q @ Q
    dtau = np.diff(taus, prepend=taus[0])
    return QuadratureRule(
        family=family,
        M=M,
        t_left=float(t_left),
        t_right=float(t_right),
        taus=taus,
        Q=Q,
        QQ=QQ,
        S=_first_difference(Q),
        Sx=_first_difference(verlet.Qx),
        SQ=_first_difference(QQ),
        q=q,
        dtau=dtau,
        verlet=verlet,
    )
