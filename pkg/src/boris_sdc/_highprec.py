"""Extended-precision re-evaluation of map points near the stability threshold.

At parameter points where the update operator has defective eigenvalues on
the unit circle (the physical-instability boundary), double-precision
assembly perturbs the operator by O(eps), which moves the eigenvalues by
O(sqrt(eps)), an order of magnitude above the stability threshold margin.
Rebuilding the point's operators in 40-digit arithmetic and taking the
spectral radius there settles the classification.
"""

from __future__ import annotations

from functools import lru_cache

import mpmath as mp

_DPS = 40


def _legendre_pair(n, x):
    p_prev = mp.mpf(1)
    if n == 0:
        return p_prev, mp.mpf(0)
    p = x
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1)
    return p, dp


def _lobatto_inner(M):
    n = M - 1
    tol = mp.mpf(10) ** (-_DPS + 5)
    roots = []
    for k in range(1, n):
        x = mp.cos(mp.pi * k / n)
        for _ in range(80):
            p, dp = _legendre_pair(n, x)
            ddp = (2 * x * dp - n * (n + 1) * p) / (1 - x * x)
            step = dp / ddp
            x -= step
            if abs(step) < tol:
                break
        roots.append(x)
    return sorted([mp.mpf(-1)] + roots + [mp.mpf(1)])


def _gauss_rule(n):
    tol = mp.mpf(10) ** (-_DPS + 5)
    xs = []
    for k in range(n):
        x = mp.cos(mp.pi * (k + mp.mpf(3) / 4) / (n + mp.mpf(1) / 2))
        for _ in range(80):
            p, dp = _legendre_pair(n, x)
            step = p / dp
            x -= step
            if abs(step) < tol:
                break
        xs.append(x)
    xs = sorted(xs)
    ws = []
    for x in xs:
        _, dp = _legendre_pair(n, x)
        ws.append(2 / ((1 - x * x) * dp * dp))
    return xs, ws


@lru_cache(maxsize=None)
def _rule_mp(M: int):
    """Lobatto rule matrices on [0, 1] in mp precision (cached per M)."""
    mp.mp.dps = _DPS
    xs = _lobatto_inner(M)
    taus = [mp.mpf(0)] + [(x + 1) / 2 for x in xs]
    inner = taus[1:]
    gx, gw = _gauss_rule(M + 2)

    def ell(j, s):
        r = mp.mpf(1)
        for i, ti in enumerate(inner):
            if i != j:
                r *= (s - ti) / (inner[j] - ti)
        return r

    def integ(j, b):
        h = b / 2
        return h * mp.fsum(w * ell(j, h + h * x) for x, w in zip(gx, gw))

    Q = mp.zeros(M + 1, M + 1)
    qv = mp.zeros(1, M + 1)
    for j in range(M):
        for m in range(1, M + 1):
            Q[m, j + 1] = integ(j, taus[m])
        qv[0, j + 1] = integ(j, mp.mpf(1))
    QQ = Q * Q
    dtau = [mp.mpf(0)] + [taus[m] - taus[m - 1] for m in range(1, M + 1)]
    QE = mp.zeros(M + 1, M + 1)
    QI = mp.zeros(M + 1, M + 1)
    for m in range(M + 1):
        for l in range(1, m + 1):
            QE[m, l - 1] = dtau[l]
            QI[m, l] = dtau[l]
    QT = (QE + QI) / 2
    had = mp.zeros(M + 1, M + 1)
    for i in range(M + 1):
        for j in range(M + 1):
            had[i, j] = QE[i, j] ** 2
    Qx = QE * QT + had / 2
    return dict(Q=Q, QQ=QQ, q=qv, QT=QT, Qx=Qx, QE=QE)


def _kron(A, B):
    C = mp.zeros(A.rows * B.rows, A.cols * B.cols)
    for i in range(A.rows):
        for j in range(A.cols):
            a = A[i, j]
            if a == 0:
                continue
            for k in range(B.rows):
                for l in range(B.cols):
                    C[i * B.rows + k, j * B.cols + l] = a * B[k, l]
    return C


def refine_spectral_radius(a: float, b: float, M: int, method: str, k: int, dim: int = 2) -> float:
    """Spectral radius of the point's update operator in mp arithmetic.

    ``method`` is 'collocation' or an iterated-sweep operator re-run with
    the same iteration count ``k`` the double-precision pass selected.
    """
    mp.mp.dps = _DPS
    rule = _rule_mp(M)
    eps = -1 if a < 0 else 1
    wE = abs(mp.mpf(a))
    wB = mp.mpf(b)
    d = dim
    A_x = mp.zeros(d, d)
    A_v = mp.zeros(d, d)
    for i in range(min(d, 2)):
        A_x[i, i] = -eps * wE**2
    if d == 3:
        A_x[2, 2] = 2 * eps * wE**2
    A_v[0, 1] = wB
    A_v[1, 0] = -wB

    Ix = mp.matrix([[1], [0]])
    Iv = mp.matrix([[0], [1]])
    Ixv = mp.matrix([[0, 1], [0, 0]])
    Id = mp.eye(d)
    emb = lambda R, P: _kron(R, _kron(P, Id))
    n = (M + 1) * 2 * d
    I = mp.eye(n)
    AxAv = mp.zeros(d, 2 * d)
    for i in range(d):
        for j in range(d):
            AxAv[i, j] = A_x[i, j]
            AxAv[i, d + j] = A_v[i, j]
    F = _kron(mp.eye(M + 1), AxAv)
    Qc = emb(rule["Q"], Iv) + emb(rule["QQ"], Ix)
    Cc = I + emb(rule["Q"], Ixv)
    Mc = I - Qc * F
    TP = _kron(mp.ones(M + 1, 1), mp.eye(2 * d))
    TR = mp.zeros(2 * d, n)
    for i in range(2 * d):
        TR[i, n - 2 * d + i] = 1
    Ct = TR + emb(rule["q"], Ixv)
    Qt = emb(rule["q"] * rule["Q"], Ix) + emb(rule["q"], Iv)

    if method == "collocation":
        P = Mc**-1 * Cc
    elif method == "picard":
        Kit = Qc * F
        P = mp.eye(n)
        for _ in range(k):
            P = Kit * P + Cc
    else:
        Qvv = emb(rule["Qx"], Ix) + emb(rule["QT"], Iv)
        Mvv_inv = (I - Qvv * F) ** -1
        Kit = Mvv_inv * ((Qc - Qvv) * F)
        MC = Mvv_inv * Cc
        P = mp.eye(n)
        for _ in range(k):
            P = Kit * P + MC
    Pt = Ct * TP + Qt * (F * (P * TP))
    eigs = mp.eig(Pt, left=False, right=False)
    return float(max(abs(complex(e)) for e in eigs))
