"""Numba kernels for long Penning-trap runs.

Mirrors the python engine in :mod:`boris_sdc.integrators` for the
constant-B Penning force: classical Boris stepping and Boris-SDC sweeps
with fixed iteration counts or residual control, plain or compensated
accumulation, and strided sampling of energy/iteration/evaluation
counters.  Results agree with the python engine to rounding.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import DivergenceError
from .integrators import TrajectoryRecord


@njit(cache=True)
def _e_field(x, e, coef_e, charge, lam2):
    n = x.shape[0]
    for i in range(n):
        e[i, 0] = coef_e * x[i, 0]
        e[i, 1] = coef_e * x[i, 1]
        e[i, 2] = -2.0 * coef_e * x[i, 2]
    if n > 1:
        for i in range(n):
            for k in range(n):
                if k == i:
                    continue
                dx = x[i, 0] - x[k, 0]
                dy = x[i, 1] - x[k, 1]
                dz = x[i, 2] - x[k, 2]
                r2 = dx * dx + dy * dy + dz * dz + lam2
                w = charge[k] / (r2 * np.sqrt(r2))
                e[i, 0] += w * dx
                e[i, 1] += w * dy
                e[i, 2] += w * dz


@njit(cache=True)
def _accel(e, v, alpha_i, bz, f):
    n = e.shape[0]
    for i in range(n):
        a = alpha_i[i]
        f[i, 0] = a * (e[i, 0] + v[i, 1] * bz)
        f[i, 1] = a * (e[i, 1] - v[i, 0] * bz)
        f[i, 2] = a * e[i, 2]


@njit(cache=True)
def _energy(x, v, charge, mass, coef_e, lam2):
    n = x.shape[0]
    kin = 0.0
    pot = 0.0
    for i in range(n):
        kin += 0.5 * mass[i] * (v[i, 0] ** 2 + v[i, 1] ** 2 + v[i, 2] ** 2)
        quad = x[i, 0] ** 2 + x[i, 1] ** 2 - 2.0 * x[i, 2] ** 2
        pot += charge[i] * (-0.5 * coef_e) * quad
    if n > 1:
        for i in range(n):
            for k in range(i + 1, n):
                dx = x[i, 0] - x[k, 0]
                dy = x[i, 1] - x[k, 1]
                dz = x[i, 2] - x[k, 2]
                pot += charge[i] * charge[k] / np.sqrt(dx * dx + dy * dy + dz * dz + lam2)
    return kin + pot


@njit(cache=True)
def _boris_kick_rotate(v_old_i, g, tz, dm, out_i):
    """v_new = half kick + rotation about z + half kick, one particle."""
    hx = 0.5 * dm * g[0]
    hy = 0.5 * dm * g[1]
    hz = 0.5 * dm * g[2]
    vmx = v_old_i[0] + hx
    vmy = v_old_i[1] + hy
    vmz = v_old_i[2] + hz
    s = 2.0 * tz / (1.0 + tz * tz)
    vpx = vmx + vmy * tz
    vpy = vmy - vmx * tz
    out_i[0] = vmx + vpy * s + hx
    out_i[1] = vmy - vpx * s + hy
    out_i[2] = vmz + hz


@njit(cache=True)
def _finite(x, v):
    n = x.shape[0]
    for i in range(n):
        for d in range(3):
            if not (np.isfinite(x[i, d]) and np.isfinite(v[i, d])):
                return False
    return True


@njit(cache=True)
def _kahan(state, comp, new):
    n = state.shape[0]
    for i in range(n):
        for d in range(3):
            y = (new[i, d] - state[i, d]) - comp[i, d]
            t = state[i, d] + y
            comp[i, d] = (t - state[i, d]) - y
            state[i, d] = t


@njit(cache=True)
def _run_boris(x, v, charge, mass, alpha_i, coef_e, bz, lam2, dt, n_steps,
               compensated, stride, samp_steps, samp_energy, samp_res,
               samp_iters, samp_rhs, samp_x, samp_v, record_states):
    n = x.shape[0]
    comp_x = np.zeros((n, 3))
    comp_v = np.zeros((n, 3))
    e0 = np.empty((n, 3))
    e1 = np.empty((n, 3))
    emid = np.empty((n, 3))
    f0 = np.empty((n, 3))
    x1 = np.empty((n, 3))
    v1 = np.empty((n, 3))
    g = np.empty(3)
    rhs = 0
    isample = 0

    _e_field(x, e0, coef_e, charge, lam2)
    rhs += 1
    samp_steps[0] = 0
    samp_energy[0] = _energy(x, v, charge, mass, coef_e, lam2)
    samp_res[0] = np.nan
    samp_iters[0] = 0
    samp_rhs[0] = rhs
    if record_states:
        samp_x[0] = x
        samp_v[0] = v
    isample = 1

    for step in range(1, n_steps + 1):
        _accel(e0, v, alpha_i, bz, f0)
        for i in range(n):
            for d in range(3):
                x1[i, d] = x[i, d] + dt * (v[i, d] + 0.5 * dt * f0[i, d])
        _e_field(x1, e1, coef_e, charge, lam2)
        rhs += 1
        for i in range(n):
            for d in range(3):
                emid[i, d] = 0.5 * (e0[i, d] + e1[i, d])
        for i in range(n):
            a = alpha_i[i]
            g[0] = a * emid[i, 0]
            g[1] = a * emid[i, 1]
            g[2] = a * emid[i, 2]
            _boris_kick_rotate(v[i], g, 0.5 * dt * a * bz, dt, v1[i])
        if not _finite(x1, v1):
            return 1, step, isample, rhs, step - 1, 0
        if compensated:
            _kahan(x, comp_x, x1)
            _kahan(v, comp_v, v1)
        else:
            x[:] = x1
            v[:] = v1
        for i in range(n):
            for d in range(3):
                e0[i, d] = e1[i, d]
        if step % stride == 0 or step == n_steps:
            samp_steps[isample] = step
            samp_energy[isample] = _energy(x, v, charge, mass, coef_e, lam2)
            samp_res[isample] = np.nan
            samp_iters[isample] = 1
            samp_rhs[isample] = rhs
            if record_states:
                samp_x[isample] = x
                samp_v[isample] = v
            isample += 1
    return 0, n_steps, isample, rhs, n_steps, 0


@njit(cache=True)
def _residual(X, V, F, Q, QQ, q_row, x0, v0):
    m1 = X.shape[0]
    n = X.shape[1]
    r = 0.0
    for m in range(1, m1):
        sx = 0.0
        sv = 0.0
        for i in range(n):
            for d in range(3):
                ax = x0[i, d] + q_row[m] * v0[i, d] - X[m, i, d]
                av = v0[i, d] - V[m, i, d]
                for l in range(1, m1):
                    ax += QQ[m, l] * F[l, i, d]
                    av += Q[m, l] * F[l, i, d]
                sx += ax * ax
                sv += av * av
        sx = np.sqrt(sx)
        sv = np.sqrt(sv)
        if sx > r:
            r = sx
        if sv > r:
            r = sv
    return r


@njit(cache=True)
def _run_sdc(x, v, charge, mass, alpha_i, coef_e, bz, lam2, dt, n_steps,
             S, Sx, SQ, Q, QQ, q_row, qvec, qQ, q_sum, dtau, lobatto,
             iterations, tol, k_max, compensated, stride,
             samp_steps, samp_energy, samp_res, samp_iters, samp_rhs,
             samp_x, samp_v, record_states):
    n = x.shape[0]
    m1 = dtau.shape[0]
    M = m1 - 1
    comp_x = np.zeros((n, 3))
    comp_v = np.zeros((n, 3))
    Xo = np.empty((m1, n, 3))
    Vo = np.empty((m1, n, 3))
    Fo = np.empty((m1, n, 3))
    Eo = np.empty((m1, n, 3))
    Xn = np.empty((m1, n, 3))
    Vn = np.empty((m1, n, 3))
    Fn = np.empty((m1, n, 3))
    En = np.empty((m1, n, 3))
    x1 = np.empty((n, 3))
    v1 = np.empty((n, 3))
    g = np.empty(3)
    e_tmp = np.empty((n, 3))
    f_tmp = np.empty((n, 3))
    rhs = 0
    total_iters = 0
    kmax_exhausted = 0
    isample = 0

    samp_steps[0] = 0
    samp_energy[0] = _energy(x, v, charge, mass, coef_e, lam2)
    samp_res[0] = np.nan
    samp_iters[0] = 0
    samp_rhs[0] = 0
    if record_states:
        samp_x[0] = x
        samp_v[0] = v
    isample = 1

    for step in range(1, n_steps + 1):
        # copy initial value to all nodes, one field evaluation
        _e_field(x, e_tmp, coef_e, charge, lam2)
        rhs += 1
        _accel(e_tmp, v, alpha_i, bz, f_tmp)
        for m in range(m1):
            for i in range(n):
                for d in range(3):
                    Xo[m, i, d] = x[i, d]
                    Vo[m, i, d] = v[i, d]
                    Fo[m, i, d] = f_tmp[i, d]
                    Eo[m, i, d] = e_tmp[i, d]
        iters = 0
        res = np.nan
        diverged = False
        while True:
            # one node-to-node sweep, old iterate in (Xo, ...), new in (Xn, ...)
            for i in range(n):
                for d in range(3):
                    Xn[0, i, d] = Xo[0, i, d]
                    Vn[0, i, d] = Vo[0, i, d]
                    Fn[0, i, d] = Fo[0, i, d]
                    En[0, i, d] = Eo[0, i, d]
            for m in range(M):
                dm = dtau[m + 1]
                for i in range(n):
                    for d in range(3):
                        acc = Xn[m, i, d] + dm * Vo[0, i, d]
                        for l in range(1, m + 1):
                            acc += Sx[m + 1, l] * (Fn[l, i, d] - Fo[l, i, d])
                        for l in range(1, M + 1):
                            acc += SQ[m + 1, l] * Fo[l, i, d]
                        Xn[m + 1, i, d] = acc
                        if not np.isfinite(acc):
                            diverged = True
                if diverged:
                    break
                _e_field(Xn[m + 1], e_tmp, coef_e, charge, lam2)
                rhs += 1
                for i in range(n):
                    for d in range(3):
                        En[m + 1, i, d] = e_tmp[i, d]
                if dm == 0.0:
                    for i in range(n):
                        for d in range(3):
                            sum_s = 0.0
                            for l in range(1, M + 1):
                                sum_s += S[m + 1, l] * Fo[l, i, d]
                            Vn[m + 1, i, d] = Vn[m, i, d] + sum_s
                else:
                    for i in range(n):
                        a = alpha_i[i]
                        for d in range(3):
                            sum_s = 0.0
                            for l in range(1, M + 1):
                                sum_s += S[m + 1, l] * Fo[l, i, d]
                            g[d] = (
                                a * 0.5 * (En[m, i, d] + En[m + 1, i, d])
                                + sum_s / dm
                                - 0.5 * (Fo[m + 1, i, d] + Fo[m, i, d])
                            )
                        _boris_kick_rotate(Vn[m, i], g, 0.5 * dm * a * bz, dm, Vn[m + 1, i])
                for i in range(n):
                    a = alpha_i[i]
                    Fn[m + 1, i, 0] = a * (En[m + 1, i, 0] + Vn[m + 1, i, 1] * bz)
                    Fn[m + 1, i, 1] = a * (En[m + 1, i, 1] - Vn[m + 1, i, 0] * bz)
                    Fn[m + 1, i, 2] = a * En[m + 1, i, 2]
            if diverged:
                break
            Xo, Xn = Xn, Xo
            Vo, Vn = Vn, Vo
            Fo, Fn = Fn, Fo
            Eo, En = En, Eo
            iters += 1
            if iterations > 0:
                if iters >= iterations:
                    break
            else:
                res = _residual(Xo, Vo, Fo, Q, QQ, q_row, x, v)
                if res <= tol:
                    break
                if iters >= k_max:
                    kmax_exhausted += 1
                    break
        total_iters += iters
        if diverged:
            return 1, step, isample, rhs, total_iters, kmax_exhausted
        if lobatto:
            for i in range(n):
                for d in range(3):
                    x1[i, d] = Xo[M, i, d]
                    v1[i, d] = Vo[M, i, d]
        else:
            for i in range(n):
                for d in range(3):
                    acc_v = v[i, d]
                    acc_x = x[i, d] + q_sum * v[i, d]
                    for l in range(1, M + 1):
                        acc_v += qvec[l] * Fo[l, i, d]
                        acc_x += qQ[l] * Fo[l, i, d]
                    v1[i, d] = acc_v
                    x1[i, d] = acc_x
        if not _finite(x1, v1):
            return 1, step, isample, rhs, total_iters, kmax_exhausted
        if compensated:
            _kahan(x, comp_x, x1)
            _kahan(v, comp_v, v1)
        else:
            x[:] = x1
            v[:] = v1
        if step % stride == 0 or step == n_steps:
            samp_steps[isample] = step
            samp_energy[isample] = _energy(x, v, charge, mass, coef_e, lam2)
            samp_res[isample] = res
            samp_iters[isample] = iters
            samp_rhs[isample] = rhs
            if record_states:
                samp_x[isample] = x
                samp_v[isample] = v
            isample += 1
    return 0, n_steps, isample, rhs, total_iters, kmax_exhausted


def run_trajectory_numba(u0, n_steps, dt, config, model, stride, record_states):
    """Dispatch a trajectory run to the compiled kernels."""
    x = np.atleast_2d(np.asarray(u0[0], dtype=float)).copy()
    v = np.atleast_2d(np.asarray(u0[1], dtype=float)).copy()
    n = x.shape[0]
    params = model.params
    coef_e = -params.epsilon * params.omega_e**2 / params.alpha
    bz = params.omega_b / params.alpha
    alpha_i = model.alpha[:, 0].copy()
    lam2 = model.lam**2

    n_samples_max = n_steps // stride + 2
    samp_steps = np.zeros(n_samples_max, dtype=np.int64)
    samp_energy = np.zeros(n_samples_max)
    samp_res = np.full(n_samples_max, np.nan)
    samp_iters = np.zeros(n_samples_max, dtype=np.int64)
    samp_rhs = np.zeros(n_samples_max, dtype=np.int64)
    shape = (n_samples_max, n, 3) if record_states else (1, n, 3)
    samp_x = np.zeros(shape)
    samp_v = np.zeros(shape)

    compensated = config.precision == "compensated"
    if config.method == "boris":
        status, step, isample, rhs, total_iters, kexh = _run_boris(
            x, v, model.charge, model.mass, alpha_i, coef_e, bz, lam2, dt,
            n_steps, compensated, stride, samp_steps, samp_energy, samp_res,
            samp_iters, samp_rhs, samp_x, samp_v, record_states,
        )
    else:
        rule = config.rule
        iterations = config.iterations if config.iterations is not None else 0
        tol = config.tol if config.tol is not None else 0.0
        status, step, isample, rhs, total_iters, kexh = _run_sdc(
            x, v, model.charge, model.mass, alpha_i, coef_e, bz, lam2, dt,
            n_steps, rule.S, rule.Sx, rule.SQ, rule.Q, rule.QQ,
            rule.Q.sum(axis=1), rule.q, rule.q @ rule.Q, rule.q.sum(),
            rule.dtau, rule.right_endpoint_is_node,
            iterations, tol, config.k_max, compensated, stride,
            samp_steps, samp_energy, samp_res, samp_iters, samp_rhs,
            samp_x, samp_v, record_states,
        )

    model.rhs_evals += int(rhs)
    rec = TrajectoryRecord(
        sample_steps=samp_steps,
        times=samp_steps * dt,
        energies=samp_energy,
        residuals=samp_res,
        iterations=samp_iters,
        rhs_evals=samp_rhs,
        xs=samp_x if record_states else None,
        vs=samp_v if record_states else None,
    ).truncate(isample)
    rec.total_steps = int(step if status else n_steps)
    rec.total_rhs_evals = int(rhs)
    rec.total_iterations = int(total_iters)
    rec.k_max_exhausted = int(kexh)
    if status != 0:
        raise DivergenceError(int(step), record=rec)
    rec.x_final = x
    rec.v_final = v
    return rec
