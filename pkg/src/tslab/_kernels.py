"""Stepping kernels shared by the linear and SICNN solvers.

Every kernel takes plain float64/bool arrays so it compiles under numba
without object mode.  Arrays indexed by node ``i`` describe the step from
``t[i]`` to ``t[i+1]``: ``dense[i]`` selects RK4 (with ``*_mid`` values at the
step midpoint) over the exact jump update ``x + mu*rhs``.
"""

import math

import numpy as np

from ._accel import jit


# -- linear systems ------------------------------------------------------------

@jit
def affine_forward(t, dense, mu, a_node, a_mid, g_node, g_mid, g_jump, y0, i0):
    """Integrate ``y' = A y + g`` forward from node ``i0``.

    ``y`` has shape ``(N, n, c)``.  At scattered steps the update is
    ``y[i+1] = (I + mu A[i]) y[i] + mu g_jump[i]``.
    """
    n_nodes = t.shape[0]
    n = y0.shape[0]
    c = y0.shape[1]
    y = np.zeros((n_nodes, n, c))
    y[i0] = y0
    for i in range(i0, n_nodes - 1):
        yi = y[i]
        if dense[i]:
            h = t[i + 1] - t[i]
            k1 = a_node[i] @ yi + g_node[i]
            k2 = a_mid[i] @ (yi + 0.5 * h * k1) + g_mid[i]
            k3 = a_mid[i] @ (yi + 0.5 * h * k2) + g_mid[i]
            k4 = a_node[i + 1] @ (yi + h * k3) + g_node[i + 1]
            y[i + 1] = yi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            m = mu[i]
            y[i + 1] = yi + m * (a_node[i] @ yi) + m * g_jump[i]
    return y


@jit
def affine_backward(t, dense, mu, a_node, a_mid, g_node, g_mid, g_jump, y_end, i_end, y):
    """Integrate ``y' = A y + g`` backward from node ``i_end`` into ``y``.

    Scattered steps invert ``(I + mu A)``; ``y`` is filled in place for
    indices ``<= i_end``.
    """
    n = y_end.shape[0]
    eye = np.eye(n)
    y[i_end] = y_end
    for i in range(i_end - 1, -1, -1):
        yn = y[i + 1]
        if dense[i]:
            h = t[i + 1] - t[i]
            k1 = a_node[i + 1] @ yn + g_node[i + 1]
            k2 = a_mid[i] @ (yn - 0.5 * h * k1) + g_mid[i]
            k3 = a_mid[i] @ (yn - 0.5 * h * k2) + g_mid[i]
            k4 = a_node[i] @ (yn - h * k3) + g_node[i]
            y[i] = yn - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            m = mu[i]
            y[i] = np.linalg.solve(eye + m * a_node[i], yn - m * g_jump[i])
    return y


# -- SICNN ---------------------------------------------------------------------


@jit
def hermite(t0, t1, x0, x1, d0, d1, u):
    """Cubic Hermite interpolation on ``[t0, t1]``."""
    h = t1 - t0
    s = (u - t0) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    return h00 * x0 + h10 * h * d0 + h01 * x1 + h11 * h * d1


EPS = 1e-9

# status codes returned by the SICNN kernels
@jit
def run_code(ops, consts, x):
    """Evaluate a postfix program from ``CoefficientExpr.bytecode`` at ``x``."""
    stack = np.empty(32)
    sp = 0
    for q in range(ops.shape[0]):
        op = ops[q, 0]
        if op == 0:
            stack[sp] = consts[ops[q, 1]]
            sp += 1
        elif op == 1:
            stack[sp] = x
            sp += 1
        elif op == 2:
            stack[sp - 1] = -stack[sp - 1]
        elif op >= 7 and op <= 11:
            v = stack[sp - 1]
            if op == 7:
                stack[sp - 1] = math.sin(v)
            elif op == 8:
                stack[sp - 1] = math.cos(v)
            elif op == 9:
                stack[sp - 1] = abs(v)
            elif op == 10:
                stack[sp - 1] = math.exp(v)
            else:
                stack[sp - 1] = math.sqrt(v) if v >= 0.0 else math.nan
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == 3:
                stack[sp - 1] = a + b
            elif op == 4:
                stack[sp - 1] = a - b
            elif op == 5:
                stack[sp - 1] = a * b
            elif op == 6:
                stack[sp - 1] = a / b if b != 0.0 else math.nan
            elif op == 12:
                stack[sp - 1] = min(a, b)
            else:
                stack[sp - 1] = max(a, b)
    return stack[0]


@jit
def _simpson3(ops, consts, x0, xm, x1):
    return run_code(ops, consts, x0) + 4.0 * run_code(ops, consts, xm) + run_code(ops, consts, x1)


OK = 0
MISS_GAP = 1      # delay point falls between scattered nodes
MISS_HISTORY = 2  # delay point precedes the stored history
MISS_AHEAD = 3    # delay point lies after the current stage time


@jit
def _last_node(t, u, hi):
    """Largest ``j <= hi`` with ``t[j] <= u + EPS`` (``-1`` if none)."""
    lo = 0
    if t[0] > u + EPS:
        return -1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if t[mid] <= u + EPS:
            lo = mid
        else:
            hi = mid - 1
    return lo


@jit
def _value(k, u, i, s, ys_k, t, dense, X, DR, DL):
    """``x_k(u)`` given nodes ``<= i`` committed and stage state ``ys_k`` at ``s``."""
    if u > t[i] + EPS:
        if u > s + EPS or s <= t[i] + EPS:
            return 0.0, MISS_AHEAD
        w = (u - t[i]) / (s - t[i])
        return X[i, k] + w * (ys_k - X[i, k]), OK
    j = _last_node(t, u, i)
    if j < 0:
        return 0.0, MISS_HISTORY
    if abs(t[j] - u) <= EPS:
        return X[j, k], OK
    if not dense[j]:
        return 0.0, MISS_GAP
    return hermite(t[j], t[j + 1], X[j, k], X[j + 1, k], DR[j, k], DL[j + 1, k], u), OK


@jit
def _cum_at(k, v, i, t, dense, X, DR, DL, G, gop, gc):
    """``∫_{t_0}^{v} g(x_k) Δu`` for ``v <= t[i]``."""
    j = _last_node(t, v, i)
    if j < 0:
        return 0.0, MISS_HISTORY
    if abs(t[j] - v) <= EPS:
        return G[j, k], OK
    if not dense[j]:
        return 0.0, MISS_GAP
    xa = X[j, k]
    xm = hermite(t[j], t[j + 1], xa, X[j + 1, k], DR[j, k], DL[j + 1, k], 0.5 * (t[j] + v))
    xv = hermite(t[j], t[j + 1], xa, X[j + 1, k], DR[j, k], DL[j + 1, k], v)
    return G[j, k] + (v - t[j]) / 6.0 * (_simpson3(gop, gc, xa, xm, xv)), OK


@jit
def _window_integral(k, v, s, i, ys_k, t, dense, X, DR, DL, G, gop, gc):
    """``∫_v^s g(x_k) Δu`` with nodes ``<= i`` committed and ``x_k(s) = ys_k``."""
    if s - v <= EPS:
        return 0.0, OK
    ti = t[i]
    if v >= ti - EPS:
        xv, st = _value(k, v, i, s, ys_k, t, dense, X, DR, DL)
        if st != OK:
            return 0.0, st
        xm, st = _value(k, 0.5 * (v + s), i, s, ys_k, t, dense, X, DR, DL)
        return (s - v) / 6.0 * (_simpson3(gop, gc, xv, xm, ys_k)), st
    gv, st = _cum_at(k, v, i, t, dense, X, DR, DL, G, gop, gc)
    if st != OK:
        return 0.0, st
    total = G[i, k] - gv
    if s > ti + EPS:
        xm = X[i, k] + 0.5 * (ys_k - X[i, k])
        total += (s - ti) / 6.0 * (_simpson3(gop, gc, X[i, k], xm, ys_k))
    return total, OK


@jit
def sicnn_rhs(s, i, ys, a, L, B, C, u_tau, u_del, t, dense, X, DR, DL, G, fop, fc, gop, gc, out):
    """Right-hand side at stage time ``s``; coefficient rows are already selected."""
    K = ys.shape[0]
    fv = np.empty(K)
    iv = np.empty(K)
    for kl in range(K):
        xv, st = _value(kl, u_tau[kl], i, s, ys[kl], t, dense, X, DR, DL)
        if st != OK:
            return st
        fv[kl] = run_code(fop, fc, xv)
        val, st = _window_integral(kl, u_del[kl], s, i, ys[kl], t, dense, X, DR, DL, G, gop, gc)
        if st != OK:
            return st
        iv[kl] = val
    for ij in range(K):
        sb = 0.0
        sc = 0.0
        for kl in range(K):
            sb += B[ij, kl] * fv[kl]
            sc += C[ij, kl] * iv[kl]
        out[ij] = -a[ij] * ys[ij] - (sb + sc) * ys[ij] + L[ij]
    return OK


@jit
def sicnn_simulate(t, dense, mu, n_hist, X, DR, DL,
                   a_nd, a_md, L_nd, L_md, B_nd, B_md, C_nd, C_md,
                   ut_nd, ut_md, ud_nd, ud_md, fop, fc, gop, gc):
    """Step the SICNN from node ``n_hist - 1`` to the end, filling ``X``, ``DR``, ``DL``.

    Nodes ``< n_hist`` hold the history.  Returns ``(status, node, G)``.
    """
    N = t.shape[0]
    K = X.shape[1]
    G = np.zeros((N, K))
    for i in range(n_hist - 1):
        for k in range(K):
            if dense[i]:
                xm = hermite(t[i], t[i + 1], X[i, k], X[i + 1, k], DR[i, k], DL[i + 1, k],
                             0.5 * (t[i] + t[i + 1]))
                G[i + 1, k] = G[i, k] + (t[i + 1] - t[i]) / 6.0 * (
                    _simpson3(gop, gc, X[i, k], xm, X[i + 1, k]))
            else:
                G[i + 1, k] = G[i, k] + mu[i] * run_code(gop, gc, X[i, k])
    k1 = np.empty(K)
    k2 = np.empty(K)
    k3 = np.empty(K)
    k4 = np.empty(K)
    for i in range(n_hist - 1, N - 1):
        st = sicnn_rhs(t[i], i, X[i], a_nd[i], L_nd[i], B_nd[i], C_nd[i], ut_nd[i], ud_nd[i],
                       t, dense, X, DR, DL, G, fop, fc, gop, gc, k1)
        if st != OK:
            return st, i, G
        DR[i] = k1
        if dense[i]:
            h = t[i + 1] - t[i]
            tm = t[i] + 0.5 * h
            st = sicnn_rhs(tm, i, X[i] + 0.5 * h * k1, a_md[i], L_md[i], B_md[i], C_md[i],
                           ut_md[i], ud_md[i], t, dense, X, DR, DL, G, fop, fc, gop, gc, k2)
            if st != OK:
                return st, i, G
            st = sicnn_rhs(tm, i, X[i] + 0.5 * h * k2, a_md[i], L_md[i], B_md[i], C_md[i],
                           ut_md[i], ud_md[i], t, dense, X, DR, DL, G, fop, fc, gop, gc, k3)
            if st != OK:
                return st, i, G
            st = sicnn_rhs(t[i + 1], i, X[i] + h * k3, a_nd[i + 1], L_nd[i + 1], B_nd[i + 1],
                           C_nd[i + 1], ut_nd[i + 1], ud_nd[i + 1], t, dense, X, DR, DL, G,
                           fop, fc, gop, gc, k4)
            if st != OK:
                return st, i, G
            X[i + 1] = X[i] + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            st = sicnn_rhs(t[i + 1], i, X[i + 1], a_nd[i + 1], L_nd[i + 1], B_nd[i + 1],
                           C_nd[i + 1], ut_nd[i + 1], ud_nd[i + 1], t, dense, X, DR, DL, G,
                           fop, fc, gop, gc, k4)
            if st != OK:
                return st, i, G
            DL[i + 1] = k4
            for k in range(K):
                xm = hermite(t[i], t[i + 1], X[i, k], X[i + 1, k], DR[i, k], DL[i + 1, k], tm)
                G[i + 1, k] = G[i, k] + h / 6.0 * (_simpson3(gop, gc, X[i, k], xm, X[i + 1, k]))
        else:
            m = mu[i]
            X[i + 1] = X[i] + m * k1
            DL[i + 1] = 0.0
            for k in range(K):
                G[i + 1, k] = G[i, k] + m * run_code(gop, gc, X[i, k])
    DR[N - 1] = DL[N - 1]
    return OK, N - 1, G


@jit
def diag_forward(t, dense, mu, a_nd, a_md, F_nd, F_md, x0):
    """Cellwise ``x^Δ = -a(t) x + F(t)`` forward from ``x0`` at node 0."""
    N = t.shape[0]
    K = x0.shape[0]
    x = np.empty((N, K))
    x[0] = x0
    for i in range(N - 1):
        if dense[i]:
            h = t[i + 1] - t[i]
            for k in range(K):
                y = x[i, k]
                k1 = -a_nd[i, k] * y + F_nd[i, k]
                k2 = -a_md[i, k] * (y + 0.5 * h * k1) + F_md[i, k]
                k3 = -a_md[i, k] * (y + 0.5 * h * k2) + F_md[i, k]
                k4 = -a_nd[i + 1, k] * (y + h * k3) + F_nd[i + 1, k]
                x[i + 1, k] = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            m = mu[i]
            for k in range(K):
                x[i + 1, k] = x[i, k] + m * (-a_nd[i, k] * x[i, k] + F_nd[i, k])
    return x
