"""Compiled inner loops for prediction, the placement table and the MPC QP.

Each kernel mirrors a pure-Python routine elsewhere in the package
operation for operation (same Euler schedule, same de Casteljau order, same
impact arithmetic) so results agree with the reference code to rounding.
Scratch buffers are passed in by the caller to keep the hot paths free of
allocation.
"""
import math

import numpy as np
from numba import njit

OK = 0
CLAMPED = 1
FALLBACK = 2

_SNAP = 1e-9
_PHASE_EPS = 1e-9


@njit(cache=True)
def bez(c, s, buf):
    n = c.shape[0]
    for i in range(n):
        buf[i] = c[i]
    t = 1.0 - s
    for r in range(1, n):
        for i in range(n - r):
            buf[i] = t * buf[i] + s * buf[i + 1]
    return buf[0]


@njit(cache=True)
def integrate(th, L, t0, t_end, dt, T, m, g, rc, u, buf):
    """Euler from t0 to t_end with the truncated final substep."""
    span = t_end - t0
    if span <= 0.0:
        return th, L
    n = int(math.ceil(span / dt - 1e-9))
    for k in range(n):
        tk = t0 + k * dt
        h = dt if k < n - 1 else t_end - tk
        s = tk / T
        if s > 1.0:
            s = 1.0
        r = bez(rc, s, buf)
        d_th = L / (m * r * r)
        d_L = m * g * r * math.sin(th) + u
        th = th + h * d_th
        L = L + h * d_L
    return th, L


@njit(cache=True)
def impact(th, L, T, m, rc, Px, Pz, mirror):
    """Foot swap with the contact-distance length and signed angle.

    Returns (theta, L, ok).  ok is False only for a CoM sitting exactly on
    the new contact point.
    """
    M = rc.shape[0] - 1
    r = rc[M]
    rd = M * (rc[M] - rc[M - 1]) / T
    thd = L / (m * r * r)
    s = math.sin(th)
    c = math.cos(th)
    xr = r * s - Px
    zr = r * c - Pz
    if not math.hypot(xr, zr) > 0.0:
        return th, L, False
    thp = math.atan2(xr, zr)
    Lp = L + m * (Pz * (r * c * thd + rd * s) - Px * (-r * s * thd + rd * c))
    if mirror:
        return -thp, -Lp, True
    return thp, Lp, True


@njit(cache=True)
def predict_end(th, L, t0, y, T, m, g, rc, Pz, dt, buf):
    """Frontal state at the end of the next step for lateral offset y."""
    th, L = integrate(th, L, t0, T, dt, T, m, g, rc, 0.0, buf)
    th, L, ok = impact(th, L, T, m, rc, y, Pz, True)
    if not ok:
        return th, L, False
    th, L = integrate(th, L, 0.0, T, dt, T, m, g, rc, 0.0, buf)
    ok = math.isfinite(th) and math.isfinite(L)
    return th, L, ok


@njit(cache=True)
def plan(th, L, t0, L_des, y1, delta, y_min, y_max, T, m, g, rc, Pz, dt, buf):
    """Two-candidate secant placement.  Returns (y_des, status)."""
    y2 = y1 + delta
    _, L1, ok1 = predict_end(th, L, t0, y1, T, m, g, rc, Pz, dt, buf)
    _, L2, ok2 = predict_end(th, L, t0, y2, T, m, g, rc, Pz, dt, buf)
    if not (ok1 and ok2):
        return y1, FALLBACK
    if abs(L2 - L1) < 1e-12:
        return y1, FALLBACK
    y = y1 + (L_des - L1) * (y2 - y1) / (L2 - L1)
    if y < y_min:
        return y_min, CLAMPED
    if y > y_max:
        return y_max, CLAMPED
    return y, OK


@njit(cache=True)
def build_table(th_ax, L_ax, p_ax, ref_th, ref_L, L_des, y1, delta, y_min, y_max,
                T, m, g, rc, Pz, dt, out, status):
    """Placement at every node; node states are reference plus axis offset."""
    buf = np.empty(rc.shape[0])
    n1, n2, n3 = th_ax.shape[0], L_ax.shape[0], p_ax.shape[0]
    for i in range(n1):
        for j in range(n2):
            for k in range(n3):
                y, st = plan(ref_th[k] + th_ax[i], ref_L[k] + L_ax[j], p_ax[k], L_des,
                             y1, delta, y_min, y_max, T, m, g, rc, Pz, dt, buf)
                idx = (i * n2 + j) * n3 + k
                out[idx] = y
                status[idx] = st


@njit(cache=True)
def _axis(x, x0, dx, n):
    f = (x - x0) / dx
    if f < 0.0:
        f = 0.0
    elif f > n - 1.0:
        f = n - 1.0
    r = math.floor(f + 0.5)
    if abs(f - r) < _SNAP:
        f = r
    i = int(f)
    if i > n - 2:
        i = n - 2
    return i, f - i


@njit(cache=True)
def lut_interp(vals, ax, ref_th, ref_L, th, L, p):
    """Trilinear interpolation in coordinates relative to a phase reference.

    ax holds (start, step, count) for the theta, L and phase axes.  The
    reference (zero for absolute tables) is linear between phase nodes.
    """
    n1 = int(ax[2])
    n2 = int(ax[5])
    n3 = int(ax[8])
    k, c = _axis(p, ax[6], ax[7], n3)
    c0 = 1.0 - c
    i, a = _axis(th - (c0 * ref_th[k] + c * ref_th[k + 1]), ax[0], ax[1], n1)
    j, b = _axis(L - (c0 * ref_L[k] + c * ref_L[k + 1]), ax[3], ax[4], n2)
    s1 = n2 * n3
    base = i * s1 + j * n3 + k
    v000 = vals[base]
    v001 = vals[base + 1]
    v010 = vals[base + n3]
    v011 = vals[base + n3 + 1]
    v100 = vals[base + s1]
    v101 = vals[base + s1 + 1]
    v110 = vals[base + s1 + n3]
    v111 = vals[base + s1 + n3 + 1]
    w00 = c0 * v000 + c * v001
    w01 = c0 * v010 + c * v011
    w10 = c0 * v100 + c * v101
    w11 = c0 * v110 + c * v111
    b0 = 1.0 - b
    w0 = b0 * w00 + b * w01
    w1 = b0 * w10 + b * w11
    return (1.0 - a) * w0 + a * w1


# --------------------------------------------------------------------------
# MPC


@njit(cache=True)
def _substep(p, h, T, m, g, th_c, rc, buf, A, B):
    """Fold one Euler piece of length h starting at phase p into (A, B)."""
    s = p / T
    if s > 1.0:
        s = 1.0
    r = bez(rc, s, buf)
    thn = bez(th_c, s, buf)
    j01 = 1.0 / (m * r * r)
    j10 = m * g * r * math.cos(thn)
    # (I + hJ) @ A
    a00 = A[0, 0] + h * j01 * A[1, 0]
    a01 = A[0, 1] + h * j01 * A[1, 1]
    a10 = A[1, 0] + h * j10 * A[0, 0]
    a11 = A[1, 1] + h * j10 * A[0, 1]
    A[0, 0] = a00
    A[0, 1] = a01
    A[1, 0] = a10
    A[1, 1] = a11
    b0 = B[0] + h * j01 * B[1]
    b1 = B[1] + h * j10 * B[0] + h
    B[0] = b0
    B[1] = b1


@njit(cache=True)
def _apply_imp(Ai, A, B):
    a00 = Ai[0, 0] * A[0, 0] + Ai[0, 1] * A[1, 0]
    a01 = Ai[0, 0] * A[0, 1] + Ai[0, 1] * A[1, 1]
    a10 = Ai[1, 0] * A[0, 0] + Ai[1, 1] * A[1, 0]
    a11 = Ai[1, 0] * A[0, 1] + Ai[1, 1] * A[1, 1]
    A[0, 0] = a00
    A[0, 1] = a01
    A[1, 0] = a10
    A[1, 1] = a11
    b0 = Ai[0, 0] * B[0] + Ai[0, 1] * B[1]
    b1 = Ai[1, 0] * B[0] + Ai[1, 1] * B[1]
    B[0] = b0
    B[1] = b1


@njit(cache=True)
def horizon_model(phase, T, m, g, th_c, rc, A_imp, N, dt, As, Bs, phases, buf):
    """Per-substep (A_k, B_k), inserting the impact Jacobian at step ends."""
    p = phase
    phases[0] = p
    for k in range(N):
        A = As[k]
        B = Bs[k]
        A[0, 0] = 1.0
        A[0, 1] = 0.0
        A[1, 0] = 0.0
        A[1, 1] = 1.0
        B[0] = 0.0
        B[1] = 0.0
        h = dt
        while True:
            if p + h < T - _PHASE_EPS:
                _substep(p, h, T, m, g, th_c, rc, buf, A, B)
                p = p + h
                break
            h1 = T - p
            if h1 > 0.0:
                _substep(p, h1, T, m, g, th_c, rc, buf, A, B)
            _apply_imp(A_imp, A, B)
            p = 0.0
            h = h - h1
            if h <= _PHASE_EPS:
                break
        phases[k + 1] = p


@njit(cache=True)
def _cost(H, q, u, tmp):
    n = u.shape[0]
    c = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += H[i, j] * u[j]
        tmp[i] = s
        c += u[i] * (0.5 * s + q[i])
    return c


@njit(cache=True)
def mpc_solve(dx0, phase, T, m, g, th_c, rc, A_imp, N, dt, limit,
              Q, Qf, R, max_iter, tol,
              As, Bs, phases, Phi, G, H, q, u, grad, d, Hd, Lc, free, buf_u, pred, hist, buf):
    """Condensed box QP in the torque sequence.

    Minimizes 0.5 u'Hu + q'u with H = sum G_k' W_k G_k + R I and
    q = sum G_k' W_k Phi_k dx0, |u| <= limit.  Starts from the clipped
    unconstrained minimizer and refines with projected
    Newton steps (reduced Cholesky on the free set, Armijo search along
    the projection arc).
    The objective after each iteration goes to hist[0..iterations].
    Returns (iterations, kkt_residual, converged).
    """
    horizon_model(phase, T, m, g, th_c, rc, A_imp, N, dt, As, Bs, phases, buf)

    # Phi_k and G_k (2 x N) by forward recursion; accumulate H and q.
    for i in range(N):
        q[i] = 0.0
        for j in range(N):
            H[i, j] = 0.0
        H[i, i] = R
    Phi[0, 0, 0] = 1.0
    Phi[0, 0, 1] = 0.0
    Phi[0, 1, 0] = 0.0
    Phi[0, 1, 1] = 1.0
    for j in range(N):
        G[0, 0, j] = 0.0
        G[0, 1, j] = 0.0
    for k in range(N):
        A = As[k]
        for a in range(2):
            for b in range(2):
                Phi[k + 1, a, b] = A[a, 0] * Phi[k, 0, b] + A[a, 1] * Phi[k, 1, b]
        for j in range(N):
            if j < k:
                G[k + 1, 0, j] = A[0, 0] * G[k, 0, j] + A[0, 1] * G[k, 1, j]
                G[k + 1, 1, j] = A[1, 0] * G[k, 0, j] + A[1, 1] * G[k, 1, j]
            elif j == k:
                G[k + 1, 0, j] = Bs[k, 0]
                G[k + 1, 1, j] = Bs[k, 1]
            else:
                G[k + 1, 0, j] = 0.0
                G[k + 1, 1, j] = 0.0
        W = Qf if k == N - 1 else Q
        e0 = Phi[k + 1, 0, 0] * dx0[0] + Phi[k + 1, 0, 1] * dx0[1]
        e1 = Phi[k + 1, 1, 0] * dx0[0] + Phi[k + 1, 1, 1] * dx0[1]
        we0 = W[0, 0] * e0 + W[0, 1] * e1
        we1 = W[1, 0] * e0 + W[1, 1] * e1
        kk = k + 1
        for i in range(kk):
            gi0 = G[kk, 0, i]
            gi1 = G[kk, 1, i]
            wg0 = W[0, 0] * gi0 + W[0, 1] * gi1
            wg1 = W[1, 0] * gi0 + W[1, 1] * gi1
            q[i] += gi0 * we0 + gi1 * we1
            for j in range(kk):
                H[j, i] += G[kk, 0, j] * wg0 + G[kk, 1, j] * wg1

    # Unconstrained minimizer by Cholesky, then clip into the box.
    for i in range(N):
        for j in range(i + 1):
            s = H[i, j]
            for k in range(j):
                s -= Lc[i, k] * Lc[j, k]
            if i == j:
                Lc[i, i] = math.sqrt(s)
            else:
                Lc[i, j] = s / Lc[j, j]
    for i in range(N):
        s = -q[i]
        for k in range(i):
            s -= Lc[i, k] * d[k]
        d[i] = s / Lc[i, i]
    for i in range(N - 1, -1, -1):
        s = d[i]
        for k in range(i + 1, N):
            s -= Lc[k, i] * u[k]
        u[i] = s / Lc[i, i]
    for i in range(N):
        if u[i] > limit:
            u[i] = limit
        elif u[i] < -limit:
            u[i] = -limit

    it = 0
    kkt = 0.0
    converged = False
    f0 = _cost(H, q, u, Hd)
    hist[0] = f0
    while True:
        kkt = 0.0
        for i in range(N):
            s = q[i]
            for j in range(N):
                s += H[i, j] * u[j]
            grad[i] = s
            v = u[i] - s
            if v > limit:
                v = limit
            elif v < -limit:
                v = -limit
            r = abs(u[i] - v)
            if r > kkt:
                kkt = r
        if kkt <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        # projected Newton: bounds that are (nearly) active with the
        # gradient pushing outward are held, Newton step on the rest
        eps = min(kkt, 0.1 * limit)
        nf = 0
        for i in range(N):
            if (u[i] <= -limit + eps and grad[i] > 0.0) or \
                    (u[i] >= limit - eps and grad[i] < 0.0):
                d[i] = -grad[i] / H[i, i]
            else:
                free[nf] = i
                nf += 1
        for a in range(nf):
            ia = free[a]
            for b in range(a + 1):
                s = H[ia, free[b]]
                for k in range(b):
                    s -= Lc[a, k] * Lc[b, k]
                if a == b:
                    Lc[a, a] = math.sqrt(s)
                else:
                    Lc[a, b] = s / Lc[b, b]
        for a in range(nf):
            s = -grad[free[a]]
            for k in range(a):
                s -= Lc[a, k] * Hd[k]
            Hd[a] = s / Lc[a, a]
        for a in range(nf - 1, -1, -1):
            s = Hd[a]
            for k in range(a + 1, nf):
                s -= Lc[k, a] * d[free[k]]
            d[free[a]] = s / Lc[a, a]
        # Armijo search along the projection arc
        for i in range(N):
            buf_u[i] = u[i]
        alpha = 1.0
        accepted = False
        for _ in range(60):
            dec = 0.0
            for i in range(N):
                v = buf_u[i] + alpha * d[i]
                if v > limit:
                    v = limit
                elif v < -limit:
                    v = -limit
                u[i] = v
            nfi = 0
            for i in range(N):
                if nfi < nf and free[nfi] == i:
                    dec -= alpha * grad[i] * d[i]
                    nfi += 1
                else:
                    dec += grad[i] * (buf_u[i] - u[i])
            f1 = _cost(H, q, u, Hd)
            if f0 - f1 >= 1e-4 * dec:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            for i in range(N):
                u[i] = buf_u[i]
            break
        f0 = f1
        hist[it] = f1

    # predicted deviations
    for k in range(N + 1):
        e0 = Phi[k, 0, 0] * dx0[0] + Phi[k, 0, 1] * dx0[1]
        e1 = Phi[k, 1, 0] * dx0[0] + Phi[k, 1, 1] * dx0[1]
        for j in range(k):
            e0 += G[k, 0, j] * u[j]
            e1 += G[k, 1, j] * u[j]
        pred[k, 0] = e0
        pred[k, 1] = e1
    return it, kkt, converged
