"""Compiled per-block kernels for the block-diagonal filter steps.

Block sizes (c, d, r) are tiny, so per-block BLAS calls would drown in call
overhead at large n; everything here is hand-rolled loops over one contiguous
(n, ., .) buffer per matrix. Cross-block reductions accumulate in block index
order, so results are deterministic.

All kernels assume float64 C-contiguous inputs. Factorization failures are
reported through a returned block index (numba cannot raise rich exceptions);
wrappers in :mod:`bdkf.filters` turn them into errors.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _chol_inplace(a):
    # Lower Cholesky of a small symmetric matrix, in place. Returns False on
    # a non-positive pivot (not positive definite).
    k = a.shape[0]
    for j in range(k):
        s = a[j, j]
        for p in range(j):
            s -= a[j, p] * a[j, p]
        if s <= 0.0:
            return False
        dj = np.sqrt(s)
        a[j, j] = dj
        for i in range(j + 1, k):
            t = a[i, j]
            for p in range(j):
                t -= a[i, p] * a[j, p]
            a[i, j] = t / dj
    return True


@njit(cache=True, inline="always")
def _chol_solve_inplace(L, b):
    # Solve (L L^T) x = b in place; b has shape (k, m).
    k, m = b.shape
    for col in range(m):
        for i in range(k):
            s = b[i, col]
            for p in range(i):
                s -= L[i, p] * b[p, col]
            b[i, col] = s / L[i, i]
        for i in range(k - 1, -1, -1):
            s = b[i, col]
            for p in range(i + 1, k):
                s -= L[p, i] * b[p, col]
            b[i, col] = s / L[i, i]


@njit(cache=True, inline="always")
def _mm(a, b, out):
    # out = a @ b
    ii, kk = a.shape
    jj = b.shape[1]
    for i in range(ii):
        for j in range(jj):
            s = 0.0
            for k in range(kk):
                s += a[i, k] * b[k, j]
            out[i, j] = s


@njit(cache=True, inline="always")
def _mm_bt(a, b, out):
    # out = a @ b.T
    ii, kk = a.shape
    jj = b.shape[0]
    for i in range(ii):
        for j in range(jj):
            s = 0.0
            for k in range(kk):
                s += a[i, k] * b[j, k]
            out[i, j] = s


@njit(cache=True, inline="always")
def _mm_at(a, b, out):
    # out = a.T @ b
    kk, ii = a.shape
    jj = b.shape[1]
    for i in range(ii):
        for j in range(jj):
            s = 0.0
            for k in range(kk):
                s += a[k, i] * b[k, j]
            out[i, j] = s


@njit(cache=True)
def fast_work_kernel(P, F, H, V, R, G):
    """Per-block pre-update quantities of the factored block-diagonal step.

    Returns (L, M, W, A, B, N, bad) where per block i:
        L_i = F_i P_i F_i^T + V_i
        M_i = H_i L_i H_i^T + R_i
        W_i = M_i^{-1} H_i
        A_i = L_i - L_i H_i^T M_i^{-1} H_i L_i
        B_i = L_i H_i^T M_i^{-1} H_i G_i
    and N = sum_i G_i^T H_i^T M_i^{-1} H_i G_i. ``bad`` is the index of the
    first block whose M_i is not positive definite, or -1.
    """
    n, c, _ = P.shape
    d = H.shape[1]
    r = G.shape[2]
    L = np.empty((n, c, c))
    M = np.empty((n, d, d))
    W = np.empty((n, d, c))
    A = np.empty((n, c, c))
    B = np.empty((n, c, r))
    N = np.zeros((r, r))
    fp = np.empty((c, c))
    li = np.empty((c, c))
    hl = np.empty((d, c))
    mi = np.empty((d, d))
    lc = np.empty((d, d))
    wi = np.empty((d, c))
    t = np.empty((c, c))
    lt = np.empty((c, c))
    tg = np.empty((c, r))
    scr = np.empty((c, c))
    for i in range(n):
        _mm(F[i], P[i], fp)
        _mm_bt(fp, F[i], li)
        for a in range(c):
            for b in range(c):
                li[a, b] += V[i, a, b]
        for a in range(c):
            for b in range(a):
                m = 0.5 * (li[a, b] + li[b, a])
                li[a, b] = m
                li[b, a] = m
        L[i] = li
        _mm(H[i], li, hl)
        _mm_bt(hl, H[i], mi)
        for a in range(d):
            for b in range(d):
                mi[a, b] += R[i, a, b]
        M[i] = mi
        lc[:] = mi
        if not _chol_inplace(lc):
            return L, M, W, A, B, N, i
        wi[:] = H[i]
        _chol_solve_inplace(lc, wi)
        W[i] = wi
        _mm_at(H[i], wi, t)
        _mm(li, t, lt)
        _mm(lt, li, scr)
        for a in range(c):
            for b in range(c):
                A[i, a, b] = li[a, b] - scr[a, b]
        _mm(t, G[i], tg)
        _mm(li, tg, B[i])
        for a in range(r):
            for b in range(r):
                s = 0.0
                for k in range(c):
                    s += G[i, k, a] * tg[k, b]
                N[a, b] += s
    return L, M, W, A, B, N, -1


@njit(cache=True)
def coupling_kernel(U, N):
    """Input-coupling matrices from U and the information sum N.

    C1 = (U^{-1} + N)^{-1}, computed as the solution of (I + U N) C1 = U so
    that singular (even zero) U is handled without forming U^{-1}.
    """
    r = U.shape[0]
    un = U @ N
    iun = np.eye(r) + un
    c1 = np.linalg.solve(iun, U)
    c1 = 0.5 * (c1 + c1.T)
    nc1 = N @ c1
    c2 = U @ (nc1 @ N - N) @ U + U
    c2 = 0.5 * (c2 + c2.T)
    c3 = un @ c1 - U
    return c1, c2, c3


@njit(cache=True)
def fast_assemble_kernel(A, B, G, C1, C2, C3):
    """Updated covariance blocks: A_i plus the diagonal part of the low-rank
    coupling correction B C1 B^T + G C2 G^T + G C3 B^T + (G C3 B^T)^T."""
    n, c, r = B.shape
    P = np.empty((n, c, c))
    bc1 = np.empty((c, r))
    gc2 = np.empty((c, r))
    gc3 = np.empty((c, r))
    s1 = np.empty((c, c))
    s2 = np.empty((c, c))
    x = np.empty((c, c))
    for i in range(n):
        _mm(B[i], C1, bc1)
        _mm(G[i], C2, gc2)
        _mm(G[i], C3, gc3)
        _mm_bt(bc1, B[i], s1)
        _mm_bt(gc2, G[i], s2)
        _mm_bt(gc3, B[i], x)
        for a in range(c):
            for b in range(c):
                P[i, a, b] = A[i, a, b] + s1[a, b] + s2[a, b] + x[a, b] + x[b, a]
        for a in range(c):
            for b in range(a):
                m = 0.5 * (P[i, a, b] + P[i, b, a])
                P[i, a, b] = m
                P[i, b, a] = m
    return P


@njit(cache=True)
def fast_gain_kernel(L, W, B, G, F, H, xprev, y, C1, C3):
    """State update with the factored gain, vector products only.

    Computes xpred_i = F_i xprev_i, innovation z_i = y_i - H_i xpred_i,
    s_i = H_i^T M_i^{-1} z_i (via W), the shared reduction gs = sum G_i^T s_i,
    and x_i = xpred_i + L_i s_i - B_i (C1 gs) - G_i (C3 gs).
    """
    n, d, c = W.shape
    r = G.shape[2]
    xpred = np.empty((n, c))
    z = np.empty((n, d))
    s = np.empty((n, c))
    gs = np.zeros(r)
    for i in range(n):
        for a in range(c):
            acc = 0.0
            for k in range(c):
                acc += F[i, a, k] * xprev[i, k]
            xpred[i, a] = acc
        for b in range(d):
            acc = y[i, b]
            for k in range(c):
                acc -= H[i, b, k] * xpred[i, k]
            z[i, b] = acc
        for a in range(c):
            acc = 0.0
            for b in range(d):
                acc += W[i, b, a] * z[i, b]
            s[i, a] = acc
        for a in range(r):
            acc = 0.0
            for k in range(c):
                acc += G[i, k, a] * s[i, k]
            gs[a] += acc
    t1 = np.zeros(r)
    t3 = np.zeros(r)
    for a in range(r):
        for b in range(r):
            t1[a] += C1[a, b] * gs[b]
            t3[a] += C3[a, b] * gs[b]
    x = np.empty((n, c))
    for i in range(n):
        for a in range(c):
            acc = xpred[i, a]
            for k in range(c):
                acc += L[i, a, k] * s[i, k]
            for k in range(r):
                acc -= B[i, a, k] * t1[k] + G[i, a, k] * t3[k]
            x[i, a] = acc
    return x, xpred, z, s, gs


@njit(cache=True)
def gain_apply_kernel(L, W, B, G, C1, C3, z):
    """Apply the factored gain to a stacked vector z (no predict step)."""
    n, d, c = W.shape
    r = G.shape[2]
    s = np.empty((n, c))
    gs = np.zeros(r)
    for i in range(n):
        for a in range(c):
            acc = 0.0
            for b in range(d):
                acc += W[i, b, a] * z[i, b]
            s[i, a] = acc
        for a in range(r):
            acc = 0.0
            for k in range(c):
                acc += G[i, k, a] * s[i, k]
            gs[a] += acc
    t1 = np.zeros(r)
    t3 = np.zeros(r)
    for a in range(r):
        for b in range(r):
            t1[a] += C1[a, b] * gs[b]
            t3[a] += C3[a, b] * gs[b]
    out = np.empty((n, c))
    for i in range(n):
        for a in range(c):
            acc = 0.0
            for k in range(c):
                acc += L[i, a, k] * s[i, k]
            for k in range(r):
                acc -= B[i, a, k] * t1[k] + G[i, a, k] * t3[k]
            out[i, a] = acc
    return out


@njit(cache=True)
def banded_step_kernel(P, x, F, H, Vq, R, y):
    """Fully decoupled per-block Kalman step (prediction projected blockwise).

    Vq holds the per-block process noise including the diagonal part of the
    coupling noise. Returns (P_new, x_new, bad).
    """
    n, c, _ = P.shape
    d = H.shape[1]
    Pn = np.empty((n, c, c))
    xn = np.empty((n, c))
    pp = np.empty((c, c))
    fp = np.empty((c, c))
    hp = np.empty((d, c))
    si = np.empty((d, d))
    wi = np.empty((d, c))
    upd = np.empty((c, c))
    zi = np.empty(d)
    for i in range(n):
        _mm(F[i], P[i], fp)
        _mm_bt(fp, F[i], pp)
        for a in range(c):
            for b in range(c):
                pp[a, b] += Vq[i, a, b]
        for a in range(c):
            for b in range(a):
                m = 0.5 * (pp[a, b] + pp[b, a])
                pp[a, b] = m
                pp[b, a] = m
        _mm(H[i], pp, hp)
        _mm_bt(hp, H[i], si)
        for a in range(d):
            for b in range(d):
                si[a, b] += R[i, a, b]
        if not _chol_inplace(si):
            return Pn, xn, i
        wi[:] = hp
        _chol_solve_inplace(si, wi)  # wi = S^{-1} H Ppred
        _mm_at(hp, wi, upd)  # Ppred H^T S^{-1} H Ppred
        for a in range(c):
            for b in range(c):
                Pn[i, a, b] = pp[a, b] - upd[a, b]
        for a in range(c):
            for b in range(a):
                m = 0.5 * (Pn[i, a, b] + Pn[i, b, a])
                Pn[i, a, b] = m
                Pn[i, b, a] = m
        # state update: x = F x + Ppred H^T S^{-1} (y - H F x)
        for a in range(c):
            acc = 0.0
            for k in range(c):
                acc += F[i, a, k] * x[i, k]
            xn[i, a] = acc
        for b in range(d):
            acc = y[i, b]
            for k in range(c):
                acc -= H[i, b, k] * xn[i, k]
            zi[b] = acc
        for a in range(c):
            acc = xn[i, a]
            for b in range(d):
                acc += wi[b, a] * zi[b]
            xn[i, a] = acc
    return Pn, xn, -1
