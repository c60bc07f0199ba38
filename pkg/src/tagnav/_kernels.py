"""Compiled inner loops: the four-degree-of-freedom solve and the Frechet DP.

Per-frame PnP works on ~30 points, where the fixed cost of each numpy or
LAPACK call dominates; these kernels keep the whole EPnP + refinement loop
inside one compiled function.  The Frechet table is likewise a scalar
recurrence that numpy can only vectorise one anti-diagonal at a time.
"""

import numpy as np
from numba import njit

# status codes shared with pnp.py
OK = 0
COLLINEAR = 1
NO_FRONT_SOLUTION = 2
BEHIND = 3
RANK_DEFICIENT = 4


@njit(cache=True)
def _procrustes(src, dst):
    n = src.shape[0]
    ms = np.zeros(3)
    md = np.zeros(3)
    for i in range(n):
        ms += src[i]
        md += dst[i]
    ms /= n
    md /= n
    H = np.zeros((3, 3))
    for i in range(n):
        a = src[i] - ms
        b = dst[i] - md
        for r in range(3):
            for c in range(3):
                H[r, c] += a[r] * b[c]
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    D = np.eye(3)
    if np.linalg.det(V @ U.T) < 0:
        D[2, 2] = -1.0
    R = V @ D @ U.T
    t = md - R @ ms
    return R, t


@njit(cache=True)
def epnp_kernel(world, xn, yn, sw, planar_tol):
    """EPnP with 4 (general) or 3 (planar) control points; returns status, R, t."""
    n = world.shape[0]
    centroid = np.zeros(3)
    for i in range(n):
        centroid += world[i]
    centroid /= n
    A = world - centroid
    evals, evecs = np.linalg.eigh(A.T @ A)
    R0 = np.eye(3)
    t0 = np.zeros(3)
    l0, l1, l2 = evals[2], evals[1], evals[0]
    if l0 <= 0 or l1 < planar_tol * l0:
        return COLLINEAR, R0, t0
    k = 2 if l2 < planar_tol * l0 else 3
    m = k + 1
    ctrl = np.empty((m, 3))
    ctrl[0] = centroid
    alphas = np.empty((n, m))
    for j in range(k):
        axis = evecs[:, 2 - j]
        scale = np.sqrt(evals[2 - j] / n)
        ctrl[j + 1] = centroid + scale * axis
        alphas[:, j + 1] = (A @ axis) / scale
    for i in range(n):
        s = 0.0
        for j in range(1, m):
            s += alphas[i, j]
        alphas[i, 0] = 1.0 - s

    M = np.zeros((2 * n, 3 * m))
    for i in range(n):
        for j in range(m):
            a = alphas[i, j] * sw[i]
            M[i, 3 * j] = a
            M[i, 3 * j + 2] = -a * xn[i]
            M[n + i, 3 * j + 1] = a
            M[n + i, 3 * j + 2] = -a * yn[i]
    _, V = np.linalg.eigh(M.T @ M)

    npairs = m * (m - 1) // 2
    dw2 = np.empty(npairs)
    L = np.empty((npairs, 3))
    nd1 = np.empty(npairs)
    v1 = V[:, 0].copy().reshape((m, 3))
    v2 = V[:, 1].copy().reshape((m, 3))
    p = 0
    for a in range(m):
        for b in range(a + 1, m):
            dw = ctrl[a] - ctrl[b]
            d1 = v1[a] - v1[b]
            d2 = v2[a] - v2[b]
            dw2[p] = dw @ dw
            L[p, 0] = d1 @ d1
            L[p, 1] = 2.0 * (d1 @ d2)
            L[p, 2] = d2 @ d2
            nd1[p] = np.sqrt(L[p, 0])
            p += 1

    best_err = np.inf
    best_R = R0
    best_t = t0
    for cand in range(2):
        if cand == 0:
            beta = (nd1 @ np.sqrt(dw2)) / (nd1 @ nd1)
            cc = beta * v1
        else:
            b = np.linalg.lstsq(L, dw2)[0]
            if b[0] <= 0:
                continue
            b1 = np.sqrt(b[0])
            b2 = np.sqrt(abs(b[2]))
            if b[1] < 0:
                b2 = -b2
            cc = b1 * v1 + b2 * v2
        pc = alphas @ cc
        if pc[:, 2].mean() < 0:
            pc = -pc
        R, t = _procrustes(world, pc)
        err = 0.0
        front = True
        for i in range(n):
            q = R @ world[i] + t
            if q[2] <= 0:
                front = False
                break
            ex = q[0] / q[2] - xn[i]
            ey = q[1] / q[2] - yn[i]
            err += ex * ex + ey * ey
        if front and err < best_err:
            best_err = err
            best_R = R
            best_t = t
    if best_err == np.inf:
        return NO_FRONT_SOLUTION, R0, t0
    return OK, best_R, best_t


@njit(cache=True)
def _eval4(st, wx, wy, wz, zu, zv, fx, fy, cx, cy, e, J, jac):
    n = wx.shape[0]
    c = np.cos(st[3])
    s = np.sin(st[3])
    for i in range(n):
        dx = wx[i] - st[0]
        dy = wy[i] - st[1]
        Y = st[2] - wz[i]
        X = s * dx - c * dy
        Z = c * dx + s * dy
        if Z <= 0:
            return False
        iz = 1.0 / Z
        xz = X * iz
        yz = Y * iz
        e[i] = zu[i] - (fx * xz + cx)
        e[n + i] = zv[i] - (fy * yz + cy)
        if jac:
            fxz = fx * iz
            fyz = fy * iz
            J[i, 0] = fxz * (xz * c - s)
            J[i, 1] = fxz * (c + xz * s)
            J[i, 2] = 0.0
            J[i, 3] = fx * (1.0 + xz * xz)
            J[n + i, 0] = fyz * yz * c
            J[n + i, 1] = fyz * yz * s
            J[n + i, 2] = fyz
            J[n + i, 3] = fy * xz * yz
    return True


@njit(cache=True)
def _solve_spd4(A, b):
    # Cholesky; returns False when A is not numerically positive definite
    L = np.zeros((4, 4))
    for i in range(4):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0:
                    return False, b
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(4)
    for i in range(4):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(4)
    for i in range(3, -1, -1):
        s = y[i]
        for k in range(i + 1, 4):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return True, x


@njit(cache=True)
def refine_4dof(wx, wy, wz, zu, zv, w, fx, fy, cx, cy, x0, step_tol, max_iters, lam0, rank_tol):
    """Gauss-Newton with Levenberg damping over (x, y, z, theta).

    Returns ``(status, state, residuals, iterations, converged)``.
    """
    n = wx.shape[0]
    w2 = np.empty(2 * n)
    w2[:n] = w
    w2[n:] = w
    st = x0.copy()
    e = np.empty(2 * n)
    J = np.empty((2 * n, 4))
    if not _eval4(st, wx, wy, wz, zu, zv, fx, fy, cx, cy, e, J, True):
        return BEHIND, st, e, 0, False
    sw2 = np.sqrt(w2)
    Jw = J * sw2.reshape((-1, 1))
    sv = np.linalg.svd(Jw)[1]
    if not (sv[3] >= rank_tol * sv[0]):
        return RANK_DEFICIENT, st, e, 0, False

    cost = 0.0
    for i in range(2 * n):
        cost += w2[i] * e[i] * e[i]
    ce = np.empty(2 * n)
    cJ = np.empty((2 * n, 4))
    H = np.empty((4, 4))
    g = np.empty(4)
    lam = lam0
    converged = False
    polish = 0
    it = 0
    for it in range(1, max_iters + 1):
        for a in range(4):
            ga = 0.0
            for i in range(2 * n):
                ga += J[i, a] * w2[i] * e[i]
            g[a] = ga
            for b in range(a + 1):
                h = 0.0
                for i in range(2 * n):
                    h += J[i, a] * w2[i] * J[i, b]
                H[a, b] = h
                H[b, a] = h
        for a in range(4):
            H[a, a] += lam
        ok, delta = _solve_spd4(H, g)
        if not ok:
            break
        step = np.sqrt(delta @ delta)
        cand = st + delta
        accepted = False
        if _eval4(cand, wx, wy, wz, zu, zv, fx, fy, cx, cy, ce, cJ, True):
            # cost change without the cancellation of subtracting two totals;
            # changes inside the rounding band of the residuals count as no change
            change = 0.0
            for i in range(2 * n):
                change += w2[i] * (ce[i] - e[i]) * (ce[i] + e[i])
            if change <= 1e-12 * cost:
                st = cand
                e, ce = ce, e
                J, cJ = cJ, J
                cost = 0.0
                for i in range(2 * n):
                    cost += w2[i] * e[i] * e[i]
                lam = max(lam / 10.0, 1e-12)
                accepted = True
        if not accepted:
            lam *= 10.0
        if converged:
            polish += 1
            if not accepted or polish >= 2:
                break
        elif step < step_tol:
            # a sub-tolerance step can still leave a visible gradient when the
            # normal matrix is large, so take up to two more undamped steps
            converged = True
            if not accepted:
                break
    return OK, st, e, it, converged


@njit(cache=True)
def frechet_dp(A, B):
    """Discrete Frechet distance keeping one row of the table (``len(B) + 1`` values)."""
    p, q = A.shape[0], B.shape[0]
    dim = A.shape[1]
    row = np.full(q, np.inf)
    for i in range(p):
        diag = np.inf  # d(i-1, j-1)
        for j in range(q):
            acc = 0.0
            for k in range(dim):
                d = A[i, k] - B[j, k]
                acc += d * d
            c = np.sqrt(acc)
            up = row[j]  # d(i-1, j)
            if i == 0 and j == 0:
                best = 0.0
            else:
                left = row[j - 1] if j > 0 else np.inf  # d(i, j-1), already updated
                best = min(up, left, diag)
            diag = up
            row[j] = max(c, best)
    return row[q - 1]
