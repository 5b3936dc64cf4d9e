"""Covariance-update coordinate descent for the Lasso.

All kernels work on Gram quantities ``G = XᵀX/n``, ``c = Xᵀy/n`` and
``yy = yᵀy/n`` and minimize ``(2n)⁻¹‖y − Xβ‖² + λ‖β‖₁``.  Coordinate ``skip``
(if ≥ 0) is held at zero, which lets the nodewise regressions of column j on
the others reuse one Gram matrix for all j.

The running gradient ``grad = c − Gβ`` is updated incrementally and carried
along a λ path, so a full path costs O(p · #changes) per sweep.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def duality_gap(G, c, yy, lam, beta, grad, skip):
    """Primal value, dual value and gap at ``beta`` (``grad`` must equal c − Gβ)."""
    p = beta.shape[0]
    l1 = 0.0
    cb = 0.0
    bg = 0.0
    gmax = 0.0
    for k in range(p):
        if k == skip:
            continue
        b = beta[k]
        l1 += abs(b)
        cb += c[k] * b
        bg += b * grad[k]
        a = abs(grad[k])
        if a > gmax:
            gmax = a
    r2 = yy - cb - bg
    if r2 < 0.0:
        r2 = 0.0
    ry = yy - cb
    primal = 0.5 * r2 + lam * l1
    if gmax > 0.0:
        s = min(1.0, lam / gmax)
    else:
        s = 1.0
    dual = s * ry - 0.5 * s * s * r2
    return primal, dual, primal - dual, r2


@njit(cache=True, nogil=True)
def _chol_add(L, m, G, idx, k):
    """Append variable k to the Cholesky factor of ``G[idx, idx]``.

    Returns False (factor untouched) if k is numerically collinear with the
    current set.
    """
    for a in range(m):
        s = G[idx[a], k]
        for b in range(a):
            s -= L[a, b] * L[m, b]
        L[m, a] = s / L[a, a]
    d = G[k, k]
    for b in range(m):
        d -= L[m, b] * L[m, b]
    if not d > 1e-10 * G[k, k]:
        return False
    L[m, m] = np.sqrt(d)
    idx[m] = k
    return True


@njit(cache=True, nogil=True)
def _chol_remove(L, m, idx, r):
    """Drop position r from the factor by a row deletion and Givens sweeps."""
    for a in range(r, m - 1):
        idx[a] = idx[a + 1]
        for b in range(a + 2):
            L[a, b] = L[a + 1, b]
    for a in range(r, m - 1):
        x = L[a, a]
        y = L[a, a + 1]
        h = np.hypot(x, y)
        if h == 0.0:
            continue
        ct = x / h
        st = y / h
        for i in range(a, m - 1):
            u = L[i, a]
            v = L[i, a + 1]
            L[i, a] = ct * u + st * v
            L[i, a + 1] = -st * u + ct * v
        L[a, a + 1] = 0.0
    return m - 1


@njit(cache=True, nogil=True)
def _chol_solve(L, m, rhs, out):
    for a in range(m):
        s = rhs[a]
        for b in range(a):
            s -= L[a, b] * out[b]
        out[a] = s / L[a, a]
    for a in range(m - 1, -1, -1):
        s = out[a]
        for b in range(a + 1, m):
            s -= L[b, a] * out[b]
        out[a] = s / L[a, a]


@njit(cache=True, nogil=True)
def _l1_along(cand, sol, m, t, zero):
    """ℓ1 norm of ``cand + t(sol − cand)`` with position ``zero`` pinned to 0."""
    s = 0.0
    for a in range(m):
        if a != zero:
            s += abs(cand[a] + t * (sol[a] - cand[a]))
    return s


@njit(cache=True, nogil=True)
def new_state(p):
    """Active-set state ``(L, idx, member, count)`` shared by successive polishes."""
    return (np.empty((p, p)), np.empty(p, dtype=np.int64), np.zeros(p, dtype=np.bool_),
            np.zeros(1, dtype=np.int64))


@njit(cache=True, nogil=True)
def _sync(G, beta, skip, L, idx, member, m):
    """Bring the factor in line with the support of ``beta``; -1 on collinearity."""
    for a in range(m - 1, -1, -1):
        if beta[idx[a]] == 0.0:
            member[idx[a]] = False
            m = _chol_remove(L, m, idx, a)
    for k in range(beta.shape[0]):
        if beta[k] != 0.0 and k != skip and not member[k]:
            if not _chol_add(L, m, G, idx, k):
                return -1
            member[k] = True
            m += 1
    return m


@njit(cache=True, nogil=True)
def _polish(G, c, lam, beta, grad, skip, max_steps, state):
    """Feature-sign active-set search started from ``beta``.

    Repeatedly solves the KKT system on the current support with its sign
    pattern fixed, line-searches back to sign changes, and adds the worst
    KKT violator.  The Cholesky factor of the support Gram block lives in
    ``state`` and is updated as variables enter and leave, also across
    calls.  Returns True when an exact optimum was reached; ``beta`` and
    ``grad`` are updated in place either way and the objective never
    increases.
    """
    p = beta.shape[0]
    L, idx, member, count = state
    m = _sync(G, beta, skip, L, idx, member, count[0])
    if m < 0:
        # collinear support: reset and let coordinate descent continue
        member[:] = False
        count[0] = 0
        return False
    count[0] = m
    if m == 0:
        return False
    sgn = np.zeros(p)
    for a in range(m):
        sgn[idx[a]] = np.sign(beta[idx[a]])
    rhs = np.empty(p)
    sol = np.empty(p)
    cand = np.empty(p)
    slack = lam * (1.0 + 1e-9) + 1e-13
    for step in range(max_steps):
        for a in range(m):
            rhs[a] = c[idx[a]] - lam * sgn[idx[a]]
        _chol_solve(L, m, rhs, sol)
        consistent = True
        for a in range(m):
            if not np.isfinite(sol[a]):
                return False
            if sol[a] * sgn[idx[a]] <= 0.0:
                consistent = False
        # along d = sol − cand the smooth part is t·lin + t²·quad/2 with
        # lin = −dᵀgrad and quad = dᵀG d = dᵀ(grad − λ sgn) (G_SS sol = c_S − λ sgn)
        lin = 0.0
        quad = 0.0
        l1 = 0.0
        for a in range(m):
            ka = idx[a]
            cand[a] = beta[ka]
            dlt = sol[a] - cand[a]
            lin -= dlt * grad[ka]
            quad += dlt * (grad[ka] - lam * sgn[ka])
            l1 += abs(cand[a])
        cur_val = lam * l1
        scale = abs(lin) + abs(quad) + cur_val + 1e-300
        best_t = 1.0
        best_val = lin + 0.5 * quad + lam * _l1_along(cand, sol, m, 1.0, -1)
        if consistent:
            if not best_val <= cur_val + 1e-12 * scale:
                return False
            for a in range(m):
                beta[idx[a]] = sol[a]
        else:
            # best point among t = 1 and the sign-change breakpoints
            for a in range(m):
                b0 = cand[a]
                b1 = sol[a]
                if b0 * b1 < 0.0:
                    t = b0 / (b0 - b1)
                    val = t * lin + 0.5 * t * t * quad + lam * _l1_along(cand, sol, m, t, a)
                    if val < best_val:
                        best_val = val
                        best_t = t
            if not best_val < cur_val - 1e-14 * scale:
                return False
            for q in range(m):
                kq = idx[q]
                beta[kq] = cand[q] + best_t * (sol[q] - cand[q])
                if cand[q] * sol[q] < 0.0 and abs(beta[kq]) <= 1e-12 * (abs(cand[q]) + abs(sol[q])):
                    beta[kq] = 0.0
            for a in range(m - 1, -1, -1):
                ka = idx[a]
                if beta[ka] == 0.0:
                    sgn[ka] = 0.0
                    member[ka] = False
                    m = _chol_remove(L, m, idx, a)
                    count[0] = m
                else:
                    sgn[ka] = np.sign(beta[ka])
        # refresh the gradient exactly
        for k in range(p):
            grad[k] = c[k]
        for q in range(m):
            kq = idx[q]
            bq = beta[kq]
            row = G[kq]
            for k in range(p):
                grad[k] -= bq * row[k]
        if not consistent:
            continue
        worst = -1
        wval = slack
        for k in range(p):
            if k == skip or sgn[k] != 0.0:
                continue
            if abs(grad[k]) > wval:
                wval = abs(grad[k])
                worst = k
        if worst < 0:
            return True
        if not _chol_add(L, m, G, idx, worst):
            return False
        sgn[worst] = np.sign(grad[worst])
        member[worst] = True
        m += 1
        count[0] = m
    return False


@njit(cache=True, nogil=True)
def cd_solve(G, c, yy, lam, beta, grad, skip, tol, max_sweeps):
    """Run sweeps in place until the duality gap drops below ``tol``; see ``_solve``."""
    return _solve(G, c, yy, lam, beta, grad, skip, tol, max_sweeps, new_state(beta.shape[0]))


@njit(cache=True, nogil=True)
def _solve(G, c, yy, lam, beta, grad, skip, tol, max_sweeps, state):
    """Run sweeps in place until the duality gap drops below ``tol``.

    Every few sweeps an exact active-set solve is attempted, which removes
    the slow tail of coordinate descent on strongly correlated designs.
    For ``lam == 0`` the gap never closes unless the fit interpolates, so
    convergence is declared on the KKT residual ``max|grad| ≤ tol`` instead.
    Returns ``(sweeps, gap, converged)``.
    """
    p = beta.shape[0]
    gap = np.inf
    # a warm start from a neighbouring exact solution usually keeps its
    # support, so try the active-set solve before any sweep
    for k in range(p):
        if beta[k] != 0.0:
            _polish(G, c, lam, beta, grad, skip, 2 * p + 10, state)
            if lam > 0.0:
                primal, dual, gap, r2 = duality_gap(G, c, yy, lam, beta, grad, skip)
                if gap <= tol:
                    return 0, gap, True
            break
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for k in range(p):
            if k == skip:
                continue
            gkk = G[k, k]
            if gkk <= 0.0:
                continue
            old = beta[k]
            z = grad[k] + gkk * old
            new = _soft(z, lam) / gkk
            if new != old:
                d = new - old
                beta[k] = new
                row = G[k]
                for m in range(p):
                    grad[m] -= d * row[m]
                ad = abs(d) * np.sqrt(gkk)
                if ad > max_delta:
                    max_delta = ad
        if (sweep == 1 or sweep % 4 == 0) and max_delta > 0.0:
            _polish(G, c, lam, beta, grad, skip, 2 * p + 10, state)
        if lam > 0.0:
            primal, dual, gap, r2 = duality_gap(G, c, yy, lam, beta, grad, skip)
            if gap <= tol:
                return sweep, gap, True
        else:
            gmax = 0.0
            for k in range(p):
                if k != skip and abs(grad[k]) > gmax:
                    gmax = abs(grad[k])
            gap = gmax
            if gmax <= tol or max_delta == 0.0:
                return sweep, gap, True
    return max_sweeps, gap, False


@njit(cache=True, nogil=True)
def cd_path_resume(G, c, yy, lams, skip, tol, max_sweeps, early_stop, max_active, beta, grad,
                   prev_dev):
    """Continue a warm-started path over ``lams`` from state ``(beta, grad)``.

    ``beta`` and ``grad`` are updated in place.  Returns
    ``(betas, n_fit, gaps, ok, stopped, prev_dev)``; rows of ``betas`` past
    ``n_fit`` are zero.  With ``early_stop`` the path halts (``stopped``) once
    the explained fraction of ``yy`` reaches 0.999, its relative gain falls
    below 1e-5, or the active set exceeds ``max_active``.
    """
    p = G.shape[0]
    L = lams.shape[0]
    betas = np.zeros((L, p))
    gaps = np.zeros(L)
    ok = True
    stopped = False
    n_fit = 0
    state = new_state(p)
    for i in range(L):
        sweeps, gap, conv = _solve(G, c, yy, lams[i], beta, grad, skip, tol, max_sweeps, state)
        betas[i] = beta
        gaps[i] = gap
        n_fit = i + 1
        if not conv:
            ok = False
            break
        if early_stop:
            primal, dual, g2, r2 = duality_gap(G, c, yy, lams[i], beta, grad, skip)
            dev = 1.0 - r2 / yy if yy > 0.0 else 1.0
            nnz = 0
            for k in range(p):
                if beta[k] != 0.0:
                    nnz += 1
            if dev >= 0.999 or nnz > max_active:
                stopped = True
                break
            if dev > 0.0 and prev_dev > 0.0 and dev - prev_dev < 1e-5 * dev:
                stopped = True
                break
            prev_dev = dev
    return betas, n_fit, gaps, ok, stopped, prev_dev


@njit(cache=True, nogil=True)
def cd_path(G, c, yy, lams, skip, tol, max_sweeps, early_stop, max_active):
    """Warm-started solutions along a decreasing grid ``lams`` from zero.

    Returns ``(betas, n_fit, gaps, ok)``; see ``cd_path_resume``.
    """
    beta = np.zeros(G.shape[0])
    grad = c.copy()
    if skip >= 0:
        grad[skip] = 0.0
    betas, n_fit, gaps, ok, stopped, prev = cd_path_resume(
        G, c, yy, lams, skip, tol, max_sweeps, early_stop, max_active, beta, grad, 0.0)
    return betas, n_fit, gaps, ok
