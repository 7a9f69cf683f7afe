"""Compiled coordinate-descent kernels.

All kernels work on a standardized design (centered columns, unit 1/n
variance) and solve penalized problems with per-coordinate penalty
``pf_j * (l1 * |b_j| + l2 / 2 * b_j^2)``.

The Gaussian family runs covariance-mode updates on the Gram matrix.  The
logistic and multinomial families run proximal Newton steps: each outer step
builds the IRLS quadratic model (weighted Gram over the candidate set, the
intercept included as an unpenalized coordinate), minimizes it with the same
quadratic solver, and backtracks along the step until the penalized
objective does not increase.

Within the quadratic solver, when sweeps over the nonzero pattern are slow
to settle the stationarity equations on that pattern are solved directly;
the solution is kept only when it reproduces the sign pattern, and a full
sweep then confirms it.

Status codes returned per lambda: number of cycles (> 0) on success, the
negated count when the cycle cap was hit.
"""
import numpy as np
from numba import njit

WEIGHT_FLOOR = 1e-5
# unsettled sweeps before a direct solve: least squares, then IRLS models
SOLVE_AFTER_LS = 1
SOLVE_AFTER = 4
REFRESH_EVERY = 8


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _quad_objective(lin, beta, grad, idx, pf, l1, l2):
    # 0.5 b'Hb - lin'b + penalty, using grad = lin - Hb
    s = 0.0
    for t in range(idx.size):
        j = idx[t]
        b = beta[j]
        s += -0.5 * lin[j] * b - 0.5 * grad[j] * b + pf[j] * (l1 * abs(b) + 0.5 * l2 * b * b)
    return s


@njit(cache=True)
def _direct_solve(H, beta, grad, idx, active, pf, l1, l2):
    """Solve the stationarity equations on the current nonzero pattern.

    If the solution keeps the sign of every penalized coordinate it is
    accepted.  Otherwise the step stops where the first coordinate reaches
    zero, which still lowers the objective (it is a convex quadratic on the
    sign-preserving segment).  Returns True if ``beta`` moved; ``grad`` is
    kept current.
    """
    m = 0
    for t in range(idx.size):
        j = idx[t]
        if active[t] and (beta[j] != 0.0 or pf[j] == 0.0):
            m += 1
    if m == 0:
        return False
    A = np.empty(m, dtype=np.int64)
    u = 0
    for t in range(idx.size):
        j = idx[t]
        if active[t] and (beta[j] != 0.0 or pf[j] == 0.0):
            A[u] = j
            u += 1
    M = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ja = A[a]
        s = grad[ja]
        for b in range(m):
            jb = A[b]
            M[a, b] = H[ja, jb]
            s += H[ja, jb] * beta[jb]
        M[a, a] += l2 * pf[ja]
        if pf[ja] > 0:
            s -= l1 * pf[ja] * np.sign(beta[ja])
        rhs[a] = s
    try:
        x = np.linalg.solve(M, rhs)
    except Exception:
        return False
    step = 1.0
    hit = -1
    for a in range(m):
        ja = A[a]
        if not np.isfinite(x[a]):
            return False
        if pf[ja] > 0 and x[a] * beta[ja] <= 0.0:
            frac = beta[ja] / (beta[ja] - x[a])
            if frac < step:
                step = frac
                hit = a
    if step <= 0.0:
        return False
    for a in range(m):
        ja = A[a]
        new = 0.0 if a == hit else beta[ja] + step * (x[a] - beta[ja])
        delta = new - beta[ja]
        if delta != 0.0:
            beta[ja] = new
            for t in range(idx.size):
                k = idx[t]
                grad[k] -= delta * H[ja, k]
    return True


@njit(cache=True)
def _cd_solve(H, lin, beta, grad, idx, pf, l1, l2, tol, max_cycles, trace, tpos, tconst,
              solve_after=SOLVE_AFTER):
    """Minimize ``0.5 b'Hb - b'(grad + Hb) + penalty`` over coordinates ``idx``.

    ``grad`` must hold the negative gradient of the smooth part on entry and
    is kept current.  Full sweeps alternate with sweeps over the nonzero
    coordinates; a direct solve is tried after ``solve_after`` unsettled
    sweeps over the nonzero pattern.  ``lin`` is only used for objective tracing.
    """
    m = idx.size
    active = np.zeros(m, dtype=np.bool_)
    sweeps_since = 0
    cycles = 0
    full = True
    while cycles < max_cycles:
        maxd = 0.0
        for t in range(m):
            if not full and not active[t]:
                continue
            j = idx[t]
            hjj = H[j, j]
            old = beta[j]
            new = _soft(grad[j] + hjj * old, l1 * pf[j]) / (hjj + l2 * pf[j])
            if new != old:
                delta = new - old
                beta[j] = new
                for u in range(m):
                    k = idx[u]
                    grad[k] -= delta * H[j, k]
                if abs(delta) > maxd:
                    maxd = abs(delta)
            if full:
                active[t] = new != 0.0 or pf[j] == 0.0
        cycles += 1
        if trace.size > 0 and tpos[0] < trace.size:
            trace[tpos[0]] = tconst + _quad_objective(lin, beta, grad, idx, pf, l1, l2)
            tpos[0] += 1
        if maxd < tol:
            if full:
                return cycles
            full = True
            continue
        if sweeps_since >= solve_after:
            sweeps_since = 0
            if _direct_solve(H, beta, grad, idx, active, pf, l1, l2):
                if trace.size > 0 and tpos[0] < trace.size:
                    trace[tpos[0]] = tconst + _quad_objective(lin, beta, grad, idx, pf, l1, l2)
                    tpos[0] += 1
                continue
            full = False
        else:
            sweeps_since += 1
            full = False
    return -cycles


@njit(cache=True)
def gaussian_path(G, c, yy, lambdas, alpha, tol, max_cycles, beta0, trace):
    """Warm-started elastic-net path for least squares (covariance mode).

    Objective per lambda: ``yy/2 - c'b + b'Gb/2 + penalty`` where
    ``c = Xs'(y - ybar)/n`` and ``yy = |y - ybar|^2 / n``.
    """
    d = c.size
    L = lambdas.size
    betas = np.zeros((L, d))
    status = np.zeros(L, dtype=np.int64)
    beta = beta0.copy()
    grad = c - G @ beta
    idx = np.arange(d)
    pf = np.ones(d)
    tpos = np.zeros(1, dtype=np.int64)
    for l in range(L):
        lam = lambdas[l]
        k = _cd_solve(G, c, beta, grad, idx, pf, lam * alpha, lam * (1.0 - alpha),
                      tol, max_cycles, trace, tpos, 0.5 * yy, SOLVE_AFTER_LS)
        betas[l] = beta
        status[l] = k
        if k < 0:
            break
    return betas, status


@njit(cache=True)
def _log1pexp(x):
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _penalty(theta, pf, l1, l2):
    s = 0.0
    for j in range(theta.size):
        if pf[j] > 0:
            s += pf[j] * (l1 * abs(theta[j]) + 0.5 * l2 * theta[j] * theta[j])
    return s


@njit(cache=True)
def _logistic_loss(eta, y):
    s = 0.0
    for i in range(y.size):
        s += _log1pexp(eta[i]) - y[i] * eta[i]
    return s / y.size


@njit(cache=True)
def _weighted_gram(Zt, w, idx, H):
    n = Zt.shape[1]
    m = idx.size
    Zi = np.empty((m, n))
    Zw = np.empty((m, n))
    for t in range(m):
        for i in range(n):
            Zi[t, i] = Zt[idx[t], i]
            Zw[t, i] = Zt[idx[t], i] * w[i]
    M = Zw @ Zi.T
    for a in range(m):
        for b in range(m):
            H[idx[a], idx[b]] = M[a, b] / n


@njit(cache=True)
def _kkt_violators(Zt, r, theta, pf, l1, inset):
    """Add to ``inset`` every excluded coordinate whose zero value fails KKT."""
    D, n = Zt.shape
    added = 0
    for j in range(D):
        if inset[j]:
            continue
        g = Zt[j] @ r / n
        if abs(g) > l1 * pf[j]:
            inset[j] = True
            added += 1
    return added


@njit(cache=True)
def _newton_step(Zt, theta, r, w, idx, pf, l1, l2, tol, max_cycles, H, lin, grad, old, refresh):
    """Minimize the quadratic model over ``idx``; returns inner status.

    ``r`` holds the working residual ``y - p``.  The curvature matrix ``H`` is
    rebuilt from the weights ``w`` only when ``refresh`` is set; otherwise the
    previous one is reused (the gradient is always exact).  On return
    ``theta`` holds the model minimizer and ``old`` the start point.
    """
    n = Zt.shape[1]
    if refresh:
        _weighted_gram(Zt, w, idx, H)
    for t in range(idx.size):
        j = idx[t]
        lin[j] = Zt[j] @ r / n
        grad[j] = lin[j]
        old[j] = theta[j]
    no_trace = np.zeros(0)
    tpos = np.zeros(1, dtype=np.int64)
    return _cd_solve(H, lin, theta, grad, idx, pf, l1, l2, tol, max_cycles, no_trace, tpos, 0.0)


@njit(cache=True)
def logistic_path(Zt, y, lambdas, alpha, ridge_mult, tol, max_cycles, theta0, trace):
    """Binary logistic elastic-net path by proximal Newton steps.

    ``Zt`` is ``(d + 1) x n``: a row of ones (the unpenalized intercept)
    followed by the standardized covariates.  ``y`` is in {0, 1}.  The ridge
    weight is ``ridge_mult * lam * (1 - alpha)``.
    """
    D, n = Zt.shape
    L = lambdas.size
    thetas = np.zeros((L, D))
    status = np.zeros(L, dtype=np.int64)
    pf = np.ones(D)
    pf[0] = 0.0
    theta = theta0.copy()
    eta = theta @ Zt
    r = np.empty(n)
    w = np.empty(n)
    H = np.zeros((D, D))
    lin = np.zeros(D)
    grad = np.zeros(D)
    old = np.zeros(D)
    step = np.zeros(n)
    tpos = np.zeros(1, dtype=np.int64)
    refresh = True
    stale = 0
    for l in range(L):
        lam = lambdas[l]
        l1 = lam * alpha
        l2 = ridge_mult * lam * (1.0 - alpha)
        outer = 0
        ok = False
        fval = _logistic_loss(eta, y) + _penalty(theta, pf, l1, l2)
        inset = (theta != 0.0) | (pf == 0.0)
        while outer < max_cycles:
            idx = np.flatnonzero(inset)
            for i in range(n):
                p = _sigmoid(eta[i])
                r[i] = y[i] - p
                w[i] = max(p * (1.0 - p), WEIGHT_FLOOR)
            if stale >= REFRESH_EVERY:
                refresh = True
            k = _newton_step(Zt, theta, r, w, idx, pf, l1, l2, tol, max_cycles,
                             H, lin, grad, old, refresh)
            if refresh:
                stale = 0
                refresh = False
            stale += 1
            if k < 0:
                break
            step[:] = 0.0
            maxd = 0.0
            for t in range(idx.size):
                j = idx[t]
                delta = theta[j] - old[j]
                if delta != 0.0:
                    step += delta * Zt[j]
                    if abs(delta) > maxd:
                        maxd = abs(delta)
            # backtrack until the objective does not increase
            tstep = 1.0
            for _ in range(60):
                trial = eta + tstep * step
                fnew = _logistic_loss(trial, y) + _penalty(theta, pf, l1, l2)
                if fnew <= fval + 1e-13 * max(1.0, abs(fval)):
                    break
                tstep *= 0.5
                refresh = True
                for t in range(idx.size):
                    j = idx[t]
                    theta[j] = old[j] + tstep * (theta[j] - old[j]) / (2.0 * tstep)
            eta = trial
            fval = fnew
            maxd *= tstep
            outer += 1
            if trace.size > 0 and tpos[0] < trace.size:
                trace[tpos[0]] = fval
                tpos[0] += 1
            if maxd < tol:
                for i in range(n):
                    r[i] = y[i] - _sigmoid(eta[i])
                if _kkt_violators(Zt, r, theta, pf, l1, inset) == 0:
                    ok = True
                    break
                refresh = True
        thetas[l] = theta
        status[l] = outer if ok else -max(outer, 1)
        if not ok:
            break
    return thetas, status


@njit(cache=True)
def _softmax_rows(eta, P):
    n, K = eta.shape
    for i in range(n):
        m = eta[i, 0]
        for k in range(1, K):
            if eta[i, k] > m:
                m = eta[i, k]
        s = 0.0
        for k in range(K):
            P[i, k] = np.exp(eta[i, k] - m)
            s += P[i, k]
        for k in range(K):
            P[i, k] /= s


@njit(cache=True)
def _multinomial_loss(eta, codes):
    n, K = eta.shape
    s = 0.0
    for i in range(n):
        m = eta[i, 0]
        for k in range(1, K):
            if eta[i, k] > m:
                m = eta[i, k]
        z = 0.0
        for k in range(K):
            z += np.exp(eta[i, k] - m)
        s += m + np.log(z) - eta[i, codes[i]]
    return s / n


@njit(cache=True)
def _penalty_center(b, l1, l2):
    """Shift ``c`` minimizing ``sum_k l1*|b_k - c| + l2/2*(b_k - c)**2``.

    Ties go to the candidate of smallest magnitude so all-zero rows stay put.
    """
    K = b.size
    best = 0.0
    bestv = 0.0
    for k in range(K):
        bestv += l1 * abs(b[k]) + 0.5 * l2 * b[k] * b[k]
    srt = np.sort(b)
    total = srt.sum()
    cands = np.empty(2 * K + 1)
    m = 0
    for k in range(K):
        cands[m] = srt[k]
        m += 1
    if l2 > 0.0:
        for below in range(K + 1):
            c = (total - l1 * (2 * below - K) / l2) / K
            lo = srt[below - 1] if below > 0 else -np.inf
            hi = srt[below] if below < K else np.inf
            if lo < c < hi:
                cands[m] = c
                m += 1
    for t in range(m):
        c = cands[t]
        v = 0.0
        for k in range(K):
            v += l1 * abs(b[k] - c) + 0.5 * l2 * (b[k] - c) ** 2
        if v < bestv - 1e-15 * max(1.0, abs(bestv)) or (
                abs(v - bestv) <= 1e-15 * max(1.0, abs(bestv)) and abs(c) < abs(best)):
            best = c
            bestv = v
    return best


@njit(cache=True)
def _multinomial_gram(Zt, P, idx, D, K, H):
    """Curvature of the multinomial loss over flattened coordinates ``idx``.

    Coordinate ``v`` stands for row ``v % D`` of class ``v // D``; the block
    for classes ``(k, k')`` has weights ``p_k (delta_kk' - p_k')``.
    """
    n = Zt.shape[1]
    counts = np.zeros(K, dtype=np.int64)
    for t in range(idx.size):
        counts[idx[t] // D] += 1
    w = np.empty(n)
    for ka in range(K):
        if counts[ka] == 0:
            continue
        ia = idx[idx // D == ka]
        Za = np.empty((ia.size, n))
        for a in range(ia.size):
            Za[a] = Zt[ia[a] % D]
        for kb in range(ka, K):
            if counts[kb] == 0:
                continue
            ib = idx[idx // D == kb]
            Zb = np.empty((ib.size, n))
            for b in range(ib.size):
                Zb[b] = Zt[ib[b] % D]
            for i in range(n):
                if ka == kb:
                    w[i] = max(P[i, ka] * (1.0 - P[i, ka]), WEIGHT_FLOOR)
                else:
                    w[i] = -P[i, ka] * P[i, kb]
            M = (Za * w) @ Zb.T
            for a in range(ia.size):
                for b in range(ib.size):
                    H[ia[a], ib[b]] = M[a, b] / n
                    H[ib[b], ia[a]] = M[a, b] / n


@njit(cache=True)
def multinomial_path(Zt, codes, lambdas, alpha, tol, max_cycles, Theta0, trace):
    """Symmetric multinomial elastic-net path (K >= 3 classes).

    One coefficient vector (intercept first) per class.  Each outer step is a
    proximal Newton step on all classes jointly.  The first class's intercept
    is held fixed because only intercept differences are identified; after
    each step every coefficient row is moved to the common shift that
    minimizes its penalty, which leaves the loss unchanged.
    """
    D, n = Zt.shape
    K = Theta0.shape[1]
    L = lambdas.size
    DK = D * K
    Thetas = np.zeros((L, D, K))
    status = np.zeros(L, dtype=np.int64)
    pf = np.ones(DK)
    for k in range(K):
        pf[k * D] = 0.0
    theta = np.empty(DK)
    for k in range(K):
        for j in range(D):
            theta[k * D + j] = Theta0[j, k]
    eta = np.ascontiguousarray(Zt.T @ Theta0)
    P = np.empty((n, K))
    R = np.empty((K, n))
    H = np.zeros((DK, DK))
    lin = np.zeros(DK)
    grad = np.zeros(DK)
    old = np.zeros(DK)
    step = np.empty((n, K))
    trial = np.empty((n, K))
    row = np.empty(K)
    tpos = np.zeros(1, dtype=np.int64)
    no_trace = np.zeros(0)
    inner_pos = np.zeros(1, dtype=np.int64)
    refresh = True
    stale = 0
    for l in range(L):
        lam = lambdas[l]
        l1 = lam * alpha
        l2 = lam * (1.0 - alpha)
        outer = 0
        ok = False
        fval = _multinomial_loss(eta, codes) + _penalty(theta, pf, l1, l2)
        inset = (theta != 0.0) | (pf == 0.0)
        inset[0] = False
        while outer < max_cycles:
            idx = np.flatnonzero(inset)
            _softmax_rows(eta, P)
            for k in range(K):
                for i in range(n):
                    R[k, i] = (1.0 if codes[i] == k else 0.0) - P[i, k]
            if stale >= REFRESH_EVERY:
                refresh = True
            if refresh:
                _multinomial_gram(Zt, P, idx, D, K, H)
                stale = 0
                refresh = False
            stale += 1
            for t in range(idx.size):
                v = idx[t]
                lin[v] = Zt[v % D] @ R[v // D] / n
                grad[v] = lin[v]
                old[v] = theta[v]
            kk = _cd_solve(H, lin, theta, grad, idx, pf, l1, l2, tol, max_cycles,
                           no_trace, inner_pos, 0.0)
            if kk < 0:
                break
            step[:, :] = 0.0
            maxd = 0.0
            for t in range(idx.size):
                v = idx[t]
                delta = theta[v] - old[v]
                if delta != 0.0:
                    j = v % D
                    k = v // D
                    for i in range(n):
                        step[i, k] += delta * Zt[j, i]
                    if abs(delta) > maxd:
                        maxd = abs(delta)
            tstep = 1.0
            for _ in range(60):
                for i in range(n):
                    for k in range(K):
                        trial[i, k] = eta[i, k] + tstep * step[i, k]
                fnew = _multinomial_loss(trial, codes) + _penalty(theta, pf, l1, l2)
                if fnew <= fval + 1e-13 * max(1.0, abs(fval)):
                    break
                tstep *= 0.5
                refresh = True
                for t in range(idx.size):
                    v = idx[t]
                    theta[v] = old[v] + tstep * (theta[v] - old[v]) / (2.0 * tstep)
            eta[:, :] = trial
            maxd *= tstep
            # the loss is invariant to a common shift of a coefficient row;
            # move each row to the shift that minimizes its penalty
            for j in range(1, D):
                for k in range(K):
                    row[k] = theta[k * D + j]
                c = _penalty_center(row, l1, l2)
                if c != 0.0:
                    for k in range(K):
                        v = k * D + j
                        theta[v] -= c
                        if theta[v] != 0.0 and not inset[v]:
                            inset[v] = True
                            refresh = True
                    for i in range(n):
                        for k in range(K):
                            eta[i, k] -= c * Zt[j, i]
                    if abs(c) > maxd:
                        maxd = abs(c)
            fval = _multinomial_loss(eta, codes) + _penalty(theta, pf, l1, l2)
            outer += 1
            if trace.size > 0 and tpos[0] < trace.size:
                trace[tpos[0]] = fval
                tpos[0] += 1
            if maxd < tol:
                _softmax_rows(eta, P)
                added = 0
                for v in range(DK):
                    if inset[v] or v == 0:
                        continue
                    k = v // D
                    g = 0.0
                    for i in range(n):
                        g += Zt[v % D, i] * ((1.0 if codes[i] == k else 0.0) - P[i, k])
                    if abs(g / n) > l1 * pf[v]:
                        inset[v] = True
                        added += 1
                if added == 0:
                    ok = True
                    break
                refresh = True
        # intercepts are identified only up to a common shift
        shift = 0.0
        for k in range(K):
            shift += theta[k * D]
        shift /= K
        for k in range(K):
            theta[k * D] -= shift
        for i in range(n):
            for k in range(K):
                eta[i, k] -= shift
        for k in range(K):
            for j in range(D):
                Thetas[l, j, k] = theta[k * D + j]
        status[l] = outer if ok else -max(outer, 1)
        if not ok:
            break
    return Thetas, status
