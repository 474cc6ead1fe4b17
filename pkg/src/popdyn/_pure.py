"""NumPy implementations of the kernels in ``_core.pyx``.

Same signatures, same tie-breaking. Used when the extension is not built
or when ``POPDYN_PURE=1`` is set.
"""
import numpy as np

_CHUNK = 256


def assign_nearest(X, C):
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    n = X.shape[0]
    labels = np.empty(n, dtype=np.intp)
    d2 = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        block = X[start:start + _CHUNK]
        dist = ((block[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        lab = np.argmin(dist, axis=1)
        labels[start:start + _CHUNK] = lab
        d2[start:start + _CHUNK] = dist[np.arange(len(block)), lab]
    return labels, d2


def mean_shift_flat(X, bandwidth, max_iter, tol):
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    r2 = bandwidth * bandwidth
    modes = X.copy()
    iters = np.zeros(n, dtype=np.intp)
    active = np.arange(n)
    for it in range(max_iter):
        if active.size == 0:
            break
        still = []
        for start in range(0, active.size, _CHUNK):
            idx = active[start:start + _CHUNK]
            cur = modes[idx]
            dist = ((cur[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
            mask = (dist <= r2).astype(np.float64)
            nxt = (mask @ X) / mask.sum(axis=1)[:, None]
            shift = np.sqrt(((nxt - cur) ** 2).sum(axis=1))
            modes[idx] = nxt
            iters[idx] = it + 1
            still.append(idx[shift >= tol])
        active = np.concatenate(still)
    return modes, iters


def best_split(X, y, rows, features, n_classes, min_leaf):
    n = len(rows)
    if n < 2 * min_leaf or n < 2:
        return -1, 0.0, -1.0
    labels = np.asarray(y)[rows]
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    best = (-1, 0.0, -1.0)
    sizes_left = np.arange(1, n, dtype=np.int64)
    sizes_right = n - sizes_left
    for f in features:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        if v[0] == v[-1]:
            continue
        onehot[:] = 0
        onehot[np.arange(n), labels[order]] = 1
        cum = np.cumsum(onehot, axis=0)[:-1]
        total = cum[-1] + onehot[-1]
        sq_left = (cum * cum).sum(axis=1)
        rest = total[None, :] - cum
        sq_right = (rest * rest).sum(axis=1)
        valid = (v[:-1] != v[1:]) & (sizes_left >= min_leaf) & (sizes_right >= min_leaf)
        if not valid.any():
            continue
        score = sq_left / sizes_left + sq_right / sizes_right
        score = np.where(valid, score, -np.inf)
        pos = int(np.argmax(score))
        if score[pos] > best[2]:
            thr = v[pos] + (v[pos + 1] - v[pos]) / 2.0
            if thr >= v[pos + 1]:
                thr = v[pos]
            best = (int(f), float(thr), float(score[pos]))
    return best


def tree_apply(X, feature, threshold, left, right):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.intp)
    active = np.arange(n)
    while active.size:
        cur = node[active]
        internal = left[cur] >= 0
        active = active[internal]
        cur = cur[internal]
        if not active.size:
            break
        go_left = X[active, feature[cur]] <= threshold[cur]
        node[active] = np.where(go_left, left[cur], right[cur])
    return node


def smo_solve(K, y, C, epsilon, tol, max_iter):
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = K.shape[0]
    diag = np.diag(K).copy()
    alpha = np.zeros(2 * n)
    G = np.concatenate([epsilon - y, epsilon + y])
    it = 0
    converged = False
    while True:
        a_pos, a_neg = alpha[:n], alpha[n:]
        g_pos, g_neg = G[:n], G[n:]
        up = np.concatenate([np.where(a_pos < C, -g_pos, -np.inf),
                             np.where(a_neg > 0, g_neg, -np.inf)])
        i = int(np.argmax(up))
        gmax = up[i]
        if gmax == -np.inf:
            converged = True
            break
        ii = i % n
        low = np.concatenate([np.where(a_pos > 0, g_pos, -np.inf),
                              np.where(a_neg < C, -g_neg, -np.inf)])
        gmax2 = low.max()
        grad_diff = gmax + low
        quad = K[ii, ii] + diag - 2.0 * K[ii]
        quad = np.where(quad <= 0, 1e-12, quad)
        quad2 = np.concatenate([quad, quad])
        ok = (low > -np.inf) & (grad_diff > 0)
        obj = np.where(ok, -(grad_diff * grad_diff) / quad2, np.inf)
        j = int(np.argmin(obj))
        if gmax + gmax2 < tol or not ok.any():
            converged = True
            break
        if it >= max_iter:
            break
        it += 1

        jj = j % n
        si = 1.0 if i < n else -1.0
        sj = 1.0 if j < n else -1.0
        old_ai, old_aj = alpha[i], alpha[j]
        ai, aj = old_ai, old_aj
        if si != sj:
            q = K[ii, ii] + K[jj, jj] + 2.0 * (si * sj * K[ii, jj])
            if q <= 0:
                q = 1e-12
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            q = K[ii, ii] + K[jj, jj] - 2.0 * (si * sj * K[ii, jj])
            if q <= 0:
                q = 1e-12
            delta = (G[i] - G[j]) / q
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        dai = (ai - old_ai) * si
        daj = (aj - old_aj) * sj
        dk = K[:, ii] * dai + K[:, jj] * daj
        G[:n] += dk
        G[n:] -= dk

    sign = np.concatenate([np.ones(n), -np.ones(n)])
    yg = sign * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        val = yg[free].sum() / free.sum()
    else:
        ub_mask = (at_upper & (sign < 0)) | (at_lower & (sign > 0))
        lb_mask = (at_upper & (sign > 0)) | (at_lower & (sign < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else 1e300
        lb = yg[lb_mask].max() if lb_mask.any() else -1e300
        val = (ub + lb) / 2.0
    return alpha[:n] - alpha[n:], -float(val), it, converged
