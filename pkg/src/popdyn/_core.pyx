# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot loops.

Every function here has a NumPy twin with the same signature in
``popdyn._pure``; ``popdyn._kernels`` picks one at import time.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport free, malloc, qsort

cnp.import_array()

ctypedef struct Pair:
    double value
    Py_ssize_t label


cdef int _cmp_pair(const void* a, const void* b) noexcept nogil:
    cdef double va = (<Pair*>a).value
    cdef double vb = (<Pair*>b).value
    if va < vb:
        return -1
    if va > vb:
        return 1
    return 0


def assign_nearest(const double[:, ::1] X, const double[:, ::1] C):
    """Nearest row of ``C`` for every row of ``X`` (ties -> lowest index)."""
    cdef Py_ssize_t n = X.shape[0], k = C.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, t, best
    cdef double acc, diff, best_d
    labels_arr = np.empty(n, dtype=np.intp)
    d2_arr = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] labels = labels_arr
    cdef double[::1] d2 = d2_arr
    with nogil:
        for i in range(n):
            best = 0
            best_d = 0.0
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = X[i, t] - C[j, t]
                    acc = acc + diff * diff
                if j == 0 or acc < best_d:
                    best_d = acc
                    best = j
            labels[i] = best
            d2[i] = best_d
    return labels_arr, d2_arr


def mean_shift_flat(const double[:, ::1] X, double bandwidth, Py_ssize_t max_iter,
                    double tol):
    """Move every point to the mean of data points within ``bandwidth``.

    Returns the converged positions and the iteration count per point.
    """
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, t, it, count
    cdef double r2 = bandwidth * bandwidth, acc, diff, shift
    modes_arr = np.array(X, dtype=np.float64, copy=True)
    iters_arr = np.zeros(n, dtype=np.intp)
    cdef double[:, ::1] modes = modes_arr
    cdef Py_ssize_t[::1] iters = iters_arr
    cdef double* nxt = <double*>malloc(d * sizeof(double))
    if nxt == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                for it in range(max_iter):
                    for t in range(d):
                        nxt[t] = 0.0
                    count = 0
                    for j in range(n):
                        acc = 0.0
                        for t in range(d):
                            diff = X[j, t] - modes[i, t]
                            acc = acc + diff * diff
                        if acc <= r2:
                            count = count + 1
                            for t in range(d):
                                nxt[t] = nxt[t] + X[j, t]
                    shift = 0.0
                    for t in range(d):
                        nxt[t] = nxt[t] / count
                        diff = nxt[t] - modes[i, t]
                        shift = shift + diff * diff
                        modes[i, t] = nxt[t]
                    iters[i] = it + 1
                    if sqrt(shift) < tol:
                        break
    finally:
        free(nxt)
    return modes_arr, iters_arr


def best_split(const double[:, ::1] X, const Py_ssize_t[::1] y,
               const Py_ssize_t[::1] rows, const Py_ssize_t[::1] features,
               Py_ssize_t n_classes, Py_ssize_t min_leaf):
    """Best Gini split of ``rows`` over ``features``.

    The score is sum_c nL_c^2 / nL + sum_c nR_c^2 / nR (larger is better).
    Features are scanned in the given order and thresholds ascending; only a
    strictly better score replaces the incumbent. Returns
    ``(feature, threshold, score)`` with feature -1 when nothing is valid.
    """
    cdef Py_ssize_t n = rows.shape[0], m = features.shape[0]
    cdef Py_ssize_t f, fi, i, c, lab
    cdef long long sq_left, sq_right, cl, cr
    cdef double score, thr, best_score = -1.0, best_thr = 0.0
    cdef Py_ssize_t best_feature = -1
    if n < 2 * min_leaf or n < 2:
        return -1, 0.0, -1.0
    cdef Pair* buf = <Pair*>malloc(n * sizeof(Pair))
    cdef long long* left = <long long*>malloc(n_classes * sizeof(long long))
    cdef long long* total = <long long*>malloc(n_classes * sizeof(long long))
    if buf == NULL or left == NULL or total == NULL:
        free(buf); free(left); free(total)
        raise MemoryError()
    try:
        with nogil:
            for c in range(n_classes):
                total[c] = 0
            for i in range(n):
                total[y[rows[i]]] += 1
            for fi in range(m):
                f = features[fi]
                for i in range(n):
                    buf[i].value = X[rows[i], f]
                    buf[i].label = y[rows[i]]
                qsort(buf, n, sizeof(Pair), _cmp_pair)
                if buf[0].value == buf[n - 1].value:
                    continue
                for c in range(n_classes):
                    left[c] = 0
                sq_left = 0
                sq_right = 0
                for c in range(n_classes):
                    sq_right += total[c] * total[c]
                for i in range(n - 1):
                    lab = buf[i].label
                    cl = left[lab]
                    cr = total[lab] - cl
                    sq_left += 2 * cl + 1
                    sq_right -= 2 * cr - 1
                    left[lab] = cl + 1
                    if buf[i].value == buf[i + 1].value:
                        continue
                    if i + 1 < min_leaf or n - i - 1 < min_leaf:
                        continue
                    score = (<double>sq_left) / (i + 1) + (<double>sq_right) / (n - i - 1)
                    if score > best_score:
                        thr = buf[i].value + (buf[i + 1].value - buf[i].value) / 2.0
                        if thr >= buf[i + 1].value:
                            thr = buf[i].value
                        best_score = score
                        best_thr = thr
                        best_feature = f
    finally:
        free(buf); free(left); free(total)
    return best_feature, best_thr, best_score


def tree_apply(const double[:, ::1] X, const Py_ssize_t[::1] feature,
               const double[::1] threshold, const Py_ssize_t[::1] left,
               const Py_ssize_t[::1] right):
    """Leaf index reached by every row (``x[f] <= thr`` goes left)."""
    cdef Py_ssize_t n = X.shape[0], i, node
    out_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            node = 0
            while left[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = node
    return out_arr


def smo_solve(const double[:, ::1] K, const double[::1] y, double C,
              double epsilon, double tol, Py_ssize_t max_iter):
    """Epsilon-SVR dual by SMO with second-order working-pair selection.

    Uses the doubled-variable form: alpha[0:n] carry sign +1 and linear term
    epsilon - y, alpha[n:2n] carry sign -1 and linear term epsilon + y.
    Returns ``(beta, bias, iterations, converged)`` where
    beta = alpha[:n] - alpha[n:] and f(x) = sum beta_i K(x_i, x) + bias.
    """
    cdef Py_ssize_t n = K.shape[0], l = 2 * n
    cdef Py_ssize_t t, r, i, j, ii, jj, it = 0
    cdef double TAU = 1e-12
    cdef double gmax, gmax2, grad_diff, quad, obj, obj_min, val
    cdef double si, sj, old_ai, old_aj, dai, daj, delta, diff, total
    cdef double ub, lb, sum_free, yg, dk
    cdef Py_ssize_t n_free
    cdef bint converged = False
    alpha_arr = np.zeros(l, dtype=np.float64)
    grad_arr = np.empty(l, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = grad_arr
    for r in range(n):
        G[r] = epsilon - y[r]
        G[r + n] = epsilon + y[r]

    with nogil:
        while True:
            gmax = -1e300
            gmax2 = -1e300
            i = -1
            j = -1
            for t in range(l):
                if t < n:
                    if alpha[t] < C and -G[t] > gmax:
                        gmax = -G[t]
                        i = t
                else:
                    if alpha[t] > 0 and G[t] > gmax:
                        gmax = G[t]
                        i = t
            if i < 0:
                converged = True
                break
            ii = i % n
            si = 1.0 if i < n else -1.0
            obj_min = 1e300
            for t in range(l):
                r = t % n
                if t < n:
                    if alpha[t] > 0:
                        grad_diff = gmax + G[t]
                        if G[t] > gmax2:
                            gmax2 = G[t]
                        if grad_diff > 0:
                            quad = K[ii, ii] + K[r, r] - 2.0 * K[ii, r]
                            if quad <= 0:
                                quad = TAU
                            obj = -(grad_diff * grad_diff) / quad
                            if obj < obj_min:
                                obj_min = obj
                                j = t
                else:
                    if alpha[t] < C:
                        grad_diff = gmax - G[t]
                        if -G[t] > gmax2:
                            gmax2 = -G[t]
                        if grad_diff > 0:
                            quad = K[ii, ii] + K[r, r] - 2.0 * K[ii, r]
                            if quad <= 0:
                                quad = TAU
                            obj = -(grad_diff * grad_diff) / quad
                            if obj < obj_min:
                                obj_min = obj
                                j = t
            if gmax + gmax2 < tol or j < 0:
                converged = True
                break
            if it >= max_iter:
                break
            it = it + 1

            jj = j % n
            sj = 1.0 if j < n else -1.0
            old_ai = alpha[i]
            old_aj = alpha[j]
            if si != sj:
                quad = K[ii, ii] + K[jj, jj] + 2.0 * (si * sj * K[ii, jj])
                if quad <= 0:
                    quad = TAU
                delta = (-G[i] - G[j]) / quad
                diff = alpha[i] - alpha[j]
                alpha[i] = alpha[i] + delta
                alpha[j] = alpha[j] + delta
                if diff > 0:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = diff
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = -diff
                if diff > 0:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = C - diff
                else:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = C + diff
            else:
                quad = K[ii, ii] + K[jj, jj] - 2.0 * (si * sj * K[ii, jj])
                if quad <= 0:
                    quad = TAU
                delta = (G[i] - G[j]) / quad
                total = alpha[i] + alpha[j]
                alpha[i] = alpha[i] - delta
                alpha[j] = alpha[j] + delta
                if total > C:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = total - C
                else:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = total
                if total > C:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = total - C
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = total

            dai = (alpha[i] - old_ai) * si
            daj = (alpha[j] - old_aj) * sj
            for r in range(n):
                dk = K[r, ii] * dai + K[r, jj] * daj
                G[r] = G[r] + dk
                G[r + n] = G[r + n] - dk

        ub = 1e300
        lb = -1e300
        sum_free = 0.0
        n_free = 0
        for t in range(l):
            si = 1.0 if t < n else -1.0
            yg = si * G[t]
            if alpha[t] >= C:
                if si < 0:
                    if yg < ub:
                        ub = yg
                else:
                    if yg > lb:
                        lb = yg
            elif alpha[t] <= 0:
                if si > 0:
                    if yg < ub:
                        ub = yg
                else:
                    if yg > lb:
                        lb = yg
            else:
                n_free = n_free + 1
                sum_free = sum_free + yg
        if n_free > 0:
            val = sum_free / n_free
        else:
            val = (ub + lb) / 2.0

    beta = alpha_arr[:n] - alpha_arr[n:]
    return beta, -val, it, bool(converged)
