# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the _speedups_py kernels.

Same contracts and the same pre-drawn randomness as the numpy fallback;
see _speedups_py for the reference implementation and the cross-backend
rounding caveat.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt

cnp.import_array()

BACKEND = "cython"


cdef inline double _softplus(double x) nogil:
    # log(1 + e^x) without overflow on either side
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef double _log_post(double[:, ::1] X, double[::1] k, double[::1] trials,
                      double[::1] prior_mean, double[:, ::1] prior_prec,
                      double[::1] beta) nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double ll = 0.0, quad = 0.0, acc
    for i in range(n):
        acc = 0.0
        for j in range(p):
            acc += X[i, j] * beta[j]
        ll += k[i] * acc - trials[i] * _softplus(acc)
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += prior_prec[i, j] * (beta[j] - prior_mean[j])
        quad += (beta[i] - prior_mean[i]) * acc
    return ll - 0.5 * quad


def binomial_rw_chain(X, k, trials, prior_mean, prior_prec, beta0, normals,
                      log_unifs, burn_in, target_accept, adapt_decay,
                      init_scale, cov_update_every):
    """Adaptive random-walk Metropolis; see _speedups_py.binomial_rw_chain."""
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] kv = np.ascontiguousarray(np.asarray(k, dtype=np.float64))
    cdef double[::1] nv = np.ascontiguousarray(np.asarray(trials, dtype=np.float64))
    cdef double[::1] pm = np.ascontiguousarray(np.asarray(prior_mean, dtype=np.float64))
    cdef double[:, ::1] pp = np.ascontiguousarray(np.asarray(prior_prec, dtype=np.float64))
    cdef double[:, ::1] nm = np.ascontiguousarray(np.asarray(normals, dtype=np.float64))
    cdef double[::1] lu = np.ascontiguousarray(np.asarray(log_unifs, dtype=np.float64))
    cdef Py_ssize_t T = nm.shape[0], p = nm.shape[1]
    cdef Py_ssize_t burn = burn_in, cov_every = cov_update_every
    cdef double t_acc = target_accept, decay = adapt_decay

    draws_arr = np.empty((T, p))
    accepts_arr = np.zeros(T, dtype=np.uint8)
    beta_arr = np.asarray(beta0, dtype=np.float64).copy()
    chol_arr = np.eye(p)
    m2_arr = np.zeros((p, p))
    cdef double[:, ::1] draws = draws_arr
    cdef cnp.uint8_t[::1] accepts = accepts_arr
    cdef double[::1] beta = beta_arr
    cdef double[:, ::1] chol = chol_arr
    cdef double[:, ::1] m2 = m2_arr
    cdef double[::1] prop = np.empty(p)
    cdef double[::1] mean = np.zeros(p)
    cdef double[::1] delta = np.empty(p)

    cdef double lp = _log_post(Xv, kv, nv, pm, pp, beta_arr)
    cdef double log_s = log(init_scale)
    cdef double lpp, d, alpha, acc, scale
    cdef Py_ssize_t count = 0, t, i, j

    for t in range(T):
        scale = exp(log_s)
        for i in range(p):
            acc = 0.0
            for j in range(i + 1):  # proposal chol is lower triangular
                acc += chol[i, j] * nm[t, j]
            prop[i] = beta[i] + scale * acc
        lpp = _log_post(Xv, kv, nv, pm, pp, prop)
        d = lpp - lp
        if lu[t] < d:
            for i in range(p):
                beta[i] = prop[i]
            lp = lpp
            accepts[t] = 1
        if t < burn:
            alpha = 1.0 if d >= 0 else exp(d)
            log_s += (t + 1.0) ** (-decay) * (alpha - t_acc)
            count += 1
            for i in range(p):
                delta[i] = beta[i] - mean[i]
                mean[i] += delta[i] / count
            for i in range(p):
                for j in range(p):
                    m2[i, j] += delta[i] * (beta[j] - mean[j])
            if count > 10 * p and (t + 1) % cov_every == 0:
                cov = m2_arr / (count - 1) + 1e-9 * np.eye(p)
                try:
                    chol_arr[:] = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass
        for i in range(p):
            draws[t, i] = beta[i]
    return draws_arr, accepts_arr, float(exp(log_s))


def tps_design(points, knots, m, whiten=None):
    """Thin-plate radial design; see _speedups_py.tps_design."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    kn = np.ascontiguousarray(knots, dtype=np.float64)
    cdef double[:, ::1] P = pts
    cdef double[:, ::1] K = kn
    cdef Py_ssize_t n = P.shape[0], nk = K.shape[0], d = P.shape[1]
    cdef double expo = 2.0 * <double> m - <double> d
    cdef bint even = d % 2 == 0
    out_arr = np.empty((n, nk))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, q, j
    cdef double s, diff, r
    with nogil:
        for i in range(n):
            for q in range(nk):
                s = 0.0
                for j in range(d):
                    diff = P[i, j] - K[q, j]
                    s += diff * diff
                r = sqrt(s)
                if even:
                    out[i, q] = r ** expo * log(r) if r > 0.0 else 0.0
                else:
                    out[i, q] = r ** expo
    if whiten is None:
        return out_arr
    return out_arr @ whiten
