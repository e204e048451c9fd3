"""Pure-numpy fallback kernels; mirror of the compiled _speedups module.

Both backends consume pre-drawn randomness arrays, so a chain is fully
determined by its inputs regardless of backend. Floating-point rounding may
still differ between backends (BLAS vs explicit loops); determinism is
guaranteed within a backend, not across them.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def binomial_rw_chain(X, k, trials, prior_mean, prior_prec, beta0, normals,
                      log_unifs, burn_in, target_accept, adapt_decay,
                      init_scale, cov_update_every):
    """Adaptive random-walk Metropolis for binomial-logistic regression.

    Robbins-Monro scale adaptation toward ``target_accept`` plus a running
    proposal covariance (recomputed every ``cov_update_every`` iterations);
    both freeze at ``burn_in``. Logistic regression is the trials=1 case.
    Returns (draws, accept flags, final proposal scale).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    trials = np.asarray(trials, dtype=np.float64)
    T, p = normals.shape

    def log_post(beta):
        eta = X @ beta
        ll = k @ eta - trials @ np.logaddexp(0.0, eta)
        dev = beta - prior_mean
        return ll - 0.5 * dev @ prior_prec @ dev

    draws = np.empty((T, p))
    accepts = np.zeros(T, dtype=np.uint8)
    beta = np.asarray(beta0, dtype=np.float64).copy()
    lp = log_post(beta)
    log_s = np.log(init_scale)
    chol = np.eye(p)
    mean = np.zeros(p)
    m2 = np.zeros((p, p))
    count = 0
    for t in range(T):
        prop = beta + np.exp(log_s) * (chol @ normals[t])
        lpp = log_post(prop)
        d = lpp - lp
        if log_unifs[t] < d:
            beta, lp = prop, lpp
            accepts[t] = 1
        if t < burn_in:
            alpha = 1.0 if d >= 0 else np.exp(d)
            log_s += (t + 1.0) ** (-adapt_decay) * (alpha - target_accept)
            count += 1
            delta = beta - mean
            mean += delta / count
            m2 += np.outer(delta, beta - mean)
            if count > 10 * p and (t + 1) % cov_update_every == 0:
                cov = m2 / (count - 1) + 1e-9 * np.eye(p)
                try:
                    chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass
        draws[t] = beta
    return draws, accepts, float(np.exp(log_s))


def tps_design(points, knots, m, whiten=None):
    """Thin-plate radial design: C(||points_i - knots_k||), then @ whiten.

    C(r) = r^(2m-d) for odd d, r^(2m-d) log r for even d (0 at r=0).
    """
    points = np.asarray(points, dtype=np.float64)
    knots = np.asarray(knots, dtype=np.float64)
    n, d = points.shape
    n_knots = knots.shape[0]
    expo = 2 * m - d
    out = np.empty((n, n_knots))
    # direct differences (exact zero for coincident points, which the
    # eigenvalue truncation relies on); chunked to bound memory
    step = max(1, (1 << 22) // max(1, n_knots * d))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        diff = points[lo:hi, None, :] - knots[None, :, :]
        r = np.sqrt(np.einsum("ikd,ikd->ik", diff, diff))
        if d % 2 == 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                out[lo:hi] = np.where(r > 0.0, r**expo * np.log(r), 0.0)
        else:
            out[lo:hi] = r**expo
    if whiten is None:
        return out
    return out @ whiten
