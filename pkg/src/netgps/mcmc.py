"""Chain configuration, the adaptive RW-Metropolis driver, and diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import SamplerError, ValidationError


@dataclass
class McmcConfig:
    iterations: int = 4000
    burn_in: int = 2000
    thin: int = 2
    seed: int | None = None
    target_accept: float = 0.234
    adapt_decay: float = 0.6
    init_scale: float | None = None  # default 2.38/sqrt(p), set per chain
    cov_update_every: int = 25

    def __post_init__(self):
        if self.iterations <= 0 or not 0 <= self.burn_in < self.iterations:
            raise ValidationError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must be in (0,1)")
        if self.n_retained < 1:
            raise ValidationError("no retained draws; lengthen the chain")

    @property
    def n_retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def retained_indices(self) -> np.ndarray:
        return np.arange(self.burn_in, self.iterations, self.thin)


@dataclass
class ChainResult:
    draws: np.ndarray  # full chain (iterations, p), burn-in included
    accepts: np.ndarray
    final_scale: float
    cfg: McmcConfig

    @property
    def retained(self) -> np.ndarray:
        return self.draws[self.cfg.retained_indices()]

    @property
    def acceptance_rate(self) -> float:
        """Acceptance over the post-adaptation stretch."""
        return float(self.accepts[self.cfg.burn_in :].mean())


def run_binomial_chain(X, k, trials, prior_mean, prior_cov, cfg: McmcConfig,
                       rng: np.random.Generator | None = None) -> ChainResult:
    """Sample beta | k ~ Binomial(trials, invlogit(X beta)) with normal prior.

    All randomness is drawn up front from ``rng`` so both kernel backends
    consume the same streams.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    prior_mean = np.broadcast_to(np.asarray(prior_mean, dtype=np.float64), (p,)).copy()
    prior_cov = np.asarray(prior_cov, dtype=np.float64)
    if prior_cov.ndim == 0:
        prior_cov = np.eye(p) * float(prior_cov)
    elif prior_cov.ndim == 1:
        prior_cov = np.diag(prior_cov)
    try:
        prior_prec = np.linalg.inv(prior_cov)
    except np.linalg.LinAlgError:
        raise ValidationError("prior covariance must be positive definite") from None
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    normals = rng.standard_normal((cfg.iterations, p))
    log_unifs = np.log(rng.random(cfg.iterations))
    init_scale = cfg.init_scale if cfg.init_scale is not None else 2.38 / np.sqrt(p)
    draws, accepts, scale = kernels.binomial_rw_chain(
        X, k, trials, prior_mean, prior_prec, prior_mean, normals, log_unifs,
        cfg.burn_in, cfg.target_accept, cfg.adapt_decay, init_scale,
        cfg.cov_update_every,
    )
    if not np.isfinite(draws).all():
        bad = int(np.nonzero(~np.isfinite(draws).all(axis=1))[0][0])
        raise SamplerError(f"non-finite chain state at iteration {bad}")
    return ChainResult(draws, accepts, scale, cfg)


def split_rhat(chain: np.ndarray) -> float:
    """Split-R-hat of a single chain (Gelman et al. convergence ratio)."""
    x = np.asarray(chain, dtype=np.float64)
    half = x.size // 2
    if half < 2:
        return np.nan
    a, b = x[:half], x[half : 2 * half]
    means = np.array([a.mean(), b.mean()])
    variances = np.array([a.var(ddof=1), b.var(ddof=1)])
    w = variances.mean()
    bvar = half * means.var(ddof=1)
    if w == 0:
        return 1.0
    var_plus = (half - 1) / half * w + bvar / half
    return float(np.sqrt(var_plus / w))


def effective_sample_size(chain: np.ndarray) -> float:
    """ESS via Geyer's initial positive sequence of autocorrelations."""
    x = np.asarray(chain, dtype=np.float64)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return float(n)
    # autocovariance via FFT
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / var
    # pair sums until the first negative pair
    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
        t += 2
    return float(n / max(tau, 1.0))
