"""Individual and neighborhood propensity score models.

Stage 1 is Bayesian logistic regression for Z | X (Phi). Stage 2 is a
Bayesian binomial regression for the number of treated neighbors
k_i = round(G_i * N_i) out of N_i trials given (Z, X); the neighborhood GPS
Lambda is the binomial pmf at the unit's own exposure level. Both posteriors
ignore the outcome entirely (cut feedback).
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .data import UnitTable
from .errors import SingularDesignError, ValidationError
from .mcmc import ChainResult, McmcConfig, run_binomial_chain

SEPARATION_THRESHOLD = 50.0


@dataclass
class GaussianPrior:
    """Weakly informative default: mean 0, variance 10^2 per coefficient."""

    mean: float = 0.0
    var: float = 100.0

    def materialize(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        if self.var <= 0:
            raise ValidationError("prior variance must be positive")
        return np.full(p, float(self.mean)), np.eye(p) * float(self.var)


@dataclass
class IndividualPsModel:
    link: str = "logit"
    prior: GaussianPrior = field(default_factory=GaussianPrior)

    def __post_init__(self):
        if self.link != "logit":
            raise ValidationError("only the logit link is implemented")


@dataclass
class NeighborhoodGpsModel:
    family: str = "binomial"
    prior: GaussianPrior = field(default_factory=GaussianPrior)
    # binomial has no free dispersion; housed for interface completeness
    nu: float = 1.0
    nu_rate: float = 1.0

    def __post_init__(self):
        if self.family != "binomial":
            raise ValidationError("only the binomial family is implemented")
        if self.nu <= 0:
            raise ValidationError("dispersion must be positive")


@dataclass
class PsPosterior:
    draws: np.ndarray  # retained draws (M, p)
    param_names: tuple
    accept_rate: float
    cfg: McmcConfig
    raw_draws: np.ndarray  # full chain incl. burn-in (iterations, p)
    final_scale: float
    nu: float | None = None  # fixed dispersion carried along (stage 2)

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.param_names)
            for row in self.draws:
                writer.writerow([repr(float(v)) for v in row])


def _check_design(design: np.ndarray, what: str) -> None:
    if design.shape[0] < design.shape[1]:
        raise SingularDesignError(f"{what}: more columns than rows")
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularDesignError(f"{what}: design matrix is rank deficient")


def _finish(chain: ChainResult, names, nu=None) -> PsPosterior:
    post = PsPosterior(
        draws=chain.retained.copy(),
        param_names=tuple(names),
        accept_rate=chain.acceptance_rate,
        cfg=chain.cfg,
        raw_draws=chain.draws,
        final_scale=chain.final_scale,
        nu=nu,
    )
    if np.abs(post.draws).max() > SEPARATION_THRESHOLD:
        warnings.warn(
            "coefficient magnitudes exceed %.0f; possible separation, "
            "posterior is prior-dominated" % SEPARATION_THRESHOLD
        )
    return post


def sample_individual_ps(data: UnitTable, x_cols=None,
                         model: IndividualPsModel | None = None,
                         cfg: McmcConfig | None = None,
                         rng: np.random.Generator | None = None) -> PsPosterior:
    """Posterior of beta^(Z) for Z ~ Bernoulli(invlogit([1, X^z] beta))."""
    model = model or IndividualPsModel()
    cfg = cfg or McmcConfig()
    xsel = data.select(x_cols)
    design = np.column_stack([np.ones(data.n), xsel])
    _check_design(design, "individual PS")
    prior_mean, prior_cov = model.prior.materialize(design.shape[1])
    chain = run_binomial_chain(
        design, data.z.astype(np.float64), np.ones(data.n), prior_mean,
        prior_cov, cfg, rng,
    )
    names = ["intercept"] + [f"x:{c}" for c in _col_names(data, x_cols)]
    return _finish(chain, names)


def sample_neighborhood_gps(data: UnitTable, x_cols=None, trials=None,
                            model: NeighborhoodGpsModel | None = None,
                            cfg: McmcConfig | None = None,
                            rng: np.random.Generator | None = None) -> PsPosterior:
    """Posterior of beta^(G) for k = round(G*N) ~ Binomial(N, invlogit(eta)).

    ``trials`` are the neighbor counts N_i; rows with trials == 0 or missing
    G are dropped (isolated nodes are not modeled).
    """
    model = model or NeighborhoodGpsModel()
    cfg = cfg or McmcConfig()
    if data.g is None:
        raise ValidationError("data.g (neighborhood treatment) is required")
    if trials is None:
        raise ValidationError("trials (neighbor counts N_i) are required")
    trials = np.asarray(trials, dtype=np.float64)
    if trials.shape != (data.n,):
        raise ValidationError("trials must have one entry per unit")
    keep = (trials >= 1) & np.isfinite(data.g)
    if not keep.any():
        raise ValidationError("no eligible units for the neighborhood GPS")
    g = data.g[keep]
    n_tr = trials[keep]
    if np.any(g < 0) or np.any(g > 1):
        raise ValidationError("proportion exposure must lie in [0,1]")
    k = np.rint(g * n_tr)  # round-half-even
    xsel = data.select(x_cols)[keep]
    design = np.column_stack([np.ones(keep.sum()), data.z[keep], xsel])
    _check_design(design, "neighborhood GPS")
    prior_mean, prior_cov = model.prior.materialize(design.shape[1])
    chain = run_binomial_chain(design, k, n_tr, prior_mean, prior_cov, cfg, rng)
    names = ["intercept", "z"] + [f"x:{c}" for c in _col_names(data, x_cols)]
    return _finish(chain, names, nu=model.nu)


def _col_names(data: UnitTable, x_cols) -> list:
    if x_cols is None or x_cols == "all":
        return list(data.x_names)
    return [c if isinstance(c, str) else data.x_names[int(c)] for c in x_cols]


def predict_individual_ps(draw, x) -> np.ndarray:
    """Phi = invlogit([1, x] . draw) for one posterior draw."""
    draw = np.asarray(draw, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eta = draw[0] + x @ draw[1:]
    out = expit(eta)
    return out if out.size > 1 else float(out[0])


def binom_logpmf(k, n, eta):
    """log Binomial(k; n, invlogit(eta)), stable in eta."""
    k = np.asarray(k, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return logc + k * eta - n * np.logaddexp(0.0, eta)


def gps_density(draw, g, z, x, n_trials):
    """Lambda = Binomial pmf of k = round(g*N) at the draw's success prob.

    Rounding uses round-half-even (numpy rint); g=0.5 with N=3 gives k=2.
    """
    draw = np.asarray(draw, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n_trials = np.asarray(n_trials, dtype=np.float64)
    if np.any(n_trials < 1):
        raise ValidationError("gps_density needs N_i >= 1")
    g = np.asarray(g, dtype=np.float64)
    if np.any(g < 0) or np.any(g > 1):
        raise ValidationError("exposure level outside [0,1]")
    k = np.rint(g * n_trials)
    eta = draw[0] + draw[1] * np.asarray(z, dtype=np.float64) + x @ draw[2:]
    out = np.exp(binom_logpmf(k, n_trials, eta))
    return out if out.size > 1 else float(out.reshape(-1)[0])
