"""Penalized-spline mixed-model outcome sampler.

The outcome model for Gaussian y is

    y_i ~ N(q_i, nu / w_i),
    q_i = F_i . beta + S_i . b + u_{j(i)},

where F = [V', V'.z] is the fixed block built from V' = (1, g, Phi, L, L.g)
(Phi dropped under matching), S = [U, U.z] is the whitened thin-plate block,
u_j are community intercepts and w_i are optional matching weights scaling
the noise precision. The sampler is agnostic to how the GPS column L is
scaled; the estimation driver supplies it on the log scale.

One Gibbs sweep updates, in order: (a) u | rest (conjugate per community),
(b) b | rest (conjugate, ridge precisions 1/sig2_bu and 1/sig2_buz),
(c) the random-intercept scale (Metropolis on log e, where sd(u) = e^2 and
e has a Gamma hyperprior), (d) the smoothing variances (Metropolis on the
log variance, exponential priors), (e) beta | rest (conjugate), (f) nu
(Metropolis on log nu, exponential prior). Metropolis scales adapt by
Robbins-Monro toward 0.234 during burn-in and freeze afterwards.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SamplerError, ValidationError
from .mcmc import McmcConfig, effective_sample_size, split_rhat

MH_TARGET = 0.234
MH_DECAY = 0.6


@dataclass
class PriorConfig:
    coef_mean: float = 0.0  # normal prior on beta (both for the ps stages' K)
    coef_var: float = 100.0
    rate_nu: float = 1.0  # Exp rates
    rate_bu: float = 1.0
    rate_buz: float = 1.0
    # covariance machinery; degenerate for the scalar community intercept:
    # correlation matrix is 1x1, the simplex is a point, and only the trace
    # scale e remains free with sd(u) = e^2
    lkj_shape: float = 1.0
    dirichlet_conc: float = 1.0
    re_scale_shape: float = 1.0  # e ~ Gamma(shape, rate)
    re_scale_rate: float = 1.0

    def __post_init__(self):
        for name in ("coef_var", "rate_nu", "rate_bu", "rate_buz", "lkj_shape",
                     "dirichlet_conc", "re_scale_shape", "re_scale_rate"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


@dataclass
class OutcomeModelSpec:
    linear_only: bool = False
    include_random_effects: bool = True
    matching: bool = False  # V = (g, Lam) instead of (g, Phi, Lam)
    priors: PriorConfig = field(default_factory=PriorConfig)
    fixed_nu: float | None = None
    fixed_smoothing: tuple[float, float] | None = None
    fixed_sig2_u: float | None = None

    def __post_init__(self):
        if self.fixed_nu is not None and self.fixed_nu <= 0:
            raise ValidationError("fixed_nu must be positive")
        if self.fixed_smoothing is not None and any(v <= 0 for v in self.fixed_smoothing):
            raise ValidationError("fixed smoothing variances must be positive")
        if self.fixed_sig2_u is not None and self.fixed_sig2_u <= 0:
            raise ValidationError("fixed_sig2_u must be positive")


def vprime(v: np.ndarray, matching: bool = False) -> np.ndarray:
    """V' rows from V rows: (1, g, Phi, Lam, Lam*g), Phi dropped if matching.

    V columns are (g, Phi, Lam), or (g, Lam) when matching.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    g = v[:, 0]
    lam = v[:, -1]
    cols = [np.ones(v.shape[0]), g]
    if not matching:
        if v.shape[1] != 3:
            raise ValidationError("full model expects V = (g, Phi, Lam)")
        cols.append(v[:, 1])
    elif v.shape[1] != 2:
        raise ValidationError("matching model expects V = (g, Lam)")
    cols.extend([lam, lam * g])
    return np.column_stack(cols)


@dataclass
class OutcomeDesign:
    """Design bundle: V' block, whitened spline block, z, labels, weights."""

    vprime: np.ndarray
    z: np.ndarray
    u_basis: np.ndarray | None = None
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.vprime = np.atleast_2d(np.asarray(self.vprime, dtype=np.float64))
        n = self.vprime.shape[0]
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.shape != (n,):
            raise ValidationError("z misaligned with design")
        if self.u_basis is not None:
            self.u_basis = np.atleast_2d(np.asarray(self.u_basis, dtype=np.float64))
            if self.u_basis.shape[0] != n:
                raise ValidationError("u_basis misaligned with design")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValidationError("labels misaligned with design")
        if self.weights is None:
            self.weights = np.ones(n)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (n,) or np.any(self.weights <= 0):
                raise ValidationError("weights must be positive per row")

    def fixed_block(self) -> np.ndarray:
        return np.hstack([self.vprime, self.vprime * self.z[:, None]])

    def spline_block(self) -> np.ndarray | None:
        if self.u_basis is None:
            return None
        return np.hstack([self.u_basis, self.u_basis * self.z[:, None]])


class _MhScale:
    """Robbins-Monro adapted log proposal scale for one Metropolis block."""

    __slots__ = ("log_s", "t", "accepted", "proposed")

    def __init__(self, init: float = 0.5):
        self.log_s = np.log(init)
        self.t = 0
        self.accepted = 0
        self.proposed = 0

    def step(self, alpha: float, adapt: bool):
        if adapt:
            self.t += 1
            self.log_s += self.t ** (-MH_DECAY) * (alpha - MH_TARGET)
        else:
            self.proposed += 1

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_s))

    @property
    def post_accept(self) -> float:
        return self.accepted / self.proposed if self.proposed else np.nan


class GibbsState:
    """Mutable sampler state; one instance per chain."""

    def __init__(self, p_fixed: int, n_spline: int, n_comm: int,
                 spec: OutcomeModelSpec):
        pr = spec.priors
        self.beta = np.full(p_fixed, pr.coef_mean)
        self.b = np.zeros(n_spline)
        self.u = np.zeros(n_comm)
        self.e = (spec.fixed_sig2_u ** 0.25) if spec.fixed_sig2_u else 1.0
        if spec.fixed_smoothing is not None:
            self.sig2_bu, self.sig2_buz = map(float, spec.fixed_smoothing)
        else:
            self.sig2_bu = self.sig2_buz = 1.0
        self.nu = spec.fixed_nu if spec.fixed_nu is not None else 1.0
        self.mh = {name: _MhScale() for name in ("e", "bu", "buz", "nu")}

    @property
    def sig2_u(self) -> float:
        return self.e ** 4  # sd(u) = e^2


class GibbsWorker:
    """Runs a-f sweeps for fixed (y, labels, weights), swappable design."""

    def __init__(self, spec: OutcomeModelSpec, y, labels, weights, n_comm: int,
                 rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.y = np.asarray(y, dtype=np.float64)
        n = self.y.size
        if not np.isfinite(self.y).all():
            raise ValidationError("outcome contains non-finite values")
        self.w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        self.n = n
        self.n_comm = n_comm
        if spec.include_random_effects:
            if labels is None:
                raise ValidationError("random effects need community labels")
            if n_comm == 1:
                warnings.warn("a single community makes sig2_u weakly identified")
        self.labels = (np.zeros(n, dtype=np.int64) if labels is None
                       else np.asarray(labels, dtype=np.int64))
        # pre-sorted segments for per-community sums via reduceat
        self.order = np.argsort(self.labels, kind="stable")
        sorted_labels = self.labels[self.order]
        present, start_pos = np.unique(sorted_labels, return_index=True)
        self.seg_comms = present
        self.seg_starts = start_pos
        wy = self.w * self.y
        self.s_w = np.bincount(self.labels, weights=self.w, minlength=n_comm)
        self.s_wy = np.bincount(self.labels, weights=wy, minlength=n_comm)
        self.yty = float(wy @ self.y)
        # design-dependent products, set by set_design
        self.p_fixed = None
        self.n_spline = 0

    def set_design(self, f_block: np.ndarray, s_block: np.ndarray | None):
        x = f_block if s_block is None else np.hstack([f_block, s_block])
        self.p_fixed = f_block.shape[1]
        self.n_spline = 0 if s_block is None else s_block.shape[1]
        xw = x * self.w[:, None]
        self.gram = x.T @ xw
        self.xty = xw.T @ self.y
        a_sorted = np.add.reduceat(xw[self.order], self.seg_starts, axis=0)
        self.a = np.zeros((self.n_comm, x.shape[1]))
        self.a[self.seg_comms] = a_sorted
        self.x = x

    def _coef(self, state: GibbsState) -> np.ndarray:
        if self.n_spline:
            return np.concatenate([state.beta, state.b])
        return state.beta

    def sweep(self, state: GibbsState, adapt: bool):
        spec, rng = self.spec, self.rng
        pf, ns = self.p_fixed, self.n_spline
        c = self._coef(state)
        nu = state.nu

        # (a) community intercepts, conjugate normal
        if spec.include_random_effects:
            resid = self.s_wy - self.a @ c
            prec = self.s_w / nu + 1.0 / state.sig2_u
            mean = resid / nu / prec
            state.u = mean + rng.standard_normal(self.n_comm) / np.sqrt(prec)

        au = self.a.T @ state.u  # sum_i w_i x_i u_{j(i)}, by column

        # (b) spline coefficients, conjugate with ridge precisions
        if ns:
            k = ns // 2
            gss = self.gram[pf:, pf:]
            rhs = (self.xty[pf:] - self.gram[pf:, :pf] @ state.beta - au[pf:]) / nu
            ridge = np.concatenate([
                np.full(k, 1.0 / state.sig2_bu),
                np.full(ns - k, 1.0 / state.sig2_buz),
            ])
            prec = gss / nu + np.diag(ridge)
            state.b = _draw_gaussian(prec, rhs, rng)
            c = self._coef(state)

        # (c) random-intercept scale e (sd(u) = e^2), MH on log e
        if spec.include_random_effects and spec.fixed_sig2_u is None:
            mh = state.mh["e"]
            theta = np.log(state.e)
            prop = theta + mh.scale * rng.standard_normal()
            ssq = float(state.u @ state.u)
            j = self.n_comm
            pr = spec.priors

            def target(th):
                # Gamma(shape, rate) prior on e, plus log|de/dtheta|
                return (pr.re_scale_shape * th - pr.re_scale_rate * np.exp(th)
                        - 2.0 * j * th - 0.5 * ssq * np.exp(-4.0 * th))

            alpha, accepted = _mh_accept(_log_ratio(target, prop, theta), rng)
            if accepted:
                state.e = float(np.exp(prop))
                mh.accepted += 0 if adapt else 1
            mh.step(alpha, adapt)

        # (d) smoothing variances, MH on log variance, Exp priors
        if ns and spec.fixed_smoothing is None:
            k = ns // 2
            for name, rate, vec in (
                ("bu", spec.priors.rate_bu, state.b[:k]),
                ("buz", spec.priors.rate_buz, state.b[k:]),
            ):
                mh = state.mh[name]
                cur = getattr(state, f"sig2_{name}")
                theta = np.log(cur)
                prop = theta + mh.scale * rng.standard_normal()
                ssq = float(vec @ vec)
                kk = vec.size

                def target(th):
                    return (th - rate * np.exp(th)
                            - 0.5 * kk * th - 0.5 * ssq * np.exp(-th))

                alpha, accepted = _mh_accept(_log_ratio(target, prop, theta), rng)
                if accepted:
                    setattr(state, f"sig2_{name}", float(np.exp(prop)))
                    mh.accepted += 0 if adapt else 1
                mh.step(alpha, adapt)

        # (e) fixed-block coefficients, conjugate
        pr = spec.priors
        gff = self.gram[:pf, :pf]
        rhs = self.xty[:pf].copy()
        if ns:
            rhs -= self.gram[:pf, pf:] @ state.b
        rhs -= au[:pf]
        rhs = rhs / nu + pr.coef_mean / pr.coef_var
        prec = gff / nu + np.eye(pf) / pr.coef_var
        state.beta = _draw_gaussian(prec, rhs, rng)
        c = self._coef(state)

        # (f) noise scale nu, MH on log nu, Exp prior
        if spec.fixed_nu is None:
            mh = state.mh["nu"]
            sse = self._weighted_sse(c, state.u)
            theta = np.log(state.nu)
            prop = theta + mh.scale * rng.standard_normal()
            n = self.n
            rate = pr.rate_nu

            def target(th):
                return th - rate * np.exp(th) - 0.5 * n * th - 0.5 * sse * np.exp(-th)

            alpha, accepted = _mh_accept(_log_ratio(target, prop, theta), rng)
            if accepted:
                state.nu = float(np.exp(prop))
                mh.accepted += 0 if adapt else 1
            mh.step(alpha, adapt)

    def _weighted_sse(self, c, u) -> float:
        sse = (self.yty - 2.0 * c @ self.xty + c @ self.gram @ c
               - 2.0 * u @ (self.s_wy - self.a @ c) + (u * u) @ self.s_w)
        return max(float(sse), 1e-300)

    def linear_predictor(self, state: GibbsState) -> np.ndarray:
        q = self.x @ self._coef(state)
        if self.spec.include_random_effects:
            q = q + state.u[self.labels]
        return q


def _draw_gaussian(prec, rhs, rng) -> np.ndarray:
    """One draw from N(prec^{-1} rhs, prec^{-1}) via Cholesky."""
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(prec + 1e-8 * np.eye(prec.shape[0]))
    mean = np.linalg.solve(prec, rhs)
    z = rng.standard_normal(rhs.size)
    return mean + np.linalg.solve(chol.T, z)


def _mh_accept(log_ratio: float, rng) -> tuple[float, bool]:
    if not np.isfinite(log_ratio):
        return 0.0, False
    alpha = 1.0 if log_ratio >= 0 else float(np.exp(log_ratio))
    return alpha, np.log(rng.random()) < log_ratio


def _log_ratio(target, prop: float, cur: float) -> float:
    # a large proposal can overflow exp() inside the target; the resulting
    # -inf ratio is a clean rejection, so the warning carries no information
    with np.errstate(over="ignore"):
        return target(prop) - target(cur)


@dataclass
class OutcomePosterior:
    beta: np.ndarray  # (M, p_fixed)
    b: np.ndarray  # (M, n_spline)
    u: np.ndarray  # (M, J)
    sig2_u: np.ndarray
    sig2_bu: np.ndarray
    sig2_buz: np.ndarray
    nu: np.ndarray
    accept: dict
    cfg: McmcConfig
    spec: OutcomeModelSpec

    def __post_init__(self):
        for name in ("sig2_u", "sig2_bu", "sig2_buz", "nu"):
            v = getattr(self, name)
            if v.size and np.any(v <= 0):
                raise ValidationError(f"{name} draws must be positive")

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    def _columns(self):
        cols = {f"beta{i}": self.beta[:, i] for i in range(self.beta.shape[1])}
        for i in range(self.b.shape[1]):
            cols[f"b{i}"] = self.b[:, i]
        for j in range(self.u.shape[1]):
            cols[f"u{j}"] = self.u[:, j]
        cols["sig2_u"] = self.sig2_u
        cols["sig2_bu"] = self.sig2_bu
        cols["sig2_buz"] = self.sig2_buz
        cols["nu"] = self.nu
        return cols

    def to_csv(self, path) -> None:
        cols = self._columns()
        names = list(cols)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for i in range(self.n_draws):
                writer.writerow([repr(float(cols[c][i])) for c in names])

    def convergence_summary(self) -> list[dict]:
        out = []
        for i in range(self.beta.shape[1]):
            out.append(_diag_row(f"beta{i}", self.beta[:, i]))
        out.append(_diag_row("nu", self.nu))
        if self.spec.include_random_effects:
            out.append(_diag_row("sig2_u", self.sig2_u))
        if not self.spec.linear_only:
            out.append(_diag_row("sig2_bu", self.sig2_bu))
            out.append(_diag_row("sig2_buz", self.sig2_buz))
        return out


def _diag_row(name, chain):
    return {
        "param": name,
        "mean": float(chain.mean()),
        "sd": float(chain.std()),
        "rhat": split_rhat(chain),
        "ess": effective_sample_size(chain),
    }


def gibbs_sample(spec: OutcomeModelSpec, design: OutcomeDesign, y,
                 cfg: McmcConfig | None = None,
                 rng: np.random.Generator | None = None,
                 sweeps_per_iteration: int = 1) -> OutcomePosterior:
    """Run the sampler on a fixed design and collect retained draws."""
    cfg = cfg or McmcConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n_comm = int(design.labels.max()) + 1 if design.labels is not None else 1
    worker = GibbsWorker(spec, y, design.labels, design.weights, n_comm, rng)
    f_block = design.fixed_block()
    s_block = None if spec.linear_only else design.spline_block()
    if not spec.linear_only and s_block is None:
        raise ValidationError("spline model requested but design has no u_basis")
    worker.set_design(f_block, s_block)
    state = GibbsState(f_block.shape[1],
                       0 if s_block is None else s_block.shape[1],
                       n_comm, spec)
    keep = cfg.retained_indices()
    m_total = keep.size
    beta = np.empty((m_total, state.beta.size))
    b = np.empty((m_total, state.b.size))
    u = np.empty((m_total, state.u.size))
    sig2_u = np.empty(m_total)
    sig2_bu = np.empty(m_total)
    sig2_buz = np.empty(m_total)
    nu = np.empty(m_total)
    pos = 0
    keep_set = set(keep.tolist())
    for t in range(cfg.iterations):
        for _ in range(sweeps_per_iteration):
            worker.sweep(state, adapt=t < cfg.burn_in)
        if not (np.isfinite(state.beta).all() and np.isfinite(state.nu)):
            raise SamplerError(f"non-finite outcome state at iteration {t}")
        if t in keep_set:
            beta[pos] = state.beta
            b[pos] = state.b
            u[pos] = state.u
            sig2_u[pos] = state.sig2_u
            sig2_bu[pos] = state.sig2_bu
            sig2_buz[pos] = state.sig2_buz
            nu[pos] = state.nu
            pos += 1
    accept = {k: v.post_accept for k, v in state.mh.items()}
    return OutcomePosterior(beta, b, u, sig2_u, sig2_bu, sig2_buz, nu,
                            accept, cfg, spec)


def predictive_draw(posterior: OutcomePosterior, index: int, f_row,
                    s_row=None, community: int | None = None,
                    mode: str = "draw", rng: np.random.Generator | None = None,
                    weight: float = 1.0) -> float:
    """Potential-outcome draw at one design row for one retained draw.

    Unknown community (None) draws a fresh intercept from N(0, sig2_u).
    ``mean`` mode returns the linear predictor; ``draw`` adds noise with
    variance nu / weight.
    """
    if mode not in ("draw", "mean"):
        raise ValidationError("mode must be 'draw' or 'mean'")
    if rng is None:
        rng = np.random.default_rng()
    q = float(np.asarray(f_row, dtype=np.float64) @ posterior.beta[index])
    if s_row is not None and posterior.b.shape[1]:
        q += float(np.asarray(s_row, dtype=np.float64) @ posterior.b[index])
    if posterior.spec.include_random_effects:
        if community is None:
            q += rng.normal(0.0, np.sqrt(posterior.sig2_u[index]))
        else:
            q += float(posterior.u[index, community])
    if mode == "mean":
        return q
    return q + rng.normal(0.0, np.sqrt(posterior.nu[index] / weight))
