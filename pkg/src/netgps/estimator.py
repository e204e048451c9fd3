"""Three-step estimation: propensity stages, outcome stage, ADRF, effects.

One joint draw m couples the three stages: stage-1 and stage-2 chains are run
over the full iteration range (they never see Y — cut feedback), and at each
m the outcome design is rebuilt from Phi^(m), Lambda^(m) before the Gibbs
state advances. At retained iterations the fitted draw imputes potential
outcomes on the (z, g) grid and averages them over the analysis set V into
the ADRF. Effects are per-draw differences of aligned ADRF cells.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, logit

from . import ps as ps_mod
from .community import CommunityAssignment, detect_communities
from .data import UnitTable
from .errors import SamplerError, ValidationError
from .exposure import ExposureSpec, compute_exposure
from .graph import Network
from .mcmc import McmcConfig
from .outcome import (GibbsState, GibbsWorker, OutcomeModelSpec,
                      OutcomePosterior, vprime)
from .splines import SplineBasis, build_basis, default_knot_count

DEFAULT_G_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


@dataclass
class EstimationConfig:
    z_levels: tuple = (0, 1)
    g_grid: tuple = DEFAULT_G_GRID
    x_ps: tuple | None = None  # covariate selector for the individual PS
    x_gps: tuple | None = None  # covariate selector for the neighborhood GPS
    exposure: ExposureSpec = field(default_factory=ExposureSpec)
    outcome: OutcomeModelSpec = field(default_factory=OutcomeModelSpec)
    matching: bool = False
    match_replace: bool = True
    match_caliper: float | None = None  # None: 0.2 * sd(logit Phi)
    # a single chain schedule keeps the three stages' draws aligned on m
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    n_inner: int = 5  # outcome sweeps per joint iteration
    n_knots: int | None = None
    impute_mode: str = "draw"
    use_observed: bool = False
    keep_imputations: bool = False
    seed: int | None = None

    def __post_init__(self):
        if not self.z_levels or not self.g_grid:
            raise ValidationError("grid must be nonempty")
        if any(zl not in (0, 1) for zl in self.z_levels):
            raise ValidationError("z levels must be 0/1")
        if self.exposure.kind == "proportion" and any(
            g < 0 or g > 1 for g in self.g_grid
        ):
            raise ValidationError("proportion grid values must lie in [0,1]")
        if self.impute_mode not in ("draw", "mean"):
            raise ValidationError("impute_mode must be 'draw' or 'mean'")
        if self.n_inner < 1:
            raise ValidationError("n_inner must be >= 1")
        if self.mcmc.n_retained < 100:
            warnings.warn("fewer than 100 retained draws; summaries will be noisy")
        if self.matching != self.outcome.matching:
            # keep the design variant in sync with the sampling plan
            self.outcome.matching = self.matching


@dataclass
class ADRFPosterior:
    z_levels: np.ndarray
    g_grid: np.ndarray
    draws: np.ndarray  # (M, nz, ng); aligned across cells by draw index
    v_indices: np.ndarray

    def cell(self, z, g) -> np.ndarray:
        zi = _index_of(self.z_levels, z, "z level")
        gi = _index_of(self.g_grid, g, "g level")
        return self.draws[:, zi, gi]

    @property
    def v_size(self) -> int:
        return int(self.v_indices.size)

    def summary(self) -> list[dict]:
        out = []
        for zi, z in enumerate(self.z_levels):
            for gi, g in enumerate(self.g_grid):
                d = self.draws[:, zi, gi]
                if np.isnan(d).all():
                    out.append({"z": int(z), "g": float(g), "missing": True})
                    continue
                lo, hi = np.quantile(d, [0.025, 0.975])
                out.append({
                    "z": int(z), "g": float(g), "mean": float(d.mean()),
                    "sd": float(d.std()), "lo": float(lo), "hi": float(hi),
                    "v_size": self.v_size, "missing": False,
                })
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "g", "draw", "value"])
            for zi, z in enumerate(self.z_levels):
                for gi, g in enumerate(self.g_grid):
                    for m, val in enumerate(self.draws[:, zi, gi]):
                        writer.writerow([int(z), repr(float(g)), m, repr(float(val))])


def _index_of(values, x, what) -> int:
    hits = np.nonzero(np.isclose(values, x, atol=1e-9))[0]
    if hits.size == 0:
        raise ValidationError(f"{what} {x} not on the estimation grid")
    return int(hits[0])


# ---------------------------------------------------------------- estimands

@dataclass(frozen=True)
class Tau:
    g: float

    @property
    def name(self) -> str:
        return f"tau(g={self.g:g})"


@dataclass(frozen=True)
class TauPi:
    pi: tuple  # ((g, prob), ...)

    @property
    def name(self) -> str:
        return "tau(pi)"


@dataclass(frozen=True)
class Delta:
    g: float
    g2: float
    z: int

    @property
    def name(self) -> str:
        return f"delta({self.g:g},{self.g2:g},z={self.z})"


@dataclass(frozen=True)
class DeltaPi:
    pi: tuple
    pi2: tuple
    z: int

    @property
    def name(self) -> str:
        return f"Delta(pi,pi',z={self.z})"


@dataclass
class EffectPosterior:
    estimand: str
    draws: np.ndarray
    v_size: int

    @property
    def mean(self) -> float:
        return float(self.draws.mean())

    @property
    def sd(self) -> float:
        return float(self.draws.std())

    @property
    def ci(self) -> tuple[float, float]:
        lo, hi = np.quantile(self.draws, [0.025, 0.975])
        return float(lo), float(hi)

    def summary_dict(self) -> dict:
        lo, hi = self.ci
        return {"estimand": self.estimand, "mean": self.mean, "sd": self.sd,
                "lo": lo, "hi": hi, "v_size": self.v_size}


def _check_pi(pi, grid) -> list[tuple[int, float]]:
    pairs = list(dict(pi).items()) if not isinstance(pi, tuple) else list(pi)
    total = sum(p for _, p in pairs)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError("pi must sum to 1")
    return [(_index_of(grid, g, "pi support g"), float(p)) for g, p in pairs]


def effects(adrf: ADRFPosterior, requests) -> list[EffectPosterior]:
    """Per-draw ADRF cell differences for each requested estimand."""
    out = []
    zl, gg = adrf.z_levels, adrf.g_grid
    for req in requests:
        if isinstance(req, Tau):
            d = adrf.cell(1, req.g) - adrf.cell(0, req.g)
        elif isinstance(req, Delta):
            zi = _index_of(zl, req.z, "z level")
            d = (adrf.draws[:, zi, _index_of(gg, req.g, "g level")]
                 - adrf.draws[:, zi, _index_of(gg, req.g2, "g level")])
        elif isinstance(req, TauPi):
            pairs = _check_pi(req.pi, gg)
            tau_draws = adrf.draws[:, _index_of(zl, 1, "z")] - \
                adrf.draws[:, _index_of(zl, 0, "z")]
            d = sum(p * tau_draws[:, gi] for gi, p in pairs)
        elif isinstance(req, DeltaPi):
            zi = _index_of(zl, req.z, "z level")
            mu = adrf.draws[:, zi]
            w = np.zeros(gg.size)
            for gi, p in _check_pi(req.pi, gg):
                w[gi] += p
            for gi, p in _check_pi(req.pi2, gg):
                w[gi] -= p
            d = mu @ w
        else:
            raise ValidationError(f"unknown estimand request {req!r}")
        out.append(EffectPosterior(req.name, np.asarray(d, dtype=np.float64),
                                   adrf.v_size))
    return out


def write_effects_csv(effs: list[EffectPosterior], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimand", "draw", "value"])
        for e in effs:
            for m, val in enumerate(e.draws):
                writer.writerow([e.estimand, m, repr(float(val))])


# ----------------------------------------------------------------- matching

@dataclass
class MatchResult:
    sets: list  # (treated index, control index) pairs, analysis-set indexing
    weights: np.ndarray  # w_i = 1 / #sets containing i; 0 if unmatched
    matched: np.ndarray  # membership in the matched sample M
    caliper: float
    n_unmatched_treated: int


def match_on_ps(z, phi, replace: bool = True,
                caliper: float | None = None) -> MatchResult:
    """Greedy 1:1 nearest-neighbor matching of treated to controls on Phi."""
    z = np.asarray(z)
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(phi <= 0) or np.any(phi >= 1):
        raise ValidationError("Phi must lie strictly in (0,1)")
    treated = np.nonzero(z == 1)[0]
    controls = np.nonzero(z == 0)[0]
    if controls.size == 0:
        raise ValidationError("no control units to match against")
    if caliper is None:
        caliper = 0.2 * float(np.std(logit(phi), ddof=1))
    available = np.ones(controls.size, dtype=bool)
    sets = []
    dropped = 0
    for t in treated:
        pool = available if not replace else np.ones(controls.size, dtype=bool)
        if not pool.any():
            dropped += 1
            continue
        gaps = np.abs(phi[controls] - phi[t])
        gaps[~pool] = np.inf
        j = int(np.argmin(gaps))  # ties resolve to the lowest control index
        if gaps[j] > caliper:
            dropped += 1
            continue
        sets.append((int(t), int(controls[j])))
        if not replace:
            available[j] = False
    counts = np.zeros(z.size, dtype=np.int64)
    for t, c in sets:
        counts[t] += 1
        counts[c] += 1
    matched = counts > 0
    weights = np.zeros(z.size)
    weights[matched] = 1.0 / counts[matched]
    return MatchResult(sets, weights, matched, float(caliper), dropped)


# ---------------------------------------------------------------------- ppc

@dataclass
class PpcResult:
    statistic: str
    observed: float
    replicates: np.ndarray
    p_value: float  # Pr(T(Y_rep) >= T(Y_obs))


_STATS = {
    "mean": lambda y: float(np.mean(y)),
    "sd": lambda y: float(np.std(y, ddof=1)),
    "q10": lambda y: float(np.quantile(y, 0.10)),
    "q50": lambda y: float(np.quantile(y, 0.50)),
    "q90": lambda y: float(np.quantile(y, 0.90)),
}


# --------------------------------------------------------------- estimation

@dataclass
class EstimateResult:
    adrf: ADRFPosterior
    ps_individual: ps_mod.PsPosterior
    ps_neighborhood: ps_mod.PsPosterior
    outcome: OutcomePosterior
    match: MatchResult | None
    config: EstimationConfig
    v_indices: np.ndarray
    basis: SplineBasis | None
    q_obs: np.ndarray  # (M, |V|) linear predictor at observed cells
    y_v: np.ndarray
    w_v: np.ndarray
    imputations: np.ndarray | None = None  # (M, nz, ng, |V|) if kept

    def effects(self, requests) -> list[EffectPosterior]:
        return effects(self.adrf, requests)


def ppc(result: EstimateResult, statistics=("mean", "sd", "q10", "q50", "q90"),
        seed: int | None = None) -> list[PpcResult]:
    """Replicate Y at the observed (Z, G) cells per retained draw."""
    for s in statistics:
        if s not in _STATS:
            raise ValidationError(f"unknown ppc statistic {s!r}")
    rng = np.random.default_rng(seed)
    m, n_v = result.q_obs.shape
    sd_rows = np.sqrt(result.outcome.nu[:, None] / result.w_v[None, :])
    yrep = result.q_obs + rng.standard_normal((m, n_v)) * sd_rows
    out = []
    for s in statistics:
        fn = _STATS[s]
        observed = fn(result.y_v)
        reps = np.array([fn(row) for row in yrep])
        out.append(PpcResult(s, observed, reps, float(np.mean(reps >= observed))))
    return out


def write_ppc_csv(results: list[PpcResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["statistic", "observed", "p_value", "rep_mean", "rep_sd"])
        for r in results:
            writer.writerow([
                r.statistic, repr(r.observed), repr(r.p_value),
                repr(float(r.replicates.mean())), repr(float(r.replicates.std())),
            ])


def _as_labels(communities, n: int) -> np.ndarray:
    if isinstance(communities, CommunityAssignment):
        labels = communities.labels
    else:
        labels = np.asarray(communities, dtype=np.int64)
    if labels.shape != (n,):
        raise ValidationError("community labels must cover every unit")
    return labels


def estimate(net: Network, units: UnitTable, communities=None,
             cfg: EstimationConfig | None = None) -> EstimateResult:
    """Run the full three-step procedure on one observed network dataset."""
    cfg = cfg or EstimationConfig()
    if units.y is None:
        raise ValidationError("units.y is required for estimation")
    if units.n != net.n_nodes:
        raise ValidationError("units and network disagree on n")
    if cfg.exposure.kind != "proportion":
        # the binomial GPS maps g to k = round(g * N_i); that story only
        # makes sense for proportion exposure
        raise ValidationError("estimation requires proportion exposure")
    if communities is None:
        communities = detect_communities(net, seed=cfg.seed or 0)
    labels = _as_labels(communities, units.n)
    n_comm = int(labels.max()) + 1

    degrees = net.degrees.astype(np.float64)
    if units.g is None:
        units = UnitTable(units.x, units.z,
                          y=units.y, g=compute_exposure(net, units.z, cfg.exposure).g,
                          phi=units.phi, lam=units.lam, x_names=units.x_names)
    # stage 2 needs a defined exposure; the outcome stage additionally needs y
    stage2 = (degrees >= 1) & np.isfinite(units.g)
    eligible = stage2 & np.isfinite(units.y)
    if not eligible.any():
        raise ValidationError("no eligible units (need degree >= 1 and finite y)")
    stage2_idx = np.nonzero(stage2)[0]
    elig_idx = np.nonzero(eligible)[0]

    root = np.random.SeedSequence(cfg.seed)
    rng_z, rng_g, rng_knots, rng_out, rng_imp = (
        np.random.default_rng(s) for s in root.spawn(5)
    )

    # --- stage 1: individual PS on all units; never sees Y (cut feedback)
    try:
        post_z = ps_mod.sample_individual_ps(
            UnitTable(units.x, units.z, x_names=units.x_names),
            cfg.x_ps, cfg=cfg.mcmc, rng=rng_z,
        )
    except SamplerError as err:
        raise SamplerError(f"individual PS stage: {err}") from err

    # --- stage 2: neighborhood GPS on every unit with a defined exposure
    sub = UnitTable(units.x[stage2_idx], units.z[stage2_idx],
                    g=units.g[stage2_idx], x_names=units.x_names)
    try:
        post_g = ps_mod.sample_neighborhood_gps(
            sub, cfg.x_gps, trials=degrees[stage2_idx], cfg=cfg.mcmc, rng=rng_g,
        )
    except SamplerError as err:
        raise SamplerError(f"neighborhood GPS stage: {err}") from err

    # per-iteration Phi and log-Lambda at the observed cells, (n_elig, T).
    # The GPS enters the design on the log scale: pmf values span orders of
    # magnitude across units, and the linear adjustment is effective on the
    # log-density, not on the density itself.
    xz = np.column_stack([np.ones(elig_idx.size),
                          units.select(cfg.x_ps)[elig_idx]])
    phi_chain = expit(xz @ post_z.raw_draws.T)
    xg = units.select(cfg.x_gps)[elig_idx]
    n_tr = degrees[elig_idx]
    g_obs = units.g[elig_idx]
    k_obs = np.rint(g_obs * n_tr)
    design_g = np.column_stack([np.ones(elig_idx.size), units.z[elig_idx], xg])
    eta_chain = design_g @ post_g.raw_draws.T
    logc_obs = gammaln(n_tr + 1) - gammaln(k_obs + 1) - gammaln(n_tr - k_obs + 1)
    loglam_chain = (logc_obs[:, None] + k_obs[:, None] * eta_chain
                    - n_tr[:, None] * np.logaddexp(0.0, eta_chain))

    retained = cfg.mcmc.retained_indices()
    phi_bar = phi_chain[:, retained].mean(axis=1)
    loglam_bar = loglam_chain[:, retained].mean(axis=1)

    # --- matching (optional) fixes the analysis set V and the weights once,
    # on the posterior-mean Phi; the per-draw scores still drive the design
    match = None
    if cfg.matching:
        match = match_on_ps(units.z[elig_idx], phi_bar,
                            replace=cfg.match_replace, caliper=cfg.match_caliper)
        pos_v = np.nonzero(match.matched)[0]
        w_v = match.weights[pos_v]
    else:
        pos_v = np.arange(elig_idx.size)
        w_v = np.ones(elig_idx.size)
    v_idx = elig_idx[pos_v]
    if v_idx.size == 0:
        raise ValidationError("matching left no units in the analysis set")

    z_v = units.z[v_idx].astype(np.float64)
    y_v = units.y[v_idx]
    g_v = units.g[v_idx]
    labels_v = labels[v_idx]
    n_v = v_idx.size
    ntr_v = n_tr[pos_v]
    xg_v = xg[pos_v]

    # --- spline basis frozen from the posterior-mean predictor locations
    basis = None
    spec = cfg.outcome
    if not spec.linear_only:
        if cfg.matching:
            v_bar = np.column_stack([g_v, loglam_bar[pos_v]])
        else:
            v_bar = np.column_stack([g_v, phi_bar[pos_v], loglam_bar[pos_v]])
        n_knots = cfg.n_knots or default_knot_count(n_v)
        _, basis = build_basis(v_bar, n_knots=n_knots,
                               seed=int(rng_knots.integers(2**31)))

    # --- outcome stage driven by the per-iteration scores
    worker = GibbsWorker(spec, y_v, labels_v, w_v, n_comm, rng_out)
    p_fixed = (4 if cfg.matching else 5) * 2
    n_spl = 0 if spec.linear_only else 2 * basis.n_knots
    state = GibbsState(p_fixed, n_spl, n_comm, spec)

    m_keep = retained.size
    keep_pos = {int(t): r for r, t in enumerate(retained)}
    nz, ng = len(cfg.z_levels), len(cfg.g_grid)
    adrf_draws = np.full((m_keep, nz, ng), np.nan)
    q_obs = np.empty((m_keep, n_v))
    beta_rec = np.empty((m_keep, p_fixed))
    b_rec = np.empty((m_keep, n_spl))
    u_rec = np.empty((m_keep, n_comm))
    var_rec = np.empty((m_keep, 4))  # sig2_u, sig2_bu, sig2_buz, nu
    imputations = (np.empty((m_keep, nz, ng, n_v))
                   if cfg.keep_imputations else None)

    # grid constants: k and binomial coefficients per g level
    kg = [np.rint(g * ntr_v) for g in cfg.g_grid]
    logcg = [gammaln(ntr_v + 1) - gammaln(k + 1) - gammaln(ntr_v - k + 1)
             for k in kg]
    eta_x = xg_v @ post_g.raw_draws[:, 2:].T  # (n_v, T)

    phi_v = phi_chain[pos_v]
    loglam_v = loglam_chain[pos_v]
    matching = cfg.matching

    for t in range(cfg.mcmc.iterations):
        if matching:
            v_cols = np.column_stack([g_v, loglam_v[:, t]])
        else:
            v_cols = np.column_stack([g_v, phi_v[:, t], loglam_v[:, t]])
        vp = vprime(v_cols, matching)
        f_block = np.hstack([vp, vp * z_v[:, None]])
        if spec.linear_only:
            s_block = None
        else:
            u_mat = basis.design(v_cols)
            s_block = np.hstack([u_mat, u_mat * z_v[:, None]])
        worker.set_design(f_block, s_block)
        adapt = t < cfg.mcmc.burn_in
        for _ in range(cfg.n_inner):
            worker.sweep(state, adapt)
        if not np.isfinite(state.beta).all():
            raise SamplerError(f"outcome stage: non-finite state at iteration {t}")
        r = keep_pos.get(t)
        if r is None:
            continue
        beta_rec[r] = state.beta
        b_rec[r] = state.b
        u_rec[r] = state.u
        var_rec[r] = (state.sig2_u, state.sig2_bu, state.sig2_buz, state.nu)
        q_obs[r] = worker.linear_predictor(state)

        # impute the grid under draw m
        bg = post_g.raw_draws[t]
        u_contrib = state.u[labels_v] if spec.include_random_effects else 0.0
        noise_sd = np.sqrt(state.nu / w_v)
        for zi, z_level in enumerate(cfg.z_levels):
            eta = bg[0] + bg[1] * z_level + eta_x[:, t]
            log1p = np.logaddexp(0.0, eta)
            for gi, g_level in enumerate(cfg.g_grid):
                loglam_cell = logcg[gi] + kg[gi] * eta - ntr_v * log1p
                if matching:
                    vc = np.column_stack([np.full(n_v, g_level), loglam_cell])
                else:
                    vc = np.column_stack([np.full(n_v, g_level),
                                          phi_v[:, t], loglam_cell])
                vpc = vprime(vc, matching)
                fc = np.hstack([vpc, vpc * z_level])
                q = fc @ state.beta
                if not spec.linear_only:
                    uc = basis.design(vc)
                    k_half = n_spl // 2
                    q += uc @ state.b[:k_half] + z_level * (uc @ state.b[k_half:])
                q = q + u_contrib
                if cfg.impute_mode == "draw":
                    q = q + rng_imp.standard_normal(n_v) * noise_sd
                if cfg.use_observed:
                    hit = (z_v == z_level) & np.isclose(g_v, g_level, atol=1e-12)
                    if hit.any():
                        q[hit] = y_v[hit]
                if imputations is not None:
                    imputations[r, zi, gi] = q
                adrf_draws[r, zi, gi] = q.mean()

    accept = {k: v.post_accept for k, v in state.mh.items()}
    out_post = OutcomePosterior(
        beta_rec, b_rec, u_rec, var_rec[:, 0], var_rec[:, 1], var_rec[:, 2],
        var_rec[:, 3], accept, cfg.mcmc, spec,
    )
    adrf = ADRFPosterior(np.asarray(cfg.z_levels, dtype=np.int64),
                         np.asarray(cfg.g_grid, dtype=np.float64),
                         adrf_draws, v_idx)
    return EstimateResult(
        adrf=adrf, ps_individual=post_z, ps_neighborhood=post_g,
        outcome=out_post, match=match, config=cfg, v_indices=v_idx,
        basis=basis, q_obs=q_obs, y_v=y_v, w_v=w_v, imputations=imputations,
    )


def _json_safe(obj):
    """Replace non-finite floats with None so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_summary_json(result: EstimateResult, effs: list[EffectPosterior],
                       path, extra: dict | None = None) -> None:
    payload = {
        "v_size": int(result.v_indices.size),
        "adrf": result.adrf.summary(),
        "effects": [e.summary_dict() for e in effs],
        "ps_accept": {
            "individual": result.ps_individual.accept_rate,
            "neighborhood": result.ps_neighborhood.accept_rate,
        },
        "outcome_accept": result.outcome.accept,
        "outcome_diagnostics": result.outcome.convergence_summary(),
    }
    if result.match is not None:
        payload["matching"] = {
            "n_sets": len(result.match.sets),
            "caliper": result.match.caliper,
            "n_unmatched_treated": result.match.n_unmatched_treated,
        }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
