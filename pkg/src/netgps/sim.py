"""Simulation scenarios: data-generating processes, ground truth, and the
replication driver that aggregates bias, RMSE and coverage.

Scenarios cross three network models (stochastic block, latent cluster, and
a synthetic school-nomination surrogate) with linear / nonlinear outcome
surfaces and community random effects on / off. Networks and covariates are
fixed per network index; treatments and outcomes are redrawn per replicate.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import UnitTable
from .errors import StudyError, ValidationError
from .estimator import (Delta, DeltaPi, EstimationConfig, Tau, TauPi,
                        _check_pi, _index_of, estimate)
from .exposure import compute_exposure
from .graph import (LatentClusterConfig, Network, SbmConfig, from_arrays,
                    from_edge_list, generate_latent_cluster, generate_sbm)
from .ps import binom_logpmf

NETWORK_KINDS = ("sbm", "latent_cluster", "surrogate_school")
OUTCOME_FORMS = ("linear", "nonlinear")
COMMUNITY_SIZE = 10  # generated networks use communities of 10 units

IPS1 = np.array([2.6, -2.2])  # logit P(Z=1) = 2.6 x1 - 2.2 x2
IPS2 = np.array([0.7, 1.0, -0.11])  # 0.7 sex + race - 0.11 grade

RE_VARIANCE = 2.0


@dataclass
class Scenario:
    network_kind: str = "sbm"
    outcome_form: str = "linear"
    random_effects: bool = True
    n: int = 1000
    n_networks: int = 1
    reps_per_network: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.network_kind not in NETWORK_KINDS:
            raise ValidationError(f"unknown network kind {self.network_kind!r}")
        if self.outcome_form not in OUTCOME_FORMS:
            raise ValidationError(f"unknown outcome form {self.outcome_form!r}")
        if self.reps_per_network < 1 or self.n_networks < 1:
            raise ValidationError("need at least one network and one replicate")
        if self.network_kind != "surrogate_school" and self.n % COMMUNITY_SIZE:
            raise ValidationError(
                f"generated networks use communities of {COMMUNITY_SIZE}; "
                f"n must be a multiple")
        if self.n < 2 * COMMUNITY_SIZE:
            raise ValidationError("scenario too small to be meaningful")

    @property
    def sig2_u(self) -> float:
        return RE_VARIANCE if self.random_effects else 0.0

    @property
    def label(self) -> str:
        re_tag = "re" if self.random_effects else "nore"
        return f"{self.network_kind}-{self.outcome_form}-{re_tag}"


DESK_N = 500
DESK_NETWORKS = 1
DESK_REPS = 50


def desk_plan(scenario: Scenario) -> Scenario:
    """Scale a scenario to the desk plan: one network, 50 reps, n=500."""
    return replace(scenario, n=DESK_N, n_networks=DESK_NETWORKS,
                   reps_per_network=DESK_REPS)


@dataclass
class ScenarioNetwork:
    """A realized network with its fixed covariates and communities."""

    net: Network
    x: np.ndarray  # individual covariates only
    x_names: tuple
    communities: np.ndarray
    kind: str

    @property
    def ps_cols(self) -> tuple:
        return self.x_names


def neighbor_means(net: Network, x) -> np.ndarray:
    """Per-node mean of (out-)neighbors' covariate rows; 0 when isolated."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sums = np.zeros_like(x)
    src, dst, _ = net.arcs()
    for j in range(x.shape[1]):
        sums[:, j] = np.bincount(src, weights=x[dst, j], minlength=net.n_nodes)
    deg = np.maximum(net.degrees, 1)
    return sums / deg[:, None]


def _network_seed(scenario: Scenario, net_idx: int, stream: int) -> int:
    ss = np.random.SeedSequence(scenario.seed, spawn_key=(net_idx, stream))
    return int(ss.generate_state(1)[0])


def make_network(scenario: Scenario, net_idx: int = 0) -> ScenarioNetwork:
    """Realize network + fixed covariates for one network index."""
    cov_rng = np.random.default_rng(_network_seed(scenario, net_idx, 0))
    net_seed = _network_seed(scenario, net_idx, 1)
    if scenario.network_kind == "surrogate_school":
        return surrogate_school_network(scenario.n, seed=net_seed)
    x1 = cov_rng.gamma(0.5, 1.0, scenario.n)
    x2 = cov_rng.binomial(1, 0.5, scenario.n).astype(np.float64)
    x = np.column_stack([x1, x2])
    sizes = [COMMUNITY_SIZE] * (scenario.n // COMMUNITY_SIZE)
    if scenario.network_kind == "sbm":
        net = generate_sbm(SbmConfig(sizes, p_in=0.08, p_out=0.02, seed=net_seed))
    else:
        net = generate_latent_cluster(LatentClusterConfig(sizes, seed=net_seed), x)
    return ScenarioNetwork(net, x, ("x1", "x2"), net.community_labels, scenario.network_kind)


# ------------------------------------------------------------- school graph

def surrogate_school_network(n: int = 1000, schools: int = 8,
                             seed: int = 0) -> ScenarioNetwork:
    """Synthetic directed nomination network shaped like a school survey.

    Students sit in one of ``schools`` schools and grades 7-12; each
    nominates about five friends, mostly within their own school and grade.
    Covariate marginals and the mean nomination count follow the published
    summary table (sex 0.49, race 0.71, grade 9.46, degree 5.07).
    """
    rng = np.random.default_rng(seed)
    school = np.repeat(np.arange(schools), -(-n // schools))[:n]
    grade = rng.integers(7, 13, n)
    sex = rng.binomial(1, 0.49, n).astype(np.float64)
    race = rng.binomial(1, 0.71, n).astype(np.float64)

    # out-degree: negative binomial matched to mean 5.07, SD 2.92
    m, v = 5.07, 2.92 ** 2
    r = m * m / (v - m)
    deg = rng.negative_binomial(r, r / (r + m), n)

    by_cell: dict = {}
    by_school: dict = {}
    for i in range(n):
        by_cell.setdefault((school[i], grade[i]), []).append(i)
        by_school.setdefault(school[i], []).append(i)
    by_cell = {k: np.asarray(v) for k, v in by_cell.items()}
    by_school = {k: np.asarray(v) for k, v in by_school.items()}
    all_ids = np.arange(n)

    src, dst = [], []
    for i in range(n):
        chosen = set()
        attempts = 0
        while len(chosen) < deg[i] and attempts < 8 * deg[i] + 8:
            attempts += 1
            u = rng.random()
            if u < 0.75:
                pool = by_cell[(school[i], grade[i])]
            elif u < 0.98:
                pool = by_school[school[i]]
            else:
                pool = all_ids
            j = int(pool[rng.integers(pool.size)])
            if j != i:
                chosen.add(j)
        for j in sorted(chosen):
            src.append(i)
            dst.append(j)

    labels = (school * 6 + (grade - 7)).astype(np.int64)
    net = from_arrays(np.asarray(src), np.asarray(dst), n_nodes=n,
                      directed=True, community_labels=labels)
    x = np.column_stack([sex, race, grade.astype(np.float64)])
    return ScenarioNetwork(net, x, ("sex", "race", "grade"), labels,
                           "surrogate_school")


def load_school_data(edges_path, units_path) -> tuple[Network, UnitTable]:
    """Load a real directed nomination network plus per-student covariates.

    The unit table fixes the node count, so students nobody nominated (and
    who nominated nobody) stay in the graph as isolated nodes.
    """
    from .data import read_units

    units = read_units(units_path)
    net = from_edge_list(edges_path, directed=True, n_nodes=units.n)
    return net, units


# -------------------------------------------------------------------- DGPs

def fit_binomial_gps(design, k, trials, max_iter: int = 100,
                     tol: float = 1e-10) -> np.ndarray:
    """ML fit of k ~ Binomial(trials, invlogit(design @ beta)) via IRLS."""
    design = np.asarray(design, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    trials = np.asarray(trials, dtype=np.float64)
    p = design.shape[1]
    beta = np.zeros(p)
    ridge = 1e-8 * np.eye(p)
    for _ in range(max_iter):
        eta = design @ beta
        mu = expit(eta)
        w = np.maximum(trials * mu * (1.0 - mu), 1e-10)
        z = eta + (k - trials * mu) / w
        xw = design * w[:, None]
        new = np.linalg.solve(xw.T @ design + ridge, xw.T @ z)
        if np.max(np.abs(new - beta)) < tol:
            beta = new
            break
        beta = new
    return beta


@dataclass
class ScenarioData:
    units: UnitTable  # x = [individual covariates, neighbor means]
    u: np.ndarray  # realized community intercepts
    gps_coef: np.ndarray  # the DGP's fitted binomial coefficients
    ps_cols: tuple  # covariate names entering the individual PS


def _true_logit(snet: ScenarioNetwork) -> np.ndarray:
    coef = IPS2 if snet.kind == "surrogate_school" else IPS1
    return snet.x @ coef


def _nonlinear_bump(g) -> np.ndarray:
    return 25.0 * expit(10.0 * np.exp(-((np.asarray(g) - 1.0) ** 2) / 0.12))


def linear_mean(z, g, phi, lam, u=0.0):
    """Mean response of the linear outcome surface."""
    return -3.0 + 2.0 * np.asarray(z) + 4.0 * np.asarray(g) \
        - np.asarray(phi) - 2.0 * np.log(np.asarray(lam)) + u


def nonlinear_mean(z, g, phi, lam, u=0.0):
    """Mean response of the nonlinear (bump) outcome surface."""
    return 3.0 + 2.0 * np.asarray(z) + _nonlinear_bump(g) \
        - 2.0 * np.asarray(phi) - 2.5 * np.asarray(lam) + u


def _mean_fn(outcome_form: str):
    return linear_mean if outcome_form == "linear" else nonlinear_mean


def generate_scenario_data(scenario: Scenario, snet: ScenarioNetwork,
                           rng: np.random.Generator) -> ScenarioData:
    """Draw one replicate: treatments, exposures, the DGP's fitted GPS, and
    outcomes. Isolated units keep NaN exposure/outcome but still push their
    treatment into neighbors' exposures."""
    n = snet.net.n_nodes
    phi = expit(_true_logit(snet))
    z = (rng.random(n) < phi).astype(np.int8)
    g = compute_exposure(snet.net, z).g
    deg = snet.net.degrees.astype(np.float64)
    ok = deg >= 1

    nbr = neighbor_means(snet.net, snet.x)
    xg = np.hstack([snet.x, nbr])

    # the DGP's Lambda is itself a fitted quantity: a binomial regression of
    # the treated-neighbor count on (Z, X, neighbor means)
    design = np.column_stack([np.ones(ok.sum()), z[ok], xg[ok]])
    k = np.rint(g[ok] * deg[ok])
    coef = fit_binomial_gps(design, k, deg[ok])
    lam = np.full(n, np.nan)
    eta = design @ coef
    lam[ok] = np.exp(binom_logpmf(k, deg[ok], eta))

    n_comm = int(snet.communities.max()) + 1
    u = (rng.normal(0.0, np.sqrt(scenario.sig2_u), n_comm)
         if scenario.random_effects else np.zeros(n_comm))
    u_i = u[snet.communities]

    y = np.full(n, np.nan)
    eps = rng.normal(0.0, 1.0, n)
    mean_fn = _mean_fn(scenario.outcome_form)
    y[ok] = mean_fn(z[ok], g[ok], phi[ok], lam[ok], u_i[ok]) + eps[ok]

    names = snet.x_names + tuple(f"n{c}" for c in snet.x_names)
    units = UnitTable(xg, z, y=y, g=g, phi=phi, lam=lam, x_names=names)
    return ScenarioData(units, u, coef, snet.ps_cols)


# -------------------------------------------------------------------- truth

@dataclass
class TruthTable:
    z_levels: np.ndarray
    g_grid: np.ndarray
    mu: np.ndarray  # (nz, ng) DGP-mean averages over V
    tau: np.ndarray  # exactly 2 everywhere (structural Z coefficient)
    v_indices: np.ndarray

    def mu_at(self, z, g) -> float:
        return float(self.mu[_index_of(self.z_levels, z, "z level"),
                             _index_of(self.g_grid, g, "g level")])

    def delta(self, g, g2, z) -> float:
        return self.mu_at(z, g) - self.mu_at(z, g2)

    def value(self, request) -> float:
        """Ground truth for one estimand request."""
        if isinstance(request, Tau):
            return float(self.tau[_index_of(self.g_grid, request.g, "g level")])
        if isinstance(request, TauPi):
            pairs = _check_pi(request.pi, self.g_grid)
            return float(sum(p * self.tau[gi] for gi, p in pairs))
        if isinstance(request, Delta):
            return self.delta(request.g, request.g2, request.z)
        if isinstance(request, DeltaPi):
            zi = _index_of(self.z_levels, request.z, "z level")
            w = np.zeros(self.g_grid.size)
            for gi, p in _check_pi(request.pi, self.g_grid):
                w[gi] += p
            for gi, p in _check_pi(request.pi2, self.g_grid):
                w[gi] -= p
            return float(self.mu[zi] @ w)
        raise ValidationError(f"unknown estimand request {request!r}")


def truth_oracle(scenario: Scenario, snet: ScenarioNetwork, data: ScenarioData,
                 z_levels=(0, 1),
                 g_grid=tuple(np.round(np.linspace(0, 1, 11), 10))) -> TruthTable:
    """Evaluate the DGP mean surface at every grid cell over degree >= 1 units.

    Lambda at a counterfactual (z, g) is the DGP's own fitted GPS evaluated
    there, so truth and data share a single Lambda definition. tau(g) is the
    structural coefficient on Z, exactly 2 for both outcome forms (the
    remaining terms cancel in the (1,g) - (0,g) difference by construction).
    """
    deg = snet.net.degrees.astype(np.float64)
    ok = deg >= 1
    v_idx = np.nonzero(ok)[0]
    phi = data.units.phi[ok]
    u_bar = float(np.mean(data.u[snet.communities[ok]]))
    nbr = neighbor_means(snet.net, snet.x)
    xg = np.hstack([snet.x, nbr])[ok]
    coef = data.gps_coef
    n_tr = deg[ok]

    zl = np.asarray(z_levels, dtype=np.int64)
    gg = np.asarray(g_grid, dtype=np.float64)
    mean_fn = _mean_fn(scenario.outcome_form)
    mu = np.empty((zl.size, gg.size))
    for zi, z in enumerate(zl):
        eta = coef[0] + coef[1] * z + xg @ coef[2:]
        for gi, g in enumerate(gg):
            lam = np.exp(binom_logpmf(np.rint(g * n_tr), n_tr, eta))
            mu[zi, gi] = float(np.mean(mean_fn(z, g, phi, lam))) + u_bar
    tau = np.full(gg.size, 2.0)
    return TruthTable(zl, gg, mu, tau, v_idx)


# ------------------------------------------------------------- study driver

REPORT_COLUMNS = ("scenario", "estimator_variant", "estimand",
                  "bias", "rmse", "coverage", "reps")


@dataclass
class SimReport:
    scenario: str
    rows: list  # aggregated dicts per (variant, estimand)
    reps_attempted: int
    n_failures: int
    failures: list
    runtime_s: float
    complete: bool = True

    def to_csv(self, path) -> None:
        write_report_csv(self.rows, path, complete=self.complete)


def write_report_csv(rows, path, complete: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow([
                r["scenario"], r["variant"], r["estimand"],
                repr(r["bias"]), repr(r["rmse"]), repr(r["coverage"]),
                r["reps"],
            ])
        if not complete:
            fh.write("# incomplete: run interrupted before all replicates\n")


def _replicate(scenario: Scenario, snet: ScenarioNetwork, net_idx: int,
               rep_idx: int, variants: dict, estimands: list) -> list:
    """One replicate: fresh treatments/outcomes, all estimator variants."""
    data_seed = np.random.SeedSequence(scenario.seed,
                                       spawn_key=(net_idx, rep_idx, 2))
    data = generate_scenario_data(scenario, snet,
                                  np.random.default_rng(data_seed))
    rows = []
    for v_pos, (name, cfg) in enumerate(sorted(variants.items())):
        est_seed = int(np.random.SeedSequence(
            scenario.seed, spawn_key=(net_idx, rep_idx, 3 + v_pos),
        ).generate_state(1)[0])
        cfg_rep = replace(cfg, seed=est_seed, x_ps=data.ps_cols, x_gps=None)
        truth = truth_oracle(scenario, snet, data,
                             z_levels=cfg_rep.z_levels, g_grid=cfg_rep.g_grid)
        res = estimate(snet.net, data.units, snet.communities, cfg_rep)
        for req, eff in zip(estimands, res.effects(estimands)):
            lo, hi = eff.ci
            rows.append({
                "net": net_idx, "rep": rep_idx, "variant": name,
                "estimand": eff.estimand, "estimate": eff.mean,
                "lo": lo, "hi": hi, "truth": truth.value(req),
            })
    return rows


def _replicate_star(args):
    return _replicate(*args)


def run_study(scenario: Scenario, variants: dict, estimands=None,
              n_jobs: int = 1, raw_path=None) -> SimReport:
    """Replicate the scenario, run every estimator variant, and aggregate.

    ``variants`` maps a name to an EstimationConfig; its seed and covariate
    selectors are overridden per replicate. Failed replicates are skipped
    and counted; more than 10% failures aborts with StudyError.
    """
    if not variants:
        raise ValidationError("need at least one estimator variant")
    estimands = list(estimands) if estimands is not None else [
        Tau(0.5), Delta(0.5, 0.4, 0)]
    t0 = time.perf_counter()
    tasks = []
    for net_idx in range(scenario.n_networks):
        snet = make_network(scenario, net_idx)
        for rep_idx in range(scenario.reps_per_network):
            tasks.append((scenario, snet, net_idx, rep_idx, variants,
                          estimands))

    raw_rows, failures = [], []
    interrupted = False
    attempted = 0
    if n_jobs <= 1:
        try:
            for task in tasks:
                try:
                    raw_rows.extend(_replicate_star(task))
                except Exception as err:  # noqa: BLE001 - aggregated below
                    failures.append(f"net {task[2]} rep {task[3]}: {err}")
                attempted += 1
        except KeyboardInterrupt:
            interrupted = True
    else:
        pool = ProcessPoolExecutor(max_workers=n_jobs)
        try:
            for task, fut in [(t, pool.submit(_replicate_star, t))
                              for t in tasks]:
                try:
                    raw_rows.extend(fut.result())
                except Exception as err:  # noqa: BLE001
                    failures.append(f"net {task[2]} rep {task[3]}: {err}")
                attempted += 1
        except KeyboardInterrupt:
            interrupted = True
        finally:
            # drain: finished work is kept, queued work is dropped
            pool.shutdown(wait=True, cancel_futures=interrupted)

    total = len(tasks)
    if not interrupted and len(failures) > 0.1 * total:
        raise StudyError(
            f"{len(failures)}/{total} replicates failed; first: {failures[0]}")

    rows = []
    for name in sorted(variants):
        for req in estimands:
            hits = [r for r in raw_rows
                    if r["variant"] == name and r["estimand"] == req.name]
            if not hits:
                continue
            err = np.array([r["estimate"] - r["truth"] for r in hits])
            cover = np.array([r["lo"] <= r["truth"] <= r["hi"] for r in hits])
            rows.append({
                "scenario": scenario.label, "variant": name,
                "estimand": req.name, "bias": float(err.mean()),
                "rmse": float(np.sqrt(np.mean(err ** 2))),
                "coverage": float(cover.mean()), "reps": len(hits),
            })

    report = SimReport(scenario.label, rows, attempted, len(failures),
                       failures, time.perf_counter() - t0,
                       complete=not interrupted)
    if raw_path is not None:
        with open(raw_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "variant", "estimand", "net", "rep",
                             "estimate", "lo", "hi", "truth"])
            for r in raw_rows:
                writer.writerow([scenario.label, r["variant"], r["estimand"],
                                 r["net"], r["rep"], repr(r["estimate"]),
                                 repr(r["lo"]), repr(r["hi"]),
                                 repr(r["truth"])])
    return report
