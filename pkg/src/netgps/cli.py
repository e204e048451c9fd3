"""Command line entry points: ``netgps generate | estimate | simulate``.

Everything on disk is CSV or JSON: graphs as edge lists, units as one row
per node, posterior chains and study reports as flat tables. Estimation
settings come from flags, an optional JSON config file, or both; explicit
flags win over the file.

Exit codes: 2 for validation/parse problems, 3 for sampler failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .community import from_labels, read_labels, write_labels
from .data import UnitTable, read_units
from .errors import ParseError, SamplerError, StudyError, ValidationError
from .estimator import (Delta, EstimationConfig, Tau, estimate, ppc,
                        write_effects_csv, write_ppc_csv, write_summary_json)
from .graph import from_edge_list, write_edge_list
from .mcmc import McmcConfig
from .outcome import OutcomeModelSpec, PriorConfig
from .sim import (OUTCOME_FORMS, Scenario, desk_plan, generate_scenario_data,
                  make_network, neighbor_means, run_study, write_report_csv)

EXIT_VALIDATION = 2
EXIT_SAMPLER = 3

# CLI spellings -> scenario network kinds
_MODEL_KINDS = {"sbm": "sbm", "latent-cluster": "latent_cluster",
                "school": "surrogate_school"}


# ---------------------------------------------------------------- run config

_MCMC_KEYS = {f.name for f in fields(McmcConfig)}
_PRIOR_KEYS = {f.name for f in fields(PriorConfig)}


@dataclass
class RunConfig:
    """JSON-compatible settings tree for one estimation run.

    Unknown keys are rejected so a typo cannot silently fall back to a
    default; the resolved tree is written next to the outputs.
    """

    seed: int = 0
    out: str = "."
    grid: str = "0:1:0.1"
    matching: bool = False
    linear_only: bool = False
    random_effects: bool = True
    ppc: bool = False
    directed: bool = False
    n_knots: int | None = None
    fixed_nu: float | None = None
    match_replace: bool = True
    match_caliper: float | None = None
    impute_mode: str = "draw"
    x_ps: list | None = None  # individual-PS covariate names; default: all
    mcmc: dict = field(default_factory=dict)
    priors: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = set(self.mcmc) - _MCMC_KEYS
        if bad:
            raise ValidationError(f"unknown mcmc keys: {sorted(bad)}")
        bad = set(self.priors) - _PRIOR_KEYS
        if bad:
            raise ValidationError(f"unknown prior keys: {sorted(bad)}")

    @classmethod
    def from_mapping(cls, data: dict, source: str = "config") -> "RunConfig":
        known = {f.name for f in fields(cls)}
        bad = set(data) - known
        if bad:
            raise ValidationError(f"{source}: unknown keys {sorted(bad)}")
        return cls(**data)

    def estimation_config(self, default_x_ps=None) -> EstimationConfig:
        spec = OutcomeModelSpec(
            linear_only=self.linear_only,
            include_random_effects=self.random_effects,
            fixed_nu=self.fixed_nu,
            priors=PriorConfig(**self.priors),
        )
        x_ps = tuple(self.x_ps) if self.x_ps else default_x_ps
        return EstimationConfig(
            g_grid=parse_grid(self.grid),
            x_ps=x_ps,
            outcome=spec,
            matching=self.matching,
            match_replace=self.match_replace,
            match_caliper=self.match_caliper,
            mcmc=McmcConfig(**self.mcmc),
            n_knots=self.n_knots,
            impute_mode=self.impute_mode,
            seed=self.seed,
        )


def parse_grid(text: str) -> tuple:
    """``start:stop:step`` -> inclusive grid, e.g. 0:1:0.1 -> 0, 0.1, ..., 1."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"grid must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValidationError(f"non-numeric grid {text!r}") from None
    if step <= 0 or stop <= start:
        raise ValidationError("grid needs stop > start and step > 0")
    count = (stop - start) / step
    if abs(count - round(count)) > 1e-9:
        raise ValidationError("grid step must divide stop - start")
    return tuple(np.round(start + step * np.arange(round(count) + 1), 10))


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) updated by whatever flags were actually given."""
    data: dict = {}
    source = "flags"
    if getattr(args, "config", None):
        source = args.config
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as err:
                raise ParseError(f"{args.config}: {err}") from None
        if not isinstance(data, dict):
            raise ParseError(f"{args.config}: expected a JSON object")
    ns = vars(args)  # flags use SUPPRESS defaults: present iff given
    for key in ("seed", "out", "grid", "n_knots", "fixed_nu",
                "match_caliper", "impute_mode"):
        if key in ns:
            data[key] = ns[key]
    for key in ("matching", "linear_only", "ppc", "directed"):
        if key in ns:
            data[key] = True
    if "no_re" in ns:
        data["random_effects"] = False
    if "x_ps" in ns:
        data["x_ps"] = [c.strip() for c in ns["x_ps"].split(",") if c.strip()]
    mcmc = dict(data.get("mcmc", {}))
    for key in ("iterations", "burn_in", "thin"):
        if key in ns:
            mcmc[key] = ns[key]
    if mcmc:
        data["mcmc"] = mcmc
    return RunConfig.from_mapping(data, source=source)


def _write_resolved_config(rc: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(rc), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ helpers

def _content_hash(path) -> str:
    """Hash file bytes the way git hashes a blob (sha1 over a length header)."""
    data = Path(path).read_bytes()
    digest = hashlib.sha1(b"blob %d\x00" % len(data))
    digest.update(data)
    return digest.hexdigest()


def _write_units_csv(path, x, names, z=None, y=None) -> None:
    """``id,z,y,x...`` rows; the z/y columns appear once treatments exist."""
    header = ["id"]
    if z is not None:
        header.append("z")
    if y is not None:
        header.append("y")
    header += list(names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(x.shape[0]):
            row = [str(i)]
            if z is not None:
                row.append(str(int(z[i])))
            if y is not None:
                row.append("" if np.isnan(y[i]) else repr(float(y[i])))
            row += [repr(float(v)) for v in x[i]]
            writer.writerow(row)


def _with_neighbor_means(net, units: UnitTable):
    """Append neighbor-mean columns: the neighborhood GPS conditions on
    neighborhood composition, not just own covariates."""
    if units.x.shape[1] == 0:
        return units, None
    names = tuple(f"n{c}" for c in units.x_names)
    clash = set(names) & set(units.x_names)
    if clash:
        raise ValidationError(
            f"cannot add neighbor means: columns {sorted(clash)} already exist")
    x = np.hstack([units.x, neighbor_means(net, units.x)])
    aug = UnitTable(x, units.z, y=units.y, g=units.g, phi=units.phi,
                    lam=units.lam, x_names=units.x_names + names)
    return aug, units.x_names


def write_curve_csv(adrf, path) -> None:
    """Plot-ready ADRF curves: one row per grid cell with a 95% band."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["g", "z", "mean", "lo", "hi"])
        for row in adrf.summary():
            if row.get("missing"):
                writer.writerow([repr(row["g"]), row["z"], "", "", ""])
            else:
                writer.writerow([repr(row["g"]), row["z"], repr(row["mean"]),
                                 repr(row["lo"]), repr(row["hi"])])


def _default_requests(cfg: EstimationConfig) -> list:
    """tau at every grid point plus one-step spillovers at each z level."""
    reqs = [Tau(float(g)) for g in cfg.g_grid]
    for z in cfg.z_levels:
        for lo, hi in zip(cfg.g_grid[:-1], cfg.g_grid[1:]):
            reqs.append(Delta(float(hi), float(lo), int(z)))
    return reqs


# ----------------------------------------------------------------- generate

def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = Scenario(
        network_kind=_MODEL_KINDS[args.model],
        outcome_form="linear" if args.outcome == "none" else args.outcome,
        random_effects=args.re,
        n=args.nodes,
        seed=args.seed,
    )
    snet = make_network(scenario, 0)
    write_edge_list(snet.net, out / "edges.csv")
    write_labels(from_labels(snet.communities, source="known"),
                 out / "communities.csv")

    z = y = None
    if args.outcome != "none":
        # same stream a simulation replicate (net 0, rep 0) would use
        rng = np.random.default_rng(
            np.random.SeedSequence(scenario.seed, spawn_key=(0, 0, 2)))
        data = generate_scenario_data(scenario, snet, rng)
        z, y = data.units.z, data.units.y
    _write_units_csv(out / "units.csv", snet.x, snet.x_names, z=z, y=y)

    deg = snet.net.degrees
    print(f"wrote edges.csv, units.csv, communities.csv to {out}/")
    print(f"{snet.net.n_nodes} nodes, mean degree {deg.mean():.2f}, "
          f"{int(snet.communities.max()) + 1} communities")
    return 0


# ----------------------------------------------------------------- estimate

def cmd_estimate(args) -> int:
    rc = _load_run_config(args)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)

    units = read_units(args.units)
    net = from_edge_list(args.edges, directed=rc.directed, n_nodes=units.n)
    communities = (read_labels(args.communities, n_nodes=net.n_nodes)
                   if args.communities else None)
    units, ps_names = _with_neighbor_means(net, units)
    cfg = rc.estimation_config(default_x_ps=ps_names)

    result = estimate(net, units, communities, cfg)
    effs = result.effects(_default_requests(cfg))

    result.adrf.to_csv(out / "adrf.csv")
    write_effects_csv(effs, out / "effects.csv")
    write_curve_csv(result.adrf, out / "curve.csv")
    chains = out / "chains"
    chains.mkdir(exist_ok=True)
    result.ps_individual.to_csv(chains / "ps_individual.csv")
    result.ps_neighborhood.to_csv(chains / "ps_neighborhood.csv")
    result.outcome.to_csv(chains / "outcome.csv")
    if rc.ppc:
        write_ppc_csv(ppc(result, seed=rc.seed), out / "ppc.csv")

    inputs = {
        "edges": {"path": str(args.edges), "hash": _content_hash(args.edges)},
        "units": {"path": str(args.units), "hash": _content_hash(args.units)},
    }
    if args.communities:
        inputs["communities"] = {"path": str(args.communities),
                                 "hash": _content_hash(args.communities)}
    write_summary_json(result, effs, out / "summary.json",
                       extra={"inputs": inputs})
    _write_resolved_config(rc, out / "config.json")

    mid = effs[len(cfg.g_grid) // 2]
    lo, hi = mid.ci
    print(f"analysis set: {result.v_indices.size} units")
    print(f"{mid.estimand}: {mid.mean:.3f} [{lo:.3f}, {hi:.3f}]")
    print(f"outputs in {out}/")
    return 0


# ----------------------------------------------------------------- simulate

_VARIANTS = ("linear", "splines", "linear-nore", "splines-nore", "matching")


def _variant_config(name: str, mcmc: McmcConfig) -> EstimationConfig:
    if name not in _VARIANTS:
        raise ValidationError(f"unknown estimator variant {name!r}; "
                              f"choose from {', '.join(_VARIANTS)}")
    spec = OutcomeModelSpec(
        linear_only=name.startswith("linear"),
        include_random_effects=not name.endswith("nore"),
    )
    return EstimationConfig(outcome=spec, matching=name == "matching",
                            mcmc=mcmc)


def _parse_scenario(label: str, seed: int) -> Scenario:
    parts = label.split("-")
    kind = _MODEL_KINDS.get("-".join(parts[:-2]))
    if len(parts) < 3 or kind is None or parts[-1] not in ("re", "nore") \
            or parts[-2] not in OUTCOME_FORMS:
        raise ValidationError(
            f"unknown scenario {label!r}; use "
            "<sbm|latent-cluster|school>-<linear|nonlinear>-<re|nore> or 'all'")
    return Scenario(network_kind=kind, outcome_form=parts[-2],
                    random_effects=parts[-1] == "re", seed=seed)


def _all_labels() -> list[str]:
    return [f"{k}-{f}-{r}" for k in _MODEL_KINDS
            for f in OUTCOME_FORMS for r in ("re", "nore")]


def _n_jobs(args) -> int:
    env = os.environ.get("NETGPS_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(
                f"NETGPS_THREADS must be an integer, got {env!r}") from None
    return max(1, args.jobs)


def cmd_simulate(args) -> int:
    ns = vars(args)
    labels = _all_labels() if args.scenario == "all" else [args.scenario]
    mcmc = McmcConfig(**{k: ns[k] for k in ("iterations", "burn_in", "thin")
                         if k in ns})
    variants = {name: _variant_config(name, mcmc)
                for name in (v.strip() for v in args.variants.split(","))
                if name}
    if not variants:
        raise ValidationError("no estimator variants requested")
    n_jobs = _n_jobs(args)
    out = Path(args.out)

    rows, complete = [], True
    try:
        for label in labels:
            scenario = _parse_scenario(label, args.seed)
            if args.desk:
                scenario = desk_plan(scenario)
            tweaks = {}
            if "nodes" in ns:
                tweaks["n"] = args.nodes
            if "networks" in ns:
                tweaks["n_networks"] = args.networks
            if "reps" in ns:
                tweaks["reps_per_network"] = args.reps
            if tweaks:
                scenario = replace(scenario, **tweaks)
            raw = None
            if args.raw:
                raw = args.raw if len(labels) == 1 else \
                    str(Path(args.raw).with_suffix("")) + f"-{scenario.label}.csv"
            report = run_study(scenario, variants, n_jobs=n_jobs, raw_path=raw)
            rows.extend(report.rows)
            state = "" if report.complete else " [interrupted]"
            print(f"{scenario.label}: {report.reps_attempted} replicates, "
                  f"{report.n_failures} failures, {report.runtime_s:.1f}s{state}")
            for r in report.rows:
                print(f"  {r['variant']:>12s}  {r['estimand']:<20s} "
                      f"bias={r['bias']:+.4f}  rmse={r['rmse']:.4f}  "
                      f"coverage={r['coverage']:.2f}")
            if not report.complete:
                complete = False
                break
    except KeyboardInterrupt:
        complete = False

    write_report_csv(rows, out, complete=complete)
    if complete:
        print(f"report written to {out}")
        return 0
    print(f"interrupted: partial report written to {out}", file=sys.stderr)
    return 130  # conventional SIGINT exit


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netgps",
        description="treatment and spillover effects on networks via a "
                    "three-step Bayesian generalized propensity score")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    gen = sub.add_parser("generate", help="write a synthetic network + units")
    gen.add_argument("--model", required=True, choices=sorted(_MODEL_KINDS))
    gen.add_argument("--nodes", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default=".")
    gen.add_argument("--outcome", choices=("linear", "nonlinear", "none"),
                     default="linear",
                     help="'none' writes covariates only (pre-assignment)")
    re_group = gen.add_mutually_exclusive_group()
    re_group.add_argument("--re", dest="re", action="store_true", default=True,
                          help="community random effects in the outcome")
    re_group.add_argument("--no-re", dest="re", action="store_false")
    gen.set_defaults(func=cmd_generate)

    est = sub.add_parser("estimate", help="fit the three-step estimator")
    est.add_argument("--edges", required=True)
    est.add_argument("--units", required=True)
    est.add_argument("--communities", help="node,community CSV; "
                                           "detected from the graph if absent")
    est.add_argument("--config", help="JSON run configuration")
    est.add_argument("--out", default=S)
    est.add_argument("--seed", type=int, default=S)
    est.add_argument("--grid", default=S, help="start:stop:step, e.g. 0:1:0.1")
    est.add_argument("--matching", action="store_true", default=S,
                     help="match on the individual PS instead of adjusting")
    est.add_argument("--linear-only", action="store_true", default=S)
    est.add_argument("--no-re", action="store_true", default=S)
    est.add_argument("--ppc", action="store_true", default=S,
                     help="posterior predictive checks -> ppc.csv")
    est.add_argument("--directed", action="store_true", default=S)
    est.add_argument("--knots", dest="n_knots", type=int, default=S)
    est.add_argument("--fixed-nu", dest="fixed_nu", type=float, default=S)
    est.add_argument("--caliper", dest="match_caliper", type=float, default=S)
    est.add_argument("--impute-mode", dest="impute_mode",
                     choices=("draw", "mean"), default=S)
    est.add_argument("--x-ps", dest="x_ps", default=S,
                     help="comma-separated covariates for the individual PS")
    est.add_argument("--iterations", type=int, default=S)
    est.add_argument("--burn-in", dest="burn_in", type=int, default=S)
    est.add_argument("--thin", type=int, default=S)
    est.set_defaults(func=cmd_estimate)

    simp = sub.add_parser("simulate", help="run a simulation study")
    simp.add_argument("--scenario", required=True,
                      help="<kind>-<form>-<re|nore> or 'all'")
    simp.add_argument("--desk", action="store_true",
                      help="desk plan: 1 network, 50 reps, n=500")
    simp.add_argument("--jobs", type=int, default=1,
                      help="worker processes (NETGPS_THREADS overrides)")
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--reps", type=int, default=S,
                      help="replicates per network")
    simp.add_argument("--networks", type=int, default=S)
    simp.add_argument("--nodes", type=int, default=S)
    simp.add_argument("--variants", default="splines",
                      help=f"comma list from: {', '.join(_VARIANTS)}")
    simp.add_argument("--iterations", type=int, default=S)
    simp.add_argument("--burn-in", dest="burn_in", type=int, default=S)
    simp.add_argument("--thin", type=int, default=S)
    simp.add_argument("--out", default="report.csv")
    simp.add_argument("--raw", help="per-replicate dump CSV")
    simp.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SamplerError, StudyError) as err:
        print(f"sampler failure: {err}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
