"""Command-line interface: config ingestion, subcommands, CSV emission.

Runs are reproducible: a fixed config and seed produce byte-identical
outputs. All tables are CSV with floats at 12 significant digits; the run
summary lands in ``report.json`` next to them.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dominance import Status, alpha_nesting_check, classify, compare
from .errors import AssumptionError, ContractError, DomainError, RegmechError
from .fixedcost import FcStatus, FixedCostEnv, FixedCostMechanism, fc_classify
from .market import (
    Demand,
    LinearDemand,
    LogitDemand,
    MarketEnv,
    TabulatedDemand,
    TypeGrid,
    rotate,
    validate_assumptions,
)
from .mechanism import Mechanism, SurplusProfile, rs_profile
from .optimize import Prior, bm_optimal, dp_oracle, expected_rs, maxmin
from .transforms import PerturbationParams, efficient_perturbation, floor_transform


class ConfigError(ContractError):
    """Invalid configuration; carries every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.problems))


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".12g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def write_mechanism_csv(path: Path, m) -> None:
    write_csv(path, ["theta", "q", "r"],
              zip(m.env.grid.knots, m.q_vals, m.r_vals))


def write_overrides_csv(path: Path, m) -> None:
    write_csv(path, ["knot_index", "q", "r"],
              [(str(i), q, r) for i, q, r in m.overrides])


def read_mechanism_csv(env, path: Path, u_bar: float = 0.0, overrides_path=None,
                       fixed_cost: bool = False):
    rows = _read_csv(path, ["theta", "q", "r"])
    if len(rows) != env.grid.n:
        raise ContractError(f"{path}: expected {env.grid.n} rows, found {len(rows)}")
    theta = np.array([r[0] for r in rows])
    if np.any(np.abs(theta - env.grid.knots) > 1e-9):
        raise ContractError(f"{path}: theta column does not match the grid")
    q = np.array([r[1] for r in rows])
    r = np.array([r_[2] for r_ in rows])
    overrides = ()
    if overrides_path:
        ov_rows = _read_csv(Path(overrides_path), ["knot_index", "q", "r"])
        overrides = tuple((int(a), b, c) for a, b, c in ov_rows)
    cls = FixedCostMechanism if fixed_cost else Mechanism
    return cls.build(env, q, r, overrides, u_bar=u_bar)


def read_prior_csv(grid: TypeGrid, path: Path) -> Prior:
    rows = _read_csv(path, ["theta", "density"])
    if len(rows) != grid.n:
        raise ContractError(f"{path}: expected {grid.n} rows, found {len(rows)}")
    theta = np.array([r[0] for r in rows])
    if np.any(np.abs(theta - grid.knots) > 1e-9):
        raise ContractError(f"{path}: theta column does not match the grid")
    return Prior.from_density(grid, [r[1] for r in rows], name=str(path))


def _read_csv(path: Path, expected_header) -> list:
    if not Path(path).exists():
        raise ContractError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise ContractError(f"{path}: expected header {','.join(expected_header)}")
        return [[float(c) for c in row] for row in reader if row]


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

_DEMAND_FIELDS = {
    "linear": {"a", "b"},
    "logit": {"V", "beta"},
    "tabulated": {"points"},
}


def parse_config(path) -> dict:
    """Load and validate the YAML config; every violation is reported at once."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    problems = []
    market = raw.get("market")
    if not isinstance(market, dict):
        problems.append("missing 'market' block")
        raise ConfigError(problems)

    demand_spec = market.get("demand")
    if not isinstance(demand_spec, dict) or "family" not in demand_spec:
        problems.append("market.demand must give a family")
    else:
        family = demand_spec["family"]
        if family not in _DEMAND_FIELDS:
            problems.append(f"unknown demand family '{family}'")
        else:
            missing = _DEMAND_FIELDS[family] - set(demand_spec)
            if missing:
                problems.append(f"market.demand missing fields: {sorted(missing)}")

    def _num(key, check, msg):
        v = market.get(key)
        if not isinstance(v, (int, float)) or not check(float(v)):
            problems.append(f"market.{key}: {msg} (got {v!r})")
        return v

    _num("c", lambda x: x > 0.0, "fixed cost c must be positive")
    tl = _num("theta_low", lambda x: x > 0.0, "theta_low must be positive")
    th = _num("theta_high", lambda x: x > 0.0, "theta_high must be positive")
    if isinstance(tl, (int, float)) and isinstance(th, (int, float)) and not tl < th:
        problems.append("market.theta_low must be strictly below theta_high")
    _num("alpha", lambda x: 0.0 <= x < 1.0, "alpha must lie in [0,1)")
    _num("grid_n", lambda x: x == int(x) and x >= 2, "grid_n must be an integer >= 2")

    for block in ("mechanisms", "priors"):
        if block in raw and not isinstance(raw[block], dict):
            problems.append(f"'{block}' must map names to specs")
    for name, spec in (raw.get("mechanisms") or {}).items():
        if not isinstance(spec, dict) or "kind" not in spec:
            problems.append(f"mechanisms.{name}: needs a 'kind'")
        elif spec["kind"] == "csv":
            p = Path(spec.get("path", ""))
            if not p.is_absolute():
                p = path.parent / p
            if not p.exists():
                problems.append(f"mechanisms.{name}: file not found: {spec.get('path')}")
    for name, spec in (raw.get("priors") or {}).items():
        if not isinstance(spec, dict) or "kind" not in spec:
            problems.append(f"priors.{name}: needs a 'kind'")
        elif spec["kind"] == "csv":
            p = Path(spec.get("path", ""))
            if not p.is_absolute():
                p = path.parent / p
            if not p.exists():
                problems.append(f"priors.{name}: file not found: {spec.get('path')}")

    if problems:
        raise ConfigError(problems)
    raw["_path"] = str(path)
    raw["_sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    return raw


def build_demand(spec: dict) -> Demand:
    family = spec["family"]
    if family == "linear":
        return LinearDemand(float(spec["a"]), float(spec["b"]))
    if family == "logit":
        return LogitDemand(float(spec["V"]), float(spec["beta"]))
    pts = spec["points"]
    return TabulatedDemand(tuple(float(p[0]) for p in pts), tuple(float(p[1]) for p in pts))


def build_env(config: dict, alpha: float | None = None, grid_n: int | None = None) -> MarketEnv:
    mk = config["market"]
    return MarketEnv.build(
        build_demand(mk["demand"]),
        c=float(mk["c"]),
        theta_low=float(mk["theta_low"]),
        theta_high=float(mk["theta_high"]),
        alpha=float(mk["alpha"] if alpha is None else alpha),
        grid_n=int(mk["grid_n"] if grid_n is None else grid_n),
    )


def build_fixedcost_env(config: dict, grid_n: int | None = None) -> FixedCostEnv:
    mk = config["market"]
    return FixedCostEnv.build(
        build_demand(mk["demand"]),
        c=float(mk["c"]),
        theta_low=float(mk["theta_low"]),
        theta_high=float(mk["theta_high"]),
        grid_n=int(mk["grid_n"] if grid_n is None else grid_n),
    )


def build_mechanism(env, config: dict, name: str, fixed_cost: bool = False):
    specs = config.get("mechanisms") or {}
    if name not in specs:
        raise ContractError(f"mechanism '{name}' not defined in the config")
    spec = specs[name]
    kind = spec["kind"]
    knots = env.grid.knots
    u_bar = float(spec.get("u_bar", 0.0))
    overrides = tuple((int(o[0]), float(o[1]), float(o[2]))
                      for o in spec.get("overrides", ()))
    cls = FixedCostMechanism if fixed_cost else Mechanism

    if kind == "csv":
        p = Path(spec["path"])
        if not p.is_absolute():
            p = Path(config["_path"]).parent / p
        ov = spec.get("overrides_path")
        if ov and not Path(ov).is_absolute():
            ov = Path(config["_path"]).parent / ov
        return read_mechanism_csv(env, p, u_bar, ov, fixed_cost=fixed_cost)
    if kind == "constant":
        q = np.full(env.grid.n, float(spec["q"]))
        r = np.full(env.grid.n, float(spec.get("r", 1.0)))
        return cls.build(env, q, r, overrides, u_bar=u_bar)
    if kind == "affine":
        q = np.maximum(float(spec["a"]) + float(spec["b"]) * knots, 0.0)
        r = np.where(q > 0.0, float(spec.get("r", 1.0)), 0.0)
        return cls.build(env, q, r, overrides, u_bar=u_bar)
    if kind == "efficient":
        if fixed_cost:
            q = np.full(env.grid.n, env.q_efficient)
        else:
            q = env.demand.inverse_array(knots)
        return cls.build(env, q, np.ones(env.grid.n), overrides, u_bar=u_bar)
    if kind == "table":
        rows = sorted(spec["rows"], key=lambda row: row[0])
        q = np.empty(env.grid.n)
        r = np.empty(env.grid.n)
        j = 0
        for i, t in enumerate(knots):
            while j < len(rows) - 1 and t > rows[j][0] + 1e-12:
                j += 1
            if t > rows[j][0] + 1e-12:
                raise ContractError(f"mechanism '{name}': table rows end before theta={t}")
            q[i], r[i] = float(rows[j][1]), float(rows[j][2])
        return cls.build(env, q, r, overrides, u_bar=u_bar)
    raise ContractError(f"mechanism '{name}': unknown kind '{kind}'")


def build_prior(grid: TypeGrid, config: dict, name: str) -> Prior:
    specs = config.get("priors") or {}
    if name not in specs:
        raise ContractError(f"prior '{name}' not defined in the config")
    spec = specs[name]
    kind = spec["kind"]
    if kind == "uniform":
        return Prior.uniform(grid)
    if kind == "triangular":
        return Prior.triangular(grid, peak=spec.get("peak", "high"))
    if kind == "point_mass":
        return Prior.near_point_mass(grid, float(spec["at"]), spec.get("half_width"))
    if kind == "csv":
        p = Path(spec["path"])
        if not p.is_absolute():
            p = Path(config["_path"]).parent / p
        return read_prior_csv(grid, p)
    raise ContractError(f"prior '{name}': unknown kind '{kind}'")


# ---------------------------------------------------------------------------
# Report plumbing
# ---------------------------------------------------------------------------

class Report:
    def __init__(self, config: dict, args):
        self.data = {
            "meta": {
                "tool": "regmech",
                "version": __version__,
                "subcommand": args.subcommand,
                "config_sha256": config["_sha256"],
                "seed": args.seed,
            },
            "verdicts": [],
            "tables": {},
            "values": {},
        }

    def verdict(self, op: str, text: str, **extra):
        self.data["verdicts"].append({"op": op, "verdict": text, **extra})

    def value(self, key: str, val):
        if isinstance(val, float):
            val = float(_fmt(val))
        self.data["values"][key] = val

    def table(self, name: str, path: Path):
        self.data["tables"][name] = str(path.name)

    def dump(self, out: Path) -> Path:
        path = out / "report.json"
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _mech_tables(out: Path, report: Report, label: str, m) -> None:
    path = out / f"{label}.csv"
    write_mechanism_csv(path, m)
    report.table(label, path)
    if m.overrides:
        ov_path = out / f"{label}_overrides.csv"
        write_overrides_csv(ov_path, m)
        report.table(f"{label}_overrides", ov_path)
    report.value(f"{label}_u_bar", float(m.u_bar))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_floor(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    validation = validate_assumptions(env)
    report.value("qfloor", env.qfloor)
    report.verdict("validate_assumptions", "pass" if validation.ok else "fail",
                   checks=[dataclasses.asdict(c) for c in validation.checks])
    qe = env.demand.inverse_array(env.grid.knots)
    ts_floor = [env.demand.value(env.qfloor) - env.c - t * env.qfloor
                for t in env.grid.knots]
    path = out / "floor_facts.csv"
    write_csv(path, ["theta", "q_efficient", "ts_at_floor"],
              zip(env.grid.knots, qe, ts_floor))
    report.table("floor_facts", path)
    if not validation.ok:
        raise AssumptionError("; ".join(c.name for c in validation.failures()))


def cmd_transform(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    m = build_mechanism(env, config, args.mechanism)
    t = floor_transform(m)
    _mech_tables(out, report, "input", m)
    _mech_tables(out, report, "transformed", t)
    rs_in, rs_out = rs_profile(m), rs_profile(t)
    path = out / "dominance_table.csv"
    write_csv(path, ["theta", "rs_input", "rs_transformed", "gain"],
              zip(env.grid.knots, rs_in, rs_out, rs_out - rs_in))
    report.table("dominance_table", path)
    verdict = compare(t, m)
    report.verdict("compare", verdict.relation.value,
                   strict_knots=len(verdict.strict_knots))


def cmd_classify(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    m = build_mechanism(env, config, args.mechanism)
    result = classify(m, witness_search=args.witness_search, jobs=args.jobs)
    report.verdict("classify", result.status.value,
                   diagnostics=result.diagnostics, certificate=result.certificate)
    _mech_tables(out, report, "input", m)
    if result.witness is not None:
        _mech_tables(out, report, "witness", result.witness)
        v = compare(result.witness, m)
        report.verdict("compare", v.relation.value, strict_knots=len(v.strict_knots))
    if result.witness_params is not None:
        report.value("witness_theta_l", result.witness_params.theta_l)
        report.value("witness_theta_h", result.witness_params.theta_h)
        report.value("witness_epsilon", result.witness_params.epsilon)


def cmd_compare(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    a = build_mechanism(env, config, args.mechanism)
    b = build_mechanism(env, config, args.other)
    verdict = compare(a, b)
    rs_a, rs_b = rs_profile(a), rs_profile(b)
    path = out / "compare_table.csv"
    write_csv(path, ["theta", "rs_first", "rs_second", "diff"],
              zip(env.grid.knots, rs_a, rs_b, rs_a - rs_b))
    report.table("compare_table", path)
    report.verdict("compare", verdict.relation.value,
                   strict_knots=len(verdict.strict_knots),
                   min_gap=verdict.min_gap, max_gap=verdict.max_gap)


def cmd_optimal(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    prior = build_prior(env.grid, config, args.prior)
    res = bm_optimal(env, prior)
    report.value("expected_rs", res.expected)
    report.value("ironed", res.ironed)
    report.verdict("bm_optimal", "ok")
    path = out / "optimal_profile.csv"
    m = res.mechanism
    write_csv(path, ["theta", "q", "r", "virtual_cost"],
              zip(env.grid.knots, m.q_vals, m.r_vals, res.virtual_cost))
    report.table("optimal_profile", path)


def cmd_oracle(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    prior = build_prior(env.grid, config, args.prior)
    res = dp_oracle(env, prior, args.q_levels)
    ref = bm_optimal(env, prior)
    report.value("expected_rs_oracle", res.expected)
    report.value("expected_rs_optimal", ref.expected)
    report.value("expected_gap", abs(res.expected - ref.expected))
    report.value("max_pointwise_q_gap",
                 float(np.max(np.abs(res.mechanism.q_vals - ref.mechanism.q_vals))))
    report.verdict("dp_oracle", "ok")
    path = out / "oracle_profile.csv"
    write_csv(path, ["theta", "q_oracle", "q_optimal"],
              zip(env.grid.knots, res.mechanism.q_vals, ref.mechanism.q_vals))
    report.table("oracle_profile", path)


def cmd_maxmin(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    names = [s.strip() for s in args.priors.split(",") if s.strip()]
    priors = [build_prior(env.grid, config, n) for n in names]
    res = maxmin(env, priors)
    report.verdict("maxmin", "ok", star_prior=names[res.star_index])
    report.value("expected_rs", res.optimal.expected)
    for n, v in zip(names, res.expected_by_prior):
        report.value(f"expected_rs_under_{n}", v)
    path = out / "maxmin_profile.csv"
    m = res.optimal.mechanism
    write_csv(path, ["theta", "q", "r"], zip(env.grid.knots, m.q_vals, m.r_vals))
    report.table("maxmin_profile", path)


def cmd_perturb(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    params = PerturbationParams(args.theta_l, args.theta_h, args.epsilon)
    witness = efficient_perturbation(env, params)
    base = Mechanism.efficient(env)
    gain = rs_profile(witness) - rs_profile(base)
    path = out / "gap_table.csv"
    write_csv(path, ["theta", "rs_gain"], zip(env.grid.knots, gain))
    report.table("gap_table", path)
    _mech_tables(out, report, "perturbed", witness)
    verdict = compare(witness, base)
    report.verdict("efficient_perturbation", verdict.relation.value,
                   strict_knots=len(verdict.strict_knots))


def cmd_nesting(args, config, out, report):
    env = build_env(config, args.alpha_high, args.grid_n)
    m = build_mechanism(env, config, args.mechanism)
    result = classify(m, witness_search=True, jobs=args.jobs)
    if result.status is not Status.DOMINATED:
        raise ContractError(
            f"nesting needs a dominated input at alpha={args.alpha_high}; "
            f"got {result.status.value}")
    nest = alpha_nesting_check(m, args.alpha_high, args.alpha_low, result.witness)
    report.verdict("alpha_nesting_check", "pass" if nest.ok else "fail",
                   witness_at_high=nest.witness_at_high.relation.value,
                   reduced_at_high=nest.reduced_at_high.relation.value,
                   reduced_at_low=nest.reduced_at_low.relation.value,
                   meet_used=nest.meet_used)
    _mech_tables(out, report, "witness", result.witness)


def cmd_rotate(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    rotated = rotate(env, args.slope)
    env_new = MarketEnv(env.theta_low, env.theta_high, env.c, env.alpha,
                        rotated, env.grid)
    report.value("qfloor", env.qfloor)
    report.value("qfloor_rotated", env_new.qfloor)
    report.verdict("rotate", "ok",
                   floor_increased=bool(env_new.qfloor > env.qfloor))
    path = out / "rotation_table.csv"
    write_csv(path, ["theta", "q_efficient", "q_efficient_rotated"],
              zip(env.grid.knots,
                  env.demand.inverse_array(env.grid.knots),
                  rotated.inverse_array(env.grid.knots)))
    report.table("rotation_table", path)


def cmd_fixedcost_classify(args, config, out, report):
    env = build_fixedcost_env(config, args.grid_n)
    m = build_mechanism(env, config, args.mechanism, fixed_cost=True)
    alphas = (0.0, 0.5, 0.9) if args.alpha is None else (args.alpha,)
    result = fc_classify(m, alphas=alphas)
    report.verdict("fc_classify", result.status.value, conditions=result.conditions)
    report.value("q_efficient", env.q_efficient)
    path = out / "input.csv"
    write_csv(path, ["theta", "q", "r"], zip(env.grid.knots, m.q_vals, m.r_vals))
    report.table("input", path)
    if result.status is FcStatus.DOMINATED:
        w = result.witness
        wpath = out / "witness.csv"
        write_csv(wpath, ["theta", "q", "r"], zip(env.grid.knots, w.q_vals, w.r_vals))
        report.table("witness", wpath)


def cmd_export_plot(args, config, out, report):
    env = build_env(config, args.alpha, args.grid_n)
    m = build_mechanism(env, config, args.mechanism)
    prof = SurplusProfile.of(m)
    path = out / "plot_data.csv"
    write_csv(path, ["theta", "q", "r", "u", "s", "ts", "cs", "rs"],
              zip(prof.theta, m.point_q(), m.point_r(), prof.u, prof.s,
                  prof.ts, prof.cs, prof.rs))
    report.table("plot_data", path)
    report.verdict("export_plot", "ok")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the YAML config")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="recorded run seed")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for sweep evaluation")
    common.add_argument("--alpha", type=float, default=None,
                        help="override the config welfare weight")
    common.add_argument("--grid-n", type=int, default=None, dest="grid_n",
                        help="override the config grid size")
    return common


def make_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="regmech",
                                     description="undominated-regulation toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sub.add_parser("floor", parents=[common]).set_defaults(func=cmd_floor)

    p = sub.add_parser("transform", parents=[common])
    p.add_argument("--mechanism", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("classify", parents=[common])
    p.add_argument("--mechanism", required=True)
    p.add_argument("--witness-search", action="store_true", dest="witness_search")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("compare", parents=[common])
    p.add_argument("--mechanism", required=True)
    p.add_argument("--other", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("optimal", parents=[common])
    p.add_argument("--prior", required=True)
    p.set_defaults(func=cmd_optimal)

    p = sub.add_parser("oracle", parents=[common])
    p.add_argument("--prior", required=True)
    p.add_argument("--q-levels", type=int, default=141, dest="q_levels")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("maxmin", parents=[common])
    p.add_argument("--priors", required=True, help="comma-separated prior names")
    p.set_defaults(func=cmd_maxmin)

    p = sub.add_parser("perturb", parents=[common])
    p.add_argument("--theta-l", type=float, required=True, dest="theta_l")
    p.add_argument("--theta-h", type=float, required=True, dest="theta_h")
    p.add_argument("--epsilon", type=float, required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("nesting", parents=[common])
    p.add_argument("--mechanism", required=True)
    p.add_argument("--alpha-high", type=float, required=True, dest="alpha_high")
    p.add_argument("--alpha-low", type=float, required=True, dest="alpha_low")
    p.set_defaults(func=cmd_nesting)

    p = sub.add_parser("rotate", parents=[common])
    p.add_argument("--slope", type=float, required=True,
                   help="new (strictly smaller) slope parameter")
    p.set_defaults(func=cmd_rotate)

    fc = sub.add_parser("fixedcost")
    fc_sub = fc.add_subparsers(dest="fc_subcommand", required=True)
    p = fc_sub.add_parser("classify", parents=[common])
    p.add_argument("--mechanism", required=True)
    p.set_defaults(func=cmd_fixedcost_classify, subcommand="fixedcost classify")

    p = sub.add_parser("export-plot", parents=[common])
    p.add_argument("--mechanism", required=True)
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = Report(config, args)
        try:
            args.func(args, config, out, report)
        finally:
            report.dump(out)
        return 0
    except AssumptionError as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return 3
    except (ContractError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RegmechError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
