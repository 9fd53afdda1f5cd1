"""Risk-sensitive optimal stopping: solve, simulate and diagnose from the command line.

    riskstop solve ex3 --alpha 0.5 --c 0.5 --out out/
    riskstop simulate --config run.yaml --seed 3
    riskstop diagnose ex1 --c 0.5
    riskstop example ex3 --alpha 0.5 --c 0.5
    riskstop dyadic pdmp --T-grid 5,10,20 --m 6

Exit codes: 0 success, 1 config error, 2 numeric failure, 3 divergent target.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from . import __version__
from .bellman import BellmanRun, LogValueFn, iterate_from_above, iterate_from_below, residual
from .closed_form import (Ex1Params, Ex3Params, ex1_values, ex3_discontinuous_solution,
                          ex3_values)
from .config import (COMMANDS, FAMILIES, ConfigError, RunConfig, build_config, default_eval_states,
                     default_x0, finite_or_text, load_yaml, make_model, pdmp_params)
from .diagnostics import gap_report, regime_classifier, ui_profile
from .exceptions import BudgetExceeded, InvalidParams, MaxIterExceeded, RiskStopError
from .pdmp import dyadic_finite_horizon, simulate_and_evaluate
from .stopping_policy import (DivergentTarget, McEstimate, evaluate_policy_mc, hitting_policy,
                              rule_policy,
                              stop_immediately, stop_set_policy, write_trace_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DIVERGENT = 0, 1, 2, 3


class Report:
    """Line-oriented ``key = value`` text with ``[section]`` headers."""

    def __init__(self, cfg: RunConfig):
        self.lines = []
        self.section("run")
        self.add("command", cfg.command)
        self.add("family", cfg.family)
        self.add("config_hash", cfg.config_hash)
        self.add("seed", "none" if cfg.seed is None else cfg.seed)
        self.add("version", __version__)
        self.checks = []

    def section(self, name):
        if self.lines:
            self.lines.append("")
        self.lines.append(f"[{name}]")

    def add(self, key, value):
        if isinstance(value, float):
            value = finite_or_text(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ", ".join(finite_or_text(v) if isinstance(v, float) else str(v) for v in value)
        self.lines.append(f"{key} = {value}")

    def check(self, name, ok):
        self.checks.append(bool(ok))
        self.add(f"check.{name}", "pass" if ok else "fail")

    @property
    def all_pass(self):
        return all(self.checks)

    def text(self):
        return "\n".join(self.lines) + "\n"


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([finite_or_text(v) if isinstance(v, float) else v for v in row])


def _emit(cfg: RunConfig, report: Report, tables: dict):
    out = cfg.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"output directory {out} is not writable: {err}") from None
    if "text" in cfg.output["formats"]:
        (out / f"{cfg.command}.txt").write_text(report.text())
    if "csv" in cfg.output["formats"]:
        for name, (header, rows) in tables.items():
            if header == "trace":
                write_trace_csv(out / name, rows)
            else:
                _write_csv(out / name, header, rows)
    sys.stdout.write(report.text())


def _run_section(report: Report, name: str, run: BellmanRun):
    report.section(name)
    report.add("converged", run.converged)
    report.add("iterations", run.iteration_count)
    report.add("final_residual", float(run.residuals[-1]) if run.residuals else 0.0)
    report.add("monotone", all(run.monotone))
    report.add("support_depth", run.support_depth)


def _solve_pair(cfg, model, x0, evals):
    kw = dict(eval_states=evals, window_depth=cfg.numeric["window_depth"])
    u = iterate_from_below(model, x0, cfg.numeric["tol"], cfg.numeric["max_iter"], **kw)
    w = iterate_from_above(model, x0, cfg.numeric["tol"], cfg.numeric["max_iter"], **kw)
    return u, w


def cmd_solve(cfg: RunConfig) -> int:
    model = make_model(cfg)
    x0 = default_x0(cfg, model)
    evals = default_eval_states(cfg, model)
    u, w = _solve_pair(cfg, model, x0, evals)
    gaps = gap_report(u, w, evals, tol=max(cfg.numeric["tol"], 1e-6) * 10)
    report = Report(cfg)
    report.section("problem")
    report.add("x0", x0)
    report.add("u_x0", u.value(x0))
    report.add("w_x0", w.value(x0))
    _run_section(report, "from-below", u)
    _run_section(report, "from-above", w)
    report.section("gap")
    report.add("verdict", gaps.verdict)
    report.add("gap_states", [g[0] for g in gaps.gaps])
    report.add("residual_u", residual(model, u.final, evals))
    report.add("residual_w", residual(model, w.final, evals))
    values = [(x, u.value(x), w.value(x), w.value(x) - u.value(x)) for x in evals]
    tables = {
        "values.csv": (("state", "u", "w", "gap"), values),
        "iterations_below.csv": (("iteration", "state", "value", "residual"), u.csv_rows()),
        "iterations_above.csv": (("iteration", "state", "value", "residual"), w.csv_rows()),
    }
    _emit(cfg, report, tables)
    return EXIT_OK if u.converged and w.converged else EXIT_NUMERIC


def _policy(cfg, model, x0):
    spec = cfg.numeric["policy"]
    if spec == "stop-now":
        return stop_immediately(model)
    if isinstance(spec, (list, tuple)):
        return stop_set_policy(model, spec)
    if isinstance(spec, str) and spec.startswith("at-least:"):
        level = float(spec.split(":", 1)[1])
        return rule_policy(model, lambda x: x >= level, tail_stop=True, name=spec)
    if spec not in ("u-hitting", "w-hitting"):
        raise ConfigError("policy must be u-hitting, w-hitting, stop-now, at-least:N "
                          "or a list of states")
    solve = iterate_from_below if spec == "u-hitting" else iterate_from_above
    run = solve(model, x0, cfg.numeric["tol"], cfg.numeric["max_iter"],
                window_depth=cfg.numeric["window_depth"])
    run.raise_for_status()
    return hitting_policy(run.final, name=spec)


def _estimate_section(report, est):
    report.section("estimate")
    if isinstance(est, DivergentTarget):
        report.add("status", "divergent")
        report.add("state", est.state)
        report.add("reason", est.reason)
        return
    report.add("status", "finite")
    report.add("log_mean", est.log_mean)
    report.add("ci_low", est.ci_low)
    report.add("ci_high", est.ci_high)
    report.add("n_traj", est.n_traj)
    report.add("n_censored", est.n_censored)
    report.add("seed", est.seed)


def cmd_simulate(cfg: RunConfig) -> int:
    seed = cfg.require_seed()
    model = make_model(cfg)
    x0 = default_x0(cfg, model)
    policy = _policy(cfg, model, x0)
    n, cap = cfg.numeric["n_traj"], cfg.numeric["horizon_cap"]
    if cfg.family == "pdmp":
        est = simulate_and_evaluate(pdmp_params(cfg), x0, policy, n, float(cap), seed)
    else:
        est = evaluate_policy_mc(model, policy, x0, n, cap, seed, trace=cfg.numeric["trace"])
    report = Report(cfg)
    report.section("problem")
    report.add("x0", x0)
    report.add("policy", policy.name)
    report.add("horizon_cap", cap)
    _estimate_section(report, est)
    tables = {}
    if isinstance(est, McEstimate):
        tables["batches.csv"] = (("batch", "log_mean"), list(enumerate(est.batch_log_means)))
        if est.trace:
            tables["trace.csv"] = ("trace", est.trace)
    _emit(cfg, report, tables)
    return EXIT_DIVERGENT if isinstance(est, DivergentTarget) else EXIT_OK


def cmd_diagnose(cfg: RunConfig) -> int:
    model = make_model(cfg)
    x0 = default_x0(cfg, model)
    policy = _policy(cfg, model, x0)
    grid = cfg.numeric["T_grid"] or [1, 2, 4, 8, 16, 32, 64, 128]
    grid = [int(t) for t in grid]
    seed = cfg.seed if cfg.seed is not None else 0
    prof = ui_profile(model, policy, x0, grid, "auto", tol=cfg.numeric["tol"],
                      n_traj=cfg.numeric["n_traj"], seed=seed)
    report = Report(cfg)
    report.section("problem")
    report.add("x0", x0)
    report.add("policy", policy.name)
    if cfg.family in ("ex3", "pdmp"):
        alpha = cfg.model["alpha"]
        c = cfg.model["c"] if cfg.family == "ex3" else pdmp_params(cfg).c_embed
        report.add("regime", regime_classifier(alpha, c))
    report.section("ui-profile")
    report.add("mode", prof.mode)
    report.add("verdict", prof.verdict)
    report.add("growth_rate", "none" if prof.growth_rate is None else prof.growth_rate)
    report.add("T_grid", list(prof.T_grid))
    report.add("values", list(prof.values))
    _emit(cfg, report, {"ui_profile.csv": (("T", "log_value"), prof.csv_rows())})
    return EXIT_OK


def _close(a, b, tol):
    return a == b or abs(a - b) <= tol


def _example_ex3(cfg, report, tables):
    params = Ex3Params(cfg.model["alpha"], cfg.model["c"])
    model = make_model(cfg)
    evals = default_eval_states(cfg, model)
    x0 = default_x0(cfg, model)
    u, w = _solve_pair(cfg, model, x0, evals)
    report.section("oracle")
    report.add("regime", params.regime)
    report.add("K", params.K)
    report.section("checks")
    report.check("from_below_converged", u.converged)
    report.check("from_above_converged", w.converged)
    report.check("u_matches", all(_close(u.value(x), ex3_values(params, x)[0], 1e-6) for x in evals))
    report.check("w_matches", all(_close(w.value(x), ex3_values(params, x)[1], 1e-6) for x in evals))
    grid = [k / 10 for k in range(101)]
    u_cf = LogValueFn.from_function(model, lambda x: ex3_values(params, x)[0])
    w_cf = LogValueFn.from_function(model, lambda x: ex3_values(params, x)[1])
    report.check("closed_form_u_residual", residual(model, u_cf, grid) <= 1e-12)
    report.check("closed_form_w_residual", residual(model, w_cf, grid) <= 1e-12)
    gaps = gap_report(u, w, evals)
    expected = "non-unique" if params.regime == "gap" else "unique"
    report.add("gap_verdict", gaps.verdict)
    report.check("gap_verdict", gaps.verdict == expected)
    if params.regime == "gap":
        disc = LogValueFn.from_function(model, lambda x: ex3_discontinuous_solution(params, x))
        report.check("discontinuous_solution_residual", residual(model, disc, grid) <= 1e-12)
    rows = [(x, u.value(x), w.value(x), *ex3_values(params, x)) for x in evals]
    tables["example.csv"] = (("state", "u", "w", "u_oracle", "w_oracle"), rows)


def _example_ex1(cfg, report, tables):
    params = Ex1Params(cfg.model["c"])
    model = make_model(cfg)
    evals = default_eval_states(cfg, model)
    x0 = default_x0(cfg, model)
    u, w = _solve_pair(cfg, model, x0, evals)
    vals = ex1_values(params, int(x0))
    report.section("oracle")
    report.add("log_B", params.log_B)
    report.add("b_limit", vals.b_limit)
    report.section("checks")
    report.check("w_iterates_equal_G", all(
        all(it[i] == model.terminal_cost(s) for i, s in enumerate(w.states.tolist()))
        for it in w.values))
    report.check("u_matches_b_limit", _close(u.value(x0), vals.u, 1e-8))
    report.check("u_below_log_B", u.value(x0) <= params.log_B + 1e-12)
    gaps = gap_report(u, w, evals)
    report.check("gap_states", sorted(gaps.states) == [x for x in evals if x > vals.b_limit])
    prof = ui_profile(model, stop_set_policy(model, [1]), x0, [1, 2, 4, 8])
    report.add("ui_verdict", prof.verdict)
    report.check("ui_divergent", prof.verdict == "divergent")
    if cfg.seed is not None:
        est = evaluate_policy_mc(model, stop_set_policy(model, [1]), x0, cfg.numeric["n_traj"],
                                 cfg.numeric["horizon_cap"], int(cfg.seed))
        report.add("mc_log_mean", est.log_mean)
        report.check("mc_brackets_log_B", est.contains(params.log_B))
    else:
        report.add("mc", "skipped (no seed)")
    rows = [(x, u.value(x), w.value(x), min(x, vals.b_limit)) for x in evals]
    tables["example.csv"] = (("state", "u", "w", "u_oracle"), rows)


def _example_ex5(cfg, report, tables):
    params = pdmp_params(cfg)
    emb = params.embedded
    model = make_model(cfg)
    evals = default_eval_states(cfg, model)
    x0 = default_x0(cfg, model)
    u = iterate_from_below(model, x0, cfg.numeric["tol"], cfg.numeric["max_iter"],
                           eval_states=evals, window_depth=cfg.numeric["window_depth"])
    report.section("oracle")
    report.add("c_embed", params.c_embed)
    report.add("K_embed", emb.K)
    report.add("regime", emb.regime)
    report.section("checks")
    report.check("embedded_u_matches", all(_close(u.value(x), ex3_values(emb, x)[0], 1e-6)
                                           for x in evals))
    if cfg.seed is not None:
        est = simulate_and_evaluate(params, x0, hitting_policy(u.final), cfg.numeric["n_traj"],
                                    float(cfg.numeric["horizon_cap"]), int(cfg.seed))
        report.add("mc_log_mean", est.log_mean)
        report.check("mc_brackets_u", est.contains(ex3_values(emb, x0)[0]))
    else:
        report.add("mc", "skipped (no seed)")
    rows = [(x, u.value(x), ex3_values(emb, x)[0]) for x in evals]
    tables["example.csv"] = (("state", "u", "u_oracle"), rows)


def cmd_example(cfg: RunConfig, which: str) -> int:
    report = Report(cfg)
    report.add("example", which)
    tables = {}
    {"ex1": _example_ex1, "ex3": _example_ex3, "ex5": _example_ex5}[which](cfg, report, tables)
    report.section("summary")
    report.add("all_checks", "pass" if report.all_pass else "fail")
    _emit(cfg, report, tables)
    return EXIT_OK if report.all_pass else EXIT_NUMERIC


def cmd_dyadic(cfg: RunConfig) -> int:
    if cfg.family != "pdmp":
        raise ConfigError("dyadic needs the pdmp family")
    params = pdmp_params(cfg)
    model = make_model(cfg)
    x0 = default_x0(cfg, model)
    T_grid = cfg.numeric["T_grid"] or [5.0, 10.0, 20.0, 30.0]
    m_grid = cfg.numeric["m"] or [4, 6]
    rows = []
    for T in T_grid:
        for m in m_grid:
            r = dyadic_finite_horizon(params, x0, T, m, k_max=None)
            rows.append((T, m, r.value, r.budget, r.k_max))
    report = Report(cfg)
    report.section("problem")
    report.add("x0", x0)
    report.add("K_embed", params.embedded.K)
    report.section("grid")
    for T, m, v, b, k in rows:
        report.add(f"value.T{finite_or_text(T)}.m{m}", v)
        report.add(f"budget.T{finite_or_text(T)}.m{m}", b)
    _emit(cfg, report, {"dyadic.csv": (("T", "m", "value", "budget", "k_max"), rows)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskstop", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "minimal and maximal solutions with residuals and gap report",
        "simulate": "Monte Carlo value of a stopping policy",
        "diagnose": "uniform-integrability profile and regime classification",
        "example": "reproduce a worked example against its closed form",
        "dyadic": "finite-horizon values of the jump process on dyadic grids",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        if name == "example":
            p.add_argument("which", choices=("ex1", "ex3", "ex5"))
        else:
            p.add_argument("family", nargs="?", choices=FAMILIES, help="model family (default ex3)")
        p.add_argument("--config", type=Path, help="YAML config file")
        p.add_argument("--seed", type=int, help="RNG seed, required by stochastic commands")
        p.add_argument("--out", help="output directory")
        p.add_argument("--alpha", type=float, help="reset probability")
        p.add_argument("--c", type=float, help="running cost per step")
        p.add_argument("--lambda", dest="lambda_", type=float, help="jump rate")
        p.add_argument("--d", type=float, help="running cost per unit time")
        p.add_argument("--x0", type=float, help="start state")
        p.add_argument("--tol", type=float, help="convergence tolerance")
        p.add_argument("--max-iter", type=int, help="iteration cap")
        p.add_argument("--n-traj", type=int, help="number of simulated trajectories")
        p.add_argument("--horizon-cap", type=int, help="censoring step for simulations")
        p.add_argument("--T-grid", dest="T_grid", help="comma-separated horizons")
        p.add_argument("--m", help="comma-separated dyadic refinement levels")
        p.add_argument("--policy", help="u-hitting, w-hitting, stop-now, at-least:N or a state list")
    return parser


EXAMPLE_FAMILY = {"ex1": "ex1", "ex3": "ex3", "ex5": "pdmp"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = load_yaml(args.config) if args.config else {}
        family = EXAMPLE_FAMILY[args.which] if args.command == "example" else args.family
        policy = args.policy
        if policy and policy not in ("u-hitting", "w-hitting", "stop-now") \
                and not policy.startswith("at-least:"):
            policy = [float(s) for s in policy.split(",")]
        overrides = {
            "family": family, "alpha": args.alpha, "c": args.c, "lambda": args.lambda_,
            "d": args.d, "out": args.out, "x0": args.x0, "tol": args.tol,
            "max_iter": args.max_iter, "n_traj": args.n_traj, "horizon_cap": args.horizon_cap,
            "seed": args.seed, "T_grid": args.T_grid, "m": args.m, "policy": policy,
        }
        cfg = build_config(args.command, data, overrides)
    except (InvalidParams, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "diagnose":
            return cmd_diagnose(cfg)
        if args.command == "example":
            return cmd_example(cfg, args.which)
        return cmd_dyadic(cfg)
    except (MaxIterExceeded, BudgetExceeded) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidParams as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RiskStopError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
