"""Experiment runner: TOML configs in, JSON summaries and CSV traces out.

Every run is fully determined by its config (wall-clock seeding is
refused); reruns produce byte-identical summaries except for the single
isolated ``timestamp`` field. Exit codes: 0 all selected checks passed,
1 a check failed, 2 config error, 3 hypothesis violation, 4 numerical
blow-up.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import control as ctl
from . import gain_value as gv
from . import hjb as hjbmod
from . import picard as picardmod
from . import problems as prb
from . import rng, sde
from .measures import EmpiricalMeasure, wasserstein1

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_HYPOTHESIS = 3
EXIT_BLOWUP = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config assembly


def load_config(path: str | None, overrides: dict) -> dict:
    cfg: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    num = cfg.setdefault("numerics", {})
    for key in ("seed", "particles", "dt", "horizon", "t0", "threads"):
        if overrides.get(key) is not None:
            num[key] = overrides[key]
    if "seed" not in num:
        raise ConfigError("a seed is mandatory (config [numerics].seed or --seed)")
    num.setdefault("particles", 1000)
    num.setdefault("dt", 1e-3)
    num.setdefault("horizon", 3.0)
    # t0 stays unset unless given: terminal-cost bundles default to their
    # own start time, infinite-horizon problems to 0
    num.setdefault("threads", 1)
    for key in ("particles", "dt", "horizon"):
        if num[key] <= 0:
            raise ConfigError(f"numerics.{key} must be positive")
    return cfg


def build_problem(cfg: dict):
    tbl = cfg.get("problem", {"family": "lq"})
    try:
        return prb.problem_from_toml(tbl)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad problem descriptor: {exc}") from exc


def build_initial(cfg: dict) -> sde.InitialCondition:
    tbl = cfg.get("initial", {"kind": "gaussian", "mean": 0.5, "std": 0.2})
    kind = tbl.get("kind")
    if kind == "dirac":
        return sde.dirac(float(tbl.get("x", 0.0)))
    if kind == "gaussian":
        return sde.gaussian(float(tbl.get("mean", 0.0)), float(tbl.get("std", 1.0)))
    raise ConfigError(f"unknown initial condition kind {kind!r}")


def build_control(tbl: dict, dt: float, problem) -> ctl.ControlPolicy:
    kind = tbl.get("kind")
    if kind == "constant":
        return ctl.Constant(float(tbl.get("a", 0.0)),
                            label=tbl.get("label", f"constant({tbl.get('a', 0.0)})"))
    if kind == "linear_feedback":
        return ctl.linear_feedback(float(tbl["k1"]), float(tbl["k2"]))
    if kind == "oracle":
        if getattr(problem, "label", "") != "lq":
            raise ConfigError("the oracle feedback is defined for the lq family only")
        spec = _lq_spec_from(tbl, problem)
        ref = prb.lq_reference(spec)
        return ctl.linear_feedback(ref.k1, ref.k2, label="oracle")
    if kind == "sign_of_brownian":
        return ctl.counterexample_optimal_control(float(tbl["t"]), dt)
    raise ConfigError(f"unknown control kind {kind!r}")


def _lq_spec_from(tbl: dict, problem) -> prb.LQSpec:
    keys = ("a", "abar", "b", "sigma", "q", "qbar", "r", "beta", "a_max")
    src = tbl.get("spec", {})
    return prb.LQSpec(**{k: float(src[k]) for k in keys if k in src}) if src else prb.LQSpec()


def build_family(cfg: dict, dt: float, problem) -> list:
    fams = cfg.get("family")
    if not fams:
        raise ConfigError("no [[family]] candidates declared")
    out = []
    for tbl in fams:
        pol = build_control(tbl, dt, problem)
        out.append((getattr(pol, "label", tbl.get("kind")), pol))
    return out


# ---------------------------------------------------------------------------
# emission


def _jsonify(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def write_summary(out_dir: Path, command: str, cfg: dict, results: dict,
                  checks: list) -> Path:
    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": _jsonify(cfg),
        "results": _jsonify(results),
        "checks": _jsonify(checks),
        "passed": all(c["passed"] for c in checks) if checks else True,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{command.replace('-', '_')}_summary.json"
    path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return path


def summary_without_timestamp(path: Path) -> bytes:
    """Canonical bytes of a summary with the isolated timestamp removed."""
    data = json.loads(Path(path).read_text())
    data.pop("timestamp", None)
    return json.dumps(data, sort_keys=True, indent=2).encode()


def write_csv(path: Path, header: list, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _selected(cfg: dict, names: list) -> list:
    """Apply the optional [checks].run filter to a subcommand's check set."""
    chosen = cfg.get("checks", {}).get("run")
    if chosen is None:
        return names
    return [n for n in names if n in chosen]


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict, out_dir: Path, dump_paths: bool = False) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg)
    bundle = None
    if isinstance(problem, prb.CounterexampleProblem):
        bundle, problem = problem, problem.problem
    xi = build_initial(cfg)
    t0 = float(num.get("t0", bundle.t if bundle else 0.0))
    T = float(num["horizon"]) if bundle is None else bundle.T
    ctrl = build_control(cfg.get("control", {"kind": "constant", "a": 0.0}),
                         num["dt"], problem)
    paths = sde.simulate(problem, ctrl, t0, xi, T, num["dt"], num["particles"], num["seed"])
    rep = sde.check_moment_bound(paths, problem.M,
                                 xi_norm=math.sqrt(paths.second_moments[paths.t0_index]))
    write_csv(out_dir / "second_moments.csv", ["time", "second_moment"],
              zip(paths.grid.tolist(), paths.second_moments.tolist()))
    if dump_paths:
        rows = []
        for k in range(0, len(paths.grid)):
            for i in range(min(paths.states.shape[1], 64)):
                rows.append((paths.grid[k], i) + tuple(paths.states[k, i]))
        write_csv(out_dir / "paths.csv", ["time", "particle"] +
                  [f"x{j+1}" for j in range(problem.d)], rows)
    results = {
        "terminal_second_moment": paths.second_moments[-1],
        "clamp_fraction": paths.clamp_fraction,
        "moment_bound_max_ratio": rep.max_ratio,
    }
    checks = [{"name": "moment_bound", "passed": rep.ok,
               "details": {"max_ratio": rep.max_ratio, "argmax_time": rep.argmax_time}}]
    checks = [c for c in checks if c["name"] in _selected(cfg, ["moment_bound"])]
    path = write_summary(out_dir, "simulate", cfg, results, checks)
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED), path


def cmd_gain(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg)
    base = problem.problem if isinstance(problem, prb.CounterexampleProblem) else problem
    t0 = float(num.get("t0", problem.t if isinstance(problem, prb.CounterexampleProblem) else 0.0))
    ctrl = build_control(cfg.get("control", {"kind": "constant", "a": 0.0}), num["dt"], base)
    est = gv.estimate_gain(problem, ctrl, t0, build_initial(cfg), num["horizon"],
                           num["dt"], num["particles"], num["seed"])
    results = {"value": est.value, "mc_stderr": est.mc_stderr, "tail_bound": est.tail_bound,
               "T_trunc": est.T_trunc, "control": est.label}
    path = write_summary(out_dir, "gain", cfg, results, [])
    return EXIT_OK, path


def cmd_value(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg)
    base = problem.problem if isinstance(problem, prb.CounterexampleProblem) else problem
    t0 = float(num.get("t0", problem.t if isinstance(problem, prb.CounterexampleProblem) else 0.0))
    family = build_family(cfg, num["dt"], base)
    est = gv.estimate_value(problem, family, t0, build_initial(cfg), num["horizon"],
                            num["dt"], num["particles"], num["seed"])
    write_csv(out_dir / "value_candidates.csv",
              ["label", "value", "mc_stderr", "tail_bound"],
              [(lab, e.value, e.mc_stderr, e.tail_bound) for lab, e in est.trace])
    results = {"value": est.value, "argmax": est.best_label,
               "candidates": {lab: e.value for lab, e in est.trace}}
    path = write_summary(out_dir, "value", cfg, results, [])
    return EXIT_OK, path


def cmd_invariance(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg)
    if isinstance(problem, prb.CounterexampleProblem):
        raise ConfigError("invariance checks need an infinite-horizon problem")
    xi = build_initial(cfg)
    t_shift = float(cfg.get("invariance", {}).get("t", 1.0))

    def path_rule(s, path, u):
        return 0.8 * np.tanh(path[(len(path) - 1) // 2, :, 0])

    ctrl_tbl = cfg.get("control")
    ctrl = (build_control(ctrl_tbl, num["dt"], problem) if ctrl_tbl
            else ctl.OpenLoop(path_rule, label="tanh_half_path"))
    checks = []
    results: dict = {}
    names = _selected(cfg, ["time_invariance", "law_invariance"])
    if "time_invariance" in names:
        rep = gv.time_invariance_check(problem, ctrl, t_shift, xi, num["horizon"],
                                       num["dt"], num["particles"], num["seed"])
        results["time_invariance"] = {
            "coupled_diff": rep.coupled_diff, "stat_diff": rep.stat_diff,
            "stat_tol": rep.stat_tol}
        checks.append({"name": "time_invariance", "passed": rep.passed,
                       "details": results["time_invariance"]})
    if "law_invariance" in names:
        family = ([(getattr(ctrl, "label", "ctrl"), ctrl)] if not cfg.get("family")
                  else build_family(cfg, num["dt"], problem))
        rep2 = gv.law_invariance_check(problem, family, 0.0, xi, sde.antithetic(xi),
                                       num["horizon"], num["dt"], num["particles"],
                                       num["seed"], num["seed"] + 1)
        results["law_invariance"] = {
            "value_a": rep2.value_a, "value_b": rep2.value_b, "tolerance": rep2.tolerance}
        checks.append({"name": "law_invariance", "passed": rep2.passed,
                       "details": results["law_invariance"]})
    path = write_summary(out_dir, "invariance", cfg, results, checks)
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED), path


def cmd_counterexample(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    bundle = build_problem(cfg)
    if not isinstance(bundle, prb.CounterexampleProblem):
        raise ConfigError("counterexample subcommand needs problem.family = 'counterexample'")
    dt, N, seed = num["dt"], num["particles"], num["seed"]
    xi = sde.dirac(0.0)
    constants = [("const_+1", ctl.Constant(1.0)), ("const_-1", ctl.Constant(-1.0))]
    restricted = gv.estimate_value(bundle, constants, bundle.t, xi, bundle.T, dt, N, seed)
    alpha_star = ctl.counterexample_optimal_control(bundle.t, dt)
    full = gv.estimate_value(bundle, constants + [("alpha_star", alpha_star)],
                             bundle.t, xi, bundle.T, dt, N, seed)
    gap = full.value - restricted.value
    ln2 = math.log(2.0)
    results = {
        "restricted_value": restricted.value,
        "full_value": full.value,
        "gap": gap,
        "expected_restricted": -ln2,
        "expected_gap": ln2,
    }
    checks = [
        {"name": "restricted_value", "passed": abs(restricted.value + ln2) <= 0.02,
         "details": {"value": restricted.value, "target": -ln2, "tol": 0.02}},
        {"name": "full_value", "passed": full.value >= -0.02,
         "details": {"value": full.value, "floor": -0.02}},
        {"name": "gap", "passed": abs(gap - ln2) <= 0.05,
         "details": {"gap": gap, "target": ln2, "tol": 0.05}},
    ]
    checks = [c for c in checks if c["name"] in
              _selected(cfg, ["restricted_value", "full_value", "gap"])]
    path = write_summary(out_dir, "counterexample", cfg, results, checks)
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED), path


def cmd_picard(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg)
    if isinstance(problem, prb.CounterexampleProblem):
        problem = problem.problem
    xi = build_initial(cfg)
    tbl = cfg.get("picard", {})
    tol = float(tbl.get("tol", 0.02))
    T = float(num["horizon"])
    t0 = float(num.get("t0", 0.0))
    ctrl = build_control(cfg.get("control", {"kind": "oracle"}), num["dt"], problem)
    seed = num["seed"]
    floor = picardmod.flow_noise_floor(problem, ctrl, t0, xi, T, num["dt"],
                                       num["particles"], seed + 101, seed + 202)
    try:
        res = picardmod.solve_flow_picard(problem, ctrl, t0, xi, T, num["dt"],
                                          num["particles"], seed, tol=tol,
                                          noise_floor=floor)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    direct = picardmod.direct_flow(problem, ctrl, t0, xi, T, num["dt"],
                                   num["particles"], seed + 303)
    dist = picardmod.flow_distance(res.flow, direct)
    ratios = res.geometric_ratios(floor)
    write_csv(out_dir / "picard_trace.csv", ["iteration", "sup_w2_residual"],
              list(enumerate(res.residuals, start=1)))
    results = {"noise_floor": floor, "residuals": res.residuals, "iterations": res.iterations,
               "supW2_vs_direct": dist, "geometric_ratios": ratios}
    checks = [
        {"name": "picard_converged", "passed": res.converged,
         "details": {"iterations": res.iterations}},
        {"name": "picard_direct_agreement", "passed": dist <= tol + floor,
         "details": {"supW2": dist, "limit": tol + floor}},
        {"name": "picard_contraction", "passed": all(r <= 0.7 for r in ratios),
         "details": {"ratios": ratios}},
    ]
    path = write_summary(out_dir, "picard", cfg, results, checks)
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED), path


def cmd_disintegration(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    bundle = build_problem(cfg)
    tbl = cfg.get("disintegration", {})
    n_outer = int(tbl.get("n_outer", 2000))
    n_inner = int(tbl.get("n_inner", 1))
    if isinstance(bundle, prb.CounterexampleProblem):
        problem, r, T = bundle.problem, bundle.t, bundle.T
        ctrl = ctl.counterexample_optimal_control(bundle.t, num["dt"])
        xi = sde.dirac(0.0)
    else:
        problem, T = bundle, float(num["horizon"])
        r = float(tbl.get("r", 0.5))
        ctrl_tbl = cfg.get("control")
        if not ctrl_tbl or ctrl_tbl.get("kind") != "sign_of_brownian":
            raise ConfigError("disintegration needs an open-loop path control")
        ctrl = build_control(ctrl_tbl, num["dt"], problem)
        xi = build_initial(cfg)
    rep = picardmod.disintegration_check(problem, ctrl, r, xi, T, num["dt"],
                                         n_outer, n_inner, num["seed"])
    results = {
        "w2_pooled_direct": rep.w2_pooled_direct,
        "w1_pooled_direct": rep.w1_pooled_direct,
        "noise_floor": rep.noise_floor,
        "group_second_moment_gap": rep.group_second_moment_gap,
    }
    checks = [{"name": "pooled_vs_direct", "passed": rep.within_noise,
               "details": {"w2": rep.w2_pooled_direct, "limit": 2 * rep.noise_floor}}]
    if isinstance(bundle, prb.CounterexampleProblem):
        w1_target = wasserstein1(rep.pooled_terminal, bundle.nu_hat)
        results["w1_pooled_vs_target"] = w1_target
        checks.append({"name": "pooled_vs_target_mixture", "passed": w1_target <= 0.02,
                       "details": {"w1": w1_target, "tol": 0.02}})
    path = write_summary(out_dir, "disintegration", cfg, results, checks)
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED), path


def cmd_hjb_residual(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg)
    if isinstance(problem, prb.CounterexampleProblem):
        raise ConfigError("hjb-residual needs an infinite-horizon problem")
    tbl = cfg.get("hjb", {})
    candidate_id = tbl.get("candidate", "lq-oracle")
    if candidate_id == "lq-oracle":
        if problem.label != "lq":
            raise ConfigError("candidate 'lq-oracle' applies to the lq family only")
        ref = prb.lq_reference(_lq_spec_from(cfg.get("problem", {}), problem))
        cand = hjbmod.lq_candidate_value(ref)
    elif candidate_id == "constant":
        cand = hjbmod.constant_candidate(float(tbl.get("value", 0.0)))
    else:
        raise ConfigError(f"unknown candidate id {candidate_id!r}")
    n_probes = int(tbl.get("probes", 20))
    atoms = int(tbl.get("atoms", 64))
    tolerance = float(tbl.get("tolerance", 1e-3))
    gen = rng.stream(num["seed"], "probe")
    rows = []
    for k in range(n_probes):
        mu = EmpiricalMeasure.from_points(
            0.6 * gen.standard_normal((atoms, problem.d)) + 0.3 * gen.standard_normal())
        rows.append((k, hjbmod.hjb_residual(problem, cand, mu, derivative="fd")))
    write_csv(out_dir / "hjb_residuals.csv", ["probe", "residual"], rows)
    worst = max(abs(r) for _, r in rows)
    results = {"max_abs_residual": worst, "candidate": candidate_id,
               "probes": n_probes, "atoms": atoms}
    checks = [{"name": "hjb_residual", "passed": worst <= tolerance,
               "details": {"max_abs_residual": worst, "tolerance": tolerance}}]
    path = write_summary(out_dir, "hjb-residual", cfg, results, checks)
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED), path


def cmd_lq_benchmark(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg) if "problem" in cfg else prb.lq_problem()
    if getattr(problem, "label", "") != "lq":
        raise ConfigError("lq-benchmark needs problem.family = 'lq'")
    spec = _lq_spec_from(cfg.get("problem", {}), problem)
    ref = prb.lq_reference(spec)
    xi = build_initial(cfg)
    dt, N, seed = num["dt"], num["particles"], num["seed"]
    T = float(num["horizon"])

    # oracle cross-validation: Riccati vs numerical policy search
    k1, k2, v_search = prb.lq_policy_search(spec)
    v_ref_probe = ref.k_var * 1.0 + ref.k_mean * 1.0 + ref.c
    oracle_gap = abs(v_search - v_ref_probe)

    # Monte Carlo closure at the oracle feedback
    fb = ctl.linear_feedback(ref.k1, ref.k2, label="oracle")
    est = gv.estimate_gain(problem, fb, 0.0, xi, T, dt, N, seed)
    x0 = xi.sampler(rng.uniforms(seed, N))
    mu0 = EmpiricalMeasure.from_points(x0)
    v_oracle = ref.value(mu0)
    mc_tol = 2.0 * (est.mc_stderr + est.tail_bound + gv.dt_bias_allowance(dt, T))
    mc_gap = abs(est.value - v_oracle)

    # HJB residual closure
    cand = hjbmod.lq_candidate_value(ref)
    gen = rng.stream(seed, "probe")
    worst = 0.0
    for _ in range(20):
        mu = EmpiricalMeasure.from_points(
            0.6 * gen.standard_normal((64, 1)) + 0.3 * gen.standard_normal())
        worst = max(worst, abs(hjbmod.hjb_residual(problem, cand, mu, derivative="fd")))

    results = {
        "riccati": {"k_var": ref.k_var, "k_mean": ref.k_mean, "c": ref.c,
                    "k1": ref.k1, "k2": ref.k2},
        "policy_search": {"k1": k1, "k2": k2, "value": v_search},
        "oracle_cross_gap": oracle_gap,
        "mc_value": est.value, "oracle_value": v_oracle,
        "mc_gap": mc_gap, "mc_tolerance": mc_tol,
        "max_abs_hjb_residual": worst,
    }
    checks = [
        {"name": "two_oracles_agree", "passed": oracle_gap <= 1e-4,
         "details": {"gap": oracle_gap, "tol": 1e-4}},
        {"name": "mc_matches_oracle", "passed": mc_gap <= mc_tol,
         "details": {"gap": mc_gap, "tol": mc_tol}},
        {"name": "hjb_closure", "passed": worst <= 1e-3,
         "details": {"max_abs_residual": worst, "tol": 1e-3}},
    ]
    path = write_summary(out_dir, "lq-benchmark", cfg, results, checks)
    return (EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED), path


def cmd_validate(cfg: dict, out_dir: Path) -> tuple[int, Path]:
    num = cfg["numerics"]
    problem = build_problem(cfg)
    if isinstance(problem, prb.CounterexampleProblem):
        problem = problem.problem
    tbl = cfg.get("validate", {})
    rep = prb.validate_hypotheses(problem, samples=int(tbl.get("samples", 200)),
                                  seed=num["seed"])
    results = {
        "violations": [{"check": v.check, "lhs": v.lhs, "rhs": v.rhs, "witness": v.witness}
                       for v in rep.violations],
        "warnings": list(rep.warnings),
        "samples": rep.samples,
    }
    checks = [{"name": "hypotheses", "passed": rep.ok,
               "details": {"violation_count": len(rep.violations)}}]
    path = write_summary(out_dir, "validate", cfg, results, checks)
    return (EXIT_OK if rep.ok else EXIT_HYPOTHESIS), path


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "simulate": cmd_simulate,
    "gain": cmd_gain,
    "value": cmd_value,
    "invariance": cmd_invariance,
    "counterexample": cmd_counterexample,
    "picard": cmd_picard,
    "disintegration": cmd_disintegration,
    "hjb-residual": cmd_hjb_residual,
    "lq-benchmark": cmd_lq_benchmark,
    "validate": cmd_validate,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcontrol",
        description="Mean-field control experiments: simulation, values, structural checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="TOML config path")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--particles", type=int, default=None)
        sp.add_argument("--dt", type=float, default=None)
        sp.add_argument("--horizon", type=float, default=None)
        sp.add_argument("--out", type=str, default="out")
        sp.add_argument("--threads", type=int, default=None,
                        help="accepted for interface stability; results never depend on it")
        if name == "simulate":
            sp.add_argument("--dump-paths", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {
            "seed": args.seed, "particles": args.particles, "dt": args.dt,
            "horizon": args.horizon, "threads": args.threads,
        })
    except (ConfigError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out)
    fn = _COMMANDS[args.command]
    kwargs = {}
    if args.command == "simulate":
        kwargs["dump_paths"] = args.dump_paths
    try:
        code, summary_path = fn(cfg, out_dir, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except prb.HypothesisError as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except sde.BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ValueError as exc:
        # bad numerics in a config (off-grid times, infeasible tolerances)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(summary_path)
    return code


if __name__ == "__main__":
    sys.exit(main())
