"""Command-line front end.

    ehaoi solve       --lambda 0.06 --p 0.8 --battery 2 --delta-max 64 --m auto
    ehaoi simulate    --policy pomdp,greedy --slots 1000000 --episodes 10
    ehaoi sweep       --sweep lambda=0.02,0.04,0.08 --policy pomdp,greedy
    ehaoi multi       --sensors 20,50 --gamma 0.15 --policy relax-truncate,greedy-N
    ehaoi policy-dump --m 32

Settings come from built-in defaults, then ``--config file.json`` (flat keys),
then explicit flags.  Exit status: 0 ok, 2 configuration error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from . import io
from .belief import choose_M
from .experiments import SINGLE_POLICIES, evaluate_multi, evaluate_point, solve_instance
from .model import ModelParams
from .multisensor import POLICY_KINDS, MultiModel, cycling_rates
from .simulator import EpisodeConfig, simulate, trace_episode, write_trace_csv
from .solver import ConvergenceError, NumericalError, bellman_residual

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

DEFAULTS = {
    "lambda": 0.06, "p": 0.8, "battery": 2, "delta_max": 64,
    "m": "auto", "m_auto_eps": 1e-4, "m_cap": None, "theta": 1e-7,
    "max_iter": 100_000, "tau": 1.0,
    "seed": 0, "slots": 1_000_000, "episodes": 10, "warmup": None,
    "policy": None, "sweep": None, "trace": 0,
    "sensors": "100", "gamma": "0.15", "budget": None, "tol": 1e-3,
    "workers": 1, "out": ".", "timing": False,
}

SWEEPABLE = {"lambda", "p", "battery", "delta_max"}


class ConfigError(ValueError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--config", help="JSON file with flat keys (flags override it)")
    g.add_argument("--lambda", dest="lambda", type=float)
    g.add_argument("--p", type=float)
    g.add_argument("--battery", type=int)
    g.add_argument("--delta-max", dest="delta_max", type=int)
    g.add_argument("--m", help='truncation depth, or "auto"')
    g.add_argument("--m-auto-eps", dest="m_auto_eps", type=float)
    g.add_argument("--m-cap", dest="m_cap", type=int)
    g.add_argument("--theta", type=float)
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--tau", type=float, help="aperiodicity mixing weight in (0, 1]")
    s = common.add_argument_group("simulation")
    s.add_argument("--seed", type=int)
    s.add_argument("--slots", type=int)
    s.add_argument("--episodes", type=int)
    s.add_argument("--warmup", type=int)
    s.add_argument("--policy", help="comma-separated policy names")
    s.add_argument("--trace", type=int, help="write the first N slots of episode 0 (simulate)")
    s.add_argument("--sweep", help="axis spec, e.g. lambda=0.02,0.04")
    s.add_argument("--sensors", help="K, or comma-separated list (multi)")
    s.add_argument("--gamma", help="normalised budget N/K, or list (multi)")
    s.add_argument("--budget", type=int, help="absolute budget N (multi, overrides --gamma)")
    s.add_argument("--tol", type=float, help="bisection rate tolerance (multi)")
    s.add_argument("--workers", type=int)
    s.add_argument("--out", help="output directory")
    s.add_argument("--timing", action="store_const", const=True, help="add wall-clock time to JSON")

    parser = argparse.ArgumentParser(prog="ehaoi", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"ehaoi {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True)
    for name, help_ in [("solve", "solve the belief-MDP, write policy/value CSV and summary JSON"),
                        ("simulate", "Monte-Carlo estimate of policy costs"),
                        ("sweep", "solve + simulate over a parameter grid"),
                        ("multi", "multi-sensor relax-then-truncate experiments"),
                        ("policy-dump", "grid view of the optimal policy")]:
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS) - {"mode"})
        if unknown:
            raise ConfigError(f"unknown config key: {unknown[0]!r}")
        loaded.pop("mode", None)
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["mode"] = args.mode
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    def need(cond, key, what):
        if not cond:
            raise ConfigError(f"invalid {key!r}: {what} (got {cfg[key]!r})")

    for key in ("lambda", "p", "theta", "m_auto_eps", "tol", "tau"):
        need(isinstance(cfg[key], (int, float)) and not isinstance(cfg[key], bool), key, "must be a number")
    for key in ("battery", "delta_max", "seed", "slots", "episodes", "max_iter", "workers", "trace"):
        need(isinstance(cfg[key], int) and not isinstance(cfg[key], bool), key, "must be an integer")
    need(cfg["lambda"] > 0, "lambda", "harvesting rate must be positive (no energy ever arrives otherwise)")
    need(cfg["lambda"] <= 1, "lambda", "must be a probability")
    need(0 <= cfg["p"] <= 1, "p", "must be a probability")
    need(cfg["battery"] >= 1, "battery", "must be >= 1")
    need(cfg["delta_max"] >= 2, "delta_max", "must be >= 2")
    need(cfg["theta"] > 0, "theta", "must be positive")
    need(0 < cfg["m_auto_eps"] < 1, "m_auto_eps", "must lie in (0, 1)")
    need(0 < cfg["tau"] <= 1, "tau", "must lie in (0, 1]")
    need(cfg["slots"] >= 1 and cfg["episodes"] >= 1, "slots", "slots and episodes must be positive")
    need(cfg["workers"] >= 1, "workers", "must be >= 1")
    if cfg["warmup"] is not None:
        need(isinstance(cfg["warmup"], int) and 0 <= cfg["warmup"] < cfg["slots"], "warmup",
             "must be an integer in [0, slots)")
    m = cfg["m"]
    if isinstance(m, str) and m != "auto":
        try:
            cfg["m"] = m = int(m)
        except ValueError:
            raise ConfigError(f"invalid 'm': must be an integer or \"auto\" (got {m!r})") from None
    if m != "auto":
        need(isinstance(m, int) and m >= 1, "m", "must be >= 1")
    if cfg["m_cap"] is not None:
        need(isinstance(cfg["m_cap"], int) and cfg["m_cap"] >= 1, "m_cap", "must be >= 1")
    pol = cfg["policy"]
    if pol is not None:
        names = pol.split(",") if isinstance(pol, str) else list(pol)
        allowed = POLICY_KINDS if cfg["mode"] == "multi" else SINGLE_POLICIES
        bad = [n for n in names if n not in allowed]
        need(not bad, "policy", f"unknown policy {bad[0] if bad else ''!r}; choose from {', '.join(allowed)}")
        cfg["policy"] = ",".join(names)
    if cfg["mode"] == "sweep":
        need(isinstance(cfg["sweep"], str) and "=" in cfg["sweep"], "sweep", "expected name=v1,v2,...")
        name, _ = cfg["sweep"].split("=", 1)
        need(name in SWEEPABLE, "sweep", f"axis must be one of {sorted(SWEEPABLE)}")
    if cfg["mode"] == "multi":
        try:
            ks = _int_list(cfg["sensors"])
            gs = _float_list(cfg["gamma"])
        except ValueError:
            raise ConfigError("invalid 'sensors'/'gamma': expected comma-separated numbers") from None
        need(all(k >= 1 for k in ks), "sensors", "must be >= 1")
        need(all(0 < g <= 1 for g in gs), "gamma", "must lie in (0, 1]")
        if cfg["budget"] is not None:
            need(isinstance(cfg["budget"], int) and cfg["budget"] >= 1, "budget", "must be >= 1")


def _int_list(x):
    return [int(v) for v in str(x).split(",")] if not isinstance(x, list) else [int(v) for v in x]


def _float_list(x):
    return [float(v) for v in str(x).split(",")] if not isinstance(x, list) else [float(v) for v in x]


def model_params(cfg: dict, **override) -> ModelParams:
    c = {**cfg, **override}
    M = c["m"]
    if M == "auto":
        M = choose_M(c["lambda"], c["battery"], c["m_auto_eps"])
        if c["m_cap"] is not None:
            M = min(M, c["m_cap"])
    try:
        return ModelParams(float(c["lambda"]), float(c["p"]), int(c["battery"]), int(c["delta_max"]),
                           int(M), float(c["theta"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def episode_config(cfg: dict) -> EpisodeConfig:
    return EpisodeConfig(cfg["slots"], cfg["episodes"], cfg["seed"], cfg["warmup"])


def _recorded(cfg):
    # output location and parallelism do not change results
    return {k: v for k, v in cfg.items() if k not in ("out", "workers")}


def _solve_kw(cfg):
    return {"max_iter": cfg["max_iter"], "tau": cfg["tau"]}


def _policies(cfg, default):
    return cfg["policy"].split(",") if cfg["policy"] else list(default)


def cmd_solve(cfg, out: Path) -> dict:
    params = model_params(cfg)
    t = time.perf_counter()
    inst = solve_instance(params, with_exact=False, **_solve_kw(cfg))
    elapsed = time.perf_counter() - t
    res = inst.result
    payload = {"c_star": res.c_star, "M": params.M, "states": inst.kernel.n,
               "iterations": res.iterations, "span_final": res.span_final,
               "c_bounds": list(res.c_bounds), "bellman_residual": bellman_residual(res, inst.kernel)}
    if cfg["timing"]:
        payload["seconds"] = elapsed
    io.write_json(out / "solve.json", payload, _recorded(cfg))
    io.write_csv(out / "policy.csv", ["row", "col", "r", "delta", "action"], io.policy_rows(res.table()), _recorded(cfg))
    io.write_csv(out / "values.csv", ["row", "col", "r", "delta", "h"], io.value_rows(res.h, res.shape), _recorded(cfg))
    return payload


def cmd_simulate(cfg, out: Path) -> dict:
    params = model_params(cfg)
    names = _policies(cfg, ["pomdp"])
    inst = solve_instance(params, with_exact=any(n in ("mle", "exact") for n in names), **_solve_kw(cfg))
    conf = episode_config(cfg)
    t = time.perf_counter()
    estimates = {n: simulate(inst.policy(n), params, conf).as_dict() for n in names}
    payload = {"M": params.M, "c_star": inst.result.c_star, "estimates": estimates}
    if cfg["timing"]:
        payload["seconds"] = time.perf_counter() - t
    io.write_json(out / "simulate.json", payload, _recorded(cfg))
    if cfg["trace"]:
        rows = trace_episode(inst.policy(names[0]), params, conf, min(cfg["trace"], conf.slots))
        write_trace_csv(rows, out / "trace.csv")
    return payload


def _sweep_job(args):
    cfg, name, value = args
    key = {"lambda": "lambda", "p": "p", "battery": "battery", "delta_max": "delta_max"}[name]
    cast = int if key in ("battery", "delta_max") else float
    params = model_params(cfg, **{key: cast(value)})
    return evaluate_point(params, _policies(cfg, SINGLE_POLICIES), episode_config(cfg), **_solve_kw(cfg))


def cmd_sweep(cfg, out: Path) -> dict:
    name, values = cfg["sweep"].split("=", 1)
    values = values.split(",")
    jobs = [(cfg, name, v) for v in values]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    cols = ["param", "value", "policy", "M", "mean", "stderr", "command_rate", "solver_cost"]
    rows = [[name, v] + [r[c] if r[c] is not None else "" for c in cols[2:]]
            for v, point in zip(values, results) for r in point]
    io.write_csv(out / "sweep.csv", cols, rows, _recorded(cfg))
    return {"rows": len(rows)}


def cmd_multi(cfg, out: Path) -> dict:
    names = _policies(cfg, POLICY_KINDS)
    conf = episode_config(cfg)
    rows = []
    cols = ["K", "gamma", "N", "policy", "mean", "stderr", "commands_per_slot", "max_commands",
            "mu_star", "relaxed_cost"]
    for K in _int_list(cfg["sensors"]):
        for gamma in _float_list(cfg["gamma"]):
            kw = dict(p=float(cfg["p"]), B=int(cfg["battery"]), delta_max=int(cfg["delta_max"]),
                      M=None if cfg["m"] == "auto" else int(cfg["m"]), m_eps=cfg["m_auto_eps"],
                      m_cap=cfg["m_cap"] or int(cfg["delta_max"]), theta=max(cfg["theta"], 1e-6))
            if cfg["budget"] is not None:
                model = MultiModel(cycling_rates(K), N=cfg["budget"], **kw)
            else:
                model = MultiModel.from_gamma(K, gamma, **kw)
            for r in evaluate_multi(model, names, conf, cfg["tol"]):
                rows.append([r[c] if r[c] is not None else "" for c in cols])
            if cfg["budget"] is not None:
                break
    io.write_csv(out / "multi.csv", cols, rows, _recorded(cfg))
    io.write_json(out / "multi.json", {"rows": [dict(zip(cols, r)) for r in rows]}, _recorded(cfg))
    return {"rows": len(rows)}


def cmd_policy_dump(cfg, out: Path) -> dict:
    params = model_params(cfg)
    inst = solve_instance(params, with_exact=False, **_solve_kw(cfg))
    columns, rows = io.policy_grid(inst.result.table())
    io.write_csv(out / "policy_grid.csv", columns, rows, _recorded(cfg))
    return {"M": params.M}


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "multi": cmd_multi, "policy-dump": cmd_policy_dump}


def run(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[cfg["mode"]](cfg, out)
    except ConfigError as exc:
        print(f"ehaoi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericalError) as exc:
        print(f"ehaoi: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(io._plain(summary), sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
