"""Command-line entry point: ``sensorsched <verb> [flags]``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .environment import load_environment_config
from .experiments import (
    ExperimentConfig,
    ensure_out_dir,
    regret_study_spec,
    run_benchmark,
    run_online_experiment,
    write_benchmark_outputs,
    write_online_outputs,
)
from .payoff import ProductStrategy, save_instance
from .solvers import dwm_solve, solve_exact, wm_solve

OUT_ENV = "SENSORSCHED_OUT"
DEFAULT_OUT = "sensorsched-out"


class CliError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _policy(text):
    if text in ("ne", "random") or (text.startswith("fixed:") and text[6:].isdigit()):
        return text
    raise argparse.ArgumentTypeError("expected ne, random or fixed:<j>")


def _sweep(text):
    try:
        vals = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma-separated list of integers") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("sensor counts must be >= 1")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sensorsched", description="Sensor scheduling games: solvers, benchmarks and online learning.")
    sub = ap.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--map", help="grid map file (default: bundled nine-room map)")
    common.add_argument("--config", help="environment config JSON")
    common.add_argument("--instance", help="serialized instance JSON (instead of --map)")
    common.add_argument("--sensors", type=_positive_int, default=2, help="number of sensors taken from the map")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--format", choices=("csv", "svg", "both"), default="both")
    common.add_argument("--threads", type=_positive_int, default=None, help="worker processes (default: CPU count)")

    g = sub.add_parser("generate", parents=[common], help="write an instance JSON")
    g.add_argument("--synthetic", action="store_true", help="10x20 synthetic regret-study instance instead of a grid")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default="instance")

    s = sub.add_parser("solve", parents=[common], help="solve one instance")
    s.add_argument("--method", choices=("dwm", "wm", "exact"), default="dwm")
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--iters", type=int, default=None, help="iteration count (overrides --eps)")
    s.add_argument("--beta", type=float, default=None)

    b = sub.add_parser("bench", parents=[common], help="solver timing table over sensor counts")
    b.add_argument("--sweep", type=_sweep, default=(2, 3, 4, 5, 6, 7, 8))
    b.add_argument("--eps", type=float, default=1e-3)
    b.add_argument("--iters", type=int, default=None)
    b.add_argument("--repeats", type=_positive_int, default=3)
    b.add_argument("--wm-limit", type=_positive_int, default=None, help="largest m*n for which WM runs")
    b.add_argument("--exact-limit", type=_positive_int, default=None, help="largest m*n for the exact LP")

    for verb, helptext in (("online-hom", "homogeneous-sensor learning"), ("online-het", "heterogeneous-sensor UCB learning")):
        o = sub.add_parser(verb, parents=[common], help=helptext)
        o.add_argument("--iters", type=_positive_int, default=1000 if verb == "online-hom" else 2000, help="horizon T")
        o.add_argument("--seeds", type=_positive_int, default=20)
        o.add_argument("--seed", type=int, default=0, help="master seed")
        o.add_argument("--policy", type=_policy, action="append", help="intruder policy; repeatable (default: ne and random)")
        o.add_argument("--eps", type=float, default=1e-3, help="inner solver tolerance when the exact LP is not used")
        o.add_argument("--alpha", type=float, default=0.05)
        o.add_argument("--delta", type=float, default=None)
    return ap


def _out_dir(args) -> str:
    return args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT


def _config(args, mode: str, **extra) -> ExperimentConfig:
    if args.map and args.instance:
        raise CliError("instance source: give either --map or --instance, not both")
    env_cfg = load_environment_config(args.config) if args.config else None
    kw = dict(
        mode=mode,
        map_file=args.map,
        instance_file=args.instance,
        num_sensors=args.sensors,
        threads=args.threads,
        out_dir=_out_dir(args),
    )
    if env_cfg is not None:
        kw["env_config"] = env_cfg
    kw.update(extra)
    return ExperimentConfig(**kw)


def _jsonable(obj):
    if isinstance(obj, ProductStrategy):
        return {"marginals": obj.marginals.tolist()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj))


def cmd_generate(args) -> int:
    synthetic = regret_study_spec(args.seed) if args.synthetic else None
    cfg = _config(args, "generate", synthetic=synthetic, master_seed=args.seed)
    inst = cfg.instance()
    out = ensure_out_dir(cfg.out_dir) / f"{args.name}.json"
    save_instance(inst, out)
    print(out)
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args, "solve", eps=args.eps, iters=args.iters, beta=args.beta)
    inst = cfg.instance().normalized()
    if args.method == "exact":
        res = solve_exact(inst)
    elif args.method == "wm":
        res = wm_solve(inst, T=cfg.iters, eps=None if cfg.iters is not None else cfg.eps, beta=cfg.beta)
    else:
        res = dwm_solve(inst, T=cfg.iters, eps=None if cfg.iters is not None else cfg.eps, beta=cfg.beta)
    report = {
        "instance": inst.name,
        "dims": {"p": inst.p, "d": inst.d, "n": inst.n},
        "method": res.method,
        "iterations": res.iterations,
        "beta": res.beta,
        "gap": res.gap,
        "value_normalized": res.value_estimate,
        "value_raw": inst.unscale(res.value_estimate),
        "x": res.x_avg,
        "y": res.y_avg,
        "wall_time": res.wall_time,
    }
    out = ensure_out_dir(cfg.out_dir) / "solve.json"
    out.write_text(json.dumps(report, default=_jsonable, indent=1) + "\n")
    print(f"{res.method}: gap={res.gap!r} value={report['value_raw']!r} iterations={res.iterations} -> {out}")
    return 0


def cmd_bench(args) -> int:
    extra = dict(sensor_sweep=args.sweep, eps=args.eps, iters=args.iters, repeats=args.repeats)
    if args.wm_limit:
        extra["wm_limit"] = args.wm_limit
    if args.exact_limit:
        extra["exact_limit"] = args.exact_limit
    if args.instance:
        raise CliError("instance: bench sweeps grid instances; use --map")
    cfg = _config(args, "benchmark", **extra)

    def progress(s, row):
        print(f"|S|={s}: " + " ".join(f"{k}={v!r}" for k, v in row.items()), file=sys.stderr)

    rows = run_benchmark(cfg, progress=progress)
    for f in write_benchmark_outputs(rows, cfg.out_dir, args.format, cfg.eps):
        print(f)
    return 0


def cmd_online(args, mode: str) -> int:
    cfg = _config(
        args,
        mode,
        T=args.iters,
        seeds=args.seeds,
        master_seed=args.seed,
        policies=tuple(args.policy or ("ne", "random")),
        eps=args.eps,
        alpha=args.alpha,
        delta=args.delta,
    )
    result = run_online_experiment(cfg)
    for pol in result.traces:
        mean, _ = result.curve(pol)
        print(f"{pol}: mean R_T={float(mean[-1])!r} bound={float(result.bounds[pol][-1])!r}", file=sys.stderr)
    for f in write_online_outputs(result, cfg.out_dir, args.format):
        print(f)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "generate":
            return cmd_generate(args)
        if args.verb == "solve":
            return cmd_solve(args)
        if args.verb == "bench":
            return cmd_bench(args)
        if args.verb == "online-hom":
            return cmd_online(args, "online-homogeneous")
        return cmd_online(args, "online-heterogeneous")
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
