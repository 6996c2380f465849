"""Experiment drivers: synthetic instances, solver benchmarks, regret studies,
and their CSV / SVG outputs."""

from __future__ import annotations

import io
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .environment import (
    EnvironmentConfig,
    build_coverage_tensor,
    build_sensors,
    enumerate_paths,
    load_grid_map,
    nine_room_map,
    parse_grid_map,
)
from .online import (
    IntruderPolicy,
    OnlineTrace,
    SolverConfig,
    regret_bound_homogeneous,
    run_heterogeneous,
    run_homogeneous,
    ucb_regret_bound,
)
from .payoff import DENSE_LIMIT, GameInstance, load_instance
from .solvers import dwm_solve, iterations_for_epsilon, solve_exact, wm_solve

SCHEMA_VERSION = 1
BENCH_COLUMNS = ("strategy_space", "exact_s", "wm_s", "dwm_s", "gap_exact", "gap_wm", "gap_dwm")
MODES = ("benchmark", "solve", "online-homogeneous", "online-heterogeneous", "generate")


def fmt(v) -> str:
    """Shortest round-trip text for numbers; '-' for absent cells."""
    if v is None:
        return "-"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- synthetic instances ------------------------------------------------------


@dataclass
class SyntheticSpec:
    m: int = 10
    n: int = 20
    v_range: tuple[int, int] = (10, 20)
    p_detect: float = 0.8
    p_bounds: tuple[float, float] = (0.5, 0.95)
    c_range: tuple[float, float] = (0.0, 0.0)
    r_range: tuple[float, float] = (0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.v_range
        if not (0 <= lo <= hi <= 1000):
            raise ValueError("v_range: must satisfy 0 <= lo <= hi <= 1000")
        if self.m < 1 or self.n < 1:
            raise ValueError("m, n: must be >= 1")
        a, b = self.p_bounds
        if not (0 < a <= self.p_detect <= b < 1):
            raise ValueError("p_bounds: need 0 < p_min <= p_detect <= p_max < 1")
        for name in ("c_range", "r_range"):
            lo_, hi_ = getattr(self, name)
            if lo_ > hi_:
                raise ValueError(f"{name}: lower end above upper end")


def regret_study_spec(seed: int = 0) -> SyntheticSpec:
    """10 x 20 game with V in [10, 20] and p = 0.8.

    Costs are nonzero: with c = r = 0 every estimated matrix is a positive
    multiple of the true one, so the learner would play the true equilibrium
    from round one and there would be no learning curve to speak of.
    """
    return SyntheticSpec(m=10, n=20, v_range=(10, 20), p_detect=0.8, c_range=(0.0, 8.0), r_range=(0.0, 8.0), seed=seed)


def generate_synthetic(spec: SyntheticSpec) -> GameInstance:
    """A single-sensor game whose m orientations are the defender's strategies."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.v_range
    V = rng.integers(lo, hi + 1, size=(spec.m, spec.n))
    c = rng.uniform(*spec.c_range, size=spec.m) if spec.c_range[1] > spec.c_range[0] else np.full(spec.m, spec.c_range[0])
    r = rng.uniform(*spec.r_range, size=spec.n) if spec.r_range[1] > spec.r_range[0] else np.full(spec.n, spec.r_range[0])
    return GameInstance(
        coverage=V[None],
        p_detect=[spec.p_detect],
        orientation_costs=c[None],
        path_costs=r,
        p_bounds=[spec.p_bounds],
        name=f"synthetic-{spec.m}x{spec.n}-s{spec.seed}",
        metadata={"synthetic": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}},
    )


def heterogeneous_fixture(seed: int = 0) -> GameInstance:
    """Two sensors, two orientations, four paths, V in 0..3, p_max = 0.9."""
    rng = np.random.default_rng(seed)
    while True:
        V = rng.integers(0, 4, size=(2, 2, 4))
        # every path seen by some orientation, every sensor useful somewhere
        if V.max(axis=(0, 1)).min() > 0 and V.reshape(2, -1).max(axis=1).min() > 0:
            break
    return GameInstance(
        coverage=V,
        p_detect=[0.6, 0.75],
        orientation_costs=rng.uniform(0.0, 1.0, size=(2, 2)),
        path_costs=rng.uniform(0.0, 1.0, size=4),
        p_bounds=[[0.3, 0.9], [0.3, 0.9]],
        name=f"hetero-2x2x4-s{seed}",
    )


def grid_instance(num_sensors: int, env=None, config: EnvironmentConfig | None = None, name: str | None = None) -> GameInstance:
    env = env if env is not None else parse_grid_map(nine_room_map())
    config = config or EnvironmentConfig()
    sensors = build_sensors(env, config, num_sensors)
    paths = enumerate_paths(
        env, config.num_paths, seed=config.path_seed, cost_scale=config.path_cost_scale,
        max_shortest=config.max_shortest_paths,
    )
    tensor = build_coverage_tensor(env, sensors, paths)
    inst = GameInstance.from_sensors(sensors, paths, tensor, name=name or f"grid-S{num_sensors}")
    return GameInstance(
        coverage=inst.coverage, p_detect=inst.p_detect, orientation_costs=inst.orientation_costs,
        path_costs=inst.path_costs, p_bounds=inst.p_bounds, name=inst.name,
        metadata={"sensors": [s.symbol for s in sensors], "paths": [list(map(list, pth.nodes)) for pth in paths]},
    )


# -- configuration ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    mode: str
    map_file: str | None = None
    instance_file: str | None = None
    synthetic: SyntheticSpec | None = None
    env_config: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    num_sensors: int = 2
    sensor_sweep: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8)
    eps: float = 1e-3
    iters: int | None = None
    beta: float | None = None
    repeats: int = 3
    exact_limit: int = DENSE_LIMIT
    wm_limit: int = DENSE_LIMIT
    T: int = 1000
    alpha: float = 0.05
    delta: float | None = None
    policies: tuple[str, ...] = ("ne", "random")
    seeds: int = 20
    master_seed: int = 0
    threads: int | None = None
    out_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode: must be one of {MODES}")
        sources = [s for s in (self.map_file, self.instance_file, self.synthetic) if s is not None]
        if len(sources) > 1:
            raise ValueError("instance source: give at most one of map, instance file, synthetic spec")
        if not self.eps > 0:
            raise ValueError("eps: must be > 0")
        if self.iters is not None and self.iters < 0:
            raise ValueError("iters: must be >= 0")
        if self.T < 1:
            raise ValueError("T: must be >= 1")
        if self.seeds < 1:
            raise ValueError("seeds: must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats: must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha: must lie in (0, 1)")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("delta: must lie in (0, 1)")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads: must be >= 1")
        for pol in self.policies:
            if pol not in ("ne", "random") and not (pol.startswith("fixed:") and pol[6:].isdigit()):
                raise ValueError(f"policy: unknown intruder policy {pol!r}")

    def environment(self):
        return load_grid_map(self.map_file) if self.map_file else parse_grid_map(nine_room_map())

    def instance(self, num_sensors: int | None = None) -> GameInstance:
        if self.instance_file:
            return load_instance(self.instance_file)
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic)
        if self.mode == "online-homogeneous" and self.map_file is None:
            return generate_synthetic(regret_study_spec(self.master_seed))
        if self.mode == "online-heterogeneous" and self.map_file is None:
            return heterogeneous_fixture(self.master_seed)
        return grid_instance(num_sensors or self.num_sensors, self.environment(), self.env_config)


# -- benchmark ----------------------------------------------------------------


def _timed(fn, repeats: int):
    times, res = [], None
    for _ in range(repeats):
        res = fn()
        times.append(res.wall_time)
    return statistics.median(times), res


def run_benchmark(config: ExperimentConfig, progress=None) -> list[dict]:
    """One row per sensor count; solvers that exceed their limits give None."""
    env = config.environment()
    rows = []
    for s in config.sensor_sweep:
        inst = grid_instance(s, env, config.env_config).normalized()
        T = config.iters if config.iters is not None else iterations_for_epsilon(config.eps, inst.p, inst.d)
        row = dict.fromkeys(BENCH_COLUMNS)
        row["strategy_space"] = f"{inst.m}x{inst.n}"
        if inst.dense_fits(config.exact_limit):
            row["exact_s"], r = _timed(lambda: solve_exact(inst, config.exact_limit), config.repeats)
            row["gap_exact"] = r.gap
        if inst.dense_fits(config.wm_limit):
            row["wm_s"], r = _timed(lambda: wm_solve(inst, T=T, beta=config.beta, limit=config.wm_limit), config.repeats)
            row["gap_wm"] = r.gap
        row["dwm_s"], r = _timed(lambda: dwm_solve(inst, T=T, beta=config.beta), config.repeats)
        row["gap_dwm"] = r.gap
        rows.append(row)
        if progress:
            progress(s, row)
    return rows


def benchmark_csv(rows: list[dict], eps: float | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# sensorsched-bench v{SCHEMA_VERSION}\n")
    buf.write("# times are wall-clock seconds (median of repeats); gaps are exploitability on the normalized game\n")
    if eps is not None:
        buf.write(f"# eps={fmt(eps)}\n")
    buf.write(",".join(BENCH_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(fmt(row.get(c)) for c in BENCH_COLUMNS) + "\n")
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[str], list[dict]]:
    """(comment lines, header, rows) from one of our CSV files."""
    comments, header, rows = [], None, []
    for line in text.splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append(dict(zip(header, line.split(","))))
    return comments, header or [], rows


# -- online studies -----------------------------------------------------------


def _policy_for(text: str, truth: GameInstance, y_star: np.ndarray | None) -> IntruderPolicy:
    if text == "ne" and y_star is not None:
        return IntruderPolicy("true-ne", y_star)
    return IntruderPolicy.parse(text, truth)


def _one_run(args):
    mode, truth, policy, T, seed, extra = args
    if mode == "online-homogeneous":
        return run_homogeneous(truth, policy, T, seed=seed, solver_cfg=extra.get("solver_cfg"))
    return run_heterogeneous(truth, policy, T, seed=seed, delta=extra.get("delta"))


def homogeneous_bound_curve(truth: GameInstance, T: int, alpha: float, case: str) -> np.ndarray:
    truth = truth.raw()
    V_max = float(truth.coverage.sum(axis=0).max()) if truth.p == 1 else float(truth.joint_coverage().sum(axis=2).max())
    p_max = float(truth.p_bounds[:, 1].min())
    return np.array([regret_bound_homogeneous(t, alpha, V_max, p_max, case) for t in range(1, T + 1)])


def heterogeneous_bound_curve(truth: GameInstance, T: int) -> np.ndarray:
    """Bound evaluated at every prefix t that satisfies its own precondition."""
    p, d, n = truth.dims
    V_bar = float(truth.coverage.max())
    p_bar = float(truth.p_bounds[:, 1].max())
    size = p * d * n
    return np.array([ucb_regret_bound(t, p, d, n, V_bar, p_bar) if t >= size else np.nan for t in range(1, T + 1)])


@dataclass
class OnlineResult:
    instance: GameInstance
    mode: str
    T: int
    traces: dict  # policy -> list[OnlineTrace]
    bounds: dict  # policy -> bound curve

    def curve(self, policy: str) -> tuple[np.ndarray, np.ndarray]:
        cum = np.array([tr.cumulative_regret for tr in self.traces[policy]])
        return cum.mean(axis=0), cum.std(axis=0)


def run_online_experiment(config: ExperimentConfig) -> OnlineResult:
    """All seeded runs for every configured intruder policy.

    Run k uses the seed sequence (master_seed, k), so results do not depend
    on the number of workers.
    """
    truth = config.instance().raw()
    mode = config.mode
    if mode not in ("online-homogeneous", "online-heterogeneous"):
        raise ValueError("mode: online experiment needs an online mode")
    y_star = solve_exact(truth).y_avg if "ne" in config.policies else None
    extra = {"solver_cfg": SolverConfig(inner_eps=config.eps)} if mode == "online-homogeneous" else {"delta": config.delta}
    jobs, keys = [], []
    for pol in config.policies:
        policy = _policy_for(pol, truth, y_star)
        for k in range(config.seeds):
            jobs.append((mode, truth, policy, config.T, (config.master_seed, k), extra))
            keys.append(pol)
    workers = config.threads or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    traces: dict[str, list[OnlineTrace]] = {pol: [] for pol in config.policies}
    for pol, tr in zip(keys, results):
        traces[pol].append(tr)
    bounds = {}
    for pol in config.policies:
        if mode == "online-homogeneous":
            bounds[pol] = homogeneous_bound_curve(truth, config.T, config.alpha, "ne" if pol == "ne" else "non-ne")
        else:
            bounds[pol] = heterogeneous_bound_curve(truth, config.T)
    return OnlineResult(instance=truth, mode=mode, T=config.T, traces=traces, bounds=bounds)


def trace_csv(trace: OnlineTrace, bound: np.ndarray | None = None) -> str:
    p = trace.detections.shape[1]
    buf = io.StringIO()
    buf.write(f"# sensorsched-trace v{SCHEMA_VERSION}\n")
    for key in sorted(trace.meta):
        buf.write(f"# {key}={json.dumps(trace.meta[key], default=str)}\n")
    buf.write(f"# V_star={fmt(trace.V_star)}\n")
    if bound is not None:
        buf.write(f"# bound_T={fmt(float(bound[-1]))}\n")
    cols = ["t", "i", "j"] + [f"det_{q}" for q in range(p)] + [f"draws_{q}" for q in range(p)]
    cols += [f"p_hat_{q}" for q in range(p)] + ["regret", "cum_regret"]
    buf.write(",".join(cols) + "\n")
    for k in range(trace.T):
        vals = [trace.t[k], trace.joint[k], trace.path[k], *trace.detections[k], *trace.draws[k], *trace.p_hat[k]]
        vals += [trace.regret[k], trace.cumulative_regret[k]]
        buf.write(",".join(fmt(v) for v in vals) + "\n")
    return buf.getvalue()


def curve_csv(result: OnlineResult) -> str:
    buf = io.StringIO()
    buf.write(f"# sensorsched-regret v{SCHEMA_VERSION}\n")
    buf.write(f"# mode={result.mode} instance={result.instance.name} T={result.T}\n")
    buf.write("policy,t,mean_cum_regret,std_cum_regret,bound\n")
    for pol in result.traces:
        mean, std = result.curve(pol)
        b = result.bounds[pol]
        for t in range(result.T):
            bt = None if math.isnan(b[t]) else float(b[t])
            buf.write(f"{pol},{t + 1},{fmt(float(mean[t]))},{fmt(float(std[t]))},{fmt(bt)}\n")
    return buf.getvalue()


# -- SVG ----------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_chart_svg(series: dict, title: str, xlabel: str, ylabel: str, logy: bool = False, width: int = 640, height: int = 400) -> str:
    """Self-contained SVG line chart.  `series` maps label -> (x, y[, dashed])."""
    ml, mr, mt, mb = 70, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    pts = []
    for val in series.values():
        x, y = np.asarray(val[0], float), np.asarray(val[1], float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
        pts.append((x[ok], np.log10(y[ok]) if logy else y[ok]))
    allx = np.concatenate([p[0] for p in pts]) if pts else np.array([0.0, 1.0])
    ally = np.concatenate([p[1] for p in pts]) if pts else np.array([0.0, 1.0])
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + pw / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{_esc(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        ylab = f"{10 ** fy:.3g}" if logy else f"{fy:.4g}"
        out.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{fx:.4g}</text>')
        out.append(f'<text x="{ml - 6}" y="{sy(fy) + 3:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{ylab}</text>')
        out.append(f'<line x1="{ml}" y1="{sy(fy):.1f}" x2="{ml + pw}" y2="{sy(fy):.1f}" stroke="#dddddd"/>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{_esc(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>'
    )
    for k, ((label, val), (x, y)) in enumerate(zip(series.items(), pts)):
        color = _COLORS[k % len(_COLORS)]
        dash = ' stroke-dasharray="6 4"' if len(val) > 2 and val[2] else ""
        if x.size:
            d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{d}"/>')
        ly = mt + 14 + 18 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly + 4}" font-family="sans-serif" font-size="11">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def regret_svg(result: OnlineResult, with_bounds: bool = True) -> str:
    t = np.arange(1, result.T + 1)
    series = {}
    for pol in result.traces:
        mean, _ = result.curve(pol)
        series[f"R_T ({pol})"] = (t, mean)
    if with_bounds:
        for pol, b in result.bounds.items():
            series[f"bound ({pol})"] = (t, b, True)
    return line_chart_svg(series, f"cumulative regret, {result.instance.name}", "T", "cumulative regret")


def benchmark_svg(rows: list[dict]) -> str:
    x = np.arange(len(rows), dtype=float) + 1
    series = {}
    for col, label in (("exact_s", "exact LP"), ("wm_s", "WM"), ("dwm_s", "DWM")):
        y = np.array([np.nan if r.get(col) is None else r[col] for r in rows], dtype=float)
        series[label] = (x, y)
    return line_chart_svg(series, "solver wall time", "row (" + ", ".join(r["strategy_space"] for r in rows) + ")", "seconds", logy=True)


# -- output -------------------------------------------------------------------


def ensure_out_dir(path) -> FsPath:
    out = FsPath(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"out: cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"out: output directory {out} is not writable")
    return out


def write_online_outputs(result: OnlineResult, out_dir, fmt_: str = "both") -> list[FsPath]:
    out = ensure_out_dir(out_dir)
    written = []
    if fmt_ in ("csv", "both"):
        for pol, traces in result.traces.items():
            tag = pol.replace(":", "")
            for k, tr in enumerate(traces):
                f = out / f"trace_{tag}_seed{k}.csv"
                f.write_text(trace_csv(tr, result.bounds[pol]))
                written.append(f)
        f = out / "regret.csv"
        f.write_text(curve_csv(result))
        written.append(f)
    if fmt_ in ("svg", "both"):
        f = out / "regret.svg"
        f.write_text(regret_svg(result))
        written.append(f)
    return written


def write_benchmark_outputs(rows: list[dict], out_dir, fmt_: str = "both", eps: float | None = None) -> list[FsPath]:
    out = ensure_out_dir(out_dir)
    written = []
    if fmt_ in ("csv", "both"):
        f = out / "bench.csv"
        f.write_text(benchmark_csv(rows, eps))
        written.append(f)
    if fmt_ in ("svg", "both") and rows:
        f = out / "bench.svg"
        f.write_text(benchmark_svg(rows))
        written.append(f)
    return written
