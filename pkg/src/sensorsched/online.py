"""Repeated play with unknown detection probabilities.

The simulator holds the true instance; the learner only sees the pure
strategies played and the 0/1 detection bits of the sensors that watched
the intruder's path.  Regret is always measured on the true payoff matrix.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .payoff import (
    DENSE_LIMIT,
    GameInstance,
    ProductStrategy,
    check_simplex,
    column_payoffs,
    encode_joint,
    joint_strategy,
)
from .solvers import dwm_solve, solve_exact, solve_maxmin

POLICY_KINDS = ("true-ne", "uniform-simplex", "fixed-mixed", "fixed-pure")


def clip_estimate(p_hat_raw: float, p_min: float, p_max: float) -> float:
    """Project a raw estimate into [p_min, p_max]; no data gives the midpoint."""
    if p_hat_raw is None or math.isnan(p_hat_raw):
        return 0.5 * (p_min + p_max)
    return min(max(p_hat_raw, p_min), p_max)


@dataclass
class EstimatorState:
    p: int
    sample_sum: int = 0
    sample_count: int = 0
    per_sensor_sum: np.ndarray = None
    per_sensor_count: np.ndarray = None
    pair_counts: Counter = field(default_factory=Counter)  # (i, j, l) -> visits

    def __post_init__(self):
        if self.per_sensor_sum is None:
            self.per_sensor_sum = np.zeros(self.p, dtype=np.int64)
        if self.per_sensor_count is None:
            self.per_sensor_count = np.zeros(self.p, dtype=np.int64)

    def record(self, bits: list[np.ndarray], i: int, j: int) -> None:
        for l, b in enumerate(bits):
            k = int(b.sum())
            self.per_sensor_sum[l] += k
            self.per_sensor_count[l] += len(b)
            self.sample_sum += k
            self.sample_count += len(b)
            if len(b) > 0:
                self.pair_counts[(i, j, l)] += 1

    def pooled(self, p_min: float, p_max: float) -> float:
        raw = self.sample_sum / self.sample_count if self.sample_count else float("nan")
        return clip_estimate(raw, p_min, p_max)

    def per_sensor(self, bounds: np.ndarray) -> np.ndarray:
        out = np.empty(self.p)
        for l in range(self.p):
            c = self.per_sensor_count[l]
            raw = self.per_sensor_sum[l] / c if c else float("nan")
            out[l] = clip_estimate(raw, bounds[l, 0], bounds[l, 1])
        return out

    def count(self, i: int, j: int, l: int) -> int:
        return self.pair_counts.get((i, j, l), 0)


def draw_feedback(truth: GameInstance, i, j: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One Bernoulli(p_q) bit per covered node of path j, for every sensor q."""
    ks = joint_strategy(i, truth.p, truth.d).orientation_indices
    bits = []
    for q, k in enumerate(ks):
        v = int(truth.coverage[q, k, j])
        bits.append((rng.random(v) < truth.p_detect[q]).astype(np.int8))
    return bits


def estimate_matrix_homogeneous(template: GameInstance, p_hat: float) -> GameInstance:
    if not 0 < p_hat < 1:
        raise ValueError("p_hat must lie in (0, 1)")
    return template.with_p_detect(p_hat)


@dataclass
class IntruderPolicy:
    kind: str
    payload: object = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if self.kind in ("true-ne", "fixed-mixed"):
            self.payload = check_simplex(self.payload, name="intruder strategy")
        if self.kind == "fixed-pure":
            self.payload = int(self.payload)

    @classmethod
    def parse(cls, text: str, truth: GameInstance | None = None) -> "IntruderPolicy":
        """``ne``, ``random`` or ``fixed:<j>`` as used on the command line."""
        if text == "ne":
            if truth is None:
                raise ValueError("policy 'ne' needs the true instance")
            return cls.true_ne(truth)
        if text == "random":
            return cls("uniform-simplex")
        if text.startswith("fixed:"):
            return cls("fixed-pure", int(text.split(":", 1)[1]))
        raise ValueError(f"policy: unknown intruder policy {text!r}")

    @classmethod
    def true_ne(cls, truth: GameInstance) -> "IntruderPolicy":
        truth = truth.raw()
        if truth.dense_fits():
            y = solve_exact(truth).y_avg
        else:
            y = dwm_solve(truth, eps=1e-6).y_avg
        return cls("true-ne", y)

    @property
    def label(self) -> str:
        return {"true-ne": "ne", "uniform-simplex": "random"}.get(self.kind, f"{self.kind}")


def intruder_step(policy: IntruderPolicy, round: int, rng: np.random.Generator, n: int) -> tuple[np.ndarray, int]:
    """The intruder's mixed strategy for this round and a pure path drawn from it."""
    if policy.kind == "fixed-pure":
        if not 0 <= policy.payload < n:
            raise ValueError(f"fixed path {policy.payload} out of range")
        y = np.zeros(n)
        y[policy.payload] = 1.0
        return y, policy.payload
    if policy.kind == "uniform-simplex":
        e = rng.standard_exponential(n)
        y = e / e.sum()
    else:
        y = np.asarray(policy.payload, dtype=float)
    return y, int(rng.choice(n, p=y))


@dataclass
class SolverConfig:
    """How the learner solves its estimated game each round.

    ``inner="auto"`` uses the exact LP when the dense matrix fits and DWM to
    ``inner_eps`` otherwise.
    """

    inner: str = "auto"
    inner_eps: float = 1e-3
    dense_limit: int = DENSE_LIMIT
    vstar_eps: float = 1e-6

    def __post_init__(self):
        if self.inner not in ("auto", "exact", "dwm"):
            raise ValueError("inner: must be auto, exact or dwm")
        if self.inner_eps <= 0:
            raise ValueError("inner_eps: must be positive")


def _solve_inner(instance: GameInstance, cfg: SolverConfig):
    use_exact = cfg.inner == "exact" or (cfg.inner == "auto" and instance.dense_fits(cfg.dense_limit))
    if use_exact:
        return solve_exact(instance, cfg.dense_limit).x_avg
    return dwm_solve(instance, eps=cfg.inner_eps).x_avg


def game_value(truth: GameInstance, cfg: SolverConfig | None = None) -> float:
    cfg = cfg or SolverConfig()
    truth = truth.raw()
    if truth.dense_fits(cfg.dense_limit):
        return solve_exact(truth, cfg.dense_limit).value_estimate
    res = dwm_solve(truth, eps=cfg.vstar_eps / truth.normalized().payoff_range)
    return truth.normalized().unscale(res.value_estimate)


def _sample_joint(x, rng: np.random.Generator, d: int) -> int:
    if isinstance(x, ProductStrategy):
        return encode_joint(x.sample(rng), d)
    return int(rng.choice(len(x), p=x))


@dataclass
class OnlineTrace:
    t: np.ndarray
    joint: np.ndarray
    path: np.ndarray
    detections: np.ndarray  # (T, p) detected bits per sensor
    draws: np.ndarray  # (T, p) bits drawn per sensor
    p_hat: np.ndarray  # (T, p) estimates used in the round
    regret: np.ndarray
    V_star: float
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cumulative_regret = np.cumsum(self.regret)

    @property
    def T(self) -> int:
        return len(self.t)


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _homogeneous_bounds(truth: GameInstance) -> tuple[float, float]:
    return float(truth.p_bounds[:, 0].max()), float(truth.p_bounds[:, 1].min())


def run_homogeneous(
    truth: GameInstance,
    intruder: IntruderPolicy,
    T: int,
    seed: int = 0,
    solver_cfg: SolverConfig | None = None,
    fixed_estimate: float | None = None,
    record_strategies: bool = False,
) -> OnlineTrace:
    """Learn a single shared detection probability from bandit feedback.

    Each round: clip the pooled sample mean, solve the estimated game, play
    i_t from its equilibrium strategy against the intruder's j_t, and fold
    the detection bits back into the estimate.  `fixed_estimate` pins the
    estimate (test hook).  `record_strategies` keeps every round's x_t and
    y_t in ``trace.extra``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    cfg = solver_cfg or SolverConfig()
    truth = truth.raw()
    if not np.allclose(truth.p_detect, truth.p_detect[0], rtol=0, atol=0):
        raise ValueError("homogeneous run needs one detection probability shared by all sensors")
    p_lo, p_hi = _homogeneous_bounds(truth)
    V_star = game_value(truth, cfg)
    dense = truth.dense() if truth.dense_fits(cfg.dense_limit) else None
    fb_rng, def_rng, int_rng = _streams(seed)
    est = EstimatorState(truth.p)
    p, n = truth.p, truth.n

    rows = {k: np.empty(T, dtype=np.int64) for k in ("joint", "path")}
    det = np.zeros((T, p), dtype=np.int64)
    drw = np.zeros((T, p), dtype=np.int64)
    p_hat = np.empty((T, p))
    regret = np.empty(T)
    cache: dict[float, object] = {}
    xs, ys = [], []

    for t in range(T):
        ph = fixed_estimate if fixed_estimate is not None else est.pooled(p_lo, p_hi)
        if ph not in cache:
            cache.clear()
            cache[ph] = _solve_inner(estimate_matrix_homogeneous(truth, ph), cfg)
        x = cache[ph]
        y, j = intruder_step(intruder, t + 1, int_rng, n)
        i = _sample_joint(x, def_rng, truth.d)
        bits = draw_feedback(truth, i, j, fb_rng)
        est.record(bits, i, j)

        col = x @ dense if dense is not None and not isinstance(x, ProductStrategy) else column_payoffs(truth, x)
        regret[t] = float(col @ y) - V_star
        if record_strategies:
            xs.append(x)
            ys.append(y)
        rows["joint"][t], rows["path"][t] = i, j
        det[t] = [b.sum() for b in bits]
        drw[t] = [len(b) for b in bits]
        p_hat[t] = ph

    return OnlineTrace(
        t=np.arange(1, T + 1),
        joint=rows["joint"],
        path=rows["path"],
        detections=det,
        draws=drw,
        p_hat=p_hat,
        regret=regret,
        V_star=V_star,
        meta={
            "mode": "homogeneous",
            "instance": truth.name,
            "seed": seed,
            "policy": intruder.label,
            "p_bounds": [p_lo, p_hi],
            "inner": cfg.inner,
            "inner_eps": cfg.inner_eps,
        },
        extra={"x": xs, "y": ys} if record_strategies else {},
    )


def regret_bound_homogeneous(T: int, alpha: float, V_max: float, p_max: float, case: str = "ne") -> float:
    """High-probability cumulative regret bound for the homogeneous learner.

    ``case="ne"`` when the intruder plays an equilibrium of the true game,
    ``"non-ne"`` otherwise.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if T < 1:
        raise ValueError("T must be >= 1")
    coef = {"ne": 5.0, "non-ne": 2.0}[case] * math.sqrt(2.0)
    return coef * V_max / (1.0 - p_max) * math.sqrt(T * math.log(2.0 * T / alpha))


@dataclass
class UcbMatrix:
    """Optimistic payoff estimate: plug-in matrix plus confidence bonus.

    Kept dense because the bonus depends on per-joint-strategy visit counts.
    """

    mean: np.ndarray
    bonus: np.ndarray

    @property
    def upper(self) -> np.ndarray:
        return self.mean + self.bonus


def ucb_coefficients(truth: GameInstance) -> np.ndarray:
    """V_max,l / (1 - p_max,l) for every sensor."""
    vmax = truth.coverage.reshape(truth.p, -1).max(axis=1)
    return vmax / (1.0 - truth.p_bounds[:, 1])


def ucb_matrix(
    estimator: EstimatorState,
    template: GameInstance,
    delta: float,
    bonus_scale: float = 1.0,
    estimates: np.ndarray | None = None,
    counts: np.ndarray | None = None,
) -> UcbMatrix:
    """Plug-in matrix at the clipped per-sensor estimates plus the bonus
    sum_l C_l sqrt(log(2/delta) / (2 max(1, n_ijl))) over sensors that
    cover the (i, j) pair.

    `counts` may pass the (m, n, p) visit table directly instead of reading
    it from ``estimator.pair_counts``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    template = template.raw()
    p_hat = estimator.per_sensor(template.p_bounds) if estimates is None else np.asarray(estimates, dtype=float)
    mean = template.with_p_detect(p_hat).dense()
    Vj = template.joint_coverage()
    if counts is None:
        counts = np.zeros(Vj.shape, dtype=np.int64)
        for (i, j, l), c in estimator.pair_counts.items():
            counts[i, j, l] = c
    width = np.sqrt(math.log(2.0 / delta) / (2.0 * np.maximum(1, counts)))
    bonus = ((Vj > 0) * width * ucb_coefficients(template)).sum(axis=2) * bonus_scale
    return UcbMatrix(mean=mean, bonus=bonus)


def ucb_regret_bound(T: int, p: int, d: int, n_paths: int, V_bar_max: float, p_bar_max: float) -> float:
    size = p * d * n_paths
    if size < 2 or T < size:
        raise ValueError(f"need T >= p*d*|J| >= 2 (T={T}, p*d*|J|={size})")
    C = V_bar_max / (1.0 - p_bar_max)
    return 1.0 + C * p * math.sqrt(2.0 * d * n_paths * T * math.log(4.0 * T**2 * size))


def run_heterogeneous(
    truth: GameInstance,
    intruder: IntruderPolicy,
    T: int,
    seed: int = 0,
    delta: float | None = None,
    bonus_scale: float = 1.0,
    fixed_estimates: np.ndarray | None = None,
    record_strategies: bool = False,
) -> OnlineTrace:
    """Optimistic learning of per-sensor detection probabilities.

    The defender solves the bonus-augmented game each round, written as the
    max-min problem on the negated matrix.  `bonus_scale=0` together with
    `fixed_estimates` gives the plug-in learner at known parameters
    (test hook).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    truth = truth.raw()
    p, d, n = truth.dims
    size = p * d * n
    if T < size:
        warnings.warn(f"T={T} is below p*d*|J|={size}; the regret bound does not apply", stacklevel=2)
    if delta is None:
        delta = 1.0 / (2.0 * T**2 * size)
    A = truth.dense()
    V_star = solve_exact(truth).value_estimate
    Vj = truth.joint_coverage()
    coef = ucb_coefficients(truth)
    fb_rng, def_rng, int_rng = _streams(seed)
    est = EstimatorState(p)
    counts = np.zeros(Vj.shape, dtype=np.int64)
    visited = np.zeros(A.shape, dtype=bool)

    joint = np.empty(T, dtype=np.int64)
    path = np.empty(T, dtype=np.int64)
    det = np.zeros((T, p), dtype=np.int64)
    drw = np.zeros((T, p), dtype=np.int64)
    p_hat = np.empty((T, p))
    regret = np.empty(T)
    visit_bonus = np.zeros((T, p))
    visit_count = np.zeros((T, p), dtype=np.int64)
    min_excess = np.empty(T)
    optimistic = np.empty(T, dtype=bool)
    xs, ys = [], []

    for t in range(T):
        ph = est.per_sensor(truth.p_bounds) if fixed_estimates is None else np.asarray(fixed_estimates, dtype=float)
        ucb = ucb_matrix(est, truth, delta, bonus_scale, estimates=ph, counts=counts)
        upper = ucb.upper
        x, _, _ = solve_maxmin(-upper)
        y, j = intruder_step(intruder, t + 1, int_rng, n)
        i = int(def_rng.choice(len(x), p=x))

        covering = Vj[i, j] > 0
        visit_count[t] = counts[i, j]
        visit_bonus[t] = np.where(
            covering, coef * np.sqrt(math.log(2.0 / delta) / (2.0 * np.maximum(1, counts[i, j]))), 0.0
        ) * bonus_scale
        min_excess[t] = float((upper - ucb.mean).min())
        visited[i, j] = True
        optimistic[t] = bool(np.all(upper[visited] >= A[visited]))

        bits = draw_feedback(truth, i, j, fb_rng)
        est.record(bits, i, j)
        counts[i, j, covering] += 1

        regret[t] = float(x @ A @ y) - V_star
        if record_strategies:
            xs.append(x)
            ys.append(y)
        joint[t], path[t] = i, j
        det[t] = [b.sum() for b in bits]
        drw[t] = [len(b) for b in bits]
        p_hat[t] = ph

    return OnlineTrace(
        t=np.arange(1, T + 1),
        joint=joint,
        path=path,
        detections=det,
        draws=drw,
        p_hat=p_hat,
        regret=regret,
        V_star=V_star,
        meta={
            "mode": "heterogeneous",
            "instance": truth.name,
            "seed": seed,
            "policy": intruder.label,
            "delta": delta,
            "bonus_scale": bonus_scale,
        },
        extra={
            "visit_bonus": visit_bonus,
            "visit_count": visit_count,
            "min_bonus": min_excess,
            "optimistic": optimistic,
            "pair_counts": dict(est.pair_counts),
            **({"x": xs, "y": ys} if record_strategies else {}),
        },
    )


def regret_summary(trace: OnlineTrace, bound: float | None = None) -> dict:
    cumulative = np.cumsum(trace.regret)
    R_T = float(cumulative[-1]) if len(cumulative) else 0.0
    out = {
        "T": trace.T,
        "cumulative": cumulative,
        "R_T": R_T,
        "mean_regret": R_T / trace.T if trace.T else 0.0,
        "V_star": trace.V_star,
    }
    if bound is not None:
        out["bound"] = bound
        out["within_bound"] = R_T <= bound
    return out


__all__ = [
    "EstimatorState",
    "IntruderPolicy",
    "OnlineTrace",
    "SolverConfig",
    "UcbMatrix",
    "clip_estimate",
    "draw_feedback",
    "estimate_matrix_homogeneous",
    "game_value",
    "intruder_step",
    "regret_bound_homogeneous",
    "regret_summary",
    "run_heterogeneous",
    "run_homogeneous",
    "ucb_coefficients",
    "ucb_matrix",
    "ucb_regret_bound",
]
