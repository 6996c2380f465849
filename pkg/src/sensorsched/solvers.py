"""Equilibrium solvers for the sensor-scheduling game.

All iterative solvers play the defender (row, minimizer) with multiplicative
weights against a pure best-responding intruder and return time-averaged
strategies.  Payoffs are taken on the normalized [0, 1] scale.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .payoff import (
    DENSE_LIMIT,
    GameInstance,
    ProductStrategy,
    column_payoffs,
    expected_row_payoff_min,
)


@dataclass
class DwmState:
    log_sigma: np.ndarray  # (p, d), defined up to a per-row constant
    beta: float
    round: int = 0

    @property
    def sigma(self) -> np.ndarray:
        w = np.exp(self.log_sigma - self.log_sigma.max(axis=1, keepdims=True))
        return w / w.sum(axis=1, keepdims=True)


@dataclass
class SolveResult:
    x_avg: np.ndarray | ProductStrategy
    y_avg: np.ndarray
    value_estimate: float
    gap: float
    iterations: int
    wall_time: float
    beta: float | None = None
    method: str = ""
    state: DwmState | None = None
    history: dict = field(default_factory=dict)


def dwm_beta(L_tilde: float, p: int, d: int) -> float:
    """Learning rate 1 / (1 + sqrt(2 p ln d / L_tilde))."""
    if L_tilde <= 0:
        raise ValueError("L_tilde must be positive")
    if d < 2:
        raise ValueError("need at least two orientations (ln d > 0)")
    return 1.0 / (1.0 + math.sqrt(2.0 * p * math.log(d) / L_tilde))


def epsilon_bound(T: int, L_tilde: float, p: int, d: int) -> float:
    if T < 1:
        raise ValueError("T must be >= 1")
    K = p * math.log(d)
    return math.sqrt(2.0 * L_tilde * K) / T + K / T


def iterations_for_epsilon(eps: float, p: int, d: int) -> int:
    """Smallest T with epsilon_bound(T, L_tilde=T) <= eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    K = p * math.log(d)
    if K == 0:
        return 1
    # K u^2 + sqrt(2K) u - eps <= 0 with u = T**-0.5
    u = (-math.sqrt(2 * K) + math.sqrt(2 * K + 4 * K * eps)) / (2 * K)
    T = max(1, math.ceil(1.0 / u**2))
    while T > 1 and epsilon_bound(T - 1, T - 1, p, d) <= eps:
        T -= 1
    while epsilon_bound(T, T, p, d) > eps:
        T += 1
    return T


def _schedule(p: int, d: int, T, eps, beta) -> tuple[int, float]:
    if T is None:
        if eps is None:
            raise ValueError("give either T or eps")
        T = iterations_for_epsilon(eps, p, d)
    if T < 0:
        raise ValueError("T must be >= 0")
    if beta is None:
        beta = dwm_beta(max(T, 1), p, d)
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return int(T), float(beta)


def exploitability_gap(instance: GameInstance, x, y) -> float:
    """max_j x^T A e_j - min_i e_i^T A y, without enumerating joint strategies."""
    upper = float(np.max(column_payoffs(instance, x)))
    lower, _ = expected_row_payoff_min(instance, y)
    return upper - lower


def _maxmin_lp(M: np.ndarray):
    # min_x max_j (x^T M)_j as an LP over (x, v); y from the constraint duals
    m, n = M.shape
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.hstack([M.T, -np.ones((n, 1))])
    A_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    bounds = [(0, None)] * m + [(None, None)]
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(n),
        A_eq=A_eq,
        b_eq=[1.0],
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = np.clip(res.x[:m], 0, None)
    y = np.clip(-res.ineqlin.marginals, 0, None)
    return x / x.sum(), y / y.sum()


def _polish(M: np.ndarray, x: np.ndarray, y: np.ndarray, tol: float = 1e-9):
    """Re-solve the equalizing system on the LP's supports."""
    rows = np.flatnonzero(x > tol)
    cols = np.flatnonzero(y > tol)
    k, l = len(rows), len(cols)
    # x_S^T M[S, T] = v, sum x_S = 1 ; M[S, T] y_T = v, sum y_T = 1
    Kx = np.zeros((l + 1, k + 1))
    Kx[:l, :k] = M[np.ix_(rows, cols)].T
    Kx[:l, k] = -1.0
    Kx[l, :k] = 1.0
    rhs = np.zeros(l + 1)
    rhs[l] = 1.0
    xs = np.linalg.lstsq(Kx, rhs, rcond=None)[0][:k]
    Ky = np.zeros((k + 1, l + 1))
    Ky[:k, :l] = M[np.ix_(rows, cols)]
    Ky[:k, l] = -1.0
    Ky[k, :l] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    ys = np.linalg.lstsq(Ky, rhs, rcond=None)[0][:l]
    if np.any(xs < 0) or np.any(ys < 0):
        return x, y
    x2 = np.zeros_like(x)
    y2 = np.zeros_like(y)
    x2[rows] = xs / xs.sum()
    y2[cols] = ys / ys.sum()
    return x2, y2


def _dense_gap(M, x, y) -> float:
    return float(np.max(x @ M) - np.min(M @ y))


def solve_matrix(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Equilibrium (x, y, value) of a dense game where the row player minimizes."""
    M = np.asarray(M, dtype=float)
    x, y = _maxmin_lp(M)
    gap = _dense_gap(M, x, y)
    if gap > 1e-12:
        x2, y2 = _polish(M, x, y)
        if _dense_gap(M, x2, y2) < gap:
            x, y = x2, y2
    return x, y, float(x @ M @ y)


def solve_maxmin(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Equilibrium of a game where the row player maximizes."""
    x, y, v = solve_matrix(-np.asarray(M, dtype=float))
    return x, y, -v


def solve_exact(instance: GameInstance, limit: int = DENSE_LIMIT) -> SolveResult:
    M = instance.dense(limit)
    start = time.perf_counter()
    x, y, value = solve_matrix(M)
    elapsed = time.perf_counter() - start
    return SolveResult(
        x_avg=x,
        y_avg=y,
        value_estimate=value,
        gap=exploitability_gap(instance, x, y),
        iterations=0,
        wall_time=elapsed,
        method="exact",
    )


def per_sensor_loss(instance: GameInstance, q: int, k: int, y, rescale: bool = True) -> float:
    """Loss of orientation k for sensor q against intruder mix y.

    Unscaled: A^q[k] . y - (r . y) / p.  Rescaled: shifted by the round's
    best orientation and divided by the game's payoff range, which puts it in
    [0, 1] without changing the induced strategy.
    """
    y = np.asarray(y, dtype=float)
    raw = instance.sub_matrices[q] @ y - (instance.path_costs @ y) / instance.p
    if not rescale:
        return float(raw[k])
    lo, hi = instance.raw_bounds
    return float((raw[k] - raw.min()) / (hi - lo))


def _normalized_sub_games(inst: GameInstance) -> np.ndarray:
    # An[q, k, j] with sum_q An[q, k_q, j] equal to the normalized A[i, j]
    lo, hi = inst.normalization
    p = inst.p
    return (inst.sub_matrices - inst.path_costs[None, None, :] / p - lo / p) / (hi - lo)


def dwm_solve(
    instance: GameInstance,
    beta: float | None = None,
    T: int | None = None,
    eps: float | None = None,
    record: bool = False,
    checkpoints: Sequence[int] = (),
) -> SolveResult:
    """Distributed weighted majority over per-sensor orientation weights.

    Each round the defender plays the product of the per-sensor marginals,
    the intruder best-responds with a pure path (lowest index on ties), and
    every sensor multiplies its weights by beta**loss.  Nothing of size d**p
    is ever formed.  The averaged defender strategy is returned as averaged
    marginals, which give exactly the averaged payoffs because the payoff is
    additive across sensors.
    """
    inst = instance.normalized()
    p, d, n = inst.dims
    T, beta = _schedule(p, d, T, eps, beta)
    An = _normalized_sub_games(inst)
    flat = An.reshape(p * d, n)
    # per-round update for response j: log-weights += ln(beta) * (loss - min loss)
    per_path = An.transpose(2, 0, 1)
    steps = math.log(beta) * (per_path - per_path.min(axis=2, keepdims=True))
    renorm_every = max(1, int(300.0 / max(-math.log(beta), 1e-300)))
    renorm_every = min(renorm_every, 4096)

    log_sigma = np.zeros((p, d))
    marg = np.full((p, d), 1.0 / d)
    marg_sum = np.zeros((p, d))
    responses = np.empty(T, dtype=np.int64)
    hist_marg = np.empty((T, p, d)) if record else None
    checkpoints = sorted(set(int(c) for c in checkpoints if 0 < c <= T))
    gaps_at = {}

    start = time.perf_counter()
    for t in range(T):
        j = int(np.argmax(marg.ravel() @ flat))
        responses[t] = j
        marg_sum += marg
        if record:
            hist_marg[t] = marg
        log_sigma += steps[j]
        if (t + 1) % renorm_every == 0:
            log_sigma -= log_sigma.max(axis=1, keepdims=True)
        w = np.exp(log_sigma)
        marg = w / w.sum(axis=1, keepdims=True)
        if checkpoints and t + 1 == checkpoints[0]:
            checkpoints.pop(0)
            gaps_at[t + 1] = _averaged_gap(inst, marg_sum, responses[: t + 1])
    elapsed = time.perf_counter() - start

    log_sigma -= log_sigma.max(axis=1, keepdims=True)
    if T == 0:
        x_avg = ProductStrategy.uniform(p, d)
        y_avg = np.full(n, 1.0 / n)
    else:
        x_avg = _product_from_sums(marg_sum)
        y_avg = np.bincount(responses, minlength=n) / T
    history = {"gaps": gaps_at}
    if record:
        history.update(marginals=hist_marg, responses=responses)
    return SolveResult(
        x_avg=x_avg,
        y_avg=y_avg,
        value_estimate=float(column_payoffs(inst, x_avg) @ y_avg),
        gap=exploitability_gap(inst, x_avg, y_avg),
        iterations=T,
        wall_time=elapsed,
        beta=beta,
        method="dwm",
        state=DwmState(log_sigma=log_sigma, beta=beta, round=T),
        history=history,
    )


def _product_from_sums(marg_sum: np.ndarray) -> ProductStrategy:
    return ProductStrategy(marg_sum / marg_sum.sum(axis=1, keepdims=True))


def _averaged_gap(inst: GameInstance, marg_sum: np.ndarray, responses: np.ndarray) -> float:
    y = np.bincount(responses, minlength=inst.n) / len(responses)
    return exploitability_gap(inst, _product_from_sums(marg_sum), y)


def wm_solve(
    instance: GameInstance,
    beta: float | None = None,
    T: int | None = None,
    eps: float | None = None,
    responses: Sequence[int] | None = None,
    record: bool = False,
    limit: int = DENSE_LIMIT,
) -> SolveResult:
    """Weighted majority over the full joint strategy set (dense).

    `responses` replays a fixed intruder path sequence instead of best
    responses; used to compare trajectories with :func:`dwm_solve`.
    """
    inst = instance.normalized()
    p, d, n = inst.dims
    if responses is not None and T is None:
        T = len(responses)
    T, beta = _schedule(p, d, T, eps, beta)
    M = inst.dense(limit)
    MT = np.ascontiguousarray(M.T)
    log_b = math.log(beta)
    m = M.shape[0]

    logw = np.zeros(m)
    x = np.full(m, 1.0 / m)
    x_sum = np.zeros(m)
    played = np.empty(T, dtype=np.int64)
    hist_x = np.empty((T, m)) if record else None

    start = time.perf_counter()
    for t in range(T):
        j = int(np.argmax(x @ M)) if responses is None else int(responses[t])
        played[t] = j
        x_sum += x
        if record:
            hist_x[t] = x
        logw += log_b * MT[j]
        w = np.exp(logw - logw.max())
        x = w / w.sum()
    elapsed = time.perf_counter() - start

    if T == 0:
        x_avg, y_avg = np.full(m, 1.0 / m), np.full(n, 1.0 / n)
    else:
        x_avg = x_sum / x_sum.sum()
        y_avg = np.bincount(played, minlength=n) / T
    history = {"responses": played}
    if record:
        history["x"] = hist_x
    return SolveResult(
        x_avg=x_avg,
        y_avg=y_avg,
        value_estimate=float(x_avg @ M @ y_avg),
        gap=exploitability_gap(inst, x_avg, y_avg),
        iterations=T,
        wall_time=elapsed,
        beta=beta,
        method="wm",
        history=history,
    )
