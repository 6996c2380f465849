import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sensorsched.experiments import generate_synthetic, heterogeneous_fixture, regret_study_spec
from sensorsched.online import (
    EstimatorState,
    IntruderPolicy,
    OnlineTrace,
    SolverConfig,
    clip_estimate,
    draw_feedback,
    estimate_matrix_homogeneous,
    game_value,
    intruder_step,
    regret_bound_homogeneous,
    regret_summary,
    run_heterogeneous,
    run_homogeneous,
    ucb_matrix,
    ucb_regret_bound,
)
from sensorsched.payoff import GameInstance
from sensorsched.solvers import solve_exact


@pytest.fixture(scope="module")
def study():
    return generate_synthetic(regret_study_spec(0))


@pytest.fixture(scope="module")
def hetero():
    return heterogeneous_fixture(0)


def pennies():
    return GameInstance(coverage=[[[1, 0], [0, 1]]], p_detect=[0.5], orientation_costs=[[0, 0]], path_costs=[0, 0], p_bounds=[[0.1, 0.9]])


# -- estimator ----------------------------------------------------------------


def test_clip_examples():
    assert clip_estimate(0.7, 0.5, 0.9) == 0.7
    assert clip_estimate(0.1, 0.5, 0.9) == 0.5
    assert clip_estimate(1.0, 0.5, 0.9) == 0.9
    assert clip_estimate(float("nan"), 0.5, 0.9) == pytest.approx(0.7)


@given(raw=st.floats(0, 1), lo=st.floats(0.01, 0.5), width=st.floats(0.01, 0.48), truth_frac=st.floats(0, 1))
def test_clipping_safety(raw, lo, width, truth_frac):
    hi = lo + width
    truth = lo + truth_frac * width
    c = clip_estimate(raw, lo, hi)
    assert lo <= c <= hi
    if lo <= raw <= hi:
        assert c == raw
        assert (c >= truth) == (raw >= truth)


def test_estimator_records_bits():
    est = EstimatorState(2)
    est.record([np.array([1, 0, 1]), np.array([], dtype=np.int8)], 3, 1)
    assert est.sample_sum == 2 and est.sample_count == 3
    assert est.count(3, 1, 0) == 1 and est.count(3, 1, 1) == 0
    assert est.pooled(0.1, 0.9) == pytest.approx(2 / 3)
    np.testing.assert_allclose(est.per_sensor(np.array([[0.1, 0.9], [0.2, 0.6]])), [2 / 3, 0.4])


def test_feedback_shape(hetero):
    rng = np.random.default_rng(0)
    bits = draw_feedback(hetero, 2, 1, rng)
    ks = np.unravel_index(2, (2, 2))
    assert [len(b) for b in bits] == [hetero.coverage[q, k, 1] for q, k in enumerate(ks)]


def test_estimate_matrix(study):
    est = estimate_matrix_homogeneous(study, 0.7)
    np.testing.assert_allclose(est.dense(), study.coverage[0] * math.log(0.3) + study.orientation_costs[0][:, None] - study.path_costs)
    with pytest.raises(ValueError):
        estimate_matrix_homogeneous(study, 1.0)


# -- intruder -----------------------------------------------------------------


def test_fixed_pure():
    rng = np.random.default_rng(0)
    pol = IntruderPolicy.parse("fixed:3")
    for t in range(5):
        y, j = intruder_step(pol, t + 1, rng, 6)
        assert j == 3 and y[3] == 1.0 and y.sum() == 1.0


def test_uniform_simplex_mean():
    rng = np.random.default_rng(1)
    pol = IntruderPolicy("uniform-simplex")
    ys = np.array([intruder_step(pol, t, rng, 5)[0] for t in range(100000)])
    assert np.all(np.abs(ys.mean(axis=0) - 0.2) < 0.01)
    assert np.allclose(ys.sum(axis=1), 1.0)


def test_true_ne_pennies():
    pol = IntruderPolicy.true_ne(pennies())
    np.testing.assert_allclose(pol.payload, [0.5, 0.5], atol=1e-12)


def test_policy_parse_errors():
    with pytest.raises(ValueError, match="policy"):
        IntruderPolicy.parse("sometimes")
    with pytest.raises(ValueError):
        IntruderPolicy("nope")


# -- homogeneous loop ---------------------------------------------------------


def test_known_parameter_zero_regret(study):
    pol = IntruderPolicy.true_ne(study)
    tr = run_homogeneous(study, pol, 50, seed=3, fixed_estimate=0.8)
    assert np.all(tr.regret >= -1e-9)
    assert np.all(np.abs(tr.regret) <= 1e-9)


def test_homogeneous_rejects():
    with pytest.raises(ValueError):
        run_homogeneous(heterogeneous_fixture(0), IntruderPolicy("uniform-simplex"), 10)
    with pytest.raises(ValueError):
        run_homogeneous(generate_synthetic(regret_study_spec(0)), IntruderPolicy("uniform-simplex"), 0)


def test_first_round_uses_midpoint(study):
    tr = run_homogeneous(study, IntruderPolicy("uniform-simplex"), 3, seed=0)
    assert tr.p_hat[0, 0] == pytest.approx(0.5 * (0.5 + 0.95))
    assert tr.meta["p_bounds"] == [0.5, 0.95]


def test_perturbation_bound(study):
    tr = run_homogeneous(study, IntruderPolicy("uniform-simplex"), 200, seed=1)
    A = study.dense()
    V_max = study.coverage.max()
    p_max = study.p_bounds[0, 1]
    for ph in np.unique(tr.p_hat[:, 0]):
        err = np.abs(estimate_matrix_homogeneous(study, ph).dense() - A).max()
        assert err <= V_max * abs(ph - 0.8) / (1 - p_max) + 1e-12


def test_hoeffding_coverage(study):
    """Raw estimates fall inside the Hoeffding width for at least 95% of seeds."""
    eta, T, hits = 0.05, 100, 0
    pol = IntruderPolicy("uniform-simplex")
    for seed in range(100):
        tr = run_homogeneous(study, pol, T, seed=seed, fixed_estimate=0.8)
        N = tr.draws.sum()
        k_bar = N / T
        p_raw = tr.detections.sum() / N
        hits += abs(p_raw - 0.8) <= math.sqrt(math.log(2 / eta) / (2 * k_bar * T))
    assert hits >= 95


def test_determinism(study, hetero):
    pol = IntruderPolicy("uniform-simplex")
    a = run_homogeneous(study, pol, 40, seed=(5, 2))
    b = run_homogeneous(study, pol, 40, seed=(5, 2))
    for f in ("joint", "path", "detections", "draws", "p_hat", "regret"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    c = run_heterogeneous(hetero, pol, 40, seed=9)
    d = run_heterogeneous(hetero, pol, 40, seed=9)
    for f in ("joint", "path", "detections", "regret"):
        np.testing.assert_array_equal(getattr(c, f), getattr(d, f))
    e = run_homogeneous(study, pol, 40, seed=(5, 3))
    assert not np.array_equal(a.path, e.path)


def test_dwm_inner_solver(study):
    cfg = SolverConfig(inner="dwm", inner_eps=0.01)
    tr = run_homogeneous(study, IntruderPolicy.true_ne(study), 5, seed=0, solver_cfg=cfg, fixed_estimate=0.8)
    # inner tolerance 0.01 on the normalized scale
    assert np.all(np.abs(tr.regret) <= 0.01 * study.normalized().payoff_range)


def test_game_value(study):
    assert game_value(study) == pytest.approx(solve_exact(study).value_estimate)


# -- bounds -------------------------------------------------------------------


def test_homogeneous_bound_values():
    v = regret_bound_homogeneous(1000, 0.05, 20, 0.9, "ne")
    assert v == pytest.approx(145579.0832028837400654, rel=1e-12)
    assert v == pytest.approx(1.456e5, rel=1e-3)
    assert regret_bound_homogeneous(1000, 0.05, 20, 0.9, "non-ne") == pytest.approx(0.4 * v, rel=1e-15)
    Ts = [regret_bound_homogeneous(T, 0.05, 20, 0.9) for T in (1, 10, 100, 1000)]
    assert all(a < b for a, b in zip(Ts, Ts[1:]))
    alphas = [regret_bound_homogeneous(100, a, 20, 0.9) for a in (0.01, 0.05, 0.2, 0.5)]
    assert all(a > b for a, b in zip(alphas, alphas[1:]))
    with pytest.raises(ValueError):
        regret_bound_homogeneous(10, 1.0, 20, 0.9)


def test_ucb_bound_values():
    assert ucb_regret_bound(2000, 2, 2, 4, 3, 0.9) == pytest.approx(47227.59481564947610522, rel=1e-12)
    T = 10**6
    r = ucb_regret_bound(4 * T, 2, 4, 50, 3, 0.9) / ucb_regret_bound(T, 2, 4, 50, 3, 0.9)
    assert abs(r - 2) / 2 < 0.05
    r = ucb_regret_bound(T, 4, 4, 50, 3, 0.9) / ucb_regret_bound(T, 2, 4, 50, 3, 0.9)
    assert 2.0 <= r <= 2.2
    with pytest.raises(ValueError):
        ucb_regret_bound(10, 2, 2, 4, 3, 0.9)


# -- UCB matrix ---------------------------------------------------------------


def test_ucb_example():
    tpl = GameInstance(coverage=[[[2]]], p_detect=[0.5], orientation_costs=[[0.0]], path_costs=[0.0], p_bounds=[[0.1, 0.9]])
    ucb = ucb_matrix(EstimatorState(1), tpl, 0.5, estimates=[0.5], counts=np.full((1, 1, 1), 8))
    assert ucb.mean[0, 0] == pytest.approx(2 * math.log(0.5), abs=1e-12)
    assert ucb.bonus[0, 0] == pytest.approx(5.887050112577373455, rel=1e-12)
    assert ucb.upper[0, 0] == pytest.approx(4.500755751457482836, rel=1e-12)
    far = ucb_matrix(EstimatorState(1), tpl, 0.5, estimates=[0.5], counts=np.full((1, 1, 1), 10**14))
    assert far.bonus[0, 0] < 1e-5
    zero = ucb_matrix(EstimatorState(1), tpl, 0.5, estimates=[0.5], counts=np.zeros((1, 1, 1), dtype=int))
    assert zero.bonus[0, 0] == pytest.approx(20 * math.sqrt(math.log(4) / 2))
    with pytest.raises(ValueError):
        ucb_matrix(EstimatorState(1), tpl, 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), delta=st.floats(1e-6, 0.99))
def test_ucb_dominates_mean(seed, delta):
    rng = np.random.default_rng(seed)
    tpl = heterogeneous_fixture(seed % 5)
    counts = rng.integers(0, 50, size=(tpl.m, tpl.n, tpl.p))
    ucb = ucb_matrix(EstimatorState(tpl.p), tpl, delta, estimates=rng.uniform(0.3, 0.9, tpl.p), counts=counts)
    assert np.all(ucb.upper >= ucb.mean)


# -- heterogeneous loop -------------------------------------------------------


def test_degenerate_ucb_matches_exact(hetero):
    pol = IntruderPolicy.true_ne(hetero)
    tr = run_heterogeneous(hetero, pol, 30, seed=0, bonus_scale=0.0, fixed_estimates=hetero.p_detect, record_strategies=True)
    x_star = solve_exact(hetero).x_avg
    A = hetero.dense()
    for x in tr.extra["x"]:
        assert (x @ A).max() == pytest.approx((x_star @ A).max(), abs=1e-9)
    assert np.all(np.abs(tr.regret) <= 1e-9)


def test_pair_counts_recount(hetero):
    tr = run_heterogeneous(hetero, IntruderPolicy("uniform-simplex"), 300, seed=4)
    Vj = hetero.joint_coverage()
    expected = sum(int((Vj[i, j] > 0).sum()) for i, j in zip(tr.joint, tr.path))
    assert sum(tr.extra["pair_counts"].values()) == expected
    for (i, j, l), c in tr.extra["pair_counts"].items():
        assert c == int(np.sum((tr.joint == i) & (tr.path == j))) and Vj[i, j, l] > 0


def test_short_horizon_warns(hetero):
    with pytest.warns(UserWarning, match="T=5"):
        run_heterogeneous(hetero, IntruderPolicy("uniform-simplex"), 5)


def test_bonus_shrinks_with_visits(hetero):
    tr = run_heterogeneous(hetero, IntruderPolicy("uniform-simplex"), 400, seed=2)
    seen = {}
    for t in range(tr.T):
        for l in range(hetero.p):
            key = (tr.joint[t], tr.path[t], l)
            b, n = tr.extra["visit_bonus"][t, l], tr.extra["visit_count"][t, l]
            if key in seen:
                pb, pn = seen[key]
                assert n >= pn and b <= pb + 1e-15
            seen[key] = (b, n)
    assert np.all(tr.extra["min_bonus"] >= 0)


def test_ucb_optimism_rate():
    """A-tilde dominates the true A on visited pairs in most rounds."""
    inst = heterogeneous_fixture(1)
    pol = IntruderPolicy("uniform-simplex")
    flags = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(200):
            flags.append(run_heterogeneous(inst, pol, 30, seed=seed, delta=0.1).extra["optimistic"])
    assert np.concatenate(flags).mean() >= 0.85


# -- summaries ----------------------------------------------------------------


def _trace(regret):
    T = len(regret)
    z = np.zeros((T, 1))
    return OnlineTrace(np.arange(1, T + 1), np.zeros(T, int), np.zeros(T, int), z, z, z, np.asarray(regret, float), 0.0)


def test_regret_summary_basic():
    assert regret_summary(_trace([0.0] * 10))["R_T"] == 0.0
    s = regret_summary(_trace([0.25] * 40), bound=5.0)
    assert s["R_T"] == pytest.approx(10.0) and s["within_bound"] is False


def test_regret_recompute(study):
    tr = run_homogeneous(study, IntruderPolicy("uniform-simplex"), 60, seed=7, record_strategies=True)
    A = study.dense()
    V = solve_exact(study).value_estimate
    again = np.cumsum([x @ A @ y - V for x, y in zip(tr.extra["x"], tr.extra["y"])])
    np.testing.assert_allclose(regret_summary(tr)["cumulative"], again, atol=1e-9, rtol=0)
