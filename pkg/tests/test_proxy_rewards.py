import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import betainc

from sc_lab import analyze, make_bandit, value_bundle
from sc_lab.errors import InvalidGrid, InvalidParameter, MissingReturn, ProxySuccessUnreachable
from sc_lab.proxy_rewards import (
    BetaBanditConfig,
    bandit_values,
    bernoulli_label,
    beta_tail,
    default_beta_bandit,
    default_thetas,
    proxy_conditioned_policy,
    proxy_decomposition,
    regularized_incomplete_beta,
    sample_beta_bandit,
    threshold_reward,
    threshold_sweep,
)
from sc_lab.sampling import TrajectorySet, sample_trajectories


def _beta_density_tail(theta, a, b):
    log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    f = lambda y: math.exp(log_norm + (a - 1) * math.log(y) + (b - 1) * math.log1p(-y))
    return quad(f, theta, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def test_beta_tail_examples():
    assert abs(beta_tail(0.3, 1, 1) - 0.7) < 1e-15
    assert abs(beta_tail(0.5, 0.37, 0.37) - 0.5) < 1e-14
    assert abs(beta_tail(0.9, 18, 2) - _beta_density_tail(0.9, 18, 2)) < 1e-10


@pytest.mark.parametrize("theta,a,b", [(0.1, 2.5, 3.0), (0.6, 0.5, 0.5), (0.97, 18, 2),
                                       (0.02, 0.3, 0.7), (0.5, 40, 45)])
def test_beta_tail_against_quadrature(theta, a, b):
    assert abs(beta_tail(theta, a, b) - _beta_density_tail(theta, a, b)) < 1e-10


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0.05, 60), st.floats(0.05, 60))
def test_incomplete_beta_against_scipy(x, a, b):
    assert abs(regularized_incomplete_beta(x, a, b) - betainc(a, b, x)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 30), st.floats(0.05, 30))
def test_beta_tail_monotone_with_fixed_ends(a, b):
    grid = np.linspace(0, 1, 101)
    tails = beta_tail(grid, a, b)
    assert tails[0] == 1.0 and tails[-1] == 0.0
    assert np.all(np.diff(tails) <= 1e-15)


@pytest.mark.parametrize("args", [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -2), (math.nan, 1, 1)])
def test_beta_tail_invalid(args):
    with pytest.raises(InvalidParameter):
        beta_tail(*args)


def _with_returns(y, seed=0):
    mdp, behavior = make_bandit([0.5], [1.0])
    t = sample_trajectories(mdp, behavior, len(y), seed)
    return TrajectorySet(t.states, t.actions, t.lengths, t.outcomes, t.substreams, seed,
                         t.policy_id, np.asarray(y, dtype=float))


def test_bernoulli_label_extremes():
    assert np.all(bernoulli_label(_with_returns(np.ones(1000)), 3).outcomes == 1)
    assert np.all(bernoulli_label(_with_returns(np.zeros(1000)), 3).outcomes == 0)


def test_bernoulli_label_rate_and_determinism():
    n = 10**5
    trajs = _with_returns(np.full(n, 0.3))
    lab = bernoulli_label(trajs, 17)
    rate = np.mean(lab.outcomes == 1)
    assert abs(rate - 0.3) <= 3 * math.sqrt(0.21 / n)
    np.testing.assert_array_equal(lab.outcomes, bernoulli_label(trajs, 17).outcomes)


def test_bernoulli_label_needs_returns():
    mdp, behavior = make_bandit([0.5], [1.0])
    with pytest.raises(MissingReturn):
        bernoulli_label(sample_trajectories(mdp, behavior, 5, 0), 1)


def test_faithful_reduction_preserves_mean():
    cfg = default_beta_bandit()
    trajs = sample_beta_bandit(cfg, 10**5, seed=4)
    lab = bernoulli_label(trajs, 5)
    r = (lab.outcomes == 1).astype(float)
    assert abs(r.mean() - trajs.returns.mean()) <= 4 * r.std(ddof=1) / math.sqrt(r.size)


def test_threshold_reward_examples():
    y = np.random.default_rng(0).beta(2, 3, size=1000)
    assert np.all(threshold_reward(_with_returns(y), 0.0).outcomes == 1)
    assert np.all(threshold_reward(_with_returns(y), 1.0).outcomes == 0)
    # ties fail
    assert np.all(threshold_reward(_with_returns(np.full(10, 0.5)), 0.5).outcomes == 0)


def test_threshold_reward_rate_matches_tail():
    cfg = BetaBanditConfig([18.0], [2.0], [1.0])
    n = 10**5
    trajs = sample_beta_bandit(cfg, n, seed=6)
    rate = np.mean(threshold_reward(trajs, 0.5).outcomes == 1)
    p = beta_tail(0.5, 18, 2)
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_proxy_conditioned_examples():
    mdp, behavior, true_vals = bandit_values([0.3, 0.6], [0.5, 0.5])
    _, _, all_succeed = bandit_values([1.0, 1.0], [0.5, 0.5])
    np.testing.assert_array_equal(proxy_conditioned_policy(mdp, behavior, all_succeed)[0], [0.5, 0.5])
    _, _, proxy = bandit_values([0.2, 0.8], [0.5, 0.5])
    np.testing.assert_allclose(proxy_conditioned_policy(mdp, behavior, proxy)[0], [0.2, 0.8], atol=1e-15)
    faithful = proxy_conditioned_policy(mdp, behavior, true_vals)
    assert faithful.max_abs_diff(analyze(mdp, behavior).conditioned) <= 1e-12


def test_proxy_unreachable():
    mdp, behavior, _ = bandit_values([0.3, 0.6], [0.5, 0.5])
    _, _, never = bandit_values([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(ProxySuccessUnreachable):
        proxy_conditioned_policy(mdp, behavior, never)


def test_decomposition_identity_proxy():
    mdp, behavior, vals = bandit_values([0.2, 0.5, 0.9], [0.3, 0.3, 0.4])
    rep = proxy_decomposition(mdp, behavior, vals, vals)
    assert abs(rep.ratio[0] - 1) < 1e-12 and abs(rep.alignment[0] - 1) < 1e-12
    assert rep.passed()


def test_decomposition_scaled_advantage():
    q = np.array([0.2, 0.5, 0.9])
    w = np.array([0.3, 0.3, 0.4])
    mdp, behavior, vals = bandit_values(q, w)
    # Q~ = V + c (Q - V) with c = 0.5 keeps probabilities in range and scales A by c
    _, _, proxy = bandit_values(vals.V[0] + 0.5 * (q - vals.V[0]), w)
    rep = proxy_decomposition(mdp, behavior, vals, proxy)
    assert abs(rep.alignment[0] - 1) < 1e-12
    assert abs(rep.ratio[0] - rep.influence_ratio[0]) < 1e-12


def test_decomposition_skips_flat_states():
    mdp, behavior, vals = bandit_values([0.4, 0.4], [0.5, 0.5])
    rep = proxy_decomposition(mdp, behavior, vals, vals)
    assert rep.states.size == 0 and 0 in rep.skipped


def test_decomposition_beta_bandit_high_threshold():
    cfg = default_beta_bandit()
    mdp, behavior, vals = bandit_values(cfg.means, cfg.behavior)
    _, _, proxy = bandit_values(beta_tail(0.8, cfg.alphas, cfg.betas), cfg.behavior)
    assert proxy_decomposition(mdp, behavior, vals, proxy).max_residual <= 1e-10


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_decomposition_random_bandits(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 8))
    w = rng.dirichlet(np.ones(k))
    mdp, behavior, vals = bandit_values(rng.uniform(0.05, 1, k), w)
    _, _, proxy = bandit_values(rng.uniform(0.05, 1, k), w)
    rep = proxy_decomposition(mdp, behavior, vals, proxy)
    # near-flat Q makes the literal pi+ . A a cancelling sum; allow for its rounding
    allowed = np.maximum(1e-10, 64 * np.finfo(float).eps * rep.condition * np.abs(rep.ratio))
    assert np.all(rep.residual <= allowed)


def test_decomposition_ill_conditioned_case_is_rounding():
    rng = np.random.default_rng(8986)
    k = int(rng.integers(2, 8))
    w = rng.dirichlet(np.ones(k))
    mdp, behavior, vals = bandit_values(rng.uniform(0.05, 1, k), w)
    _, _, proxy = bandit_values(rng.uniform(0.05, 1, k), w)
    rep = proxy_decomposition(mdp, behavior, vals, proxy)
    assert rep.condition[0] > 1000
    assert rep.residual[0] / rep.ratio[0] < 1e-12


def test_default_config_shape():
    cfg = default_beta_bandit()
    assert cfg.alphas.size == 100
    np.testing.assert_array_equal(cfg.alphas[:99], cfg.betas[:99])
    assert np.all((cfg.alphas[:99] >= 0.3) & (cfg.alphas[:99] <= 0.7))
    assert (cfg.alphas[99], cfg.betas[99]) == (18.0, 2.0)
    np.testing.assert_allclose(cfg.behavior, 0.01)


def test_sweep_zero_threshold_is_behavior():
    row = threshold_sweep(default_beta_bandit(), [0.0])[0]
    assert abs(row["proxy_improvement"]) < 1e-15


def test_sweep_shape():
    rows = threshold_sweep(default_beta_bandit())
    assert [r["theta"] for r in rows] == default_thetas().tolist()
    faithful = rows[0]["faithful_improvement"]
    proxy = np.array([r["proxy_improvement"] for r in rows])
    align = np.array([r["alignment"] for r in rows])
    assert faithful > 0
    assert np.any(proxy > faithful)
    assert np.any(proxy < 0)
    assert align[-1] < np.nanmax(align)


@pytest.mark.parametrize("grid", [[], [1.0], [-0.1, 0.5], [math.nan]])
def test_sweep_rejects_bad_grid(grid):
    with pytest.raises(InvalidGrid):
        threshold_sweep(default_beta_bandit(), grid)
