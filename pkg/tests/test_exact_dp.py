import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sc_lab import Mdp, Policy, action_influence, analyze, make_bandit, occupancy_pair, value_bundle
from sc_lab.errors import SuccessUnreachable
from sc_lab.exact_dp import success_conditioned_policy
from conftest import deterministic, layered, small_corpus
from oracles import enumerate_all

CORPUS = small_corpus()


@pytest.mark.parametrize("case", range(len(CORPUS)))
def test_matches_enumeration(case):
    mdp, behavior = CORPUS[case]
    oracle = enumerate_all(mdp, behavior)
    res = analyze(mdp, behavior)
    np.testing.assert_allclose(res.values.V, oracle["V"], atol=1e-12, rtol=0)
    for s in mdp.nonterminal:
        np.testing.assert_allclose(res.values.Q[s], oracle["Q"][s], atol=1e-12, rtol=0)
        if oracle["d_plus"][s] > 0:
            np.testing.assert_allclose(res.conditioned[s], oracle["conditioned"][s], atol=1e-12, rtol=0)
    np.testing.assert_allclose(res.occupancy.d, oracle["d"], atol=1e-12, rtol=0)
    np.testing.assert_allclose(res.occupancy.d_plus, oracle["d_plus"], atol=1e-12, rtol=0)
    np.testing.assert_allclose(res.influence.values, oracle["influence"], atol=1e-12, rtol=0)
    assert abs(res.values.rho - oracle["rho"]) < 1e-12


def test_two_arm_bandit_values(bandit):
    res = analyze(*bandit)
    np.testing.assert_allclose(res.conditioned[0], [0.495, 0.505], atol=1e-15)
    assert abs(res.values.rho - 0.5) < 1e-15
    assert abs(res.conditioned_values.rho - 0.50005) < 1e-15
    assert abs(res.improvement - 5e-5) < 1e-15
    assert abs(res.influence[0] - 1e-4) < 1e-15


def test_single_action_state_has_zero_influence():
    mdp, behavior = make_bandit([0.3, 0.9], [1.0, 0.0])
    assert action_influence(mdp, behavior, value_bundle(mdp, behavior))[0] == 0.0


def test_constant_q_has_zero_influence():
    mdp, behavior = make_bandit([0.4, 0.4, 0.4], [0.2, 0.3, 0.5])
    assert action_influence(mdp, behavior, value_bundle(mdp, behavior))[0] == pytest.approx(0.0, abs=1e-30)


def test_conditioned_needs_reachable_success():
    mdp, behavior = make_bandit([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(SuccessUnreachable):
        success_conditioned_policy(mdp, behavior, value_bundle(mdp, behavior))


def test_unreachable_state_gets_zero_occupancy():
    # state 1 is only reached through an action the behavior never takes
    mdp = Mdp(([[0, 0, 1.0, 0], [0, 1.0, 0, 0]], [[0, 0, 0.5, 0.5]], [], []),
              [1.0, 0, 0, 0], terminal_success=[2], terminal_failure=[3])
    behavior = Policy(([1.0, 0.0], [1.0], [], []))
    vals = value_bundle(mdp, behavior)
    occ = occupancy_pair(mdp, behavior, vals)
    assert occ.d[1] == 0.0 and occ.d_plus[1] == 0.0
    assert vals.V[1] == 0.5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_advantage_mean_zero_and_occupancy_balance(seed):
    mdp, behavior = layered(seed)
    vals = value_bundle(mdp, behavior)
    occ = occupancy_pair(mdp, behavior, vals)
    for s in mdp.nonterminal:
        assert abs(behavior[s] @ vals.A[s]) < 1e-13
    # success mass leaving the chain equals rho
    inflow = sum(occ.d[s] * (behavior[s] @ mdp.transitions[s][:, t])
                 for s in mdp.nonterminal for t in mdp.terminal_success)
    assert abs(inflow - vals.rho) < 1e-12
    assert abs(vals.rho - mdp.initial_dist @ vals.V) < 1e-14


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_influence_equals_chi2_of_conditioned(seed):
    from sc_lab.divergences import chi_squared
    mdp, behavior = layered(seed)
    res = analyze(mdp, behavior)
    for s in mdp.nonterminal:
        assert abs(chi_squared(res.conditioned[s], behavior[s]) - res.influence[s]) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_deterministic_mdps_solve(seed):
    mdp, behavior = deterministic(seed)
    assert mdp.is_deterministic()
    res = analyze(mdp, behavior)
    assert res.improvement >= -1e-12
