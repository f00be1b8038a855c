"""Exact values, occupancies, the success-conditioned policy and action-influence.

Everything here is a dense linear solve over the non-terminal states; there is
no sampling and no discounting. Values are success probabilities, so terminal
states are pinned to 1 (success) or 0 (failure).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConsistencyError, SolverFailure, SuccessUnreachable
from .mdp_core import Mdp, Policy, policy_matrix

RESIDUAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ValueBundle:
    """V, Q, A and rho for one (mdp, policy) pair.

    ``V`` has one entry per state (terminals included); ``Q`` and ``A`` are
    ragged tuples indexed like a Policy.
    """
    V: np.ndarray
    Q: tuple
    A: tuple
    rho: float


@dataclass(frozen=True, eq=False)
class OccupancyPair:
    d: np.ndarray
    d_plus: np.ndarray


@dataclass(frozen=True, eq=False)
class InfluenceProfile:
    values: np.ndarray  # zero at terminal states

    def __getitem__(self, s):
        return self.values[s]


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """LU with partial pivoting plus one step of iterative refinement."""
    if A.shape[0] == 0:
        return np.zeros(0)
    try:
        with np.errstate(all="raise"):
            lu = linalg.lu_factor(A, check_finite=True)
    except (linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise SolverFailure(f"LU factorisation failed: {exc}") from exc
    if np.any(np.diag(lu[0]) == 0.0):
        raise SolverFailure("singular system; the chain does not terminate")
    x = linalg.lu_solve(lu, b)
    x = x + linalg.lu_solve(lu, b - A @ x)
    if not np.all(np.isfinite(x)):
        raise SolverFailure("non-finite solution; the chain does not terminate")
    resid = np.abs(A @ x - b)
    if resid.max() > RESIDUAL_TOL * max(1.0, float(np.abs(x).max())):
        raise SolverFailure(f"residual {resid.max():.3e} exceeds {RESIDUAL_TOL}")
    return x


def value_bundle(mdp: Mdp, policy: Policy) -> ValueBundle:
    nt = mdp.nonterminal
    P = policy_matrix(mdp, policy)
    succ = mdp.success_mask()
    M = P[np.ix_(nt, nt)]
    b = P[np.ix_(nt, np.flatnonzero(succ))].sum(axis=1)
    V = succ.astype(np.float64)
    V[nt] = _solve(np.eye(nt.size) - M, b)
    Q, A = [], []
    for s in range(mdp.n_states):
        q = mdp.transitions[s] @ V
        Q.append(q)
        # against pi.Q rather than the solved V, so point-mass rows give exact zeros;
        # the second pass removes the rounding shift left by the first
        a = q - policy[s] @ q if q.size else q
        A.append(a - policy[s] @ a if q.size else a)
    rho = float(mdp.initial_dist @ V)
    return ValueBundle(V, tuple(Q), tuple(A), rho)


def occupancy_pair(mdp: Mdp, policy: Policy, values: ValueBundle) -> OccupancyPair:
    """Expected visit counts, unconditioned and conditioned on success.

    ``d`` solves ``d = mu + P_pi^T d`` on the non-terminal block (unnormalised).
    ``d_plus = V * d / rho``.
    """
    nt = mdp.nonterminal
    M = policy_matrix(mdp, policy)[np.ix_(nt, nt)]
    d = np.zeros(mdp.n_states)
    d[nt] = _solve(np.eye(nt.size) - M.T, mdp.initial_dist[nt])
    if values.rho <= 0.0:
        raise ZeroDivisionError("rho is zero; success-conditioned occupancy undefined")
    d_plus = values.V * d / values.rho
    return OccupancyPair(d, d_plus)


def success_conditioned_policy(mdp: Mdp, behavior: Policy, values: ValueBundle,
                               name: str = "conditioned") -> Policy:
    """Bayes posterior of the action given the state and eventual success.

    Rows are normalised by the Bellman value ``pi0 . Q``, which must agree
    with the solved ``V`` to 1e-12; rows are never renormalised after the fact.
    """
    rows = []
    unreachable = []
    for s in range(mdp.n_states):
        p0 = behavior[s]
        if not p0.size:
            rows.append(p0)
            continue
        v = values.V[s]
        if not v > 0.0:
            unreachable.append(s)
            continue
        local = float(p0 @ values.Q[s])
        if abs(local - v) > RESIDUAL_TOL * max(1.0, v):
            raise ConsistencyError(f"state {s}: V={v!r} but pi0.Q={local!r}")
        row = p0 * values.Q[s] / local
        rows.append(row)
    if unreachable:
        raise SuccessUnreachable(unreachable)
    return Policy(tuple(rows), name=name)


def action_influence(mdp: Mdp, behavior: Policy, values: ValueBundle) -> InfluenceProfile:
    """Squared coefficient of variation of Q(s, .) under the behavior action draw.

    Cross-checked against the mean squared relative advantage at every state.
    """
    out = np.zeros(mdp.n_states)
    unreachable = []
    for s in mdp.nonterminal:
        p0, q = behavior[s], values.Q[s]
        v = values.V[s]
        if not v > 0.0:
            unreachable.append(int(s))
            continue
        if np.count_nonzero(p0) <= 1:
            continue
        mean = p0 @ q
        var = p0 @ (q - mean) ** 2
        infl = var / mean**2
        alt = p0 @ (values.A[s] / v) ** 2
        if abs(infl - alt) > RESIDUAL_TOL * max(1.0, infl):
            raise ConsistencyError(f"state {s}: influence {infl!r} vs alternate form {alt!r}")
        out[s] = infl
    if unreachable:
        raise SuccessUnreachable(unreachable)
    return InfluenceProfile(out)


@dataclass(frozen=True, eq=False)
class Analysis:
    """Everything ``analyze`` reports for one MDP and behavior policy."""
    mdp: Mdp
    behavior: Policy
    values: ValueBundle
    occupancy: OccupancyPair
    conditioned: Policy
    influence: InfluenceProfile
    conditioned_values: ValueBundle

    @property
    def improvement(self) -> float:
        return self.conditioned_values.rho - self.values.rho


def analyze(mdp: Mdp, behavior: Policy) -> Analysis:
    values = value_bundle(mdp, behavior)
    occ = occupancy_pair(mdp, behavior, values)
    plus = success_conditioned_policy(mdp, behavior, values)
    infl = action_influence(mdp, behavior, values)
    return Analysis(mdp, behavior, values, occ, plus, infl, value_bundle(mdp, plus))
