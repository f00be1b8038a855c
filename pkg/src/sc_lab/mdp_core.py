"""Tabular episodic MDPs with a success/failure terminal partition, and policies on them.

States are dense integers ``0..n_states-1``. Every non-terminal state owns an
ordered action list; ``mdp.transitions[s]`` is an ``(n_actions(s), n_states)``
array whose rows are next-state distributions. Terminal states carry an empty
``(0, n_states)`` block. Policies mirror that ragged layout: ``policy[s]`` is a
probability vector over the actions of ``s`` (empty for terminals).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InputError,
    NonStochasticRow,
    NonTerminatingChain,
    SuccessUnreachable,
)

ROW_SUM_TOL = 1e-12
DECAY_THRESHOLD = 1e-12


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mdp:
    transitions: tuple
    initial_dist: np.ndarray
    terminal_success: frozenset
    terminal_failure: frozenset
    action_names: tuple | None = None

    def __post_init__(self):
        init = _frozen(self.initial_dist)
        if init.ndim != 1:
            raise DimensionMismatch("initial_dist must be a vector")
        n = init.shape[0]
        if len(self.transitions) != n:
            raise DimensionMismatch(
                f"{len(self.transitions)} transition blocks for {n} states")
        succ = frozenset(int(s) for s in self.terminal_success)
        fail = frozenset(int(s) for s in self.terminal_failure)
        if succ & fail:
            raise InputError(f"states {sorted(succ & fail)} are both success and failure")
        if any(not 0 <= s < n for s in succ | fail):
            raise DimensionMismatch("terminal index out of range")
        blocks = []
        for s, block in enumerate(self.transitions):
            b = np.array(block, dtype=np.float64, copy=True)
            if b.size == 0:
                b = b.reshape(0, n)
            if b.ndim != 2 or b.shape[1] != n:
                raise DimensionMismatch(f"state {s}: transition block has shape {b.shape}")
            terminal = s in succ or s in fail
            if terminal and b.shape[0]:
                raise InputError(f"terminal state {s} has actions")
            if not terminal and not b.shape[0]:
                raise InputError(f"non-terminal state {s} has no actions")
            b.setflags(write=False)
            blocks.append(b)
        names = self.action_names
        if names is not None:
            names = tuple(tuple(str(x) for x in row) for row in names)
            if len(names) != n or any(len(nm) != b.shape[0] for nm, b in zip(names, blocks)):
                raise DimensionMismatch("action_names do not match the action counts")
        object.__setattr__(self, "initial_dist", init)
        object.__setattr__(self, "transitions", tuple(blocks))
        object.__setattr__(self, "terminal_success", succ)
        object.__setattr__(self, "terminal_failure", fail)
        object.__setattr__(self, "action_names", names)

    @property
    def n_states(self) -> int:
        return self.initial_dist.shape[0]

    @property
    def terminals(self) -> frozenset:
        return self.terminal_success | self.terminal_failure

    @property
    def nonterminal(self) -> np.ndarray:
        term = self.terminals
        return np.array([s for s in range(self.n_states) if s not in term], dtype=int)

    def n_actions(self, s: int) -> int:
        return self.transitions[s].shape[0]

    @property
    def max_actions(self) -> int:
        return max(b.shape[0] for b in self.transitions)

    def success_mask(self) -> np.ndarray:
        m = np.zeros(self.n_states, dtype=bool)
        m[list(self.terminal_success)] = True
        return m

    def is_deterministic(self) -> bool:
        """True when every transition row is a point mass."""
        return all(np.all(np.isin(b, (0.0, 1.0))) for b in self.transitions)


@dataclass(frozen=True, eq=False)
class Policy:
    rows: tuple
    name: str = ""
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        rows = []
        for r in self.rows:
            arr = np.array(r, dtype=np.float64, copy=True).reshape(-1)
            arr.setflags(write=False)
            rows.append(arr)
        object.__setattr__(self, "rows", tuple(rows))

    def __getitem__(self, s: int) -> np.ndarray:
        return self.rows[s]

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @classmethod
    def uniform(cls, mdp: Mdp, name: str = "uniform") -> "Policy":
        return cls(tuple(np.full(k, 1.0 / k) if k else np.zeros(0)
                         for k in (mdp.n_actions(s) for s in range(mdp.n_states))), name=name)

    def max_abs_diff(self, other: "Policy") -> float:
        return max((float(np.max(np.abs(a - b))) for a, b in zip(self.rows, other.rows) if a.size),
                   default=0.0)


@dataclass(frozen=True)
class ValidationReport:
    n_states: int
    termination_iterations: int
    min_value: float


def check_policy(mdp: Mdp, policy: Policy, label: str = "policy") -> None:
    if len(policy) != mdp.n_states:
        raise DimensionMismatch(f"{label} has {len(policy)} rows for {mdp.n_states} states")
    for s in range(mdp.n_states):
        row = policy[s]
        if row.shape[0] != mdp.n_actions(s):
            raise DimensionMismatch(
                f"{label} row {s} has {row.shape[0]} entries for {mdp.n_actions(s)} actions")
        if not row.size:
            continue
        if np.any(row < 0) or not np.all(np.isfinite(row)):
            raise NonStochasticRow(f"{label}[{s}]", float(row.sum()))
        if abs(row.sum() - 1.0) > ROW_SUM_TOL:
            raise NonStochasticRow(f"{label}[{s}]", float(row.sum()))


def check_stochastic(mdp: Mdp) -> None:
    mu = mdp.initial_dist
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_SUM_TOL:
        raise NonStochasticRow("initial_dist", float(mu.sum()))
    if any(mu[s] > 0 for s in mdp.terminals):
        raise InputError("initial_dist puts mass on a terminal state")
    for s, block in enumerate(mdp.transitions):
        for a, row in enumerate(block):
            if np.any(row < 0) or abs(row.sum() - 1.0) > ROW_SUM_TOL:
                raise NonStochasticRow(f"P[{s}, {a}]", float(row.sum()))


def policy_matrix(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Full ``n x n`` state transition matrix under ``policy``; terminal rows are zero."""
    n = mdp.n_states
    P = np.zeros((n, n))
    for s in mdp.nonterminal:
        P[s] = policy[s] @ mdp.transitions[s]
    return P


def termination_iterations(mdp: Mdp, policy: Policy, cap: int | None = None) -> int:
    """Power-iterate the non-terminal block until survival mass drops below 1e-12.

    Returns the number of iterations used. The start vector is all-ones, so the
    iterate is the worst-case probability (over start states) of still running.
    """
    nt = mdp.nonterminal
    if cap is None:
        cap = 10 * mdp.n_states + 1000
    M = policy_matrix(mdp, policy)[np.ix_(nt, nt)]
    x = np.ones(nt.shape[0])
    for it in range(1, cap + 1):
        x = M @ x
        if x.max(initial=0.0) < DECAY_THRESHOLD:
            return it
    raise NonTerminatingChain(
        f"survival mass {x.max():.3e} after {cap} iterations; episodes may not terminate")


def validate_mdp(mdp: Mdp, behavior: Policy, cap: int | None = None) -> ValidationReport:
    """Check stochasticity, almost-sure termination and success reachability under ``behavior``.

    Raises NonStochasticRow, NonTerminatingChain or SuccessUnreachable (with the
    offending states) on failure.
    """
    from .exact_dp import value_bundle

    check_stochastic(mdp)
    check_policy(mdp, behavior, "behavior")
    iters = termination_iterations(mdp, behavior, cap)
    values = value_bundle(mdp, behavior)
    nt = mdp.nonterminal
    bad = [int(s) for s in nt if not values.V[s] > 0.0]
    if bad:
        raise SuccessUnreachable(bad)
    return ValidationReport(mdp.n_states, iters, float(values.V[nt].min()))


def make_bandit(success_probs: Sequence[float], behavior_weights: Sequence[float],
                name: str = "behavior") -> tuple[Mdp, Policy]:
    """One-step MDP: state 0 picks an arm, then lands in success (1) or failure (2)."""
    p = np.asarray(success_probs, dtype=np.float64)
    w = np.asarray(behavior_weights, dtype=np.float64)
    if p.ndim != 1 or w.shape != p.shape or not p.size:
        raise DimensionMismatch(f"{p.shape} success probabilities vs {w.shape} weights")
    if np.any((p < 0) | (p > 1)):
        raise InputError("success probabilities must lie in [0, 1]")
    if np.any(w < 0) or abs(w.sum() - 1.0) > ROW_SUM_TOL:
        raise NonStochasticRow("behavior_weights", float(w.sum()))
    block = np.zeros((p.size, 3))
    block[:, 1] = p
    block[:, 2] = 1.0 - p
    mdp = Mdp(
        transitions=(block, np.zeros((0, 3)), np.zeros((0, 3))),
        initial_dist=np.array([1.0, 0.0, 0.0]),
        terminal_success=frozenset({1}),
        terminal_failure=frozenset({2}),
    )
    return mdp, Policy((w, np.zeros(0), np.zeros(0)), name=name)
