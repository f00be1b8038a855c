"""The first-order objective, its remainder, the implicit trust region and its optimality check."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .divergences import DIVERGENCES, chi_squared, forward_kl, reverse_kl
from .errors import ConsistencyError, InvalidParameter
from .exact_dp import (
    InfluenceProfile,
    OccupancyPair,
    ValueBundle,
    action_influence,
    occupancy_pair,
    success_conditioned_policy,
    value_bundle,
)
from .mdp_core import Mdp, Policy

REMAINDER_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TrustRegionInstance:
    weights: np.ndarray
    divergence: str
    radius: float

    def __post_init__(self):
        if self.divergence not in DIVERGENCES:
            raise InvalidParameter(f"unknown divergence {self.divergence!r}")
        if np.any(np.asarray(self.weights) < 0) or self.radius < 0:
            raise InvalidParameter("weights and radius must be nonnegative")

    def constraint(self, candidate: Policy, reference: Policy) -> float:
        D = DIVERGENCES[self.divergence]
        total = 0.0
        for s, w in enumerate(self.weights):
            if w > 0 and reference[s].size:
                total += w * D(candidate[s], reference[s])
        return total


@dataclass(frozen=True)
class OptimalityReport:
    objective: float
    constraint: float
    radius: float
    oracle_best: float
    binding: bool
    gap: float
    tol: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.binding and self.gap <= self.tol

    def as_dict(self) -> dict:
        return asdict(self) | {"passed": self.passed}


def advantage_of(values: ValueBundle, candidate: Policy, s: int) -> float:
    """A(s, candidate) = E_{a ~ candidate(s)} A(s, a)."""
    return float(candidate[s] @ values.A[s]) if candidate[s].size else 0.0


def linear_improvement(mdp: Mdp, behavior: Policy, candidate: Policy,
                       values: ValueBundle, occ: OccupancyPair) -> float:
    """sum_s d_behavior(s) A_behavior(s, candidate)."""
    return float(sum(occ.d[s] * advantage_of(values, candidate, s) for s in mdp.nonterminal))


def taylor_remainder(mdp: Mdp, behavior: Policy, candidate: Policy, values: ValueBundle) -> float:
    """Distribution-shift remainder of the performance-difference expansion.

    Computed as ``sum_s (d_cand - d_behavior)(s) A_behavior(s, candidate)`` and
    checked against ``rho(cand) - rho(behavior) - L``.
    """
    occ0 = occupancy_pair(mdp, behavior, values)
    cand_values = value_bundle(mdp, candidate)
    occ1 = occupancy_pair(mdp, candidate, cand_values)
    direct = float(sum((occ1.d[s] - occ0.d[s]) * advantage_of(values, candidate, s)
                       for s in mdp.nonterminal))
    via_rho = cand_values.rho - values.rho - linear_improvement(mdp, behavior, candidate, values, occ0)
    if abs(direct - via_rho) > REMAINDER_TOL:
        raise ConsistencyError(f"remainder {direct!r} vs {via_rho!r}")
    return direct


def trust_region_radius(values: ValueBundle, occ: OccupancyPair,
                        influence: InfluenceProfile) -> float:
    return float(occ.d_plus @ influence.values)


def implicit_instance(occ: OccupancyPair, radius: float) -> TrustRegionInstance:
    return TrustRegionInstance(occ.d_plus, "chi2", radius)


def constraint_comparison(mdp: Mdp, behavior: Policy, candidate: Policy,
                          occ: OccupancyPair) -> dict:
    """Weighted divergences of ``candidate`` from ``behavior`` under three geometries.

    chi2 uses the success-conditioned occupancy; the two KL variants use the
    behavior occupancy (TRPO: KL(behavior || cand); MDPO: KL(cand || behavior)).
    """
    out = {"chi2_dplus": 0.0, "trpo_reverse_kl": 0.0, "mdpo_forward_kl": 0.0}
    for s in mdp.nonterminal:
        p, q = candidate[s], behavior[s]
        if occ.d_plus[s] > 0:
            out["chi2_dplus"] += occ.d_plus[s] * chi_squared(p, q)
        if occ.d[s] > 0:
            out["trpo_reverse_kl"] += occ.d[s] * reverse_kl(p, q)
            out["mdpo_forward_kl"] += occ.d[s] * forward_kl(p, q)
    return out


def _sample_rows(rng, p0, plus, n):
    """Candidate rows over the support of ``p0``: random simplex points, vertices, local moves."""
    support = np.flatnonzero(p0 > 0)
    k = support.size
    full = np.tile(p0, (n, 1))
    if k < 2:
        return full
    e = rng.exponential(size=(n, k))
    rows = e / e.sum(axis=1, keepdims=True)
    third = n // 3
    vert = rng.integers(k, size=third)
    rows[:third] = 0.0
    rows[np.arange(third), vert] = 1.0
    local = slice(third, 2 * third)
    eta = rng.uniform(0.0, 0.05, size=(third, 1))
    rows[local] = (1.0 - eta) * plus[support] + eta * rows[local]
    full[:, support] = rows
    return full


def verify_optimality(mdp: Mdp, behavior: Policy, n_oracle_samples: int = 10_000,
                      seed: int = 0, tol: float = 1e-9) -> OptimalityReport:
    """Falsification search for a feasible policy beating the conditioned one.

    Each sampled policy is pulled toward ``behavior`` along the segment
    ``behavior + lam * (pi - behavior)``. The objective is linear in ``lam`` and
    the weighted chi-squared constraint is quadratic, so the largest feasible
    ``lam = min(1, sqrt(radius / C))`` is exact.
    """
    if n_oracle_samples < 1000:
        raise InvalidParameter("n_oracle_samples must be at least 1000")
    values = value_bundle(mdp, behavior)
    occ = occupancy_pair(mdp, behavior, values)
    plus = success_conditioned_policy(mdp, behavior, values)
    infl = action_influence(mdp, behavior, values)
    radius = trust_region_radius(values, occ, infl)
    inst = implicit_instance(occ, radius)
    objective = linear_improvement(mdp, behavior, plus, values, occ)
    constraint = inst.constraint(plus, behavior)

    rng = np.random.default_rng(seed)
    L = np.zeros(n_oracle_samples)
    C = np.zeros(n_oracle_samples)
    for s in mdp.nonterminal:
        p0 = behavior[s]
        if occ.d_plus[s] <= 0 or np.count_nonzero(p0) < 2:
            continue
        rows = _sample_rows(rng, p0, plus[s], n_oracle_samples)
        on = p0 > 0
        L += occ.d[s] * (rows @ values.A[s])
        C += occ.d_plus[s] * np.sum((rows[:, on] - p0[on]) ** 2 / p0[on], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(C > radius, np.sqrt(radius / C), 1.0)
    best = max(0.0, float(np.max(lam * L)))
    return OptimalityReport(
        objective=float(objective),
        constraint=float(constraint),
        radius=float(radius),
        oracle_best=best,
        binding=bool(abs(constraint - radius) <= tol),
        gap=best - objective,
        tol=tol,
        n_samples=n_oracle_samples,
    )


def _rare_action_divergence(p, delta, k, kind):
    if kind == "chi2":
        pi = np.concatenate(([p], np.full(k, (1.0 - p) / k)))
        pi0 = np.concatenate(([delta], np.full(k, (1.0 - delta) / k)))
        return chi_squared(pi, pi0)
    # the k common actions grouped into one outcome
    return forward_kl([p, 1.0 - p], [delta, 1.0 - delta])


def rare_action_tolerance(delta: float, k: int, epsilon: float, kind: str = "chi2",
                          max_iter: int = 200, xtol: float = 1e-12) -> float:
    """Largest probability a divergence budget lets a policy put on a rare action.

    The rare action has behavior probability ``delta``; the other ``k`` actions
    share ``1 - delta`` uniformly and keep sharing the remainder uniformly.
    ``kind`` is ``"chi2"`` or ``"kl"`` (forward KL). Bisection on ``[delta, 1]``.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}")
    if int(k) != k or k < 2:
        raise InvalidParameter(f"k must be an integer >= 2, got {k}")
    if not epsilon > 0:
        raise InvalidParameter(f"epsilon must be positive, got {epsilon}")
    if kind not in ("chi2", "kl"):
        raise InvalidParameter(f"kind must be 'chi2' or 'kl', got {kind!r}")
    k = int(k)
    if _rare_action_divergence(1.0, delta, k, kind) <= epsilon:
        return 1.0
    lo, hi = delta, 1.0
    for _ in range(max_iter):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        if _rare_action_divergence(mid, delta, k, kind) <= epsilon:
            lo = mid
        else:
            hi = mid
    return lo


def tolerance_sweep(deltas, epsilon: float = 0.1, k: int = 10) -> list[dict]:
    rows = []
    for delta in deltas:
        pc = rare_action_tolerance(delta, k, epsilon, "chi2")
        pk = rare_action_tolerance(delta, k, epsilon, "kl")
        rows.append({
            "delta": float(delta),
            "p_chi2": pc,
            "p_kl": pk,
            "p_chi2_over_sqrt_delta": pc / math.sqrt(delta),
            "p_kl_times_log_inv_delta": pk * math.log(1.0 / delta),
        })
    return rows
