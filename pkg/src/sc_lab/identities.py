"""Residual reports for the exact identities and inequalities of success conditioning.

Each suite recomputes its sides along separate code paths (advantages,
chi-squared of the conditioned policy, action-influence, value solves under
both policies) and reports the largest disagreement.

``conditioned`` may be passed to substitute a (possibly corrupted) policy for
the exact success-conditioned one; used for fault injection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .divergences import chi_squared
from .exact_dp import (
    action_influence,
    occupancy_pair,
    success_conditioned_policy,
    value_bundle,
)
from .mdp_core import Mdp, Policy
from .trust_region import advantage_of, linear_improvement

IDENTITY_TOL = 1e-10
INEQUALITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class IdentityReport:
    """Named residual arrays, each judged against its own tolerance."""
    name: str
    residuals: dict
    tolerances: dict
    details: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max((float(np.max(r, initial=0.0)) for r in self.residuals.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return all(np.max(r, initial=0.0) <= self.tolerances[k] for k, r in self.residuals.items())

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "max_residual": self.max_residual,
            "tolerances": dict(self.tolerances),
            "residuals": {k: np.asarray(v).tolist() for k, v in self.residuals.items()},
            "details": self.details,
        }


def _base(mdp, behavior, conditioned):
    values = value_bundle(mdp, behavior)
    occ = occupancy_pair(mdp, behavior, values)
    infl = action_influence(mdp, behavior, values)
    plus = conditioned or success_conditioned_policy(mdp, behavior, values)
    return values, occ, infl, plus


def _with_tol(tol, default):
    return default if tol is None else tol


def triple_identity(mdp: Mdp, behavior: Policy, conditioned: Policy | None = None,
                    tol: float | None = None) -> IdentityReport:
    """Per state: relative advantage, chi-squared policy change and influence coincide."""
    values, occ, infl, plus = _base(mdp, behavior, conditioned)
    nt = mdp.nonterminal
    triples = np.array([
        (advantage_of(values, plus, s) / values.V[s], chi_squared(plus[s], behavior[s]), infl[s])
        for s in nt
    ]).reshape(-1, 3)
    with np.errstate(invalid="ignore"):
        res = np.column_stack([np.abs(triples[:, 0] - triples[:, 1]),
                               np.abs(triples[:, 1] - triples[:, 2])])
    res = np.where(np.isnan(res), np.inf, res)
    t = _with_tol(tol, IDENTITY_TOL)
    return IdentityReport(
        "triple_identity",
        {"per_state": res},
        {"per_state": t},
        {"states": nt.tolist(), "relative_advantage": triples[:, 0].tolist(),
         "chi2": triples[:, 1].tolist(), "influence": triples[:, 2].tolist()},
    )


def weighted_identity(mdp: Mdp, behavior: Policy, conditioned: Policy | None = None,
                      tol: float | None = None) -> IdentityReport:
    """First-order improvement / rho == weighted chi-squared == weighted influence."""
    values, occ, infl, plus = _base(mdp, behavior, conditioned)
    nt = mdp.nonterminal
    first = linear_improvement(mdp, behavior, plus, values, occ) / values.rho
    change = float(sum(occ.d_plus[s] * chi_squared(plus[s], behavior[s])
                       for s in nt if occ.d_plus[s] > 0))
    influence = float(occ.d_plus @ infl.values)
    res = np.array([abs(first - change), abs(change - influence)])
    res = np.where(np.isnan(res), np.inf, res)
    t = _with_tol(tol, IDENTITY_TOL)
    return IdentityReport(
        "weighted_identity",
        {"aggregate": res},
        {"aggregate": t},
        {"first_order_over_rho": first, "policy_change": change, "influence": influence},
    )


def improvement_check(mdp: Mdp, behavior: Policy, conditioned: Policy | None = None,
                      tol: float | None = None) -> IdentityReport:
    """rho never drops, and each state's relative value gain is at least its influence.

    Residuals are violation amounts (zero when the inequality holds).
    """
    values, occ, infl, plus = _base(mdp, behavior, conditioned)
    new = value_bundle(mdp, plus)
    nt = mdp.nonterminal
    rel_gain = (new.V[nt] - values.V[nt]) / values.V[nt]
    per_state = np.maximum(0.0, infl.values[nt] - rel_gain)
    agg = np.array([max(0.0, values.rho - new.rho)])
    return IdentityReport(
        "improvement_check",
        {"rho": agg, "per_state": per_state},
        {"rho": _with_tol(tol, INEQUALITY_TOL), "per_state": _with_tol(tol, IDENTITY_TOL)},
        {"rho_behavior": values.rho, "rho_conditioned": new.rho,
         "relative_gain": rel_gain.tolist(), "influence": infl.values[nt].tolist()},
    )


def exact_improvement(mdp: Mdp, behavior: Policy, conditioned: Policy | None = None,
                      tol: float | None = None) -> IdentityReport:
    """rho(pi+) - rho(pi0) == sum_s d_{pi+}(s) V_{pi0}(s) influence(s)."""
    values, occ, infl, plus = _base(mdp, behavior, conditioned)
    new = value_bundle(mdp, plus)
    occ_new = occupancy_pair(mdp, plus, new)
    gain = new.rho - values.rho
    formula = float(np.sum(occ_new.d * values.V * infl.values))
    res = np.array([abs(gain - formula)])
    return IdentityReport(
        "exact_improvement",
        {"aggregate": res},
        {"aggregate": _with_tol(tol, IDENTITY_TOL)},
        {"gain": gain, "weighted_influence": formula},
    )


SUITES = (triple_identity, weighted_identity, improvement_check, exact_improvement)


def run_all(mdp: Mdp, behavior: Policy, conditioned: Policy | None = None,
            tol: float | None = None) -> list[IdentityReport]:
    return [suite(mdp, behavior, conditioned, tol) for suite in SUITES]
