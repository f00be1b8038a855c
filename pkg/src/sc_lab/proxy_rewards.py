"""Dense returns, proxy success criteria and the return-thresholding bandit.

A dense return ``Y`` in [0, 1] is turned into a binary outcome either
faithfully (one Bernoulli(Y) draw per episode, fixed afterwards) or by a proxy
such as the strict threshold ``Y > theta``. For bandits with Beta-distributed
arm returns everything is analytic: the faithful Q-value of an arm is its mean
and the thresholded Q-value is its Beta upper tail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import (
    InvalidGrid,
    InvalidParameter,
    MissingReturn,
    ProxySuccessUnreachable,
    ScLabError,
)
from .exact_dp import ValueBundle, action_influence, success_conditioned_policy, value_bundle
from .mdp_core import Mdp, Policy, make_bandit
from .rng import counter_uniform
from .sampling import DRAW_LABEL, TrajectorySet, sample_trajectories

CF_EPS = 1e-15
CF_MAXIT = 10_000
_FPMIN = 1e-300
DECOMPOSITION_TOL = 1e-10
DEFAULT_SWEEP_SEED = 20240101


# --- regularized incomplete beta -------------------------------------------------------

def _betacf(a, b, x):
    """Continued fraction for I_x(a, b), modified Lentz, elementwise."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        step = d * c
        h = np.where(done, h, h * step)
        done |= np.abs(step - 1.0) < CF_EPS
        if done.all():
            return h
    raise ScLabError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(x, a, b):
    """I_x(a, b) for x in [0, 1], a, b > 0; broadcasts over array inputs."""
    x, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, a, b)))
    if np.any(~np.isfinite(x) | (x < 0) | (x > 1)):
        raise InvalidParameter("x must lie in [0, 1]")
    if np.any(~(a > 0) | ~(b > 0) | ~np.isfinite(a) | ~np.isfinite(b)):
        raise InvalidParameter("Beta parameters must be positive and finite")
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0) & (x < 1)
    if inner.any():
        xi, ai, bi = x[inner], a[inner], b[inner]
        swap = xi > (ai + 1.0) / (ai + bi + 2.0)
        xx = np.where(swap, 1.0 - xi, xi)
        aa = np.where(swap, bi, ai)
        bb = np.where(swap, ai, bi)
        log_front = (aa * np.log(xx) + bb * np.log1p(-xx)
                     - (gammaln(aa) + gammaln(bb) - gammaln(aa + bb)))
        val = np.exp(log_front) * _betacf(aa, bb, xx) / aa
        out[inner] = np.where(swap, 1.0 - val, val)
    return float(out) if out.ndim == 0 else out


def beta_tail(theta, alpha, beta_param):
    """P(Y > theta) for Y ~ Beta(alpha, beta_param), as I_{1-theta}(beta_param, alpha)."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(~np.isfinite(theta) | (theta < 0) | (theta > 1)):
        raise InvalidParameter("theta must lie in [0, 1]")
    return regularized_incomplete_beta(1.0 - theta, beta_param, alpha)


# --- reward models and labelling ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RewardModel:
    """How episodes are scored: ``binary-terminal`` or ``dense-return`` (Beta arms for bandits)."""
    kind: str
    alphas: np.ndarray | None = None
    betas: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("binary-terminal", "dense-return"):
            raise InvalidParameter(f"unknown reward kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class BetaBanditConfig:
    alphas: np.ndarray
    betas: np.ndarray
    behavior: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("alphas", "betas", "behavior"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.alphas.shape == self.betas.shape == self.behavior.shape):
            raise InvalidParameter("alphas, betas and behavior must have equal lengths")
        if np.any(self.alphas <= 0) or np.any(self.betas <= 0):
            raise InvalidParameter("Beta parameters must be positive")

    @property
    def means(self) -> np.ndarray:
        return self.alphas / (self.alphas + self.betas)

    @property
    def reward_model(self) -> RewardModel:
        return RewardModel("dense-return", self.alphas, self.betas)


def default_beta_bandit(seed: int = DEFAULT_SWEEP_SEED, n_moderate: int = 99,
                        shape_range=(0.3, 0.7), special=(18.0, 2.0)) -> BetaBanditConfig:
    """Moderate symmetric Beta(a, a) arms, a ~ Uniform(shape_range), plus one special arm."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(shape_range[0], shape_range[1], size=n_moderate)
    alphas = np.append(a, special[0])
    betas = np.append(a, special[1])
    k = alphas.size
    return BetaBanditConfig(alphas, betas, np.full(k, 1.0 / k), seed,
                            {"n_moderate": n_moderate, "shape_range": list(shape_range),
                             "special": list(special)})


def sample_beta_bandit(config: BetaBanditConfig, n: int, seed: int) -> TrajectorySet:
    """Pull arms under the behavior policy and record Beta returns; outcomes left unlabelled (-1)."""
    mdp, behavior = make_bandit(config.means, config.behavior)
    trajs = sample_trajectories(mdp, behavior, n, seed)
    arms = trajs.actions[:, 0]
    rng = np.random.Generator(np.random.Philox(key=seed))
    y = rng.beta(config.alphas[arms], config.betas[arms])
    return TrajectorySet(trajs.states, trajs.actions, trajs.lengths,
                         np.full(n, -1, dtype=np.int8), trajs.substreams, seed,
                         trajs.policy_id, y, {"reward": "beta"})


def _returns(trajs: TrajectorySet) -> np.ndarray:
    if trajs.returns is None:
        raise MissingReturn("episodes carry no dense return")
    y = trajs.returns
    if np.any(~np.isfinite(y) | (y < 0) | (y > 1)):
        raise InvalidParameter("returns must lie in [0, 1]")
    return y


def bernoulli_label(trajs: TrajectorySet, seed: int) -> TrajectorySet:
    """Faithful reduction: R ~ Bernoulli(Y), drawn once per episode from its own substream."""
    y = _returns(trajs)
    u = counter_uniform(seed, trajs.substreams, 0, DRAW_LABEL)
    return trajs.with_outcomes(u < y, labels="bernoulli", label_seed=int(seed))


def threshold_reward(trajs: TrajectorySet, theta: float) -> TrajectorySet:
    """Proxy reward 1{Y > theta}; ties count as failures."""
    if not 0.0 <= theta <= 1.0:
        raise InvalidParameter("theta must lie in [0, 1]")
    y = _returns(trajs)
    return trajs.with_outcomes(y > theta, labels="threshold", theta=float(theta))


# --- proxy conditioning and the alignment decomposition ----------------------------------

def bandit_values(q, behavior_weights) -> tuple[Mdp, Policy, ValueBundle]:
    """Bandit MDP whose arm success probabilities are ``q``, with its exact values."""
    mdp, behavior = make_bandit(q, behavior_weights)
    return mdp, behavior, value_bundle(mdp, behavior)


def proxy_conditioned_policy(mdp: Mdp, behavior: Policy, proxy_values: ValueBundle,
                             name: str = "proxy_conditioned") -> Policy:
    """Conditioning on the proxy success event: pi0 * Q~ / V~ at every state."""
    unreachable = [int(s) for s in mdp.nonterminal if not proxy_values.V[s] > 0]
    if unreachable:
        raise ProxySuccessUnreachable(unreachable, f"proxy success unreachable from {unreachable}")
    return success_conditioned_policy(mdp, behavior, proxy_values, name=name)


@dataclass(frozen=True, eq=False)
class ProxyReport:
    states: np.ndarray
    ratio: np.ndarray
    influence_ratio: np.ndarray
    alignment: np.ndarray
    residual: np.ndarray
    condition: np.ndarray
    skipped: dict

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual, initial=0.0))

    def passed(self, tol: float = DECOMPOSITION_TOL) -> bool:
        return self.max_residual <= tol


def _corr(w, x, y):
    mx, my = w @ x, w @ y
    cov = w @ ((x - mx) * (y - my))
    vx, vy = w @ (x - mx) ** 2, w @ (y - my) ** 2
    return cov / math.sqrt(vx * vy)


def proxy_decomposition(mdp: Mdp, behavior: Policy, true_values: ValueBundle,
                        proxy_values: ValueBundle) -> ProxyReport:
    """Improvement ratio of proxy vs faithful conditioning, against sqrt(I~/I) * alignment.

    The left side comes from the two conditioned policies and true advantages;
    the right side from influences and the behavior-weighted correlation of the
    two advantage functions. States with zero influence under either reward are
    skipped with a reason.

    ``condition`` is the cancellation factor ``sum|pi+ A| / |pi+ . A|`` of the
    left side's denominator; its rounding error is about ``condition * eps``
    relative, so ill-conditioned states can exceed an absolute tolerance.
    """
    plus = success_conditioned_policy(mdp, behavior, true_values)
    tilde = proxy_conditioned_policy(mdp, behavior, proxy_values)
    infl = action_influence(mdp, behavior, true_values)
    infl_t = action_influence(mdp, behavior, proxy_values)
    states, ratio, iratio, align, resid, cond = [], [], [], [], [], []
    skipped = {}
    for s in mdp.nonterminal:
        s = int(s)
        if infl[s] <= 0:
            skipped[s] = "zero action-influence under the true reward"
            continue
        if infl_t[s] <= 0:
            skipped[s] = "zero action-influence under the proxy reward"
            continue
        A = true_values.A[s]
        gain = plus[s] @ A
        lhs = (tilde[s] @ A) / gain
        ir = math.sqrt(infl_t[s] / infl[s])
        al = _corr(behavior[s], A, proxy_values.A[s])
        states.append(s)
        ratio.append(lhs)
        iratio.append(ir)
        align.append(al)
        resid.append(abs(lhs - ir * al))
        cond.append(float(np.abs(plus[s] * A).sum() / abs(gain)))
    return ProxyReport(np.array(states, dtype=int), np.array(ratio), np.array(iratio),
                       np.array(align), np.array(resid), np.array(cond), skipped)


# --- threshold sweep ------------------------------------------------------------------------

SWEEP_COLUMNS = ("theta", "alignment", "influence_ratio", "proxy_improvement",
                 "faithful_improvement")


def default_thetas() -> np.ndarray:
    return np.concatenate([np.round(np.linspace(0.0, 0.99, 100), 12), [0.995, 0.999]])


def threshold_sweep(config: BetaBanditConfig, thetas=None) -> list[dict]:
    """Alignment, influence ratio and true-objective improvement for each threshold.

    Improvements are absolute changes in expected return relative to the
    behavior policy. ``faithful_improvement`` is the same for every row.
    Alignment and influence ratio are NaN where the proxy has no influence.
    """
    thetas = default_thetas() if thetas is None else np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 1 or not thetas.size:
        raise InvalidGrid("threshold grid must be a nonempty vector")
    if np.any(~np.isfinite(thetas) | (thetas < 0) | (thetas >= 1)):
        raise InvalidGrid("thresholds must lie in [0, 1)")
    w = config.behavior
    means = config.means
    mdp, behavior, true_vals = bandit_values(means, w)
    plus = success_conditioned_policy(mdp, behavior, true_vals)
    base = float(w @ means)
    faithful = float(plus[0] @ means) - base
    true_infl = action_influence(mdp, behavior, true_vals)[0]
    tails = beta_tail(thetas[:, None], config.alphas[None, :], config.betas[None, :])
    rows = []
    for theta, q in zip(thetas, np.atleast_2d(tails)):
        _, _, proxy_vals = bandit_values(q, w)
        tilde = proxy_conditioned_policy(mdp, behavior, proxy_vals)
        proxy_infl = action_influence(mdp, behavior, proxy_vals)[0]
        if proxy_infl > 0 and true_infl > 0:
            alignment = _corr(w, true_vals.A[0], proxy_vals.A[0])
            iratio = math.sqrt(proxy_infl / true_infl)
        else:
            alignment = iratio = math.nan
        rows.append({
            "theta": float(theta),
            "alignment": float(alignment),
            "influence_ratio": float(iratio),
            "proxy_improvement": float(tilde[0] @ means) - base,
            "faithful_improvement": faithful,
        })
    return rows
