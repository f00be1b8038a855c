"""Monte Carlo episodes, success filtering, empirical conditioning and the offline bound.

Episodes are stored as padded integer arrays: ``states[i, :lengths[i]]`` is
the visited state sequence ending at the first terminal, and
``actions[i, :lengths[i] - 1]`` the actions taken. ``outcomes`` is 1/0, or -1
for episodes that carry a dense return but no label yet.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .divergences import INFINITE, forward_kl
from .errors import (
    ConsistencyError,
    EmptyInput,
    HorizonGuardTripped,
    InputError,
    InvalidParameter,
    SpecParseError,
    SupportMismatch,
)
from .exact_dp import (
    OccupancyPair,
    ValueBundle,
    occupancy_pair,
    success_conditioned_policy,
    value_bundle,
)
from .mdp_core import Mdp, Policy
from .rng import counter_uniform

LOSS_TOL = 1e-10
BOUND_SLACK = 1e-12
SUPPORT_EPS = 1e-14

# draw slots within one step of one episode
DRAW_START, DRAW_ACTION, DRAW_NEXT, DRAW_LABEL = 0, 1, 2, 3


def policy_id(policy: Policy) -> str:
    if policy.name:
        return policy.name
    h = hashlib.sha256()
    for row in policy:
        h.update(row.tobytes())
        h.update(b"|")
    return "sha256:" + h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    states: np.ndarray
    actions: np.ndarray
    lengths: np.ndarray
    outcomes: np.ndarray
    substreams: np.ndarray
    seed: int
    policy_id: str
    returns: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.lengths.shape[0]

    def episode(self, i: int) -> tuple[list, list]:
        n = int(self.lengths[i])
        return self.states[i, :n].tolist(), self.actions[i, :n - 1].tolist()

    def subset(self, mask) -> "TrajectorySet":
        mask = np.asarray(mask)
        rets = None if self.returns is None else self.returns[mask]
        return replace(self, states=self.states[mask], actions=self.actions[mask],
                       lengths=self.lengths[mask], outcomes=self.outcomes[mask],
                       substreams=self.substreams[mask], returns=rets)

    def with_outcomes(self, outcomes, **metadata) -> "TrajectorySet":
        return replace(self, outcomes=np.asarray(outcomes, dtype=np.int8),
                       metadata={**self.metadata, **metadata})

    def state_action_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All (S_t, A_t) pairs with t < T, flattened."""
        mask = self.actions >= 0
        return self.states[:, :-1][mask], self.actions[mask]

    def visit_counts(self, n_states: int) -> np.ndarray:
        """Visits per state over non-terminal steps, summed over episodes."""
        s, _ = self.state_action_pairs()
        return np.bincount(s, minlength=n_states).astype(np.float64)


def _cumulative(probs: np.ndarray) -> np.ndarray:
    """Row-wise CDFs whose tail after the last positive entry is +inf.

    ``count(cdf <= u)`` for ``u`` in [0, 1) then never selects a zero-probability
    outcome, whatever the rounding of the cumulative sum.
    """
    cdf = np.cumsum(probs, axis=-1)
    pos = probs > 0
    last = probs.shape[-1] - 1 - np.argmax(pos[..., ::-1], axis=-1)
    idx = np.arange(probs.shape[-1])
    cdf[idx >= last[..., None] if probs.ndim > 1 else idx >= last] = np.inf
    return cdf


def _tables(mdp: Mdp, policy: Policy):
    n, k = mdp.n_states, max(1, mdp.max_actions)
    pol = np.zeros((n, k))
    trans = np.zeros((n, k, n))
    trans[:, :, 0] = 1.0  # placeholder rows for padding; never selected
    for s in mdp.nonterminal:
        m = mdp.n_actions(s)
        pol[s, :m] = policy[s]
        trans[s, :m] = mdp.transitions[s]
    pol[[s for s in range(n) if s in mdp.terminals], 0] = 1.0
    return _cumulative(pol), _cumulative(trans)


def _simulate(mdp, cum_mu, cum_pol, cum_trans, terminal, ids, seed, max_steps):
    m = ids.size
    u = counter_uniform(seed, ids, 0, DRAW_START)
    s = np.sum(cum_mu[None, :] <= u[:, None], axis=1)
    states = [s]
    actions = []
    alive = ~terminal[s]
    lengths = np.ones(m, dtype=np.int64)
    t = 0
    while alive.any():
        t += 1
        if t > max_steps:
            raise HorizonGuardTripped(
                f"{int(alive.sum())} episodes still running after {max_steps} steps")
        a = np.full(m, -1, dtype=np.int64)
        nxt = np.full(m, -1, dtype=np.int64)
        idx = np.flatnonzero(alive)
        sa = s[idx]
        ua = counter_uniform(seed, ids[idx], t, DRAW_ACTION)
        a[idx] = np.sum(cum_pol[sa] <= ua[:, None], axis=1)
        un = counter_uniform(seed, ids[idx], t, DRAW_NEXT)
        nxt[idx] = np.sum(cum_trans[sa, a[idx]] <= un[:, None], axis=1)
        actions.append(a)
        states.append(nxt)
        lengths[idx] += 1
        s = np.where(alive, nxt, s)
        alive = alive & ~terminal[np.maximum(nxt, 0)]
    S = np.stack(states, axis=1)
    A = np.stack(actions, axis=1) if actions else np.zeros((m, 0), dtype=np.int64)
    return S, A, lengths


def _pad(arrs, width):
    return np.concatenate([np.pad(a, ((0, 0), (0, width - a.shape[1])), constant_values=-1)
                           for a in arrs])


def sample_trajectories(mdp: Mdp, policy: Policy, n: int, seed: int,
                        max_steps: int | None = None, workers: int = 1,
                        chunk: int = 65536) -> TrajectorySet:
    """``n`` episodes under ``policy``; a pure function of ``(mdp, policy, n, seed)``.

    ``workers > 1`` spreads chunks over threads; output does not depend on it.
    """
    if max_steps is None:
        max_steps = 10 * mdp.n_states + 100
    if max_steps < 10 * mdp.n_states:
        raise InvalidParameter(f"max_steps must be at least {10 * mdp.n_states}")
    if n < 0:
        raise InvalidParameter("n must be nonnegative")
    cum_mu = _cumulative(mdp.initial_dist)
    cum_pol, cum_trans = _tables(mdp, policy)
    terminal = np.zeros(mdp.n_states, dtype=bool)
    terminal[list(mdp.terminals)] = True
    bounds = [(lo, min(n, lo + chunk)) for lo in range(0, n, chunk)] or [(0, 0)]

    def run(b):
        ids = np.arange(b[0], b[1], dtype=np.int64)
        return _simulate(mdp, cum_mu, cum_pol, cum_trans, terminal, ids, seed, max_steps)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    width = max(p[0].shape[1] for p in parts)
    S = _pad([p[0] for p in parts], width)
    A = _pad([p[1] for p in parts], width - 1)
    lengths = np.concatenate([p[2] for p in parts])
    final = S[np.arange(S.shape[0]), lengths - 1]
    outcomes = np.isin(final, list(mdp.terminal_success)).astype(np.int8)
    return TrajectorySet(S, A, lengths, outcomes, np.arange(n, dtype=np.int64),
                         int(seed), policy_id(policy))


def filter_successes(trajs: TrajectorySet) -> TrajectorySet:
    return trajs.subset(trajs.outcomes == 1)


def empirical_policy(successes: TrajectorySet, mdp: Mdp, behavior: Policy,
                     smoothing: float = 0.0, name: str = "empirical") -> Policy:
    """Per-state action frequencies over successful episodes, additively smoothed.

    States never visited fall back to the behavior row; they are listed in
    ``metadata["fallback_states"]``.
    """
    if len(successes) == 0:
        raise EmptyInput("no successful episodes to imitate")
    if smoothing < 0:
        raise InvalidParameter("smoothing must be nonnegative")
    s, a = successes.state_action_pairs()
    k = max(1, mdp.max_actions)
    counts = np.bincount(s * k + a, minlength=mdp.n_states * k).reshape(mdp.n_states, k)
    rows, fallback = [], []
    for st in range(mdp.n_states):
        m = mdp.n_actions(st)
        c = counts[st, :m].astype(np.float64)
        if not m:
            rows.append(np.zeros(0))
        elif c.sum() == 0:
            rows.append(behavior[st])
            fallback.append(st)
        else:
            rows.append((c + smoothing) / (c.sum() + smoothing * m))
    return Policy(tuple(rows), name=name,
                  metadata={"fallback_states": fallback, "smoothing": smoothing,
                            "n_episodes": len(successes)})


def excess_loss(mdp: Mdp, behavior: Policy, candidate: Policy,
                values: ValueBundle, occ: OccupancyPair) -> float:
    """Excess cross-entropy over the conditioned policy, as ``sum_s d_plus(s) KL(pi+ || cand)``.

    Equal to the difference of the two losses, but free of their cancellation.
    """
    plus = success_conditioned_policy(mdp, behavior, values)
    total = 0.0
    for s in mdp.nonterminal:
        if occ.d_plus[s] > 0:
            total += occ.d_plus[s] * forward_kl(plus[s], candidate[s])
    return float(total)


def cross_entropy_loss(mdp: Mdp, behavior: Policy, candidate: Policy,
                       values: ValueBundle, occ: OccupancyPair) -> float:
    """Exact next-action cross-entropy of ``candidate`` on success-conditioned episodes.

    ``sum_s d_plus(s) sum_a pi_plus(a|s) (-log candidate(a|s))``; +inf when the
    candidate misses an action the conditioned policy uses.
    """
    plus = success_conditioned_policy(mdp, behavior, values)
    loss = 0.0
    excess = 0.0
    for s in mdp.nonterminal:
        w = occ.d_plus[s]
        if w <= 0:
            continue
        p, c = plus[s], candidate[s]
        on = p > 0
        if np.any(c[on] <= 0):
            return INFINITE
        loss += w * float(-(p[on] @ np.log(c[on])))
        excess += w * forward_kl(p, c)
    base = sum(occ.d_plus[s] * float(-(plus[s][plus[s] > 0] @ np.log(plus[s][plus[s] > 0])))
               for s in mdp.nonterminal if occ.d_plus[s] > 0)
    if abs((loss - base) - excess) > LOSS_TOL * max(1.0, loss):
        raise ConsistencyError(f"excess loss {loss - base!r} vs weighted KL {excess!r}")
    return float(loss)


def mc_cross_entropy(successes: TrajectorySet, candidate: Policy) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the per-episode cross-entropy."""
    if len(successes) == 0:
        raise EmptyInput("no episodes")
    k = max(1, max(row.size for row in candidate))
    table = np.full((len(candidate), k), np.inf)
    for s, row in enumerate(candidate):
        with np.errstate(divide="ignore"):
            table[s, :row.size] = -np.log(row)
    mask = successes.actions >= 0
    nll = np.where(mask, table[np.maximum(successes.states[:, :-1], 0),
                               np.maximum(successes.actions, 0)], 0.0)
    per_episode = nll.sum(axis=1)
    n = per_episode.size
    stderr = float(per_episode.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(per_episode.mean()), stderr


def _occupancy_ratios(mdp, behavior, values, occ):
    plus = success_conditioned_policy(mdp, behavior, values)
    occ_plus = occupancy_pair(mdp, plus, value_bundle(mdp, plus))
    nt = mdp.nonterminal
    scale = max(float(occ.d_plus[nt].max(initial=0.0)), float(occ_plus.d[nt].max(initial=0.0)), 1.0)
    dp = np.where(occ_plus.d[nt] > SUPPORT_EPS * scale, occ_plus.d[nt], 0.0)
    dc = np.where(occ.d_plus[nt] > SUPPORT_EPS * scale, occ.d_plus[nt], 0.0)
    return nt, dp, dc


def shift_ratio(mdp: Mdp, behavior: Policy, values: ValueBundle, occ: OccupancyPair) -> float:
    """sup_s d_{pi+}(s) / d+_{behavior}(s): the distribution-shift factor of the offline bound.

    With deterministic transitions and a single start state the two
    occupancies coincide and the ratio is checked to be 1.
    """
    nt, dp, dc = _occupancy_ratios(mdp, behavior, values, occ)
    if np.any((dp > 0) & (dc == 0)):
        raise SupportMismatch(
            f"conditioned policy visits states {nt[(dp > 0) & (dc == 0)].tolist()} "
            "that successful behavior episodes never do")
    on = dc > 0
    M = float(np.max(dp[on] / dc[on], initial=0.0))
    if mdp.is_deterministic() and np.count_nonzero(mdp.initial_dist) == 1:
        if abs(M - 1.0) > LOSS_TOL:
            raise ConsistencyError(f"deterministic dynamics but shift ratio {M!r}")
    return M


def shift_ratio_as_stated(mdp: Mdp, behavior: Policy, values: ValueBundle,
                          occ: OccupancyPair) -> float:
    """sup_s d+_{behavior}(s) / d_{pi+}(s), the reciprocal orientation; may be +inf."""
    nt, dp, dc = _occupancy_ratios(mdp, behavior, values, occ)
    if np.any((dc > 0) & (dp == 0)):
        return INFINITE
    on = dp > 0
    return float(np.max(dc[on] / dp[on], initial=0.0))


@dataclass(frozen=True)
class LossReport:
    loss_candidate: float
    loss_conditioned: float
    excess: float
    shift_ratio: float
    shift_ratio_stated: float
    bound: float
    rho_candidate: float
    rho_conditioned: float
    gap: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound + BOUND_SLACK

    def as_dict(self) -> dict:
        return asdict(self) | {"holds": self.holds}


def offline_bound_check(mdp: Mdp, behavior: Policy, candidate: Policy) -> LossReport:
    values = value_bundle(mdp, behavior)
    occ = occupancy_pair(mdp, behavior, values)
    plus = success_conditioned_policy(mdp, behavior, values)
    loss_c = cross_entropy_loss(mdp, behavior, candidate, values, occ)
    loss_p = cross_entropy_loss(mdp, behavior, plus, values, occ)
    excess = excess_loss(mdp, behavior, candidate, values, occ) if math.isfinite(loss_c) else INFINITE
    M = shift_ratio(mdp, behavior, values, occ)
    bound = math.sqrt(M * excess / 2.0) if math.isfinite(excess) else INFINITE
    rho_c = value_bundle(mdp, candidate).rho
    rho_p = value_bundle(mdp, plus).rho
    return LossReport(
        loss_candidate=loss_c,
        loss_conditioned=loss_p,
        excess=excess,
        shift_ratio=M,
        shift_ratio_stated=shift_ratio_as_stated(mdp, behavior, values, occ),
        bound=bound,
        rho_candidate=rho_c,
        rho_conditioned=rho_p,
        gap=abs(rho_c - rho_p),
    )


# --- line-delimited trajectory files -------------------------------------------------

TRAJ_HEADER = "# sc-lab trajectories v1"


def write_trajectories(trajs: TrajectorySet, fh, meta: dict | None = None) -> None:
    """One episode per line: ``substream<TAB>outcome<TAB>return<TAB>s0 a0 s1 ... sT``.

    ``return`` is ``-`` when absent. Header lines start with ``#``.
    """
    fh.write(TRAJ_HEADER + "\n")
    head = {"seed": trajs.seed, "policy_id": trajs.policy_id, "n": len(trajs),
            "metadata": trajs.metadata}
    if meta:
        head["meta"] = meta
    fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
    for i in range(len(trajs)):
        states, actions = trajs.episode(i)
        seq = [str(states[0])]
        for a, s in zip(actions, states[1:]):
            seq += [str(a), str(s)]
        ret = "-" if trajs.returns is None else repr(float(trajs.returns[i]))
        fh.write(f"{int(trajs.substreams[i])}\t{int(trajs.outcomes[i])}\t{ret}\t{' '.join(seq)}\n")


def read_trajectories(fh) -> TrajectorySet:
    lines = fh.read().split("\n")
    if not lines or lines[0] != TRAJ_HEADER:
        raise SpecParseError("missing trajectory header", line=1)
    try:
        head = json.loads(lines[1][2:])
    except (IndexError, json.JSONDecodeError) as exc:
        raise SpecParseError(f"bad metadata header: {exc}", line=2) from exc
    subs, outs, rets, seqs = [], [], [], []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split("\t")
        try:
            sub, out, ret, seq = parts
            subs.append(int(sub))
            outs.append(int(out))
            rets.append(None if ret == "-" else float(ret))
            nums = [int(x) for x in seq.split()]
        except ValueError as exc:
            raise SpecParseError(f"malformed episode: {exc}", line=lineno) from exc
        if len(nums) % 2 != 1:
            raise SpecParseError("state/action sequence must have odd length", line=lineno)
        seqs.append(nums)
    n = len(seqs)
    width = max((len(q) // 2 + 1 for q in seqs), default=1)
    S = np.full((n, width), -1, dtype=np.int64)
    A = np.full((n, max(width - 1, 0)), -1, dtype=np.int64)
    L = np.zeros(n, dtype=np.int64)
    for i, q in enumerate(seqs):
        S[i, :len(q) // 2 + 1] = q[0::2]
        A[i, :len(q) // 2] = q[1::2]
        L[i] = len(q) // 2 + 1
    has_ret = [r is not None for r in rets]
    if any(has_ret) and not all(has_ret):
        raise InputError("either every episode carries a return or none does")
    returns = np.array(rets, dtype=np.float64) if n and all(has_ret) else None
    return TrajectorySet(S, A, L, np.array(outs, dtype=np.int8), np.array(subs, dtype=np.int64),
                         int(head["seed"]), str(head["policy_id"]), returns,
                         dict(head.get("metadata", {})))


def save_trajectories(trajs: TrajectorySet, path, meta: dict | None = None) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        write_trajectories(trajs, fh, meta)


def load_trajectories(path) -> TrajectorySet:
    with open(path, encoding="utf-8") as fh:
        return read_trajectories(fh)


def dumps_trajectories(trajs: TrajectorySet) -> str:
    buf = io.StringIO()
    write_trajectories(trajs, buf)
    return buf.getvalue()
