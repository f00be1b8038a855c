"""Seeded random instances: layered DAG MDPs and deterministic-transition MDPs.

Layered DAGs: states are arranged in layers; each (state, action) row sends at
least 5% of its mass to the two terminals (success share strictly inside
(0, 1)) and the rest to the next layer, so every instance terminates within
``n_layers`` steps and success is reachable from every state.
"""
from __future__ import annotations

import numpy as np

from .mdp_core import Mdp, Policy

SUCCESS, FAILURE = 0, 1  # terminal indices in generated MDPs


def _simplex(rng: np.random.Generator, k: int) -> np.ndarray:
    e = rng.exponential(size=k)
    return e / e.sum()


def random_layered_mdp(rng: np.random.Generator, *, layers=(2, 6), width=(1, 5),
                       actions=(2, 4), deterministic_frac=0.1, leak_min=0.05,
                       single_start=False) -> tuple[Mdp, Policy]:
    """Random layered DAG MDP plus a behavior policy.

    Ranges are inclusive ``(lo, hi)`` pairs. About ``deterministic_frac`` of the
    states get a point-mass behavior row so zero-influence paths are exercised.
    """
    n_layers = int(rng.integers(layers[0], layers[1] + 1))
    widths = [int(rng.integers(width[0], width[1] + 1)) for _ in range(n_layers)]
    offsets = np.cumsum([2] + widths)
    n = int(offsets[-1])
    blocks: list = [np.zeros((0, n)), np.zeros((0, n))]
    rows = [np.zeros(0), np.zeros(0)]
    for layer, w in enumerate(widths):
        nxt = range(offsets[layer + 1], offsets[layer + 2]) if layer + 1 < n_layers else range(0)
        for _ in range(w):
            k = int(rng.integers(actions[0], actions[1] + 1))
            block = np.zeros((k, n))
            for a in range(k):
                leak = 1.0 if not len(nxt) else rng.uniform(leak_min, 1.0)
                share = rng.uniform(0.05, 0.95)
                block[a, SUCCESS] = leak * share
                block[a, FAILURE] = leak * (1.0 - share)
                if len(nxt):
                    block[a, list(nxt)] = (1.0 - leak) * _simplex(rng, len(nxt))
                block[a] /= block[a].sum()
            blocks.append(block)
            if rng.random() < deterministic_frac:
                row = np.zeros(k)
                row[rng.integers(k)] = 1.0
            else:
                row = _simplex(rng, k)
            rows.append(row)
    mu = np.zeros(n)
    first = np.arange(offsets[0], offsets[1])
    if single_start:
        mu[rng.choice(first)] = 1.0
    else:
        mu[first] = _simplex(rng, first.size)
    mdp = Mdp(tuple(blocks), mu, frozenset({SUCCESS}), frozenset({FAILURE}))
    return mdp, Policy(tuple(rows), name="behavior")


def random_deterministic_mdp(rng: np.random.Generator, *, layers=(2, 5), width=(1, 4),
                             actions=(2, 3), terminal_prob=0.2) -> tuple[Mdp, Policy]:
    """Layered MDP with point-mass transitions and a single start state.

    Every state has at least one action leading to the next layer (or to
    success in the last layer), so success is reachable everywhere.
    """
    n_layers = int(rng.integers(layers[0], layers[1] + 1))
    widths = [1] + [int(rng.integers(width[0], width[1] + 1)) for _ in range(n_layers - 1)]
    offsets = np.cumsum([2] + widths)
    n = int(offsets[-1])
    blocks: list = [np.zeros((0, n)), np.zeros((0, n))]
    rows = [np.zeros(0), np.zeros(0)]
    for layer, w in enumerate(widths):
        last = layer + 1 == n_layers
        for _ in range(w):
            k = int(rng.integers(actions[0], actions[1] + 1))
            block = np.zeros((k, n))
            for a in range(k):
                if last:
                    dest = SUCCESS if a == 0 or rng.random() < 0.5 else FAILURE
                elif a > 0 and rng.random() < terminal_prob:
                    dest = SUCCESS if rng.random() < 0.5 else FAILURE
                else:
                    dest = int(rng.integers(offsets[layer + 1], offsets[layer + 2]))
                block[a, dest] = 1.0
            blocks.append(block[rng.permutation(k)])
            rows.append(_simplex(rng, k))
    mu = np.zeros(n)
    mu[offsets[0]] = 1.0
    mdp = Mdp(tuple(blocks), mu, frozenset({SUCCESS}), frozenset({FAILURE}))
    return mdp, Policy(tuple(rows), name="behavior")


def random_policy_like(rng: np.random.Generator, policy: Policy, *, within_support=True,
                       name: str = "random") -> Policy:
    """Random policy with the same shape; optionally restricted to ``policy``'s support."""
    rows = []
    for row in policy:
        if not row.size:
            rows.append(row)
            continue
        mask = row > 0 if within_support else np.ones(row.size, dtype=bool)
        r = np.zeros(row.size)
        r[mask] = _simplex(rng, int(mask.sum()))
        rows.append(r)
    return Policy(tuple(rows), name=name)


def mix_policies(p: Policy, q: Policy, weight: float, name: str = "mixture") -> Policy:
    """Statewise ``(1 - weight) * p + weight * q``."""
    return Policy(tuple((1.0 - weight) * a + weight * b for a, b in zip(p, q)), name=name)
