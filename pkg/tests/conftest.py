import numpy as np
import pytest

from sc_lab import make_bandit
from sc_lab.generators import random_deterministic_mdp, random_layered_mdp


@pytest.fixture
def bandit():
    return make_bandit([0.495, 0.505], [0.5, 0.5])


def layered(seed, **kw):
    return random_layered_mdp(np.random.default_rng(seed), **kw)


def deterministic(seed, **kw):
    return random_deterministic_mdp(np.random.default_rng(seed), **kw)


def small_corpus():
    """Small acyclic MDPs used for enumeration cross-checks."""
    out = [make_bandit([0.495, 0.505], [0.5, 0.5]),
           make_bandit([0.2, 0.8, 0.5], [0.1, 0.6, 0.3]),
           make_bandit([1.0], [1.0])]
    out += [layered(1000 + i, layers=(2, 4), width=(1, 3), actions=(2, 3)) for i in range(25)]
    out += [deterministic(2000 + i, layers=(2, 4), width=(1, 3)) for i in range(10)]
    return out


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=lambda k: (int("".join(c for c in k.split()[0][1:] if c.isdigit())), k)):
            terminalreporter.write_line(RESULTS[key])
