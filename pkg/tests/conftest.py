import itertools

import numpy as np
import pytest

from jumpstart.mdp import MdpSpec, random_mdp
from jumpstart.policies import TabularPolicy


def random_policy(rng, H, S, A, deterministic=False):
    if deterministic:
        return TabularPolicy.deterministic(rng.integers(0, A, size=(H, S)), A)
    return TabularPolicy(rng.dirichlet(np.ones(A), size=(H, S)))


def enumerate_returns(mdp: MdpSpec, policy) -> float:
    """Expected return by summing over every state/action path (tiny MDPs only)."""
    H, S, A = mdp.dims
    probs = policy.probs
    total = 0.0
    for s0 in range(S):
        stack = [(0, s0, mdp.p0[s0], 0.0)]
        while stack:
            h, s, p, ret = stack.pop()
            if p == 0.0:
                continue
            if h == H:
                total += p * ret
                continue
            for a in range(A):
                for s2 in range(S):
                    w = probs[h, s, a] * mdp.transition[h, s, a, s2]
                    if w:
                        stack.append((h + 1, s2, p * w, ret + mdp.reward[h, s, a]))
    return total


def all_deterministic_policies(H, S, A):
    for acts in itertools.product(range(A), repeat=H * S):
        yield TabularPolicy.deterministic(np.array(acts).reshape(H, S), A)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mdp(rng):
    return random_mdp(rng, 3, 2, 3)
