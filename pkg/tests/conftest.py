import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hmmq.params import Layout, ThetaParams
from hmmq.pomdp import BehaviorPolicy, ExtendedObs, PomdpModel

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_stochastic(rng, *shape):
    x = rng.random(shape) + 0.05
    return x / x.sum(axis=-1, keepdims=True)


def random_theta(rng, I, J, K, logit_scale=1.0, r_scale=2.0, sigma=None):
    lay = Layout(I, J, K)
    vec = np.concatenate([
        rng.uniform(-logit_scale, logit_scale, I * I + I * J),
        rng.uniform(-r_scale, r_scale, K * I),
        [rng.uniform(0.7, 2.0) if sigma is None else sigma],
    ])
    return ThetaParams(vec, lay)


def random_policy(rng, J, K):
    return BehaviorPolicy(random_stochastic(rng, J, K))


def random_model(rng, I, J, K, sigma=1.0, gamma=0.9):
    return PomdpModel(transition=random_stochastic(rng, K, I, I),
                      reward=rng.uniform(-3, 3, (K, I)),
                      obs=random_stochastic(rng, I, J), sigma=sigma, discount=gamma)


def random_obs_seq(rng, n, J, K, r_scale=2.0):
    return [ExtendedObs(int(rng.integers(J)), int(rng.integers(K)), float(rng.normal(0, r_scale)))
            for _ in range(n)]


def gauss(r, m, s):
    return np.exp(-0.5 * ((r - m) / s) ** 2) / np.sqrt(2 * np.pi * s * s)


def path_sum_predictive(ys, P, O, R, sigma, mu, u0):
    """One-step-ahead state distribution after ``ys`` by enumerating all state paths.

    Also returns the total likelihood of ``ys``. Exponential in len(ys); only
    for short sequences.
    """
    I = P.shape[0]
    n = len(ys)
    joint_next = np.zeros(I)
    total = 0.0
    for path in itertools.product(range(I), repeat=n):
        w = u0[path[0]]
        for k, (o, a, r) in enumerate(ys):
            s = path[k]
            if k > 0:
                w *= P[path[k - 1], s]
            w *= O[s, o] * mu[o, a] * gauss(r, R[a, s], sigma)
        total += w
        joint_next += w * P[path[-1]]
    return joint_next / total, total


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
