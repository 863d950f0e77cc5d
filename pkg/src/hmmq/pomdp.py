"""Ground-truth finite POMDP, behavior policy and step simulation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

STOCHASTIC_ATOL = 1e-12

STREAM_NAMES = ("env", "init", "eval")


class ContractError(ValueError):
    """Raised when an argument violates a documented precondition."""


def _check_stochastic(name, mat, atol=STOCHASTIC_ATOL):
    mat = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise ContractError(f"{name}: non-finite entries")
    if np.any(mat < 0):
        raise ContractError(f"{name}: negative probabilities")
    sums = mat.sum(axis=-1)
    bad = np.abs(sums - 1.0) > atol
    if np.any(bad):
        idx = tuple(int(k) for k in np.argwhere(bad)[0])
        raise ContractError(f"{name}: row {idx} sums to {sums[idx]!r}, expected 1")
    return mat


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PomdpModel:
    """Finite POMDP with Gaussian reward noise.

    Attributes
    ----------
    transition : ndarray (K, I, I)
        ``transition[a, s, s2] = P(s2 | s, a)``.
    reward : ndarray (K, I)
        Mean reward ``reward[a, s]``.
    obs : ndarray (I, J)
        ``obs[s, o] = P(o | s)``.
    sigma : float
        Standard deviation of the additive reward noise. Zero gives
        noiseless rewards.
    discount : float
        Discount factor in [0, 1).
    """

    transition: np.ndarray
    reward: np.ndarray
    obs: np.ndarray
    sigma: float
    discount: float

    def __post_init__(self):
        T = _check_stochastic("transition", self.transition)
        O = _check_stochastic("obs", self.obs)
        R = np.asarray(self.reward, dtype=float)
        if T.ndim != 3 or T.shape[1] != T.shape[2]:
            raise ContractError(f"transition must be (K, I, I), got {T.shape}")
        K, I, _ = T.shape
        if O.ndim != 2 or O.shape[0] != I:
            raise ContractError(f"obs must be ({I}, J), got {O.shape}")
        if R.shape != (K, I):
            raise ContractError(f"reward must be ({K}, {I}), got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ContractError("reward: non-finite entries")
        if not self.sigma >= 0:
            raise ContractError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= self.discount < 1:
            raise ContractError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "transition", _frozen(T))
        object.__setattr__(self, "obs", _frozen(O))
        object.__setattr__(self, "reward", _frozen(R))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "_obs_cdf", _frozen(np.cumsum(O, axis=-1)))
        object.__setattr__(self, "_trans_cdf", _frozen(np.cumsum(T, axis=-1)))

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def num_obs(self) -> int:
        return self.obs.shape[1]


@dataclass(frozen=True, eq=False)
class BehaviorPolicy:
    """Observation-conditioned action distribution, ``mu[o, a] = P(a | o)``."""

    mu: np.ndarray

    def __post_init__(self):
        mu = _check_stochastic("mu", self.mu)
        if mu.ndim != 2:
            raise ContractError(f"mu must be (J, K), got {mu.shape}")
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "_cdf", _frozen(np.cumsum(mu, axis=-1)))


class ExtendedObs(NamedTuple):
    """One emitted triple (observation, action, reward)."""

    obs: int
    action: int
    reward: float


def benchmark_model() -> PomdpModel:
    """The 4-state, 2-action, 2-observation benchmark with discount 0.95."""
    T = [
        [[.6, .2, .1, .1],
         [.2, .1, .6, .1],
         [.1, .1, .1, .7],
         [.4, .1, .1, .4]],
        [[.1, .2, .2, .5],
         [.1, .6, .1, .2],
         [.1, .2, .6, .1],
         [.1, .1, .2, .6]],
    ]
    O = [[.95, .05],
         [.95, .05],
         [.05, .95],
         [.05, .95]]
    R = [[0., 0., -20., 20.],
         [0., 0., 20., -20.]]
    return PomdpModel(transition=T, reward=R, obs=O, sigma=1.0, discount=0.95)


def benchmark_behavior_policy() -> BehaviorPolicy:
    return BehaviorPolicy(mu=[[.6, .4], [.3, .7]])


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Split one seed into independent named generators.

    Stream order is fixed, so re-seeding any single consumer leaves the
    others untouched.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAM_NAMES, children)}


def _categorical(cdf, u):
    # inverse-CDF draw; clamp guards against a cdf ending just below 1
    k = int(cdf.searchsorted(u, side="right"))
    return min(k, len(cdf) - 1)


def sample_step(model: PomdpModel, policy: BehaviorPolicy, s: int,
                rng: np.random.Generator) -> tuple[ExtendedObs, int]:
    """Observe, act under the behavior policy, collect reward, transition."""
    if not (isinstance(s, (int, np.integer)) and 0 <= s < model.num_states):
        raise ContractError(f"invalid state index {s!r}")
    o = _categorical(model._obs_cdf[s], rng.random())
    a = _categorical(policy._cdf[o], rng.random())
    r = model.reward[a, s] + model.sigma * rng.standard_normal()
    s_next = _categorical(model._trans_cdf[a, s], rng.random())
    return ExtendedObs(o, a, float(r)), s_next


def derive_behavior_chain(model: PomdpModel, policy: BehaviorPolicy) -> np.ndarray:
    """State chain induced by the behavior policy.

    ``P[s, s2] = sum_o O[s, o] sum_a mu[o, a] T[a, s, s2]``
    """
    if policy.mu.shape != (model.num_obs, model.num_actions):
        raise ContractError(
            f"mu shape {policy.mu.shape} does not match model "
            f"({model.num_obs}, {model.num_actions})")
    return np.einsum("so,oa,ast->st", model.obs, policy.mu, model.transition)


def check_ergodic(P) -> bool:
    """True iff the chain is irreducible and aperiodic.

    A finite chain is both iff some power is strictly positive, and
    Wielandt's bound says ``(I - 1)**2 + 1`` steps suffice.
    """
    A = (np.asarray(P) > 0).astype(np.int64)
    n = A.shape[0]
    reach = A.copy()
    for _ in range((n - 1) ** 2):
        if reach.all():
            return True
        reach = ((reach @ A) > 0).astype(np.int64)
    return bool(reach.all())
