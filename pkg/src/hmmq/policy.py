"""Frozen-parameter belief policy and episodic evaluation.

Evaluation runs all episodes of one test side by side, so every per-step
quantity below carries a leading episode axis.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .estimators import Session, normalize_transitions
from .filter import DegenerateLikelihood
from .params import realize
from .pomdp import ContractError, ExtendedObs, PomdpModel


class PolicyDiagnostic(RuntimeWarning):
    """Non-fatal numerical fallback taken during filtering or action selection."""


@dataclass(frozen=True, eq=False)
class FrozenModel:
    """Learned POMDP snapshot used by the belief-greedy policy."""

    transition: np.ndarray  # (K, I, I) conditionals
    obs: np.ndarray         # (I, J)
    reward: np.ndarray      # (K, I)
    sigma: float
    q: np.ndarray           # (I, K)

    def __post_init__(self):
        for name in ("transition", "obs", "reward", "q"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"frozen {name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.sigma > 0:
            raise ContractError(f"frozen sigma must be positive, got {self.sigma}")


def freeze(session: Session) -> FrozenModel:
    real = realize(session.theta)
    T, unvisited = normalize_transitions(session.t, return_unvisited=True)
    if unvisited:
        warnings.warn(f"unvisited (state, action) pairs set uniform: {unvisited}",
                      PolicyDiagnostic, stacklevel=2)
    return FrozenModel(T, real.O, real.R, real.sigma, session.q.copy())


def _belief_update(u, o, a, r, frozen: FrozenModel):
    # the test policy is not the behavior policy, so no action-likelihood factor
    resid = r[:, None] - frozen.reward[a]
    with np.errstate(divide="ignore"):  # zero observation probabilities give -inf
        logb = np.log(frozen.obs[:, o].T) - 0.5 * (resid / frozen.sigma) ** 2
    top = logb.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DegenerateLikelihood("observation impossible under every state")
    b = np.exp(logb - top)
    w = b * u
    c = w.sum(axis=1, keepdims=True)
    if not np.all(c > 0):
        raise DegenerateLikelihood("zero predicted likelihood in belief update")
    return np.einsum("ei,eij->ej", w / c, frozen.transition[a])


def _greedy_actions(u, o, frozen: FrozenModel):
    post = frozen.obs[:, o].T * u
    mass = post.sum(axis=1, keepdims=True)
    empty = mass[:, 0] <= 0
    if np.any(empty):
        warnings.warn("observation has zero belief mass; acting on the prior belief",
                      PolicyDiagnostic, stacklevel=3)
        post[empty] = u[empty]
        mass[empty] = u[empty].sum(axis=1, keepdims=True)
    return np.argmax((post / mass) @ frozen.q, axis=1)


def belief_step_with_action(u, y: ExtendedObs, frozen: FrozenModel) -> np.ndarray:
    """Bayes-correct ``u`` with ``y`` then predict with the transition of ``y.action``."""
    u = np.asarray(u, dtype=float)[None, :]
    return _belief_update(u, np.array([y.obs]), np.array([y.action]),
                          np.array([y.reward], dtype=float), frozen)[0]


def greedy_action(frozen: FrozenModel, u, o: int) -> int:
    """Action maximizing the Q-table averaged over the observation-conditioned belief.

    Ties go to the lowest action index.
    """
    u = np.asarray(u, dtype=float)[None, :]
    return int(_greedy_actions(u, np.array([o]), frozen)[0])


@dataclass(frozen=True, eq=False)
class BeliefGreedy:
    frozen: FrozenModel


@dataclass(frozen=True, eq=False)
class StateGreedy:
    """Greedy on a state-indexed Q-table, given the true state."""

    q: np.ndarray


@dataclass(frozen=True, eq=False)
class ObservationGreedy:
    """Greedy on an observation-indexed Q-table."""

    q: np.ndarray


EvalPolicy = Union[BeliefGreedy, StateGreedy, ObservationGreedy]


def _categorical_rows(cdf_rows, u):
    idx = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def evaluate_policy(model: PomdpModel, policy: EvalPolicy, episodes: int, steps: int,
                    rng: np.random.Generator) -> float:
    """Mean reward per step over ``episodes`` runs of ``steps`` steps.

    Each episode starts from a uniformly drawn state and, for the belief
    policy, a uniform belief. Actions are greedy throughout.
    """
    if episodes < 1 or steps < 1:
        raise ContractError("episodes and steps must be >= 1")
    I = model.num_states
    obs_cdf = np.cumsum(model.obs, axis=1)
    trans_cdf = np.cumsum(model.transition, axis=2)
    s = rng.integers(I, size=episodes)
    belief = None
    if isinstance(policy, BeliefGreedy):
        if policy.frozen.transition.shape != model.transition.shape:
            raise ContractError("frozen model dimensions do not match the environment")
        belief = np.full((episodes, I), 1.0 / I)
    elif not isinstance(policy, (StateGreedy, ObservationGreedy)):
        raise ContractError(f"unknown policy type {type(policy).__name__}")
    total = 0.0
    for _ in range(steps):
        uo, us = rng.random(episodes), rng.random(episodes)
        z = rng.standard_normal(episodes)
        o = _categorical_rows(obs_cdf[s], uo)
        if belief is not None:
            a = _greedy_actions(belief, o, policy.frozen)
        elif isinstance(policy, StateGreedy):
            a = np.argmax(policy.q[s], axis=1)
        else:
            a = np.argmax(policy.q[o], axis=1)
        r = model.reward[a, s] + model.sigma * z
        if belief is not None:
            belief = _belief_update(belief, o, a, r, policy.frozen)
        s = _categorical_rows(trans_cdf[a, s], us)
        total += r.sum()
    return total / (episodes * steps)
