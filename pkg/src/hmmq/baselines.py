"""Tabular Q-learning baselines, a value-iteration oracle and label matching."""
from __future__ import annotations

import itertools

import numpy as np

from .pomdp import ContractError, PomdpModel

MAX_PERMUTATION_STATES = 8


def q_learning_step(q, s: int, a: int, r: float, s_next: int, epsilon: float,
                    gamma: float) -> np.ndarray:
    """Watkins update of entry ``(s, a)``."""
    q = np.array(q, dtype=float)
    q[s, a] += epsilon * (r + gamma * q[s_next].max() - q[s, a])
    return q


def partial_q_learning_step(q, o: int, a: int, r: float, o_next: int, epsilon: float,
                            gamma: float) -> np.ndarray:
    """Watkins update keyed on observations instead of states."""
    return q_learning_step(q, o, a, r, o_next, epsilon, gamma)


def bellman_backup(model: PomdpModel, q) -> np.ndarray:
    """``r(s, a) + gamma * sum_s2 T[a, s, s2] max_a2 q(s2, a2)`` as an (I, K) table."""
    v = np.asarray(q).max(axis=1)
    return model.reward.T + model.discount * (model.transition @ v).T


def value_iteration(model: PomdpModel, tol: float = 1e-9, max_sweeps: int = 100_000) -> np.ndarray:
    """Optimal Q of the fully observed MDP, to sup-norm residual below ``tol``."""
    if not tol > 0:
        raise ContractError(f"tol must be positive, got {tol}")
    q = np.zeros((model.num_states, model.num_actions))
    for _ in range(max_sweeps):
        q_new = bellman_backup(model, q)
        residual = np.abs(q_new - q).max()
        q = q_new
        if residual < tol:
            return q
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_sweeps} sweeps")


def best_permutation_match(A, B) -> tuple[tuple[int, ...], float]:
    """State relabeling ``perm`` minimizing ``max |A[perm] - B|``.

    Exhaustive over all permutations of the rows; among equal deviations
    the lexicographically smallest permutation wins.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ContractError(f"shape mismatch {A.shape} vs {B.shape}")
    n = A.shape[0]
    if n > MAX_PERMUTATION_STATES:
        raise ContractError(f"refusing exhaustive search over {n}! permutations")
    best, best_dev = None, np.inf
    for perm in itertools.permutations(range(n)):
        dev = np.abs(A[list(perm)] - B).max()
        if dev < best_dev:
            best, best_dev = perm, dev
    return best, float(best_dev)


def permute_transitions(T, perm) -> np.ndarray:
    """Relabel both state axes of a (K, I, I) transition tensor."""
    p = list(perm)
    return np.asarray(T)[:, p][:, :, p]


def best_transition_match(T_est, T_true) -> tuple[tuple[int, ...], float]:
    """Like :func:`best_permutation_match` for (K, I, I) transition tensors."""
    T_est = np.asarray(T_est, dtype=float)
    T_true = np.asarray(T_true, dtype=float)
    if T_est.shape != T_true.shape:
        raise ContractError(f"shape mismatch {T_est.shape} vs {T_true.shape}")
    n = T_est.shape[1]
    if n > MAX_PERMUTATION_STATES:
        raise ContractError(f"refusing exhaustive search over {n}! permutations")
    best, best_dev = None, np.inf
    for perm in itertools.permutations(range(n)):
        dev = np.abs(permute_transitions(T_est, perm) - T_true).max()
        if dev < best_dev:
            best, best_dev = perm, dev
    return best, float(best_dev)
