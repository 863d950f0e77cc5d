"""One-step-ahead belief predictor, its parameter Jacobian and the score.

Emission likelihoods are handled in log space and rescaled so that their
maximum is 1 before use. The scale cancels in the predictor, the Jacobian
and the score; it only re-enters the log-likelihood additively.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .params import (Layout, Realized, ThetaParams, emission_grad_from,
                     log_emission_terms, realize, transition_grad_weighted)
from .pomdp import BehaviorPolicy, ExtendedObs


class DegenerateLikelihood(FloatingPointError):
    """The predicted likelihood of an observation is not positive."""


class FilterState(NamedTuple):
    """Belief ``u`` (length I) and its Jacobian ``omega`` (I x L)."""

    u: np.ndarray
    omega: np.ndarray


class FilterStep(NamedTuple):
    log_likelihood: float
    score: np.ndarray
    state: FilterState
    posterior: np.ndarray


def initial_filter_state(layout: Layout) -> FilterState:
    layout = Layout(*layout)
    return FilterState(np.full(layout.I, 1.0 / layout.I), np.zeros((layout.I, layout.size)))


def scaled_emission(y: ExtendedObs, real: Realized, mu_oa: float):
    """Emission vector divided by its maximum, with the log of that maximum."""
    logb, resid = log_emission_terms(y.obs, y.action, y.reward, real, mu_oa)
    shift = logb.max()
    return np.exp(logb - shift), shift, resid


def filter_step(y: ExtendedObs, state: FilterState, theta: ThetaParams,
                policy: BehaviorPolicy, real: Realized | None = None) -> FilterStep:
    """Advance the predictor and Jacobian by one observation.

    Returns the step log-likelihood ``log(b^T u)``, the score, the new
    ``(u, omega)`` and the filtered posterior ``b * u / b^T u``. Everything
    is evaluated at ``theta``.
    """
    if real is None:
        real = realize(theta)
    u, omega = state
    b, shift, resid = scaled_emission(y, real, policy.mu[y.obs, y.action])
    c = b @ u
    if not c > 0.0:
        raise DegenerateLikelihood(f"b^T u = {c!r} for observation {y}")
    G = emission_grad_from(b, resid, y.obs, y.action, real, theta.layout)
    v = b * u / c
    S = (b @ omega + G @ u) / c
    # P^T [ (b*omega + dB u) / c - v S ] covers both Phi omega and the dB term of df/dtheta
    inner = (b[:, None] * omega + G.T * u[:, None]) / c - v[:, None] * S[None, :]
    P = real.P
    I = P.shape[0]
    omega_next = P.T @ inner
    omega_next[:, :I * I] += transition_grad_weighted(P, v)
    u_next = P.T @ v
    return FilterStep(float(shift + np.log(c)), S, FilterState(u_next, omega_next), v)


def predict_belief(y: ExtendedObs, state: FilterState, theta: ThetaParams,
                   policy: BehaviorPolicy) -> np.ndarray:
    """``P^T B u / (b^T u)``."""
    return filter_step(y, state, theta, policy).state.u


def update_jacobian(y: ExtendedObs, state: FilterState, theta: ThetaParams,
                    policy: BehaviorPolicy) -> np.ndarray:
    return filter_step(y, state, theta, policy).state.omega


def step_log_likelihood(y: ExtendedObs, state: FilterState, theta: ThetaParams,
                        policy: BehaviorPolicy) -> float:
    return filter_step(y, state, theta, policy).log_likelihood


def score(y: ExtendedObs, state: FilterState, theta: ThetaParams,
          policy: BehaviorPolicy) -> np.ndarray:
    """Gradient of ``log(b^T u)`` propagated through the Jacobian ``omega``."""
    return filter_step(y, state, theta, policy).score


def run_filter(ys, theta: ThetaParams, policy: BehaviorPolicy,
               state: FilterState | None = None):
    """Run the filter at a fixed ``theta``; returns (final state, log-likelihoods)."""
    if state is None:
        state = initial_filter_state(theta.layout)
    real = realize(theta)
    lls = []
    for y in ys:
        step = filter_step(y, state, theta, policy, real)
        lls.append(step.log_likelihood)
        state = step.state
    return state, np.array(lls)
