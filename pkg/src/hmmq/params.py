"""Estimator parameter vector, its softmax realization and derivatives.

The flat parameter vector is laid out as::

    [ p_logits (I*I) | o_logits (I*J) | r_values (K*I) | sigma ]

``p_logits`` and ``o_logits`` are row-major logits of the state transition
and observation matrices, ``r_values[a, i]`` is the mean reward of action
``a`` in state ``i`` and ``sigma`` the reward noise scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .pomdp import BehaviorPolicy, ContractError, ExtendedObs

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Bounds:
    """Box constraint set for the parameter iterates."""

    logit_lo: float = -10.0
    logit_hi: float = 10.0
    sigma_floor: float = 0.1
    sigma_ceil: float = 100.0
    r_lo: float = -1e3
    r_hi: float = 1e3

    def __post_init__(self):
        if not (self.logit_lo < self.logit_hi and 0 < self.sigma_floor < self.sigma_ceil
                and self.r_lo < self.r_hi):
            raise ContractError(f"inconsistent bounds {self}")


@dataclass(frozen=True)
class InitRanges:
    logit_halfwidth: float = 0.5
    r_halfwidth: float = 1.0
    sigma: float = 2.0


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing step size ``scale * n**-exponent``."""

    exponent: float = 0.4
    scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.exponent <= 1:
            raise ContractError(f"exponent must lie in (0, 1], got {self.exponent}")
        if not self.scale > 0:
            raise ContractError(f"scale must be positive, got {self.scale}")


def step_size(schedule: StepSchedule, n: int) -> float:
    if n < 1:
        raise ContractError(f"step index must be >= 1, got {n}")
    # via log2 so powers of two give exact results (32**-0.4 == 0.25)
    return schedule.scale * 2.0 ** (-schedule.exponent * math.log2(n))


class Layout(NamedTuple):
    I: int
    J: int
    K: int

    @property
    def size(self) -> int:
        return self.I * self.I + self.I * self.J + self.K * self.I + 1

    @property
    def o_offset(self) -> int:
        return self.I * self.I

    @property
    def r_offset(self) -> int:
        return self.I * self.I + self.I * self.J

    @property
    def sigma_index(self) -> int:
        return self.size - 1


@dataclass(eq=False)
class ThetaParams:
    """Flat parameter vector plus its dimensions.

    The ``p_logits``/``o_logits``/``r_values`` properties are reshaped views
    into ``vec``.
    """

    vec: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.vec = np.asarray(self.vec, dtype=float)
        self.layout = Layout(*self.layout)
        if self.vec.shape != (self.layout.size,):
            raise ContractError(
                f"theta vector has shape {self.vec.shape}, layout needs ({self.layout.size},)")

    @classmethod
    def from_parts(cls, p_logits, o_logits, r_values, sigma) -> "ThetaParams":
        p_logits = np.asarray(p_logits, dtype=float)
        o_logits = np.asarray(o_logits, dtype=float)
        r_values = np.asarray(r_values, dtype=float)
        I, J = o_logits.shape
        K = r_values.shape[0]
        if p_logits.shape != (I, I) or r_values.shape != (K, I):
            raise ContractError("inconsistent parameter block shapes")
        vec = np.concatenate([p_logits.ravel(), o_logits.ravel(), r_values.ravel(), [sigma]])
        return cls(vec, Layout(I, J, K))

    @property
    def p_logits(self) -> np.ndarray:
        I = self.layout.I
        return self.vec[:I * I].reshape(I, I)

    @property
    def o_logits(self) -> np.ndarray:
        lay = self.layout
        return self.vec[lay.o_offset:lay.r_offset].reshape(lay.I, lay.J)

    @property
    def r_values(self) -> np.ndarray:
        lay = self.layout
        return self.vec[lay.r_offset:lay.sigma_index].reshape(lay.K, lay.I)

    @property
    def sigma(self) -> float:
        return float(self.vec[-1])

    def copy(self) -> "ThetaParams":
        return ThetaParams(self.vec.copy(), self.layout)


class Realized(NamedTuple):
    P: np.ndarray
    O: np.ndarray
    R: np.ndarray
    sigma: float


def softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def realize(theta: ThetaParams) -> Realized:
    """Map the parameter vector to ``(P, O, R, sigma)``."""
    return Realized(softmax_rows(theta.p_logits), softmax_rows(theta.o_logits),
                    theta.r_values.copy(), theta.sigma)


@lru_cache(maxsize=None)
def _clip_vectors(layout, bounds):
    lay = Layout(*layout)
    lo = np.empty(lay.size)
    hi = np.empty(lay.size)
    lo[:lay.r_offset], hi[:lay.r_offset] = bounds.logit_lo, bounds.logit_hi
    lo[lay.r_offset:lay.sigma_index], hi[lay.r_offset:lay.sigma_index] = bounds.r_lo, bounds.r_hi
    lo[-1], hi[-1] = bounds.sigma_floor, bounds.sigma_ceil
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


def project_vector(vec, layout: Layout, bounds: Bounds) -> np.ndarray:
    lo, hi = _clip_vectors(tuple(layout), bounds)
    return np.clip(vec, lo, hi)


def project_H(theta: ThetaParams, bounds: Bounds = Bounds()) -> ThetaParams:
    """Euclidean projection onto the box ``H``."""
    return ThetaParams(project_vector(theta.vec, theta.layout, bounds), theta.layout)


def in_H(theta: ThetaParams, bounds: Bounds = Bounds()) -> bool:
    lo, hi = _clip_vectors(tuple(theta.layout), bounds)
    return bool(np.all(theta.vec >= lo) and np.all(theta.vec <= hi))


def init_theta(I: int, J: int, K: int, rng: np.random.Generator,
               ranges: InitRanges = InitRanges(), bounds: Bounds = Bounds()) -> ThetaParams:
    lay = Layout(I, J, K)
    w = ranges.logit_halfwidth
    p = rng.uniform(-w, w, size=(I, I))
    o = rng.uniform(-w, w, size=(I, J))
    r = rng.uniform(-ranges.r_halfwidth, ranges.r_halfwidth, size=(K, I))
    theta = ThetaParams.from_parts(p, o, r, ranges.sigma)
    assert theta.layout == lay
    return project_H(theta, bounds)


# Emission likelihood b_i(y) = O[i, o] * mu[o, a] * N(r; R[a, i], sigma^2)

def log_emission_terms(o, a, r, real: Realized, mu_oa: float):
    """Log of the emission likelihood per state, plus the standardized residual."""
    resid = r - real.R[a]
    s2 = real.sigma * real.sigma
    logb = (np.log(real.O[:, o]) + np.log(mu_oa)
            - LOG_SQRT_2PI - np.log(real.sigma) - 0.5 * resid * resid / s2)
    return logb, resid


def emission(y: ExtendedObs, theta: ThetaParams, policy: BehaviorPolicy) -> np.ndarray:
    """Per-state likelihood of the extended observation (not normalized)."""
    real = realize(theta)
    logb, _ = log_emission_terms(y.obs, y.action, y.reward, real, policy.mu[y.obs, y.action])
    return np.exp(logb)


@lru_cache(maxsize=None)
def _emission_grad_index(layout):
    """Row/column indices of the structurally non-zero emission derivatives."""
    lay = Layout(*layout)
    I, J = lay.I, lay.J
    # o_logits[i, j] only touches b_i
    o_rows = lay.o_offset + np.arange(I * J)
    o_cols = np.repeat(np.arange(I), J)
    return o_rows, o_cols


def emission_grad_from(b, resid, o, a, real: Realized, layout: Layout) -> np.ndarray:
    """Assemble the (L, I) table of emission derivatives from ``b`` and residuals.

    ``b`` may be any positive rescaling of the emission vector; the result is
    rescaled by the same factor.
    """
    I, J = layout.I, layout.J
    sig = real.sigma
    G = np.zeros((layout.size, I))
    o_rows, o_cols = _emission_grad_index(tuple(layout))
    onehot = np.zeros(J)
    onehot[o] = 1.0
    G[o_rows, o_cols] = (b[:, None] * (onehot[None, :] - real.O)).ravel()
    r_rows = layout.r_offset + a * I + np.arange(I)
    G[r_rows, np.arange(I)] = b * resid / (sig * sig)
    G[-1] = b * (resid * resid / sig ** 3 - 1.0 / sig)
    return G


def emission_grad(y: ExtendedObs, theta: ThetaParams, policy: BehaviorPolicy) -> np.ndarray:
    """``G[l, i] = d b_i / d theta_l`` for every parameter ``l`` and state ``i``.

    The transition logits and the behavior policy contribute nothing.
    """
    real = realize(theta)
    logb, resid = log_emission_terms(y.obs, y.action, y.reward, real, policy.mu[y.obs, y.action])
    return emission_grad_from(np.exp(logb), resid, y.obs, y.action, real, theta.layout)


def transition_grad_weighted(P, v) -> np.ndarray:
    """``(d P^T / d p_logits[i, k]) @ v`` for all ``(i, k)``, as an (I, I*I) block.

    Column ``i*I + k`` equals ``v_i P[i, k] (e_k - P[i, :])``.
    """
    I = P.shape[0]
    W = v[:, None] * P
    eye = np.eye(I)
    block = W[None, :, :] * (eye[:, None, :] - P.T[:, :, None])
    return block.reshape(I, I * I)


def transition_grad(theta: ThetaParams) -> np.ndarray:
    """``D[l, i, j] = d P[i, j] / d theta_l``; zero for non-transition parameters."""
    lay = theta.layout
    I = lay.I
    P = softmax_rows(theta.p_logits)
    D = np.zeros((lay.size, I, I))
    eye = np.eye(I)
    # d P[i, j] / d alpha[i, k] = P[i, j] (delta_jk - P[i, k])
    blk = P[:, None, :] * (eye[None, :, :] - P[:, :, None])  # [i, k, j]
    for i in range(I):
        D[i * I:(i + 1) * I, i, :] = blk[i]
    return D
