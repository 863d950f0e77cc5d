"""Concurrent recursive estimators: HMM parameters, Q-table, joint transitions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filter import DegenerateLikelihood, FilterState, filter_step, initial_filter_state
from .params import (Bounds, InitRanges, Layout, StepSchedule, ThetaParams, init_theta,
                     log_emission_terms, project_vector, realize, step_size)
from .pomdp import BehaviorPolicy, ContractError, ExtendedObs

T_MODES = ("averaging", "literal")
Q_TIMINGS = ("alg1", "eq14")

CHECKPOINT_FORMAT = "hmmq-checkpoint/1"


def posterior_state(y: ExtendedObs, u, theta: ThetaParams, policy: BehaviorPolicy) -> np.ndarray:
    """Bayes update of the predicted belief with the current observation."""
    real = realize(theta)
    logb, _ = log_emission_terms(y.obs, y.action, y.reward, real, policy.mu[y.obs, y.action])
    w = np.exp(logb - logb.max()) * np.asarray(u, dtype=float)
    total = w.sum()
    if not total > 0.0:
        raise DegenerateLikelihood(f"posterior mass {total!r} for observation {y}")
    return w / total


def posterior_transition(prev, cur) -> np.ndarray:
    """Pair posterior as the product of consecutive filtered marginals."""
    return np.outer(prev, cur)


def q_bounds(bounds: Bounds, gamma: float, margin: float = 1.0) -> tuple[float, float]:
    r_max = max(abs(bounds.r_lo), abs(bounds.r_hi))
    q_max = r_max / (1.0 - gamma) + margin
    return -q_max, q_max


def q_update(q, p_pair, r: float, a: int, epsilon: float, gamma: float,
             limits: tuple[float, float] = (-np.inf, np.inf)) -> np.ndarray:
    """Belief-weighted Q update of column ``a``.

    Row ``i`` moves by ``epsilon * sum_j p_pair[i, j] * (r + gamma max q[j] - q[i, a])``.
    Rows are not renormalized, so the effective step of row ``i`` is
    ``epsilon * sum_j p_pair[i, j]``.
    """
    q = np.array(q, dtype=float)
    target = r + gamma * q.max(axis=1)
    col = q[:, a]
    delta = p_pair @ target - p_pair.sum(axis=1) * col
    q[:, a] = np.clip(col + epsilon * delta, *limits)
    return q


def t_update(t, p_pair, a: int, epsilon: float, mode: str = "averaging") -> np.ndarray:
    """Update slice ``a`` of the joint transition table ``t[s, a, s2]``.

    ``averaging`` tracks the running mean of the pair posterior; ``literal``
    applies ``t += epsilon * p * (1 - t)``, whose fixed point is 1 for every
    entry that keeps receiving mass.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"t_update needs epsilon in [0, 1], got {epsilon}")
    t = np.array(t, dtype=float)
    sl = t[:, a, :]
    if mode == "averaging":
        t[:, a, :] = sl + epsilon * (p_pair - sl)
    elif mode == "literal":
        t[:, a, :] = sl + epsilon * p_pair * (1.0 - sl)
    else:
        raise ContractError(f"unknown t_update mode {mode!r}")
    return t


def normalize_transitions(t, return_unvisited: bool = False):
    """Conditional transitions ``T[a, s, s2]`` from the joint table ``t[s, a, s2]``.

    Rows with zero marginal become uniform and are reported as unvisited
    ``(s, a)`` pairs.
    """
    t = np.asarray(t, dtype=float)
    cond = np.transpose(t, (1, 0, 2)).copy()
    marg = cond.sum(axis=2, keepdims=True)
    unvisited = marg[..., 0] <= 0.0
    I = t.shape[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(unvisited[..., None], 1.0 / I, cond / np.where(marg > 0, marg, 1.0))
    if return_unvisited:
        pairs = [(int(s), int(a)) for a, s in np.argwhere(unvisited)]
        return cond, pairs
    return cond


@dataclass(frozen=True)
class EstimatorSettings:
    policy: BehaviorPolicy
    gamma: float
    schedule: StepSchedule = StepSchedule()
    bounds: Bounds = Bounds()
    t_mode: str = "averaging"
    q_timing: str = "alg1"
    q_margin: float = 1.0

    def __post_init__(self):
        if self.t_mode not in T_MODES:
            raise ContractError(f"t_mode must be one of {T_MODES}, got {self.t_mode!r}")
        if self.q_timing not in Q_TIMINGS:
            raise ContractError(f"q_timing must be one of {Q_TIMINGS}, got {self.q_timing!r}")
        if not 0 <= self.gamma < 1:
            raise ContractError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def q_limits(self) -> tuple[float, float]:
        return q_bounds(self.bounds, self.gamma, self.q_margin)


def hmm_sgd_step(theta: ThetaParams, state: FilterState, y: ExtendedObs, epsilon: float,
                 policy: BehaviorPolicy, bounds: Bounds = Bounds()):
    """Projected score ascent on theta; the filter advances under the old theta."""
    step = filter_step(y, state, theta, policy)
    vec = project_vector(theta.vec + epsilon * step.score, theta.layout, bounds)
    return ThetaParams(vec, theta.layout), step.state


@dataclass(eq=False)
class Session:
    """Mutable state of one HMM Q-learning run."""

    settings: EstimatorSettings
    theta: ThetaParams
    filter: FilterState
    q: np.ndarray
    t: np.ndarray
    p_prev: np.ndarray
    r_prev: float
    a_prev: int
    n: int = 0
    last_log_likelihood: float = math.nan
    last_posterior: np.ndarray | None = field(default=None, repr=False)

    @property
    def layout(self) -> Layout:
        return self.theta.layout

    def next_epsilon(self) -> float:
        return step_size(self.settings.schedule, self.n + 1)


def init_session(layout, settings: EstimatorSettings, rng: np.random.Generator,
                 ranges: InitRanges = InitRanges()) -> Session:
    """Fresh session: random theta, uniform belief, zero Q, uniform joint table."""
    I, J, K = Layout(*layout)
    theta = init_theta(I, J, K, rng, ranges, settings.bounds)
    return Session(
        settings=settings,
        theta=theta,
        filter=initial_filter_state(theta.layout),
        q=np.zeros((I, K)),
        t=np.full((I, K, I), 1.0 / I),
        p_prev=np.full(I, 1.0 / I),
        r_prev=0.0,
        a_prev=int(rng.integers(K)),
    )


def algorithm1_step(session: Session, y: ExtendedObs) -> Session:
    """One pass of the HMM Q-learning loop, mutating ``session`` in place.

    Order: score ascent and filter advance, filtered posterior, pair
    posterior with the previous posterior, Q update, joint-table update,
    register rotation. All sub-updates share one step size.
    """
    cfg = session.settings
    eps = session.next_epsilon()
    theta = session.theta
    step = filter_step(y, session.filter, theta, cfg.policy)
    vec = project_vector(theta.vec + eps * step.score, theta.layout, cfg.bounds)

    p_cur = step.posterior
    p_pair = posterior_transition(session.p_prev, p_cur)
    if cfg.q_timing == "alg1":
        r_q, a_q = session.r_prev, session.a_prev
    else:
        r_q, a_q = y.reward, y.action
    session.q = q_update(session.q, p_pair, r_q, a_q, eps, cfg.gamma, cfg.q_limits)
    # the pair (s_{n-1}, s_n) was produced by the previous action
    # capped so schedules with scale > 1 cannot push entries out of [0, 1]
    session.t = t_update(session.t, p_pair, session.a_prev, min(eps, 1.0), cfg.t_mode)

    session.theta = ThetaParams(vec, theta.layout)
    session.filter = step.state
    session.p_prev, session.r_prev, session.a_prev = p_cur, float(y.reward), int(y.action)
    session.last_log_likelihood = step.log_likelihood
    session.last_posterior = p_cur
    session.n += 1
    return session


# Checkpoints: a flat JSON object. Python floats serialize with repr(), which
# round-trips exactly, so reload reproduces every value bit for bit.

def session_record(session: Session) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "n": session.n,
        "layout": list(session.layout),
        "theta": session.theta.vec.tolist(),
        "u": session.filter.u.tolist(),
        "omega": session.filter.omega.tolist(),
        "q": session.q.tolist(),
        "t": session.t.tolist(),
        "p_prev": session.p_prev.tolist(),
        "r_prev": session.r_prev,
        "a_prev": session.a_prev,
        "last_log_likelihood": None if math.isnan(session.last_log_likelihood)
        else session.last_log_likelihood,
    }


def session_from_record(record: dict, settings: EstimatorSettings) -> Session:
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"not a checkpoint record (format={record.get('format')!r})")
    layout = Layout(*record["layout"])
    ll = record.get("last_log_likelihood")
    return Session(
        settings=settings,
        theta=ThetaParams(np.array(record["theta"]), layout),
        filter=FilterState(np.array(record["u"]), np.array(record["omega"])),
        q=np.array(record["q"]),
        t=np.array(record["t"]),
        p_prev=np.array(record["p_prev"]),
        r_prev=float(record["r_prev"]),
        a_prev=int(record["a_prev"]),
        n=int(record["n"]),
        last_log_likelihood=math.nan if ll is None else float(ll),
    )


def save_checkpoint(path, session: Session, extra: dict | None = None,
                    rngs: dict[str, np.random.Generator] | None = None) -> Path:
    """Write the session (plus optional extra entries and RNG states) to ``path``."""
    record = session_record(session)
    if rngs:
        record["rng"] = {name: g.bit_generator.state for name, g in rngs.items()}
    if extra:
        clash = set(extra) & set(record)
        if clash:
            raise ContractError(f"extra checkpoint keys collide: {sorted(clash)}")
        record.update(extra)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)
    return path


class CheckpointError(ContractError):
    """Unreadable or foreign checkpoint file."""


def load_checkpoint(path) -> dict:
    path = Path(path)
    try:
        record = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(record, dict) or record.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} record")
    return record


def restore_rngs(record: dict) -> dict[str, np.random.Generator]:
    out = {}
    for name, state in record.get("rng", {}).items():
        bg = getattr(np.random, state["bit_generator"])()
        bg.state = state
        out[name] = np.random.Generator(bg)
    return out
