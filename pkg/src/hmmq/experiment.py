"""Training, evaluation and report orchestration."""
from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import best_permutation_match, partial_q_learning_step, q_learning_step
from .config import RunConfig, save_config
from .estimators import (Session, init_session, load_checkpoint, save_checkpoint,
                         session_from_record)
from .fast import fast_step
from .params import Layout, realize
from .policy import (BeliefGreedy, ObservationGreedy, StateGreedy, evaluate_policy, freeze)
from .pomdp import make_streams, sample_step

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "ll_ma", "sigma", "maxq_hmm", "maxq_full", "maxq_partial",
                  "eval_hmm", "eval_full", "eval_partial"]
EVAL_COLUMNS = ["step", "eval_hmm", "eval_full", "eval_partial"]


class ReportError(ValueError):
    """Malformed metrics input; the message carries the line number."""


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % x


class MetricsWriter:
    """Append-only CSV writer; each row is flushed as soon as it is written."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = list(columns)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="")
        if new:
            self._write_line(self.columns)

    def _write_line(self, cells):
        self._fh.write(",".join(cells) + "\n")
        self._fh.flush()

    def write(self, row: dict):
        self._write_line([fmt(row.get(c)) for c in self.columns])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class Trainer:
    """HMM Q-learning session plus the two tabular baselines on one trajectory.

    The baselines are updated one step late, when the successor state and
    observation become available, which mirrors the timing of the HMM
    Q update.
    """

    config: RunConfig
    session: Session
    rngs: dict
    state: int
    q_full: np.ndarray
    q_partial: np.ndarray
    prev: tuple | None = None  # (s, o, a, r) of the previous step
    log_likelihoods: list = field(default_factory=list)

    @classmethod
    def start(cls, config: RunConfig) -> "Trainer":
        rngs = make_streams(config.seed)
        m = config.model
        layout = Layout(m.num_states, m.num_obs, m.num_actions)
        session = init_session(layout, config.settings(), rngs["init"], config.init)
        if config.initial_state is None:
            s0 = int(rngs["env"].integers(m.num_states))
        else:
            s0 = config.initial_state
        return cls(config, session, rngs, s0,
                   np.zeros((m.num_states, m.num_actions)),
                   np.zeros((m.num_obs, m.num_actions)))

    def step(self) -> float:
        cfg = self.config
        eps = self.session.next_epsilon()
        y, s_next = sample_step(cfg.model, cfg.policy, self.state, self.rngs["env"])
        fast_step(self.session, y)
        if self.prev is not None:
            s, o, a, r = self.prev
            gamma = cfg.model.discount
            self.q_full = q_learning_step(self.q_full, s, a, r, self.state, eps, gamma)
            self.q_partial = partial_q_learning_step(self.q_partial, o, a, r, y.obs, eps, gamma)
        self.prev = (self.state, y.obs, y.action, y.reward)
        self.state = s_next
        ll = self.session.last_log_likelihood
        self.log_likelihoods.append(ll)
        return ll

    def evaluate(self, rng=None) -> dict:
        rng = self.rngs["eval"] if rng is None else rng
        return evaluate_all(self.config, self.session, self.q_full, self.q_partial, rng)

    def checkpoint_extra(self) -> dict:
        return {
            "q_full": self.q_full.tolist(),
            "q_partial": self.q_partial.tolist(),
            "env_state": self.state,
            "prev": None if self.prev is None else list(self.prev),
            "seed": self.config.seed,
        }

    def save(self, path) -> Path:
        return save_checkpoint(path, self.session, self.checkpoint_extra(), self.rngs)


def evaluate_all(config: RunConfig, session: Session, q_full, q_partial, rng) -> dict:
    """Mean reward per step of the belief, full-state and observation policies."""
    m = config.model
    ep, st = config.eval_episodes, config.eval_steps
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        frozen = freeze(session)
    return {
        "eval_hmm": float(evaluate_policy(m, BeliefGreedy(frozen), ep, st, rng)),
        "eval_full": float(evaluate_policy(m, StateGreedy(np.asarray(q_full)), ep, st, rng)),
        "eval_partial": float(evaluate_policy(m, ObservationGreedy(np.asarray(q_partial)), ep, st, rng)),
    }


@dataclass
class TrainResult:
    trainer: Trainer
    metrics_path: Path | None
    checkpoint_path: Path | None
    eval_rows: list

    @property
    def session(self) -> Session:
        return self.trainer.session

    @property
    def log_likelihoods(self) -> np.ndarray:
        return np.asarray(self.trainer.log_likelihoods)


def run_train(config: RunConfig, out_dir=None, write: bool = True) -> TrainResult:
    """Run the configured number of steps, logging metrics and checkpoints.

    With ``write=False`` nothing touches the filesystem; evaluations still
    run at the configured cadence.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    trainer = Trainer.start(config)
    writer = None
    metrics_path = ckpt_path = None
    if write:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        save_config(config, out / "config.yaml")
        metrics_path = out / "metrics.csv"
        if metrics_path.exists():
            metrics_path.unlink()
        columns = METRIC_COLUMNS + (["wall_clock"] if config.wall_clock else [])
        writer = MetricsWriter(metrics_path, columns)
    t0 = time.perf_counter()
    lls = trainer.log_likelihoods
    eval_rows = []
    try:
        for n in range(1, config.steps + 1):
            trainer.step()
            do_eval = config.eval_interval and n % config.eval_interval == 0
            do_log = n % config.log_interval == 0 or n == config.steps or do_eval
            if not do_log:
                continue
            row = {
                "step": n,
                "ll_ma": float(np.mean(lls[-config.ll_window:])),
                "sigma": trainer.session.theta.sigma,
                "maxq_hmm": float(trainer.session.q.max()),
                "maxq_full": float(trainer.q_full.max()),
                "maxq_partial": float(trainer.q_partial.max()),
            }
            if do_eval:
                ev = trainer.evaluate()
                row.update(ev)
                eval_rows.append({"step": n, **ev})
                if write:
                    trainer.save(out / "checkpoints" / f"step_{n:09d}.json")
                log.info("step %d: ll_ma=%.4f sigma=%.4f eval=%s", n, row["ll_ma"],
                         row["sigma"], {k: round(v, 3) for k, v in ev.items()})
            if config.wall_clock:
                row["wall_clock"] = time.perf_counter() - t0
            if writer is not None:
                writer.write(row)
        if write:
            ckpt_path = trainer.save(out / "checkpoint.json")
    finally:
        if writer is not None:
            writer.close()
    return TrainResult(trainer, metrics_path, ckpt_path, eval_rows)


def run_eval(checkpoint, config: RunConfig, out_dir=None, rng=None) -> list[dict]:
    """Freeze a checkpoint, evaluate the three policies, append to ``eval.csv``."""
    record = load_checkpoint(checkpoint)
    session = session_from_record(record, config.settings())
    if rng is None:
        rng = make_streams(config.seed)["eval"]
    ev = evaluate_all(config, session, record["q_full"], record["q_partial"], rng)
    row = {"step": session.n, **ev}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with MetricsWriter(out / "eval.csv", EVAL_COLUMNS) as w:
            w.write(row)
    return [row]


def read_metrics(path) -> list[dict]:
    """Parse a metrics CSV, checking shape, numbers and step monotonicity."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        if "step" not in header:
            raise ReportError(f"{path}:1: header lacks a 'step' column")
        last = -math.inf
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(header):
                raise ReportError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
            row = {}
            for key, cell in zip(header, cells):
                if cell == "":
                    row[key] = math.nan
                    continue
                try:
                    row[key] = float(cell)
                except ValueError:
                    raise ReportError(f"{path}:{lineno}: {key}={cell!r} is not a number") from None
            if not row["step"] > last:
                raise ReportError(f"{path}:{lineno}: step {row['step']:g} does not increase")
            last = row["step"]
            rows.append(row)
    return rows


SERIES = {
    "loglik.csv": ["step", "ll_ma"],
    "sigma.csv": ["step", "sigma"],
    "maxq.csv": ["step", "maxq_hmm", "maxq_full", "maxq_partial"],
    "reward.csv": ["step", "eval_hmm", "eval_full", "eval_partial"],
}


@dataclass
class Report:
    series: dict
    summary: dict
    text: str


def emit_report(metrics_path, out_dir, checkpoint=None, model=None) -> Report:
    """Split a metrics file into per-figure series and summarize the final state.

    With a checkpoint, the HMM Q-table is matched to the full-observation
    table over state relabelings; with a model as well, the learned
    observation matrix is compared against the true one.
    """
    rows = read_metrics(metrics_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not rows:
        warnings.warn(f"{metrics_path}: no metric rows; writing empty series", RuntimeWarning,
                      stacklevel=2)
    series = {}
    for name, cols in SERIES.items():
        data = [r for r in rows if not all(math.isnan(r.get(c, math.nan)) for c in cols[1:])]
        series[name] = [[r.get(c, math.nan) for c in cols] for r in data]
        with MetricsWriter(out / name, cols) as w:
            for r in data:
                w.write({c: (int(r[c]) if c == "step" else r.get(c, math.nan)) for c in cols})
    summary = {}
    if rows:
        last = rows[-1]
        summary.update({k: last.get(k, math.nan) for k in METRIC_COLUMNS})
        evals = series["reward.csv"]
        if evals:
            summary.update(zip(["last_eval_step", "eval_hmm", "eval_full", "eval_partial"], evals[-1]))
    if checkpoint is not None:
        record = load_checkpoint(checkpoint)
        q_hmm = np.array(record["q"])
        q_full = np.array(record["q_full"])
        perm, dev = best_permutation_match(q_hmm, q_full)
        summary["q_permutation"] = [p + 1 for p in perm]
        summary["q_max_deviation"] = dev
        with MetricsWriter(out / "q_comparison.csv",
                           ["state", "action", "q_hmm_permuted", "q_full"]) as w:
            for i in range(q_full.shape[0]):
                for a in range(q_full.shape[1]):
                    w.write({"state": i + 1, "action": a + 1,
                             "q_hmm_permuted": q_hmm[perm[i], a], "q_full": q_full[i, a]})
        if model is not None:
            layout = Layout(*record["layout"])
            from .params import ThetaParams
            O_est = realize(ThetaParams(np.array(record["theta"]), layout)).O
            operm, odev = best_permutation_match(O_est, model.obs)
            summary["obs_permutation"] = [p + 1 for p in operm]
            summary["obs_max_deviation"] = odev
    lines = [f"{k:>18}: {v}" for k, v in summary.items()]
    text = "\n".join(lines) + ("\n" if lines else "")
    (out / "summary.txt").write_text(text)
    return Report(series, summary, text)
