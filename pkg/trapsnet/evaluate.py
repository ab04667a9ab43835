"""
Policy evaluation, baselines, normalized scores and learning curves.

A policy's value is the mean discounted return over independent rollouts.
Run i always uses child stream i of the evaluation stream, so two policies
evaluated with the same seed face the same random numbers.
"""
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from . import EVAL_RUNS
from .errors import DegenerateRange, ParseError, UsageError
from .mdp import (
    NOOP,
    Domain,
    GroundAction,
    PolicyDistribution,
    RngStream,
    discounted_return,
    legal_actions,
    rollout,
)
from .model import load_model, policy_fn

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["instance", "policy_id", "runs", "mean", "stderr",
                  "horizon"]
CURVE_COLUMNS = ["t", "V", "alpha", "stderr", "policy_id", "v_sup", "v_inf"]
PLOT_COLUMNS = ["source", "t", "V", "alpha", "stderr", "policy_id"]


@dataclass
class EvalReport:
    instance: str
    policy_id: str
    runs: int
    mean: float
    stderr: float
    horizon: int


@dataclass
class CurvePoint:
    t: float
    V: float
    alpha: float
    stderr: float
    policy_id: str


@dataclass
class LearningCurve:
    points: List[CurvePoint]
    reports: List[EvalReport]
    v_sup: float
    v_inf: float

    def frame(self):
        rows = [dict(asdict(point), v_sup=self.v_sup, v_inf=self.v_inf)
                for point in self.points]
        return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def estimate_value(instance, policy, runs=EVAL_RUNS, rng=None,
                   policy_id="policy", threads=1, horizon=None):
    """Estimate a policy's value from `runs` independent rollouts."""
    if runs < 1:
        raise UsageError("runs must be at least 1")
    rng = RngStream(0) if rng is None else rng
    horizon = instance.horizon if horizon is None else horizon

    def run(index):
        trajectory = rollout(instance, policy, rng.child(index), horizon)
        return discounted_return(trajectory, instance.discount)

    if threads > 1:
        with ThreadPoolExecutor(threads) as executor:
            returns = list(executor.map(run, range(runs)))
    else:
        returns = [run(index) for index in range(runs)]

    returns = np.asarray(returns)
    stderr = 0.0
    if runs > 1:
        stderr = float(returns.std(ddof=1) / math.sqrt(runs))
    return EvalReport(instance.name, policy_id, runs, float(returns.mean()),
                      stderr, horizon)


def alpha(v, v_sup, v_inf, clamp=True):
    """Fraction of the [v_inf, v_sup] range achieved by v.

    Reported values are clamped to [0, 1].
    """
    if not v_sup > v_inf:
        raise DegenerateRange(
            f"v_sup ({v_sup}) must be greater than v_inf ({v_inf})"
        )
    score = (v - v_inf) / (v_sup - v_inf)
    if clamp:
        score = min(1.0, max(0.0, score))
    return score


def random_policy(instance):
    dist = PolicyDistribution.uniform(legal_actions(instance))
    return lambda state: dist


def noop_policy(instance):
    dist = PolicyDistribution.deterministic(legal_actions(instance), NOOP)
    return lambda state: dist


def _best(candidates, scores):
    """Highest-scoring candidate, ties broken toward the lowest index."""
    if not candidates.any():
        return None
    scores = np.where(candidates, scores, -np.inf)
    return int(np.argmax(scores))


def sysadmin_greedy(instance, state):
    """Reboot the failed computer with the most running neighbors."""
    running = state.fluents[:, 0]
    return _best(running == 0, instance.adjacency.astype(np.int64) @ running)


def gol_greedy(instance, state):
    """Revive the dead cell with the most live neighbors."""
    alive = state.fluents[:, 0]
    return _best(alive == 0, instance.adjacency.astype(np.int64) @ alive)


def acad_greedy(instance, state):
    """Take the unmet requirement with the most prerequisites passed."""
    passed = state.fluents[:, 0]
    required = instance.unary_nonfluents[:, 0] > 0
    prereqs_passed = instance.adjacency.T.astype(np.int64) @ passed
    return _best(required & (passed == 0), prereqs_passed)


GREEDY_RULES = {
    Domain.SYSADMIN: sysadmin_greedy,
    Domain.GAME_OF_LIFE: gol_greedy,
    Domain.ACADEMIC_ADVISING: acad_greedy,
}


def greedy_policy(instance):
    actions = legal_actions(instance)
    rule = GREEDY_RULES[instance.domain]

    def policy(state):
        index = rule(instance, state)
        action = NOOP if index is None else GroundAction(0, index)
        return PolicyDistribution.deterministic(actions, action)

    return policy


BASELINES = {
    "random": random_policy,
    "noop": noop_policy,
    "greedy": greedy_policy,
}


def make_baseline(name, instance):
    try:
        return BASELINES[name](instance)
    except KeyError:
        raise UsageError(
            f"unknown baseline '{name}', use one of: "
            f"{', '.join(BASELINES)}"
        ) from None


def evaluate_baselines(instance, names, runs=EVAL_RUNS, seed=0, threads=1):
    return [
        estimate_value(instance, make_baseline(name, instance), runs,
                       RngStream(seed), name, threads)
        for name in names
    ]


def evaluate_checkpoint(checkpoint, instance, runs=EVAL_RUNS, seed=0,
                        threads=1, sampled=True, label="trapsnet"):
    """Greedy and, optionally, sampled value of one checkpoint."""
    model = load_model(checkpoint)
    greedy = estimate_value(
        instance, policy_fn(model, instance, greedy=True), runs,
        RngStream(seed), f"{label}-greedy", threads,
    )
    if not sampled:
        return greedy, None
    stochastic = estimate_value(
        instance, policy_fn(model, instance), runs, RngStream(seed),
        f"{label}-sampled", threads,
    )
    return greedy, stochastic


def learning_curve(checkpoints, instance, runs=EVAL_RUNS, seed=0,
                   baselines=("random", "noop", "greedy"), anchors=None,
                   sampled=True, threads=1, label="trapsnet"):
    """Evaluate every checkpoint and score it against the anchors.

    Unless `anchors` gives (v_sup, v_inf), they are the best and worst mean
    over all evaluated policies and baselines. A curve whose values are all
    equal scores 1 everywhere.
    """
    reports = evaluate_baselines(instance, baselines, runs, seed, threads)
    greedy_reports = []
    for checkpoint in checkpoints:
        greedy, stochastic = evaluate_checkpoint(
            checkpoint, instance, runs, seed, threads, sampled, label
        )
        meta = checkpoint.meta
        logger.info("t=%.1f step=%d greedy=%.4f%s", meta.elapsed_seconds,
                    meta.steps, greedy.mean,
                    "" if stochastic is None
                    else f" sampled={stochastic.mean:.4f}")
        greedy_reports.append((meta.elapsed_seconds, greedy))
        reports.append(greedy)
        if stochastic is not None:
            reports.append(stochastic)

    if anchors is None:
        means = [report.mean for report in reports]
        v_sup, v_inf = max(means), min(means)
    else:
        v_sup, v_inf = anchors

    points = []
    for elapsed, report in greedy_reports:
        if anchors is None and v_sup == v_inf:
            score = 1.0
        else:
            score = alpha(report.mean, v_sup, v_inf)
        points.append(CurvePoint(elapsed, report.mean, score, report.stderr,
                                 report.policy_id))
    return LearningCurve(points, reports, v_sup, v_inf)


def reports_frame(reports):
    return pd.DataFrame([asdict(report) for report in reports],
                        columns=REPORT_COLUMNS)


def write_csv(frame, path):
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


_LINE = re.compile(r"line (\d+)")


def read_curve(path):
    """Read a curve CSV, reporting malformed rows by line number."""
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(1, 1, f"{path}: empty file") from None
    except pd.errors.ParserError as error:
        match = _LINE.search(str(error))
        line = int(match.group(1)) if match else 1
        raise ParseError(line, 1, f"{path}: {error}") from None
    missing = [name for name in CURVE_COLUMNS[:5] if name not in frame]
    if missing:
        raise ParseError(1, 1, f"{path}: missing column(s)",
                         expected=missing)
    return frame


def merge_curves(paths, sources: Optional[List[str]] = None):
    """Stack curve files into one tidy frame with a `source` column."""
    sources = [str(path) for path in paths] if sources is None else sources
    frames = []
    for path, source in zip(paths, sources):
        frame = read_curve(Path(path))
        frame.insert(0, "source", source)
        frames.append(frame[PLOT_COLUMNS])
    if not frames:
        return pd.DataFrame(columns=PLOT_COLUMNS)
    return pd.concat(frames, ignore_index=True)
