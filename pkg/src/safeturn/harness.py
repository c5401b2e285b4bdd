"""Experiment orchestration: training, evaluation, baseline sweep, CSV output."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .agent import (D_CAP, STATE_DIM, DQNLearner, EpisodeResult, GreedyPolicy, Policy,
                    RandomMaskedPolicy, RewardSpec, WaitPolicy, run_episode)
from .config import RunConfig
from .geometry import build_junction
from .guarantees import SafetyBudget
from .network import CheckpointError, QNetwork
from .shield import WAIT, compute_mask
from .sim import CollisionError

TRAIN_STREAM, EVAL_STREAM, LEARNER_STREAM, POLICY_STREAM = 0, 1, 2, 3

TRAIN_COLUMNS = ("episode", "outcome", "return", "d", "braking", "steps", "presafe_steps",
                 "go_action", "epsilon", "ma_return", "ma_d", "ma_braking")
EVAL_COLUMNS = ("trial", "outcome", "d", "braking", "steps", "presafe_steps", "go_action",
                "return")
SUMMARY_COLUMNS = ("metric", "value")
HISTOGRAM_COLUMNS = ("bin_lo", "bin_hi", "count")
BASELINE_COLUMNS = ("margin", "trials", "mean_d", "mean_braking", "timeout_rate", "collisions")
TIMEOUT_D = -1.0
HIST_EDGES = tuple(range(0, 55, 5))


class SafetyViolation(RuntimeError):
    """A collision happened under the shield; carries the forensic dump path."""

    def __init__(self, message: str, dump: Path | None):
        super().__init__(message)
        self.dump = dump


def seed_for(base: int, stream: int, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base), stream, int(index)])


@dataclass
class TrialMetrics:
    trial: int
    outcome: str
    d: float           # TIMEOUT_D for timeouts
    braking: int
    steps: int
    presafe_steps: int
    go_action: int | None
    ret: float
    wall_time: float   # seconds; kept out of CSVs so reruns stay byte-identical

    @classmethod
    def from_result(cls, trial: int, res: EpisodeResult, wall: float) -> "TrialMetrics":
        d = res.d if res.outcome == "success" else TIMEOUT_D
        return cls(trial, res.outcome, d, res.braking, res.steps, res.presafe_steps,
                   res.go_action, res.ret, wall)

    def row(self) -> list:
        return [self.trial, self.outcome, repr(float(self.d)), self.braking, self.steps,
                self.presafe_steps, "" if self.go_action is None else self.go_action,
                repr(float(self.ret))]


def _write_csv(path: Path, columns: Iterable[str], rows: Iterable[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
    return path


def _dump_collision(exc: CollisionError, out_dir: Path | None, label: str) -> Path | None:
    if out_dir is None:
        return None
    seed = getattr(exc, "seed", None)
    entropy = list(seed.entropy) if isinstance(seed, np.random.SeedSequence) else seed
    payload = {
        "label": label,
        "message": str(exc),
        "sim_step": exc.step,
        "ids": list(exc.ids),
        "seed_entropy": entropy,
        "mask_history": [{"time_step": t, "mask": list(m), "action": a}
                         for t, m, a in getattr(exc, "mask_history", [])],
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"collision_{label}.json"
    path.write_text(json.dumps(payload, indent=2))
    return path


def _guarded(fn: Callable[[], EpisodeResult], out_dir: Path | None, label: str) -> EpisodeResult:
    try:
        return fn()
    except CollisionError as exc:
        dump = _dump_collision(exc, out_dir, label)
        raise SafetyViolation(f"collision in {label}: {exc}", dump) from exc


def moving_average(values, window: int) -> list[float]:
    """Trailing mean over up to ``window`` values, NaN entries ignored."""
    out = []
    vals = np.asarray(values, dtype=float)
    for i in range(len(vals)):
        chunk = vals[max(0, i - window + 1):i + 1]
        chunk = chunk[~np.isnan(chunk)]
        out.append(float(chunk.mean()) if chunk.size else math.nan)
    return out


# -------------------------------------------------------------------- train


@dataclass
class TrainResult:
    net: QNetwork
    metrics: list[TrialMetrics]
    epsilons: list[float]
    csv_path: Path | None
    checkpoint: Path | None


def train(rcfg: RunConfig, out_dir: str | Path | None = None,
          progress: Callable[[int, TrialMetrics], None] | None = None) -> TrainResult:
    out = Path(out_dir) if out_dir is not None else None
    learner = DQNLearner(rcfg.agent, np.random.default_rng(seed_for(rcfg.seed, LEARNER_STREAM)))
    junction = build_junction(rcfg.sim)
    reward = RewardSpec(rcfg.reward, rcfg.z, rcfg.agent.braking_per_vehicle)
    metrics, epsilons = [], []
    for ep in range(rcfg.episodes):
        eps = learner.set_episode(ep, rcfg.episodes)
        seed = seed_for(rcfg.seed, TRAIN_STREAM, ep)
        t0 = time.perf_counter()
        res = _guarded(lambda: run_episode(learner, seed, rcfg, reward, junction, learner.observe),
                       out, f"train_seed{rcfg.seed}_ep{ep}")
        m = TrialMetrics.from_result(ep, res, time.perf_counter() - t0)
        metrics.append(m)
        epsilons.append(eps)
        if progress is not None:
            progress(ep, m)
    csv_path = ckpt = None
    if out is not None:
        csv_path = write_train_csv(out / "train.csv", metrics, epsilons, rcfg.ma_window)
        ckpt = out / "checkpoint.npz"
        learner.net.save(ckpt)
    return TrainResult(learner.net, metrics, epsilons, csv_path, ckpt)


def write_train_csv(path: Path, metrics: list[TrialMetrics], epsilons: list[float],
                    window: int) -> Path:
    ma_ret = moving_average([m.ret for m in metrics], window)
    ma_d = moving_average([m.d if m.outcome == "success" else math.nan for m in metrics], window)
    ma_brk = moving_average([m.braking for m in metrics], window)
    rows = []
    for i, m in enumerate(metrics):
        base = m.row()
        rows.append([m.trial, m.outcome, base[7], base[2], m.braking, m.steps, m.presafe_steps,
                     base[6], repr(float(epsilons[i])), repr(ma_ret[i]), repr(ma_d[i]),
                     repr(ma_brk[i])])
    return _write_csv(path, TRAIN_COLUMNS, rows)


# --------------------------------------------------------------------- eval


@dataclass
class EvalSummary:
    trials: int
    success_rate: float
    timeout_rate: float
    mean_d: float
    mean_braking: float
    collisions: int
    histogram: list[tuple[float, float, int]]

    def rows(self) -> list[list]:
        return [["trials", self.trials], ["success_rate", repr(self.success_rate)],
                ["timeout_rate", repr(self.timeout_rate)], ["mean_d", repr(self.mean_d)],
                ["mean_braking", repr(self.mean_braking)], ["collisions", self.collisions]]


def summarize(metrics: list[TrialMetrics]) -> EvalSummary:
    n = len(metrics)
    ok = [m.d for m in metrics if m.outcome == "success"]
    timeouts = n - len(ok)
    hist = [(TIMEOUT_D, TIMEOUT_D, timeouts)]
    d = np.array(ok, dtype=float)
    for lo, hi in zip(HIST_EDGES[:-1], HIST_EDGES[1:]):
        last = hi == HIST_EDGES[-1]
        count = int(np.sum((d >= lo) & ((d <= hi) if last else (d < hi))))
        hist.append((float(lo), float(hi), count))
    return EvalSummary(n, len(ok) / n, timeouts / n,
                       float(np.mean(d)) if len(ok) else math.nan,
                       float(np.mean([m.braking for m in metrics])), 0, hist)


def evaluate(rcfg: RunConfig, make_policy: Callable[[int], Policy], trials: int | None = None,
             out_dir: str | Path | None = None, label: str = "eval"
             ) -> tuple[list[TrialMetrics], EvalSummary]:
    """Run ``trials`` shielded episodes; trial ``i`` uses the world seed (seed, eval, i)."""
    out = Path(out_dir) if out_dir is not None else None
    n = rcfg.eval_episodes if trials is None else trials
    junction = build_junction(rcfg.sim)
    reward = RewardSpec(rcfg.reward, rcfg.z, rcfg.agent.braking_per_vehicle)
    metrics = []
    for i in range(n):
        seed = seed_for(rcfg.seed, EVAL_STREAM, i)
        policy = make_policy(i)
        t0 = time.perf_counter()
        res = _guarded(lambda: run_episode(policy, seed, rcfg, reward, junction), out,
                       f"{label}_seed{rcfg.seed}_trial{i}")
        metrics.append(TrialMetrics.from_result(i, res, time.perf_counter() - t0))
    summary = summarize(metrics)
    if out is not None:
        _write_csv(out / f"{label}.csv", EVAL_COLUMNS, [m.row() for m in metrics])
        _write_csv(out / f"{label}_summary.csv", SUMMARY_COLUMNS, summary.rows())
        _write_csv(out / f"{label}_histogram.csv", HISTOGRAM_COLUMNS,
                   [[repr(lo), repr(hi), c] for lo, hi, c in summary.histogram])
    return metrics, summary


def greedy_factory(net: QNetwork) -> Callable[[int], Policy]:
    policy = GreedyPolicy(net)
    return lambda i: policy


def random_factory(seed: int) -> Callable[[int], Policy]:
    return lambda i: RandomMaskedPolicy(np.random.default_rng(seed_for(seed, POLICY_STREAM, i)))


def wait_factory() -> Callable[[int], Policy]:
    policy = WaitPolicy()
    return lambda i: policy


def load_policy_net(path: str | Path) -> QNetwork:
    net = QNetwork.load(path)
    if net.sizes[0] != STATE_DIM or net.sizes[-1] != 4:
        raise CheckpointError(f"checkpoint sizes {net.sizes} do not fit state {STATE_DIM} -> 4 actions")
    return net


# ----------------------------------------------------------------- baseline


GO_BASELINE = 2  # go@1.0


@dataclass
class RuleBasedPolicy:
    """Go at 1.0 m/s^2 as soon as the margin-inflated prediction shows no conflict."""

    rcfg: RunConfig
    margin: float

    def act(self, state, mask, world) -> int:
        cfg = self.rcfg
        inflated = compute_mask(world, None, cfg.sim, cfg.prediction, k=cfg.shield_k,
                                extra_margin=self.margin, counter=None)
        return GO_BASELINE if inflated.safe[GO_BASELINE] and mask.safe[GO_BASELINE] else WAIT


@dataclass
class BaselinePoint:
    margin: float
    summary: EvalSummary

    def row(self) -> list:
        s = self.summary
        return [repr(float(self.margin)), s.trials, repr(s.mean_d), repr(s.mean_braking),
                repr(s.timeout_rate), s.collisions]


def baseline_sweep(rcfg: RunConfig, margins=None, trials: int | None = None,
                   out_dir: str | Path | None = None) -> list[BaselinePoint]:
    margins = rcfg.margins if margins is None else tuple(margins)
    if not margins:
        raise ValueError("need at least one margin")
    points = []
    for margin in margins:
        policy = RuleBasedPolicy(rcfg, float(margin))
        _, summary = evaluate(rcfg, lambda i: policy, trials, None, f"baseline_m{margin:g}")
        points.append(BaselinePoint(float(margin), summary))
    if out_dir is not None:
        _write_csv(Path(out_dir) / "baseline.csv", BASELINE_COLUMNS, [p.row() for p in points])
    return points


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """(d, timeout_rate) pair ``a`` dominates ``b``: d no lower, timeouts no higher, one strict."""
    return a[0] >= b[0] and a[1] <= b[1] and (a[0] > b[0] or a[1] < b[1])


# ------------------------------------------------------------------- budget


def budget(sigma_M: float, sigma_c: float, k: float, kappa_c: float, m: int,
           delta: float) -> SafetyBudget:
    return SafetyBudget.evaluate(sigma_M, sigma_c, k, kappa_c, m, delta)
