"""REINFORCE with a greedy-rollout baseline, driven by a curriculum.

One batch = one task size. The advantage of a sampled tour is its length
minus the greedy length of a frozen copy of the policy; the frozen copy is
replaced at an epoch end only when the current policy is significantly
better on a held-out set (one-sided paired t-test).
"""
from __future__ import annotations

import json
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from nco import autograd as ag
from nco.autograd import Tensor
from nco.curriculum import Curriculum, StrategySpec
from nco.evaluation import evaluate_policy, reference_costs
from nco.policy import PolicyHyper, PolicyParams, greedy_costs, init_params, rollout_batch, save_checkpoint
from nco.seeds import derive_seed
from nco.tsp import generate_batch


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    batches_per_epoch: int = 100
    epochs: int = 20
    baseline_eval_size: int = 512
    seed: int = 0
    baseline_alpha: float = 0.05
    max_grad_norm: float | None = 1.0
    val_sizes: tuple[int, ...] = ()
    val_instances: int = 256
    ref_mode: str = "paper_faithful"
    staircase_gap: str = "baseline"  # or "current": extra greedy rollout of the live policy

    def __post_init__(self):
        if self.staircase_gap not in ("baseline", "current"):
            raise ValueError(f"staircase_gap must be 'baseline' or 'current', got {self.staircase_gap!r}")
        for name in ("batch_size", "batches_per_epoch", "epochs", "baseline_eval_size", "val_instances"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.learning_rate < 1:
            raise ValueError("learning_rate must lie in (0, 1)")
        object.__setattr__(self, "val_sizes", tuple(int(s) for s in self.val_sizes))


class Adam:
    """Adaptive-moment optimizer over a :class:`PolicyParams`."""

    def __init__(self, params: PolicyParams, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros(t.shape) for k, t in params.tensors.items()}
        self.v = {k: np.zeros(t.shape) for k, t in params.tensors.items()}

    def step(self, params: PolicyParams, grads: dict[str, np.ndarray]):
        self.step_count += 1
        c1 = 1.0 - self.b1 ** self.step_count
        c2 = 1.0 - self.b2 ** self.step_count
        for name, t in params.tensors.items():
            g = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            t.data = t.data - self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


# baseline ---------------------------------------------------------------------------


def paired_t_statistic(candidate: np.ndarray, baseline: np.ndarray) -> float:
    diff = np.asarray(candidate, dtype=np.float64) - np.asarray(baseline, dtype=np.float64)
    sd = float(np.std(diff, ddof=1))
    if sd == 0.0:
        return math.nan
    return float(np.mean(diff)) / (sd / math.sqrt(len(diff)))


def significantly_better(candidate: np.ndarray, baseline: np.ndarray, alpha: float = 0.05) -> tuple[bool, float]:
    """One-sided paired t-test that ``candidate`` has the lower mean cost.

    With zero-variance differences the test is undefined and strict mean
    improvement decides instead.
    """
    t = paired_t_statistic(candidate, baseline)
    if math.isnan(t):
        return bool(np.mean(candidate) < np.mean(baseline)), t
    critical = float(stats.t.ppf(1.0 - alpha, len(candidate) - 1))
    return t < -critical, t


@dataclass
class BaselineState:
    frozen: PolicyParams
    eval_size: int
    eval_instances: np.ndarray
    eval_costs: np.ndarray

    def costs(self, coords: np.ndarray) -> np.ndarray:
        return greedy_costs(self.frozen, coords)


def baseline_eval_set(config: TrainConfig, size: int) -> np.ndarray:
    return generate_batch(size, config.baseline_eval_size, derive_seed(config.seed, "baseline", size))


def make_baseline(params: PolicyParams, config: TrainConfig, size: int) -> BaselineState:
    frozen = params.copy()
    inst = baseline_eval_set(config, size)
    return BaselineState(frozen, size, inst, greedy_costs(frozen, inst))


def baseline_maybe_update(params: PolicyParams, baseline: BaselineState, config: TrainConfig,
                          size: int | None = None) -> tuple[BaselineState, bool, float]:
    """Swap in ``params`` if significantly better on the eval set for ``size``.

    Changing ``size`` regenerates the eval set and recomputes the frozen
    policy's costs on it before the comparison.
    """
    if size is not None and size != baseline.eval_size:
        inst = baseline_eval_set(config, size)
        baseline = BaselineState(baseline.frozen, size, inst, greedy_costs(baseline.frozen, inst))
    candidate = greedy_costs(params, baseline.eval_instances)
    swap, t = significantly_better(candidate, baseline.eval_costs, config.baseline_alpha)
    if not swap:
        return baseline, False, t
    return BaselineState(params.copy(), baseline.eval_size, baseline.eval_instances, candidate), True, t


# loss and step ----------------------------------------------------------------------


@dataclass
class BatchMetrics:
    size: int
    mean_cost: float
    mean_baseline: float
    mean_advantage: float
    loss: float
    tours: np.ndarray = field(repr=False)
    baseline_costs: np.ndarray = field(repr=False, default=None)


def reinforce_loss(params: PolicyParams, baseline_costs: np.ndarray, coords: np.ndarray,
                   rng) -> tuple[Tensor, BatchMetrics]:
    """Mean of ``(L(sampled) - b) * log p(sampled)``; costs enter as constants.

    Call inside a :class:`~nco.autograd.Tape` to get gradients.
    """
    res = rollout_batch(params, coords, "sample", rng)
    advantage = res.lengths - np.asarray(baseline_costs, dtype=np.float64)
    loss = (res.log_prob * Tensor(advantage)).mean()
    metrics = BatchMetrics(coords.shape[1], float(res.lengths.mean()), float(np.mean(baseline_costs)),
                           float(advantage.mean()), loss.item(), res.tours)
    return loss, metrics


def _clip(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def train_batch(params: PolicyParams, optimizer: Adam, baseline: BaselineState, coords: np.ndarray,
                rng, max_grad_norm: float | None = 1.0) -> BatchMetrics:
    """One optimizer step on one batch; updates ``params`` in place."""
    b = baseline.costs(coords)
    with ag.Tape() as tape:
        loss, metrics = reinforce_loss(params, b, coords, rng)
    backward_and_step(tape, loss, params, optimizer, max_grad_norm)
    metrics.baseline_costs = b
    return metrics


def backward_and_step(tape, loss, params: PolicyParams, optimizer: Adam, max_grad_norm):
    ag.backward(tape, loss)
    grads = {}
    for name, t in params.tensors.items():
        g = np.zeros(t.shape) if t.grad is None else t.grad
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor {name}")
        grads[name] = g
        t.grad = None
    optimizer.step(params, _clip(grads, max_grad_norm))


# epoch loop --------------------------------------------------------------------------


@dataclass
class EpochReport:
    epoch: int
    strategy: str
    batches: int
    batches_total: int
    sizes: dict
    staircase: dict | None
    baseline: dict
    validation: dict
    wall_time: float = 0.0

    def to_json(self) -> dict:
        """Log record; wall time is left out so logs are byte-reproducible."""
        out = asdict(self)
        out.pop("wall_time")
        return out


@dataclass
class TrainResult:
    params: PolicyParams
    reports: list[EpochReport]


def _validation(params: PolicyParams, config: TrainConfig) -> dict:
    if not config.val_sizes:
        return {}
    table = evaluate_policy(params, config.val_sizes, config.val_instances,
                            derive_seed(config.seed, "validation"), config.ref_mode)
    return {str(r.size): r.mean_gap for r in table.rows}


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def train_run(
    config: TrainConfig,
    strategy: StrategySpec,
    policy_seed: int,
    hyper: PolicyHyper | None = None,
    out_dir: str | Path | None = None,
    init: PolicyParams | None = None,
    on_epoch: Callable[[EpochReport], None] | None = None,
) -> TrainResult:
    """Train for ``config.epochs`` epochs of ``batches_per_epoch`` batches
    (one fewer epoch for the staircase) and return the final policy."""
    params = init.copy() if init is not None else init_params(hyper or PolicyHyper(), policy_seed)
    optimizer = Adam(params, config.learning_rate)
    cur = Curriculum(strategy, config.batches_per_epoch, config.epochs, derive_seed(config.seed, "curriculum"))
    baseline = make_baseline(params, config, cur.next_trial(0, 0).size if strategy.kind != "staircase"
                             else strategy.t_min)
    # the peek above must not consume curriculum randomness
    cur = Curriculum(strategy, config.batches_per_epoch, config.epochs, derive_seed(config.seed, "curriculum"))

    out = Path(out_dir) if out_dir is not None else None
    log = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log = open(out / "train_log.jsonl", "w")
        timing = open(out / "timing.jsonl", "w")
    reports: list[EpochReport] = []
    total = 0
    try:
        for epoch in range(cur.total_epochs):
            started = time.perf_counter()
            per_size: dict[int, list[BatchMetrics]] = {}
            trials = Counter()
            level_start = cur.level
            trace_from = len(cur.trace)
            for bi in range(config.batches_per_epoch):
                trial = cur.next_trial(epoch, bi)
                trials[(trial.size, trial.kind)] += 1
                coords = generate_batch(trial.size, config.batch_size,
                                        derive_seed(config.seed, "train", epoch, bi))
                rng = np.random.default_rng(derive_seed(config.seed, "sample", epoch, bi))
                m = train_batch(params, optimizer, baseline, coords, rng, config.max_grad_norm)
                per_size.setdefault(trial.size, []).append(m)
                if cur.wants_outcome(trial):
                    refs, _ = reference_costs(coords, config.ref_mode)
                    greedy = m.baseline_costs if config.staircase_gap == "baseline" else greedy_costs(params, coords)
                    gap = float(np.mean(greedy / refs - 1.0))
                    cur.record(trial, max(gap, 0.0), epoch, bi)
                total += 1
            cur.end_epoch(epoch)

            sizes_seen = Counter({s: len(ms) for s, ms in per_size.items()})
            active = max(sizes_seen.items(), key=lambda kv: (kv[1], kv[0]))[0]
            baseline, swapped, t_stat = baseline_maybe_update(params, baseline, config, active)

            report = EpochReport(
                epoch=epoch,
                strategy=str(strategy),
                batches=config.batches_per_epoch,
                batches_total=total,
                sizes={
                    str(s): {
                        "batches": len(ms),
                        "mean_cost": float(np.mean([m.mean_cost for m in ms])),
                        "mean_baseline": float(np.mean([m.mean_baseline for m in ms])),
                        "mean_advantage": float(np.mean([m.mean_advantage for m in ms])),
                        "loss": float(np.mean([m.loss for m in ms])),
                    }
                    for s, ms in sorted(per_size.items())
                },
                staircase=None if cur.state is None else {
                    "level_start": level_start,
                    "level_end": cur.level,
                    "base_trials": sum(c for (s, k), c in trials.items() if k == "base"),
                    "probe_trials": sum(c for (s, k), c in trials.items() if k == "probe"),
                    "events": cur.trace[trace_from:],
                },
                baseline={
                    "size": baseline.eval_size,
                    "swapped": swapped,
                    "t_stat": None if math.isnan(t_stat) else t_stat,
                    "mean_eval_cost": float(np.mean(baseline.eval_costs)),
                },
                validation=_validation(params, config),
                wall_time=time.perf_counter() - started,
            )
            reports.append(report)
            if out is not None:
                log.write(_dump(report.to_json()) + "\n")
                log.flush()
                timing.write(_dump({"epoch": epoch, "wall_time": report.wall_time}) + "\n")
                tags = {"epoch": epoch, "strategy": str(strategy)}
                if strategy.kind == "fixed":
                    tags["train_size"] = strategy.t_min
                save_checkpoint(params, out / f"epoch_{epoch}.ckpt", tags)
            if on_epoch is not None:
                on_epoch(report)
    finally:
        if log is not None:
            log.close()
            timing.close()
    return TrainResult(params, reports)
