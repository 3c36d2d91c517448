"""Task-size sampling strategies: fixed, uniform, classic and adaptive staircase.

Strategies are written as strings on the command line::

    fixed:20
    uniform:4..100[,per_batch=1]
    classic:4..100
    staircase:4..100[,alpha=0.05][,probe=0.5][,rule=literal|scaled][,offset=10]
             [,sampling=coin|probe]

The staircase state machine is exposed as pure functions over an immutable
:class:`StaircaseState` so it can be driven by scripted outcomes in tests;
:class:`Curriculum` wires those functions and the random stream together for
the training loop.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from nco.tsp import MIN_SIZE

ADVANCE = "advance"
STAY = "stay"
DECREMENT = "decrement"

GRAMMAR = (
    "fixed:N | uniform:A..B[,per_batch=1] | classic:A..B | "
    "staircase:A..B[,alpha=X][,probe=P][,rule=literal|scaled][,offset=K][,sampling=coin|probe]"
)


class StrategyError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    t_min: int
    t_max: int
    alpha: float = 0.05
    probe_prob: float = 0.5
    rule: str = "literal"
    offset: float = 10.0
    sampling: str = "coin"
    per_batch: bool = False

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "classic", "staircase"):
            raise StrategyError(f"unknown strategy kind {self.kind!r}; expected {GRAMMAR}")
        if self.t_min < MIN_SIZE:
            raise StrategyError(f"t_min must be >= {MIN_SIZE}, got {self.t_min}")
        if self.t_max < self.t_min:
            raise StrategyError(f"t_max ({self.t_max}) < t_min ({self.t_min})")
        if self.kind == "fixed" and self.t_min != self.t_max:
            raise StrategyError("fixed strategy has a single size")
        if self.kind == "staircase" and self.t_max == self.t_min:
            raise StrategyError("staircase needs t_max > t_min")
        if not 0.0 < self.alpha < 1.0:
            raise StrategyError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.probe_prob < 1.0:
            raise StrategyError(f"probe probability must lie in [0, 1), got {self.probe_prob}")
        if self.rule not in ("literal", "scaled"):
            raise StrategyError(f"rule must be 'literal' or 'scaled', got {self.rule!r}")
        if self.sampling not in ("coin", "probe"):
            raise StrategyError(f"sampling must be 'coin' or 'probe', got {self.sampling!r}")

    @property
    def sizes(self) -> list[int]:
        return list(range(self.t_min, self.t_max + 1))

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.t_min}"
        text = f"{self.kind}:{self.t_min}..{self.t_max}"
        if self.kind == "uniform" and self.per_batch:
            text += ",per_batch=1"
        if self.kind == "staircase":
            text += f",alpha={self.alpha!r},probe={self.probe_prob!r},rule={self.rule}"
            text += f",offset={self.offset!r},sampling={self.sampling}"
        return text


_HEAD = re.compile(r"^(fixed|uniform|classic|staircase):(\d+)(?:\.\.(\d+))?$")


def parse_strategy(text: str) -> StrategySpec:
    parts = [p.strip() for p in text.strip().split(",")]
    m = _HEAD.match(parts[0])
    if not m:
        raise StrategyError(f"cannot parse strategy {text!r}; expected {GRAMMAR}")
    kind, lo, hi = m.group(1), int(m.group(2)), m.group(3)
    if kind == "fixed":
        if hi is not None:
            raise StrategyError(f"fixed takes one size, got {parts[0]!r}; expected {GRAMMAR}")
        hi = lo
    elif hi is None:
        raise StrategyError(f"{kind} needs a range A..B; expected {GRAMMAR}")
    kwargs: dict = {}
    allowed = {
        "fixed": set(),
        "classic": set(),
        "uniform": {"per_batch"},
        "staircase": {"alpha", "probe", "rule", "offset", "sampling"},
    }[kind]
    for opt in parts[1:]:
        key, sep, value = opt.partition("=")
        if not sep or key not in allowed:
            raise StrategyError(f"option {opt!r} not valid for {kind}; expected {GRAMMAR}")
        try:
            if key == "alpha":
                kwargs["alpha"] = float(value)
            elif key == "probe":
                kwargs["probe_prob"] = float(value)
            elif key == "offset":
                kwargs["offset"] = float(value)
            elif key == "per_batch":
                kwargs["per_batch"] = value not in ("0", "false", "no")
            else:
                kwargs[key] = value
        except ValueError:
            raise StrategyError(f"bad value in {opt!r}; expected {GRAMMAR}") from None
    return StrategySpec(kind=kind, t_min=lo, t_max=int(hi), **kwargs)


# schedules ------------------------------------------------------------------------


def classic_schedule(spec: StrategySpec, slots: int) -> list[int]:
    """Monotone sizes over ``slots`` equal contiguous blocks, remainder to the largest sizes.

    ``slots`` is normally the number of epochs; :class:`Curriculum` falls back
    to batches when there are fewer epochs than sizes.
    """
    if slots < 1:
        raise StrategyError("classic schedule needs at least one slot")
    sizes = spec.sizes
    if slots < len(sizes):
        # fewer slots than sizes: spread slots evenly over the range
        return [sizes[(i * len(sizes)) // slots] for i in range(slots)]
    per, extra = divmod(slots, len(sizes))
    out = []
    for i, size in enumerate(sizes):
        out += [size] * (per + (1 if i >= len(sizes) - extra else 0))
    return out


def n_base_ratio(spec: StrategySpec, t: int) -> float:
    """Base-trial budget as a fraction of an epoch, before rounding and clamping."""
    span = spec.t_max - spec.t_min
    if span <= 0:
        raise StrategyError("n_base needs t_max > t_min")
    offset = spec.offset if spec.rule == "literal" else spec.offset * span / 96.0
    return (offset + t - spec.t_min) / span


def n_base(spec: StrategySpec, t: int, batches_per_epoch: int) -> int:
    """Base trials per evaluation window: ``clamp(round(B * ratio), 1, B)``, halves rounded up."""
    if not spec.t_min <= t <= spec.t_max:
        raise StrategyError(f"level {t} outside [{spec.t_min}, {spec.t_max}]")
    raw = batches_per_epoch * n_base_ratio(spec, t)
    return int(min(max(math.floor(raw + 0.5), 1), batches_per_epoch))


# staircase state machine ------------------------------------------------------------


@dataclass(frozen=True)
class StaircaseState:
    t: int
    base_trials_done: int = 0
    gap_sum: float = 0.0
    epoch_base_trials: int = 0
    advanced_this_epoch: bool = False

    @property
    def base_gap_mean(self) -> float:
        return self.gap_sum / self.base_trials_done if self.base_trials_done else 0.0


@dataclass(frozen=True)
class Trial:
    size: int
    kind: str  # "base" or "probe"


def staircase_trial(spec: StrategySpec, state: StaircaseState, rng: np.random.Generator) -> Trial:
    if spec.sampling == "probe":
        size = int(rng.integers(spec.t_min, state.t + 1))
        return Trial(size, "base" if size == state.t else "probe")
    if rng.random() < spec.probe_prob:
        return Trial(int(rng.integers(spec.t_min, state.t + 1)), "probe")
    return Trial(state.t, "base")


def record_base_outcome(
    spec: StrategySpec, state: StaircaseState, gap: float, batches_per_epoch: int
) -> tuple[StaircaseState, str | None]:
    """Add one base-trial gap; decide once the window of ``n_base`` trials is full.

    Returns the new state and ``"advance"``, ``"stay"`` or ``None`` while the
    window is still filling.
    """
    if not math.isfinite(gap) or gap < 0:
        raise ContractError(f"base outcome must be a finite nonnegative gap, got {gap}")
    done = state.base_trials_done + 1
    total = state.gap_sum + gap
    state = replace(state, base_trials_done=done, gap_sum=total,
                    epoch_base_trials=state.epoch_base_trials + 1)
    if done < n_base(spec, state.t, batches_per_epoch):
        return state, None
    if total / done <= spec.alpha:
        return replace(state, t=min(state.t + 1, spec.t_max), base_trials_done=0,
                       gap_sum=0.0, advanced_this_epoch=True), ADVANCE
    return replace(state, base_trials_done=0, gap_sum=0.0), STAY


def epoch_boundary(spec: StrategySpec, state: StaircaseState) -> tuple[StaircaseState, str | None]:
    """Step down one level if the epoch saw no advance; always clear epoch counters."""
    if state.advanced_this_epoch:
        return replace(state, epoch_base_trials=0, advanced_this_epoch=False), None
    t = max(state.t - 1, spec.t_min)
    new = StaircaseState(t=t)
    return new, (DECREMENT if t != state.t else None)


# the training-loop facade -----------------------------------------------------------------


@dataclass
class Curriculum:
    """Stateful strategy driver owned by the training loop."""

    spec: StrategySpec
    batches_per_epoch: int
    epochs: int
    seed: int
    state: StaircaseState | None = None
    trace: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._epoch_size: dict[int, int] = {}
        if self.spec.kind == "staircase":
            if self.epochs < 2:
                raise StrategyError("staircase needs at least 2 epochs (it stops one early)")
            self.state = StaircaseState(t=self.spec.t_min)
        if self.spec.kind == "classic":
            if self.epochs >= len(self.spec.sizes):
                self._classic = classic_schedule(self.spec, self.epochs)
                self._classic_per_batch = False
            else:
                self._classic = classic_schedule(self.spec, self.epochs * self.batches_per_epoch)
                self._classic_per_batch = True

    @property
    def total_epochs(self) -> int:
        """Training epochs; the staircase stops one epoch early."""
        return self.epochs - 1 if self.spec.kind == "staircase" else self.epochs

    @property
    def level(self) -> int | None:
        return self.state.t if self.state is not None else None

    def next_trial(self, epoch: int, batch_index: int) -> Trial:
        spec = self.spec
        if spec.kind == "fixed":
            return Trial(spec.t_min, "base")
        if spec.kind == "uniform":
            if spec.per_batch:
                return Trial(int(self.rng.integers(spec.t_min, spec.t_max + 1)), "base")
            if epoch not in self._epoch_size:
                self._epoch_size[epoch] = int(self.rng.integers(spec.t_min, spec.t_max + 1))
            return Trial(self._epoch_size[epoch], "base")
        if spec.kind == "classic":
            slot = epoch * self.batches_per_epoch + batch_index if self._classic_per_batch else epoch
            return Trial(self._classic[slot], "base")
        return staircase_trial(spec, self.state, self.rng)

    def wants_outcome(self, trial: Trial) -> bool:
        return self.spec.kind == "staircase" and trial.kind == "base"

    def record(self, trial: Trial, gap: float, epoch: int, batch_index: int) -> str | None:
        """Feed a base-trial gap to the staircase; probe trials are ignored."""
        if not self.wants_outcome(trial):
            return None
        before = self.state.t
        self.state, transition = record_base_outcome(self.spec, self.state, gap, self.batches_per_epoch)
        if transition is not None:
            self.trace.append({"epoch": epoch, "batch": batch_index, "event": transition,
                               "from": before, "to": self.state.t})
        return transition

    def end_epoch(self, epoch: int) -> str | None:
        if self.spec.kind != "staircase":
            return None
        before = self.state.t
        self.state, transition = epoch_boundary(self.spec, self.state)
        if transition is not None:
            self.trace.append({"epoch": epoch, "batch": None, "event": transition,
                               "from": before, "to": self.state.t})
        return transition


def replace_alpha(spec: StrategySpec, alpha: float) -> StrategySpec:
    """Override the staircase threshold; rejected for other strategies."""
    if spec.kind != "staircase":
        raise StrategyError(f"alpha applies only to staircase strategies, not {spec.kind}")
    return replace(spec, alpha=alpha)
