"""Optimality gaps, per-size evaluation, multi-run aggregation and the
train-size x test-size performance matrix."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from nco import oracles
from nco.policy import PolicyParams, greedy_costs, load_checkpoint
from nco.seeds import derive_seed
from nco.tsp import DistanceMatrix, DomainError, Instance, generate_instance, pairwise_distances

GAP_HEADER = ["size", "n", "mean_gap", "stderr", "ref_type", "run_id"]
MODES = ("paper_faithful", "exact_preferred")


def optimality_gap(cost: float, reference: float) -> float:
    """Approximation ratio minus one."""
    if not reference > 0:
        raise DomainError(f"reference cost must be positive, got {reference}")
    if cost < 0:
        raise DomainError(f"cost must be nonnegative, got {cost}")
    return cost / reference - 1.0


def reference_type(n: int, mode: str) -> str:
    if mode == "paper_faithful":
        return "exhaustive" if n <= 9 else "hk"
    if mode == "exact_preferred":
        if n <= oracles.EXHAUSTIVE_CAP:
            return "exhaustive"
        return "dp" if n <= oracles.DP_CAP else "hk"
    raise ValueError(f"unknown reference mode {mode!r}; expected one of {MODES}")


def reference_cost(inst: Instance | DistanceMatrix, mode: str = "paper_faithful") -> tuple[float, str]:
    """Reference tour cost: exhaustive optimum for n <= 9 and the HK bound above
    (``paper_faithful``), or the best exact method available (``exact_preferred``)."""
    dm = inst if isinstance(inst, DistanceMatrix) else DistanceMatrix(inst.n, pairwise_distances(inst.coords))
    kind = reference_type(dm.n, mode)
    if kind == "exhaustive":
        return oracles.exhaustive_optimum(dm).length, kind
    if kind == "dp":
        return oracles.dp_optimum(dm).length, kind
    return oracles.hk_lower_bound(dm).bound, kind


def reference_costs(coords: np.ndarray, mode: str = "paper_faithful") -> tuple[np.ndarray, str]:
    """Reference costs for a same-size coordinate batch ``(B, n, 2)``."""
    coords = np.asarray(coords, dtype=np.float64)
    dists = pairwise_distances(coords)
    n = coords.shape[1]
    values = np.array([reference_cost(DistanceMatrix(n, d), mode)[0] for d in dists])
    return values, reference_type(n, mode)


def eval_coords(size: int, n_instances: int, seed: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Evaluation instances ``start..stop`` of the deterministic set for ``(seed, size)``."""
    stop = n_instances if stop is None else stop
    return np.stack([
        generate_instance(size, derive_seed(seed, "eval", size, i)).coords
        for i in range(start, stop)
    ])


@lru_cache(maxsize=64)
def _cached_references(size: int, n_instances: int, seed: int, mode: str) -> tuple[np.ndarray, str]:
    values, kind = reference_costs(eval_coords(size, n_instances, seed), mode)
    values.setflags(write=False)
    return values, kind


class RunningStats:
    """Welford mean/variance; constant memory, fixed accumulation order."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x: float):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    def extend(self, xs: Iterable[float]):
        for x in xs:
            self.push(float(x))

    @property
    def variance(self) -> float:
        return self._m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else 0.0


@dataclass(frozen=True)
class GapRow:
    size: int
    n: int
    mean_gap: float
    stderr: float
    ref_type: str
    run_id: str
    ci_halfwidth: float | None = None


@dataclass
class GapTable:
    rows: list[GapRow] = field(default_factory=list)

    def row(self, size: int) -> GapRow:
        for r in self.rows:
            if r.size == size:
                return r
        raise KeyError(size)

    @property
    def sizes(self) -> list[int]:
        return [r.size for r in self.rows]

    def to_csv(self, path=None) -> str:
        aggregated = any(r.ci_halfwidth is not None for r in self.rows)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(GAP_HEADER + (["ci_halfwidth"] if aggregated else []))
        for r in self.rows:
            line = [r.size, r.n, repr(r.mean_gap), repr(r.stderr), r.ref_type, r.run_id]
            if aggregated:
                line.append(repr(r.ci_halfwidth))
            writer.writerow(line)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "GapTable":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            hw = rec.get("ci_halfwidth")
            rows.append(GapRow(int(rec["size"]), int(rec["n"]), float(rec["mean_gap"]),
                               float(rec["stderr"]), rec["ref_type"], rec["run_id"],
                               float(hw) if hw else None))
        return cls(rows)


def evaluate_policy(
    params: PolicyParams,
    sizes: Sequence[int],
    n_instances: int,
    seed: int,
    mode: str = "paper_faithful",
    run_id: str = "0",
    chunk: int = 512,
) -> GapTable:
    """Greedy-decoding gap per size against the routed reference."""
    if n_instances < 2:
        raise DomainError("n_instances must be at least 2")
    rows = []
    for size in sorted(set(int(s) for s in sizes)):
        stats = RunningStats()
        kind = reference_type(size, mode)
        cached = n_instances <= 4096
        for start in range(0, n_instances, chunk):
            stop = min(start + chunk, n_instances)
            coords = eval_coords(size, n_instances, seed, start, stop)
            if cached:
                refs = _cached_references(size, n_instances, seed, mode)[0][start:stop]
            else:
                refs = reference_costs(coords, mode)[0]
            stats.extend(greedy_costs(params, coords) / refs - 1.0)
        rows.append(GapRow(size, stats.count, stats.mean, stats.stderr, kind, run_id))
    return GapTable(rows)


def aggregate_runs(tables: Sequence[GapTable]) -> GapTable:
    """Mean of per-run means with a two-standard-error interval across runs."""
    if len(tables) < 2:
        raise DomainError("aggregation needs at least two runs")
    sizes = tables[0].sizes
    for t in tables[1:]:
        if t.sizes != sizes:
            raise DomainError(f"runs cover different sizes: {sizes} vs {t.sizes}")
    k = len(tables)
    rows = []
    for size in sizes:
        per_run = [t.row(size) for t in tables]
        means = np.array(sorted(r.mean_gap for r in per_run))
        # shifted so identical runs give exactly zero spread
        shifted = means - means[0]
        se = float(np.std(shifted, ddof=1)) / math.sqrt(k)
        kinds = sorted({r.ref_type for r in per_run})
        rows.append(GapRow(size, sum(r.n for r in per_run), float(means[0] + np.mean(shifted)), se,
                           "+".join(kinds), f"agg{k}", 2.0 * se))
    return GapTable(rows)


@dataclass
class PerformanceMatrix:
    train_sizes: list[int]
    test_sizes: list[int]
    gaps: np.ndarray
    cap: float = 0.10

    def capped(self) -> np.ndarray:
        return np.minimum(self.gaps, self.cap)

    def to_csv(self, path=None, capped: bool = True) -> str:
        grid = self.capped() if capped else self.gaps
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["train\\test"] + self.test_sizes)
        for size, row in zip(self.train_sizes, grid):
            writer.writerow([size] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def build_performance_matrix(
    checkpoints: Sequence[tuple[int, PolicyParams | str | Path]],
    test_sizes: Sequence[int],
    n_instances: int,
    seed: int,
    cap: float = 0.10,
    mode: str = "paper_faithful",
) -> PerformanceMatrix:
    """Evaluate every ``(train_size, checkpoint)`` on every test size.

    Rows share one instance set per test size, so columns are comparable.
    """
    ordered = sorted(checkpoints, key=lambda item: item[0])
    tests = sorted(set(int(s) for s in test_sizes))
    grid = np.empty((len(ordered), len(tests)))
    for i, (_, ckpt) in enumerate(ordered):
        params = ckpt if isinstance(ckpt, PolicyParams) else load_checkpoint(ckpt)[0]
        table = evaluate_policy(params, tests, n_instances, seed, mode)
        grid[i] = [r.mean_gap for r in table.rows]
    return PerformanceMatrix([s for s, _ in ordered], tests, grid, cap)
