"""Euclidean TSP instances, distance matrices and tours.

Node indices are 0-based inside the package. Everything that leaves the
process (JSON tours, CLI output) is 1-based; use :meth:`Tour.external` and
:meth:`Tour.from_external` at those boundaries.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MIN_SIZE = 4


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class TourError(ValueError):
    """Sequence is not a valid tour for the given node count."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Instance:
    n: int
    coords: np.ndarray = field(repr=False)
    seed: int | None = None
    id: str = ""

    def __post_init__(self):
        coords = _frozen(np.asarray(self.coords, dtype=np.float64).copy())
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DomainError(f"coords must have shape (n, 2), got {coords.shape}")
        if coords.shape[0] != self.n:
            raise DomainError(f"n={self.n} but {coords.shape[0]} points given")
        if self.n < MIN_SIZE:
            raise DomainError(f"problem size below minimum ({self.n} < {MIN_SIZE})")
        if not np.all(np.isfinite(coords)) or coords.min() < 0.0 or coords.max() > 1.0:
            raise DomainError("coordinates must be finite and lie in [0, 1]")
        object.__setattr__(self, "coords", coords)
        if not self.id:
            tag = f"tsp{self.n}-s{self.seed}" if self.seed is not None else f"tsp{self.n}"
            object.__setattr__(self, "id", tag)

    def to_json(self) -> dict:
        return {"n": self.n, "seed": self.seed, "coords": self.coords.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Instance":
        try:
            coords = np.asarray(obj["coords"], dtype=np.float64)
            n = int(obj.get("n", len(coords)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed instance record: {exc}") from None
        seed = obj.get("seed")
        return cls(n=n, coords=coords, seed=None if seed is None else int(seed))


def generate_instance(n: int, seed: int) -> Instance:
    """``n`` i.i.d. uniform points in the unit square, deterministic in ``(n, seed)``."""
    if n < MIN_SIZE:
        raise DomainError(f"problem size below minimum ({n} < {MIN_SIZE})")
    rng = np.random.default_rng(seed)
    return Instance(n=n, coords=rng.random((n, 2)), seed=seed)


def generate_batch(n: int, batch_size: int, seed: int) -> np.ndarray:
    """Raw coordinate batch of shape ``(batch_size, n, 2)`` for training."""
    if n < MIN_SIZE:
        raise DomainError(f"problem size below minimum ({n} < {MIN_SIZE})")
    return np.random.default_rng(seed).random((batch_size, n, 2))


def load_instances(path: str | Path) -> list[Instance]:
    """Read one instance object or a JSON array of them."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: not valid JSON ({exc.msg})") from None
    records = obj if isinstance(obj, list) else [obj]
    if not records:
        raise DomainError(f"{path}: no instances")
    return [Instance.from_json(r) for r in records]


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    n: int
    d: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "d", _frozen(self.d))


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """Euclidean distances over the last two axes; works on batches ``(..., n, 2)``."""
    diff = coords[..., :, None, :] - coords[..., None, :, :]
    # x*x + y*y in a fixed order keeps d[i, j] == d[j, i] bit for bit
    return np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1])


def build_distance_matrix(inst: Instance) -> DistanceMatrix:
    return DistanceMatrix(n=inst.n, d=pairwise_distances(inst.coords))


@dataclass(frozen=True)
class Tour:
    """A cyclic visiting order; the closing edge back to ``order[0]`` is implicit."""

    order: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))

    def __len__(self):
        return len(self.order)

    def external(self) -> list[int]:
        return [i + 1 for i in self.order]

    @classmethod
    def from_external(cls, order: Iterable[int]) -> "Tour":
        return cls(tuple(int(i) - 1 for i in order))


def validate_tour(order: Sequence[int], n: int, base: int = 1) -> bool:
    """True iff ``order`` is a permutation of ``{base, ..., base + n - 1}``."""
    try:
        items = [int(i) for i in order]
    except (TypeError, ValueError):
        return False
    if len(items) != n:
        return False
    return sorted(items) == list(range(base, base + n))


def tour_length(tour: Tour | Sequence[int], dm: DistanceMatrix) -> float:
    """Closed tour length, accumulated from node 0 towards its smaller neighbour.

    Fixing the start and direction makes the result bit-identical under
    rotation and reversal of the order.
    """
    order = tour.order if isinstance(tour, Tour) else tuple(int(i) for i in tour)
    if not validate_tour(order, dm.n, base=0):
        raise TourError(f"not a permutation of 0..{dm.n - 1}: {list(order)}")
    n = dm.n
    d = dm.d
    start = order.index(0)
    seq = [order[(start + k) % n] for k in range(n)]
    if seq[1] > seq[-1]:
        seq = [seq[0]] + seq[:0:-1]
    total = 0.0
    for k in range(n):
        total += float(d[seq[k], seq[(k + 1) % n]])
    return total


def batch_tour_lengths(coords: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """Tour lengths for a batch: ``coords (B, n, 2)``, ``tours (B, n)`` -> ``(B,)``.

    Each tour is rotated to start at node 0 and oriented so that its second
    node is smaller than its last before summing edge by edge, so a tour and
    its reversal give bit-identical lengths, equal to the exact oracles'.
    Tours are assumed valid.
    """
    tours = np.asarray(tours, dtype=np.intp)
    b, n = tours.shape
    start = np.argmin(tours, axis=1)
    rot = np.take_along_axis(tours, (start[:, None] + np.arange(n)) % n, axis=1)
    flip = rot[:, 1] > rot[:, -1]
    rot[flip, 1:] = rot[flip, :0:-1]
    pts = np.take_along_axis(coords, rot[..., None], axis=1)
    step = pts - np.roll(pts, -1, axis=1)
    edges = np.sqrt(step[..., 0] * step[..., 0] + step[..., 1] * step[..., 1])
    total = np.zeros(b)
    for k in range(n):
        total += edges[:, k]
    return total
