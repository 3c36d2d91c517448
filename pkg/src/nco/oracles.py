"""Exact solvers, the Held-Karp 1-tree bound and classical tour heuristics.

These are the reference costs every reported gap is measured against, so
each one is deliberately simple and deterministic: ties always go to the
lowest node index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nco import kernels
from nco.tsp import MIN_SIZE, DistanceMatrix, DomainError, Tour, TourError, tour_length

EXHAUSTIVE_CAP = 10
DP_CAP = 16


class CapError(DomainError):
    """Instance too large for the requested exact method."""


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ExactSolution:
    tour: Tour
    length: float
    method: str

    def to_json(self) -> dict:
        return {"method": self.method, "length": self.length, "tour": self.tour.external()}


@dataclass(frozen=True)
class AscentConfig:
    """Step schedule of the Lagrangian ascent.

    The first step is ``w0 / (step_divisor * n)`` with ``w0`` the unpenalised
    1-tree weight. The step halves after ``max(halving_period, n)``
    consecutive iterations without a new best bound, and the ascent stops
    after ``base_iterations + per_node_iterations * n`` iterations or as soon
    as the 1-tree is a tour.
    """

    step_divisor: float = 2.0
    halving_period: int = 10
    base_iterations: int = 100
    per_node_iterations: int = 10

    def period(self, n: int) -> int:
        return max(self.halving_period, n)

    def max_iter(self, n: int) -> int:
        return self.base_iterations + self.per_node_iterations * n


@dataclass(frozen=True)
class HkBoundResult:
    bound: float
    penalties: np.ndarray
    iterations: int
    converged_degree: bool

    def to_json(self) -> dict:
        return {
            "method": "hk",
            "bound": self.bound,
            "iterations": self.iterations,
            "converged_degree": self.converged_degree,
        }


def _check_size(dm: DistanceMatrix, cap: int, what: str):
    if dm.n < MIN_SIZE:
        raise DomainError(f"problem size below minimum ({dm.n} < {MIN_SIZE})")
    if dm.n > cap:
        raise CapError(f"size exceeds {what} cap ({dm.n} > {cap})")


def _canonical(order: list[int]) -> list[int]:
    """Rotate node 0 to the front and orient so that order[1] < order[-1]."""
    k = order.index(0)
    order = order[k:] + order[:k]
    if order[1] > order[-1]:
        order = [0] + order[1:][::-1]
    return order


def exhaustive_optimum(dm: DistanceMatrix) -> ExactSolution:
    """Optimal tour by enumerating all (n-1)!/2 tours through node 0."""
    _check_size(dm, EXHAUSTIVE_CAP, "exhaustive")
    _, order = kernels.exhaustive(dm.d)
    tour = Tour(order)
    return ExactSolution(tour=tour, length=tour_length(tour, dm), method="exhaustive")


def dp_optimum(dm: DistanceMatrix) -> ExactSolution:
    """Optimal tour by dynamic programming over visited subsets, O(n^2 2^n)."""
    _check_size(dm, DP_CAP, "DP")
    _, order = kernels.subset_dp(dm.d)
    tour = Tour(_canonical(order))
    return ExactSolution(tour=tour, length=tour_length(tour, dm), method="dp")


def minimum_one_tree(dm: DistanceMatrix, penalties) -> tuple[float, np.ndarray]:
    """Minimum 1-tree under penalised weights ``d[i, j] + p[i] + p[j]``.

    Returns the penalised weight and the degree of every node.
    """
    p = np.ascontiguousarray(penalties, dtype=np.float64)
    if p.shape != (dm.n,):
        raise DomainError(f"expected {dm.n} penalties, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError("penalties must be finite")
    weight, deg = kernels.one_tree(dm.d, p)
    return float(weight), np.asarray(deg, dtype=np.int64)


def hk_lower_bound(dm: DistanceMatrix, cfg: AscentConfig | None = None) -> HkBoundResult:
    cfg = cfg or AscentConfig()
    if dm.n < MIN_SIZE:
        raise DomainError(f"problem size below minimum ({dm.n} < {MIN_SIZE})")
    bound, penalties, iterations, converged = kernels.hk_ascent(
        dm.d, float(cfg.step_divisor), cfg.period(dm.n), cfg.max_iter(dm.n)
    )
    if not math.isfinite(bound) or not np.all(np.isfinite(penalties)):
        raise NumericError(f"non-finite Held-Karp ascent on n={dm.n}")
    return HkBoundResult(
        bound=float(bound),
        penalties=np.asarray(penalties, dtype=np.float64),
        iterations=int(iterations),
        converged_degree=bool(converged),
    )


def nearest_neighbor_tour(dm: DistanceMatrix, start: int = 0) -> Tour:
    if not 0 <= start < dm.n:
        raise DomainError(f"start node {start} out of range for n={dm.n}")
    return Tour(kernels.nearest_neighbor(dm.d, int(start)))


def two_opt_improve(tour: Tour, dm: DistanceMatrix) -> Tour:
    if len(tour) != dm.n or sorted(tour.order) != list(range(dm.n)):
        raise TourError(f"not a permutation of 0..{dm.n - 1}")
    return Tour(kernels.two_opt(dm.d, list(tour.order)))


def solve(dm: DistanceMatrix, method: str) -> dict:
    """JSON-ready solution for ``exhaustive``, ``dp``, ``nn`` or ``2opt``."""
    if method == "exhaustive":
        return exhaustive_optimum(dm).to_json()
    if method == "dp":
        return dp_optimum(dm).to_json()
    if method == "nn":
        tour = nearest_neighbor_tour(dm, 0)
    elif method == "2opt":
        tour = two_opt_improve(nearest_neighbor_tour(dm, 0), dm)
    else:
        raise DomainError(f"unknown method {method!r}")
    return {"method": method, "length": tour_length(tour, dm), "tour": tour.external()}
