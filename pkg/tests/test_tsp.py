import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nco.tsp import (
    DistanceMatrix,
    DomainError,
    Instance,
    Tour,
    TourError,
    batch_tour_lengths,
    build_distance_matrix,
    generate_batch,
    generate_instance,
    load_instances,
    tour_length,
    validate_tour,
)

SQUARE = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]


def square():
    return build_distance_matrix(Instance(4, np.array(SQUARE)))


def scalar_length(coords, order):
    total = 0.0
    for k in range(len(order)):
        (x0, y0), (x1, y1) = coords[order[k]], coords[order[(k + 1) % len(order)]]
        total += math.hypot(x1 - x0, y1 - y0)
    return total


def test_generate_is_deterministic():
    a, b = generate_instance(4, 5), generate_instance(4, 5)
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, generate_instance(4, 6).coords)


def test_generate_rejects_small():
    with pytest.raises(DomainError, match="problem size below minimum"):
        generate_instance(3, 0)


def test_generate_large_in_unit_square():
    inst = generate_instance(100, 0)
    assert inst.coords.shape == (100, 2)
    assert inst.coords.min() >= 0 and inst.coords.max() <= 1
    assert np.all(np.abs(inst.coords.mean(axis=0) - 0.5) < 0.05)


def test_instance_coords_read_only():
    inst = generate_instance(5, 1)
    with pytest.raises(ValueError):
        inst.coords[0, 0] = 0.3


def test_instance_validation():
    with pytest.raises(DomainError):
        Instance(4, np.array([[0.0, 0.0], [1.5, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(DomainError):
        Instance(5, np.zeros((4, 2)))


def test_json_roundtrip(tmp_path):
    inst = generate_instance(6, 9)
    path = tmp_path / "i.json"
    path.write_text(json.dumps([inst.to_json(), inst.to_json()]))
    loaded = load_instances(path)
    assert len(loaded) == 2
    assert np.array_equal(loaded[0].coords, inst.coords)


def test_load_empty_and_malformed(tmp_path):
    (tmp_path / "e.json").write_text("[]")
    (tmp_path / "m.json").write_text('{"n": 4}')
    (tmp_path / "bad.json").write_text("{")
    for name in ("e.json", "m.json", "bad.json"):
        with pytest.raises(DomainError):
            load_instances(tmp_path / name)


def test_square_distances():
    d = square().d
    assert d[0, 1] == d[1, 2] == d[2, 3] == d[3, 0] == 1.0
    assert d[0, 2] == d[1, 3] == math.sqrt(2.0)


def test_identical_points_zero_matrix():
    dm = build_distance_matrix(Instance(5, np.full((5, 2), 0.25)))
    assert not dm.d.any()


def test_distances_match_scalar_recompute():
    inst = generate_instance(15, 4)
    dm = build_distance_matrix(inst)
    for i in range(15):
        for j in range(15):
            (x0, y0), (x1, y1) = inst.coords[i], inst.coords[j]
            assert dm.d[i, j] == pytest.approx(math.hypot(x1 - x0, y1 - y0), abs=1e-15)


@given(st.integers(4, 30), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_matrix_invariants(n, seed):
    d = build_distance_matrix(generate_instance(n, seed)).d
    assert np.array_equal(d, d.T)
    assert not np.diag(d).any()
    assert d.min() >= 0


def test_square_perimeter():
    dm = square()
    assert tour_length(Tour.from_external([1, 2, 3, 4]), dm) == 4.0
    assert tour_length(Tour.from_external([4, 3, 2, 1]), dm) == 4.0


def test_length_matches_scalar_loop():
    inst = generate_instance(12, 8)
    order = list(np.random.default_rng(0).permutation(12))
    assert tour_length(order, build_distance_matrix(inst)) == pytest.approx(
        scalar_length(inst.coords, order), abs=1e-12)


@given(st.integers(4, 25), st.integers(0, 2**32), st.integers(0, 24), st.booleans())
@settings(max_examples=60, deadline=None)
def test_length_exact_under_rotation_and_reversal(n, seed, shift, flip):
    inst = generate_instance(n, seed)
    dm = build_distance_matrix(inst)
    order = list(np.random.default_rng(seed).permutation(n))
    moved = order[shift % n:] + order[:shift % n]
    if flip:
        moved = moved[::-1]
    assert tour_length(moved, dm) == tour_length(order, dm)
    batch = batch_tour_lengths(inst.coords[None], np.array([moved]))
    assert batch[0] == tour_length(order, dm)


def test_tour_length_rejects_invalid():
    with pytest.raises(TourError):
        tour_length([0, 1, 1, 3], square())


@pytest.mark.parametrize("order,n,ok", [
    ((1, 2, 3, 4), 4, True),
    ((1, 2, 2, 4), 4, False),
    ((1, 2, 3), 4, False),
    ((0, 1, 2, 3), 4, False),
    (("a", 2, 3, 4), 4, False),
])
def test_validate_tour(order, n, ok):
    assert validate_tour(order, n) is ok


def test_external_roundtrip():
    t = Tour.from_external([2, 1, 4, 3])
    assert t.order == (1, 0, 3, 2)
    assert t.external() == [2, 1, 4, 3]


def test_batch_shape_and_determinism():
    a = generate_batch(7, 5, 3)
    assert a.shape == (5, 7, 2)
    assert np.array_equal(a, generate_batch(7, 5, 3))


def test_distance_matrix_read_only():
    dm = DistanceMatrix(4, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        dm.d[0, 1] = 1.0
