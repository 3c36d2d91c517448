import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nco.curriculum import (
    ADVANCE,
    DECREMENT,
    STAY,
    ContractError,
    Curriculum,
    StaircaseState,
    StrategyError,
    StrategySpec,
    Trial,
    classic_schedule,
    epoch_boundary,
    n_base,
    n_base_ratio,
    parse_strategy,
    record_base_outcome,
    replace_alpha,
    staircase_trial,
)

WIDE = StrategySpec("staircase", 4, 100)


# parsing ----------------------------------------------------------------------------


@pytest.mark.parametrize("text,kind,lo,hi", [
    ("fixed:20", "fixed", 20, 20),
    ("uniform:4..100", "uniform", 4, 100),
    ("classic:4..100", "classic", 4, 100),
    ("staircase:4..100,alpha=0.05", "staircase", 4, 100),
])
def test_parse(text, kind, lo, hi):
    s = parse_strategy(text)
    assert (s.kind, s.t_min, s.t_max) == (kind, lo, hi)


@pytest.mark.parametrize("bad", [
    "fixed:3", "fixed:4..6", "uniform:9..5", "classic:4", "staircase:4..4",
    "staircase:4..9,alpha=1.5", "staircase:4..9,foo=1", "uniform:4..9,alpha=0.1", "beam:4..9", "",
])
def test_parse_rejects(bad):
    with pytest.raises(StrategyError):
        parse_strategy(bad)


def test_str_roundtrip():
    for text in ("fixed:7", "uniform:4..9,per_batch=1", "classic:4..12",
                 "staircase:4..20,alpha=0.1,probe=0.3,rule=scaled,offset=5,sampling=probe"):
        spec = parse_strategy(text)
        assert parse_strategy(str(spec)) == spec


def test_replace_alpha():
    assert replace_alpha(parse_strategy("staircase:4..9"), 0.1).alpha == 0.1
    with pytest.raises(StrategyError):
        replace_alpha(parse_strategy("fixed:9"), 0.1)


# N_base -----------------------------------------------------------------------------


def test_n_base_wide_range_values():
    assert n_base_ratio(WIDE, 4) == pytest.approx(10 / 96)
    assert n_base(WIDE, 4, 2500) == 260
    assert n_base(WIDE, 100, 2500) == 2500
    assert n_base(WIDE, 50, 2500) == round(2500 * 56 / 96)


def test_n_base_clamps():
    assert n_base(StrategySpec("staircase", 4, 12), 4, 100) == 100
    tiny = StrategySpec("staircase", 4, 100, offset=0.0)
    assert n_base(tiny, 4, 5) == 1
    with pytest.raises(StrategyError):
        n_base(WIDE, 101, 2500)


def test_scaled_rule_matches_literal_at_span_96():
    scaled = StrategySpec("staircase", 4, 100, rule="scaled")
    assert all(n_base(scaled, t, 2500) == n_base(WIDE, t, 2500) for t in range(4, 101))
    desk = StrategySpec("staircase", 4, 12, rule="scaled")
    assert [n_base(desk, t, 100) for t in (4, 8, 12)] == [10, 60, 100]


def test_half_rounds_up():
    # 0.5 * 2 = 1 exactly; 2.5 -> 3
    spec = StrategySpec("staircase", 4, 8, offset=0.5)
    assert n_base(spec, 4, 20) == 3  # 20 * 0.5 / 4 = 2.5


# staircase state machine -----------------------------------------------------------------


def test_advance_and_stay():
    spec = StrategySpec("staircase", 4, 12, rule="scaled")
    nb = n_base(spec, 5, 100)
    s = StaircaseState(t=5)
    for _ in range(nb - 1):
        s, tr = record_base_outcome(spec, s, 0.04, 100)
        assert tr is None
    s, tr = record_base_outcome(spec, s, 0.04, 100)
    assert tr == ADVANCE and s.t == 6 and s.base_trials_done == 0
    s = StaircaseState(t=5)
    for _ in range(nb):
        s, tr = record_base_outcome(spec, s, 0.06, 100)
    assert tr == STAY and s.t == 5 and s.base_trials_done == 0


def test_threshold_inclusive():
    spec = StrategySpec("staircase", 4, 100, offset=0.0)
    s, tr = record_base_outcome(spec, StaircaseState(t=4), 0.05, 5)
    assert tr == ADVANCE


def test_top_level_clamped():
    spec = StrategySpec("staircase", 4, 6, offset=0.0)
    s = StaircaseState(t=6)
    for _ in range(n_base(spec, 6, 10)):
        s, tr = record_base_outcome(spec, s, 0.0, 10)
    assert tr == ADVANCE and s.t == 6


@pytest.mark.parametrize("gap", [-0.01, float("nan"), float("inf")])
def test_bad_gap(gap):
    with pytest.raises(ContractError):
        record_base_outcome(WIDE, StaircaseState(t=4), gap, 2500)


def test_epoch_boundary():
    spec = StrategySpec("staircase", 4, 12)
    s, tr = epoch_boundary(spec, StaircaseState(t=7, advanced_this_epoch=True, epoch_base_trials=3))
    assert tr is None and s.t == 7 and s.epoch_base_trials == 0
    s, tr = epoch_boundary(spec, StaircaseState(t=7, base_trials_done=2, gap_sum=0.3))
    assert tr == DECREMENT and s == StaircaseState(t=6)
    s, tr = epoch_boundary(spec, StaircaseState(t=4))
    assert tr is None and s.t == 4


def test_scripted_trajectory():
    # B=10, range 4..14, offset 0 -> N_base(t) = round(10 * (t - 4) / 10) clamped to >= 1:
    # t=4 -> 1, t=5 -> 1, t=6 -> 2
    spec = StrategySpec("staircase", 4, 14, offset=0.0)
    assert [n_base(spec, t, 10) for t in (4, 5, 6)] == [1, 1, 2]
    s = StaircaseState(t=4)
    log = []
    # epoch 1: window means 0.04 (t=4, one trial), 0.04 (t=5, one trial)
    for gap in (0.04, 0.04):
        s, tr = record_base_outcome(spec, s, gap, 10)
        log.append((tr, s.t))
    # window at t=6 needs 2 trials: mean (0.08 + 0.06) / 2 = 0.07 -> stay
    for gap in (0.08, 0.06):
        s, tr = record_base_outcome(spec, s, gap, 10)
        log.append((tr, s.t))
    s, tr = epoch_boundary(spec, s)
    log.append((tr, s.t))
    # epoch 2: window at t=6 with mean 0.07 -> stay, no advance -> decrement to 5
    for gap in (0.07, 0.07):
        s, tr = record_base_outcome(spec, s, gap, 10)
        log.append((tr, s.t))
    s, tr = epoch_boundary(spec, s)
    log.append((tr, s.t))
    # epoch 3: window mean 0.03 at t=5 -> advance to 6, no decrement
    s, tr = record_base_outcome(spec, s, 0.03, 10)
    log.append((tr, s.t))
    s, tr = epoch_boundary(spec, s)
    log.append((tr, s.t))
    assert log == [
        (ADVANCE, 5), (ADVANCE, 6), (None, 6), (STAY, 6), (None, 6),
        (None, 6), (STAY, 6), (DECREMENT, 5),
        (ADVANCE, 6), (None, 6),
    ]


@given(st.lists(st.tuples(st.booleans(), st.floats(0, 0.2)), max_size=300), st.integers(0, 99))
@settings(max_examples=60, deadline=None)
def test_level_stays_in_range_and_probes_ignored(events, seed):
    spec = StrategySpec("staircase", 4, 9, rule="scaled")
    with_probes = Curriculum(spec, 10, 5, seed)
    without = Curriculum(spec, 10, 5, seed)
    for i, (is_base, gap) in enumerate(events):
        kind = "base" if is_base else "probe"
        with_probes.record(Trial(with_probes.level if is_base else 4, kind), gap, i // 10, i % 10)
        if is_base:
            without.record(Trial(without.level, "base"), gap, i // 10, i % 10)
        if i % 10 == 9:
            with_probes.end_epoch(i // 10)
            without.end_epoch(i // 10)
        assert 4 <= with_probes.level <= 9
    assert with_probes.trace == without.trace


def test_probe_at_floor():
    rng = np.random.default_rng(0)
    spec = StrategySpec("staircase", 4, 12)
    for _ in range(200):
        assert staircase_trial(spec, StaircaseState(t=4), rng).size == 4


def test_sampler_statistics():
    rng = np.random.default_rng(2024)
    spec = StrategySpec("staircase", 4, 12)
    trials = [staircase_trial(spec, StaircaseState(t=12), rng) for _ in range(10_000)]
    base = sum(t.kind == "base" for t in trials)
    assert abs(base - 5000) <= 3 * np.sqrt(10_000 * 0.25)
    assert all(t.size == 12 for t in trials if t.kind == "base")
    probes = [t.size for t in trials if t.kind == "probe"]
    counts = np.bincount(probes, minlength=13)[4:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_probe_sampling_mode():
    rng = np.random.default_rng(1)
    spec = StrategySpec("staircase", 4, 12, sampling="probe")
    for _ in range(300):
        t = staircase_trial(spec, StaircaseState(t=8), rng)
        assert 4 <= t.size <= 8 and (t.kind == "base") == (t.size == 8)


# other strategies -------------------------------------------------------------------


def test_classic_examples():
    assert classic_schedule(StrategySpec("classic", 4, 100), 97) == list(range(4, 101))
    assert classic_schedule(StrategySpec("classic", 4, 5), 4) == [4, 4, 5, 5]
    assert classic_schedule(StrategySpec("classic", 4, 6), 8) == [4, 4, 5, 5, 5, 6, 6, 6]


@given(st.integers(4, 30), st.integers(0, 20), st.integers(1, 200))
@settings(max_examples=100, deadline=None)
def test_classic_monotone_onto(lo, width, slots):
    spec = StrategySpec("classic", lo, lo + width)
    sched = classic_schedule(spec, slots)
    assert len(sched) == slots
    assert sched == sorted(sched)
    assert sched[0] == lo
    if slots >= width + 1:
        assert set(sched) == set(spec.sizes)


def test_classic_falls_back_to_batches():
    cur = Curriculum(StrategySpec("classic", 4, 20), 10, 2, 0)
    sizes = [cur.next_trial(e, b).size for e in range(2) for b in range(10)]
    assert sizes == sorted(sizes) and sizes[0] == 4 and sizes[-1] == 20


def test_fixed_always_same():
    cur = Curriculum(parse_strategy("fixed:20"), 5, 3, 0)
    assert {cur.next_trial(e, b) for e in range(3) for b in range(5)} == {Trial(20, "base")}


def test_uniform_per_epoch_and_per_batch():
    cur = Curriculum(parse_strategy("uniform:4..100"), 5, 30, 0)
    per_epoch = [{cur.next_trial(e, b).size for b in range(5)} for e in range(30)]
    assert all(len(s) == 1 for s in per_epoch)
    assert len(set().union(*per_epoch)) > 5
    cur = Curriculum(parse_strategy("uniform:4..100,per_batch=1"), 50, 1, 0)
    assert len({cur.next_trial(0, b).size for b in range(50)}) > 10


def test_staircase_epochs():
    cur = Curriculum(parse_strategy("staircase:4..9"), 10, 20, 0)
    assert cur.total_epochs == 19
    assert Curriculum(parse_strategy("classic:4..9"), 10, 20, 0).total_epochs == 20
    with pytest.raises(StrategyError):
        Curriculum(parse_strategy("staircase:4..9"), 10, 1, 0)


def test_replayable():
    def trace(seed):
        cur = Curriculum(parse_strategy("staircase:4..12,rule=scaled"), 20, 6, seed)
        rng = np.random.default_rng(5)
        out = []
        for e in range(5):
            for b in range(20):
                t = cur.next_trial(e, b)
                out.append(t)
                cur.record(t, float(rng.uniform(0, 0.08)), e, b)
            cur.end_epoch(e)
        return out, cur.trace

    assert trace(3) == trace(3)
