"""Acceptance checks. Each test prints one ``CRITERION k ... PASS|FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are repeated
in the terminal summary) or ``python tests/test_acceptance.py``.
"""
import itertools
import json
import math
import time

import numpy as np
import pytest

from nco import autograd as ag
from nco import oracles
from nco.cli import main as cli_main
from nco.curriculum import (
    ADVANCE,
    DECREMENT,
    STAY,
    Curriculum,
    StaircaseState,
    StrategySpec,
    Trial,
    epoch_boundary,
    n_base,
    parse_strategy,
    record_base_outcome,
)
from nco.evaluation import eval_coords, evaluate_policy
from nco.policy import PolicyHyper, init_params, log_prob_of_tours, rollout_batch
from nco.seeds import derive_seed
from nco.trainer import TrainConfig, reinforce_loss, train_run
from nco.tsp import Instance, build_distance_matrix, generate_batch, generate_instance, tour_length, validate_tour

RESULTS = []

# pinned seeds
SEED_ORACLE = 20240101
SEED_TRAIN = 1
SEED_HELDOUT = 777


def report(k, name, ok, detail, elapsed, budget):
    within = elapsed <= budget
    verdict = "PASS" if ok and within else "FAIL"
    line = f"CRITERION {k:>2} {name}: {verdict}  {detail}  [{elapsed:.1f}s / {budget:.0f}s]"
    RESULTS.append(line)
    print(line, flush=True)
    return verdict == "PASS"


def check(k, name, ok, detail, elapsed, budget):
    assert report(k, name, ok, detail, elapsed, budget), RESULTS[-1]


# 1 ---------------------------------------------------------------------------------


def test_c01_oracle_sandwich():
    t0 = time.perf_counter()
    worst_bound = worst_exact = worst_heur = -math.inf
    for i in range(500):
        n = 4 + i % 9
        dm = build_distance_matrix(generate_instance(n, derive_seed(SEED_ORACLE, "c1", i)))
        hk = oracles.hk_lower_bound(dm).bound
        dp = oracles.dp_optimum(dm).length
        nn = oracles.nearest_neighbor_tour(dm)
        two = oracles.two_opt_improve(nn, dm)
        worst_bound = max(worst_bound, hk - dp)
        if n <= oracles.EXHAUSTIVE_CAP:
            worst_exact = max(worst_exact, abs(oracles.exhaustive_optimum(dm).length - dp))
        worst_heur = max(worst_heur, dp - tour_length(two, dm), tour_length(two, dm) - tour_length(nn, dm))
    ok = worst_bound <= 1e-9 and worst_exact <= 1e-12 and worst_heur <= 1e-12
    check(1, "oracle sandwich", ok,
          f"max(hk-opt)={worst_bound:.3g} max|dp-exh|={worst_exact:.3g} max heuristic violation={worst_heur:.3g}",
          time.perf_counter() - t0, 120)


# 2 ---------------------------------------------------------------------------------


def test_c02_hk_quality():
    t0 = time.perf_counter()
    rel = []
    for i in range(200):
        dm = build_distance_matrix(generate_instance(12, derive_seed(SEED_ORACLE, "c2", i)))
        hk = oracles.hk_lower_bound(dm).bound
        rel.append((oracles.dp_optimum(dm).length - hk) / hk)
    mean = float(np.mean(rel))
    check(2, "HK bound quality", mean <= 0.05, f"mean (OPT-HK)/HK = {mean:.5f} (<= 0.05)",
          time.perf_counter() - t0, 120)


# 3 ---------------------------------------------------------------------------------


def test_c03_gradient_correctness():
    t0 = time.perf_counter()
    params = init_params(PolicyHyper(d_model=16, n_heads=2, n_layers=1), SEED_TRAIN)
    coords = generate_batch(5, 4, derive_seed(SEED_ORACLE, "c3"))
    base = np.full(4, 2.0)
    tensors = list(params.tensors.values())

    def loss(_):
        return reinforce_loss(params, base, coords, np.random.default_rng(3))[0]

    err = ag.finite_difference_check(loss, tensors, h=1e-6)
    # absolute round-off of a central difference in float64
    noise = np.finfo(float).eps * abs(loss(None).item()) / 1e-6
    check(3, "gradient correctness", err <= 1e-6,
          f"max relative error {err:.3g} over {sum(t.data.size for t in tensors)} coordinates (<= 1e-6, h=1e-6); "
          f"difference round-off ~{noise:.1g}",
          time.perf_counter() - t0, 60)


# 4 ---------------------------------------------------------------------------------


def test_c04_probability_normalization():
    t0 = time.perf_counter()
    params = init_params(PolicyHyper(), SEED_TRAIN)
    devs = {}
    for n in (4, 5):
        inst = generate_instance(n, derive_seed(SEED_ORACLE, "c4", n))
        seqs = np.array(list(itertools.permutations(range(n))))
        coords = np.repeat(inst.coords[None], len(seqs), axis=0)
        with ag.no_grad():
            logp = log_prob_of_tours(params, coords, seqs).data
        devs[n] = abs(math.fsum(np.exp(logp)) - 1.0)
    check(4, "probability normalization", max(devs.values()) <= 1e-8,
          " ".join(f"|sum-1| n={n}: {d:.2g}" for n, d in devs.items()), time.perf_counter() - t0, 60)


# 5 ---------------------------------------------------------------------------------


def test_c05_tour_validity():
    t0 = time.perf_counter()
    total = bad = 0
    for n in range(4, 21):
        params = init_params(PolicyHyper(), derive_seed(SEED_ORACLE, "c5", n))
        for mode in ("greedy", "sample"):
            coords = generate_batch(n, 295, derive_seed(SEED_ORACLE, "c5", n, mode))
            with ag.no_grad():
                tours = rollout_batch(params, coords, mode, derive_seed(SEED_ORACLE, "c5r", n)).tours
            total += len(tours)
            bad += sum(not validate_tour(t + 1, n) for t in tours)
    check(5, "tour validity", bad == 0 and total >= 10_000, f"{total} rollouts, {bad} invalid",
          time.perf_counter() - t0, 120)


# 6 ---------------------------------------------------------------------------------


def test_c06_staircase_conformance():
    t0 = time.perf_counter()
    failures = []

    wide = StrategySpec("staircase", 4, 100)
    if n_base(wide, 4, 2500) != 260:
        failures.append(f"N_base(4)={n_base(wide, 4, 2500)}")

    # hand simulation, range 4..14, offset 0, B=10: N_base = 1, 1, 2 at t = 4, 5, 6
    spec = StrategySpec("staircase", 4, 14, offset=0.0)
    s, seen = StaircaseState(t=4), []
    script = [("g", 0.04), ("g", 0.04), ("g", 0.08), ("g", 0.06), ("e", None),
              ("g", 0.07), ("g", 0.07), ("e", None), ("g", 0.05), ("e", None), ("g", 0.2), ("g", 0.2), ("e", None)]
    for kind, gap in script:
        s, tr = record_base_outcome(spec, s, gap, 10) if kind == "g" else epoch_boundary(spec, s)
        seen.append((tr, s.t))
    expected = [(ADVANCE, 5), (ADVANCE, 6), (None, 6), (STAY, 6), (None, 6),
                (None, 6), (STAY, 6), (DECREMENT, 5), (ADVANCE, 6), (None, 6),
                (None, 6), (STAY, 6), (DECREMENT, 5)]
    if seen != expected:
        failures.append(f"trajectory {seen}")

    # floor: no decrement below t_min
    s, tr = epoch_boundary(spec, StaircaseState(t=4))
    if tr is not None or s.t != 4:
        failures.append("decrement below t_min")

    # probes never move the level, whatever their outcome
    a = Curriculum(StrategySpec("staircase", 4, 9, rule="scaled"), 10, 5, 0)
    b = Curriculum(StrategySpec("staircase", 4, 9, rule="scaled"), 10, 5, 0)
    rng = np.random.default_rng(0)
    for i in range(200):
        gap = float(rng.uniform(0, 0.1))
        a.record(Trial(a.level, "base"), gap, i // 10, i % 10)
        a.record(Trial(4, "probe"), float(rng.uniform(0, 5)), i // 10, i % 10)
        b.record(Trial(b.level, "base"), gap, i // 10, i % 10)
        if i % 10 == 9:
            a.end_epoch(i // 10)
            b.end_epoch(i // 10)
    if a.trace != b.trace:
        failures.append("probe outcomes changed the trace")

    check(6, "staircase conformance", not failures, "; ".join(failures) or "trajectory, N_base=260, floor, probes",
          time.perf_counter() - t0, 10)


# 7 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_c07_learning_effect():
    t0 = time.perf_counter()
    hyper = PolicyHyper()
    untrained = init_params(hyper, SEED_TRAIN)
    gap0 = evaluate_policy(untrained, [7], 256, SEED_HELDOUT).row(7).mean_gap
    cfg = TrainConfig(seed=SEED_TRAIN)
    trained = train_run(cfg, parse_strategy("fixed:7"), SEED_TRAIN, hyper=hyper).params
    gap = evaluate_policy(trained, [7], 256, SEED_HELDOUT).row(7).mean_gap
    nn_gaps = []
    for c in eval_coords(7, 256, SEED_HELDOUT):
        dm = build_distance_matrix(Instance(7, c))
        nn_gaps.append(tour_length(oracles.nearest_neighbor_tour(dm), dm) / oracles.exhaustive_optimum(dm).length - 1)
    nn_gap = float(np.mean(nn_gaps))
    check(7, "learning effect", gap < 0.5 * gap0 and gap < nn_gap,
          f"trained {gap:.4f} vs untrained {gap0:.4f} (need < {0.5 * gap0:.4f}) and NN {nn_gap:.4f}",
          time.perf_counter() - t0, 1800)


# 8 ---------------------------------------------------------------------------------


def _tsp4_curve(strategy):
    cfg = TrainConfig(seed=SEED_TRAIN, val_sizes=(4,), val_instances=256)
    res = train_run(cfg, parse_strategy(strategy), SEED_TRAIN, hyper=PolicyHyper())
    return [r.validation["4"] for r in res.reports]


@pytest.mark.slow
def test_c08_forgetting_direction():
    t0 = time.perf_counter()
    classic = _tsp4_curve("classic:4..12")
    stair = _tsp4_curve("staircase:4..12,rule=scaled")
    rise_c = classic[-1] - min(classic)
    rise_s = stair[-1] - min(stair)
    ok = rise_c >= 0.01 and rise_s <= 0.01
    check(8, "forgetting direction", ok,
          f"classic final-min {rise_c:.4f} (need >= 0.01); staircase final-min {rise_s:.4f} (need <= 0.01); "
          f"classic curve {[round(g, 4) for g in classic]}; staircase curve {[round(g, 4) for g in stair]}",
          time.perf_counter() - t0, 3600)


# 9 ---------------------------------------------------------------------------------


def _train_cli(out, strategy, epochs=4, batches=5, extra=()):
    argv = ["train", "--strategy", strategy, "--epochs", str(epochs), "--batches", str(batches),
            "--batch-size", "4", "--seed", str(SEED_TRAIN), "--out", str(out), *extra]
    assert cli_main(argv) == 0
    return [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]


def test_c09_budget_accounting(tmp_path):
    t0 = time.perf_counter()
    epochs, batches = 4, 5
    got = {}
    for strategy in ("staircase:4..9", "classic:4..9", "fixed:6", "uniform:4..9"):
        logs = _train_cli(tmp_path / strategy.split(":")[0], strategy, epochs, batches)
        got[strategy] = (logs[-1]["batches_total"], sum(r["batches"] for r in logs))
    want = {s: ((epochs - 1) * batches if s.startswith("staircase") else epochs * batches) for s in got}
    ok = all(got[s] == (want[s], want[s]) for s in got)
    check(9, "budget accounting", ok, " ".join(f"{s.split(':')[0]}={got[s][0]}/{want[s]}" for s in got),
          time.perf_counter() - t0, 60)


# 10 --------------------------------------------------------------------------------


def test_c10_reproducibility(tmp_path, capsys):
    t0 = time.perf_counter()
    diffs = []
    for tag in ("a", "b"):
        _train_cli(tmp_path / tag, "staircase:4..8,alpha=0.05", extra=("--sizes", "4,6"))
    for name in ("train_log.jsonl", "config.json", "epoch_2.ckpt"):
        if (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes():
            diffs.append(name)
    for tag in ("a", "b"):
        argv = ["eval", "--checkpoint", str(tmp_path / "a" / "epoch_2.ckpt"), "--sizes", "4..6,10",
                "--n-instances", "32", "--runs", "2", "--seed", "5", "--out", str(tmp_path / f"eval_{tag}.csv")]
        assert cli_main(argv) == 0
    if (tmp_path / "eval_a.csv").read_bytes() != (tmp_path / "eval_b.csv").read_bytes():
        diffs.append("eval csv")
    capsys.readouterr()
    check(10, "reproducibility", not diffs, "differing: " + (", ".join(diffs) or "none"),
          time.perf_counter() - t0, 1800)


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    class _Quiet:
        def readouterr(self):
            return None

    for name, fn in sorted(globals().copy().items()):
        if not name.startswith("test_c"):
            continue
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    args = [Path(d)] + ([_Quiet()] if fn.__code__.co_argcount > 1 else [])
                    fn(*args)
            else:
                fn()
        except AssertionError:
            pass
    sys.exit(0 if all(" PASS " in line for line in RESULTS) else 1)
