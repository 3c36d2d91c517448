"""``nco`` command line: solve, bound, train, eval, matrix.

Exit codes: 0 success, 2 usage or contract error, 1 internal error. Errors
are also written to stderr as one JSON line ``{"error": kind, "message": ...}``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from nco import oracles
from nco.autograd import ContractError as AutogradContractError
from nco.curriculum import ContractError as CurriculumContractError
from nco.curriculum import StrategyError, parse_strategy, replace_alpha
from nco.evaluation import MODES, GapTable, aggregate_runs, build_performance_matrix, evaluate_policy
from nco.policy import PolicyHyper, load_checkpoint
from nco.tsp import DomainError, build_distance_matrix, generate_instance, load_instances
from nco.trainer import TrainConfig, train_run

CONFIG_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sizes(text: str) -> list[int]:
    """``4..9``, ``4,6,8`` or a mix such as ``4..6,10``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"no sizes in {text!r}")
    return out


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("NCO_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"NCO_SEED must be an integer, got {env!r}") from None


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# commands ----------------------------------------------------------------------------


def cmd_solve(args) -> int:
    inst = generate_instance(args.n, _seed(args))
    _emit(oracles.solve(build_distance_matrix(inst), args.method))
    return 0


def cmd_bound(args) -> int:
    if args.instances is not None:
        instances = load_instances(args.instances)
    else:
        if args.n is None:
            raise UsageError("bound needs --n or --instances")
        instances = [generate_instance(args.n, _seed(args))]
    for inst in instances:
        res = oracles.hk_lower_bound(build_distance_matrix(inst))
        _emit(res.to_json() | {"n": inst.n, "id": inst.id})
    return 0


def _experiment_config(args) -> dict:
    if args.config is not None:
        cfg = json.loads(Path(args.config).read_text())
        if cfg.get("config_version") != CONFIG_VERSION:
            raise UsageError(f"{args.config}: unsupported config_version {cfg.get('config_version')}")
        return cfg
    strategy = parse_strategy(args.strategy)
    if args.alpha is not None:
        strategy = replace_alpha(strategy, args.alpha)
    train = TrainConfig(
        batch_size=args.batch_size,
        batches_per_epoch=args.batches,
        epochs=args.epochs,
        seed=_seed(args),
        val_sizes=tuple(args.sizes or ()),
    )
    return {
        "config_version": CONFIG_VERSION,
        "strategy": str(strategy),
        "train": asdict(train),
        "policy": asdict(PolicyHyper()),
        "policy_seed": train.seed,
        "init_from": args.init_from,
    }


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    strategy = parse_strategy(cfg["strategy"])
    train = TrainConfig(**cfg["train"])
    hyper = PolicyHyper(**cfg["policy"])
    init = None
    if cfg.get("init_from"):
        init, _ = load_checkpoint(cfg["init_from"])
        if init.hyper != hyper:
            raise UsageError(f"{cfg['init_from']}: checkpoint hyper {init.hyper} differs from config")
    out = Path(args.out)
    if (out / "DONE").exists():
        raise UsageError(f"{out} holds a completed run; choose a new --out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1) + "\n")
    train_run(train, strategy, cfg["policy_seed"], hyper=hyper, out_dir=out, init=init)
    (out / "DONE").write_text("")
    return 0


def cmd_eval(args) -> int:
    seed = _seed(args)
    tables = []
    for path in args.checkpoint:
        params, _ = load_checkpoint(path)
        for r in range(args.runs):
            run_id = f"{Path(path).stem}.{r}" if len(args.checkpoint) > 1 else str(r)
            tables.append(evaluate_policy(params, args.sizes, args.n_instances, seed, args.mode, run_id))
    table = aggregate_runs(tables) if len(tables) > 1 else tables[0]
    text = table.to_csv()
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_matrix(args) -> int:
    paths = sorted(Path(args.checkpoints).glob("*.ckpt"))
    if not paths:
        raise UsageError(f"no *.ckpt files in {args.checkpoints}")
    entries = []
    for p in paths:
        params, manifest = load_checkpoint(p)
        size = manifest.get("tags", {}).get("train_size")
        if size is None:
            raise UsageError(f"{p}: checkpoint has no train_size tag")
        entries.append((int(size), params))
    sizes = [s for s, _ in entries]
    if len(set(sizes)) != len(sizes):
        raise UsageError(f"several checkpoints share a train size: {sorted(sizes)}")
    matrix = build_performance_matrix(entries, args.test_sizes, args.n_instances, _seed(args), args.cap, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix.to_csv(out / "matrix.csv", capped=True)
    matrix.to_csv(out / "matrix_raw.csv", capped=False)
    return 0


# parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nco", description="Curriculum sampling experiments for a neural TSP solver.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one generated instance")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--method", choices=("exhaustive", "dp", "nn", "2opt"), required=True)
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bound", help="Held-Karp lower bounds")
    b.add_argument("--n", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--instances", help="JSON file with one instance or a list")
    b.set_defaults(func=cmd_bound)

    t = sub.add_parser("train", help="train a policy under a sampling strategy")
    t.add_argument("--strategy", default="fixed:20")
    t.add_argument("--sizes", type=_sizes, help="validation sizes logged every epoch")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batches", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--alpha", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--init-from")
    t.add_argument("--config", help="rerun from a run directory's config.json")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="gap table for one or more checkpoints")
    e.add_argument("--checkpoint", action="append", required=True)
    e.add_argument("--sizes", type=_sizes, required=True)
    e.add_argument("--n-instances", type=int, default=256)
    e.add_argument("--mode", choices=MODES, default="paper_faithful")
    e.add_argument("--runs", type=int, default=1)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("matrix", help="train-size x test-size gap matrix")
    m.add_argument("--checkpoints", required=True, help="directory of tagged checkpoints")
    m.add_argument("--test-sizes", type=_sizes, required=True)
    m.add_argument("--cap", type=float, default=0.10)
    m.add_argument("--n-instances", type=int, default=256)
    m.add_argument("--mode", choices=MODES, default="paper_faithful")
    m.add_argument("--seed", type=int)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_matrix)
    return p


_CONTRACT = (UsageError, DomainError, StrategyError, ValueError, AutogradContractError,
             CurriculumContractError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "runs", 1) < 1:
            raise UsageError("--runs must be at least 1")
        return args.func(args)
    except _CONTRACT as exc:
        kind = "usage" if isinstance(exc, UsageError) else type(exc).__name__
        sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
        return 2
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
