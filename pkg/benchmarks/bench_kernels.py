"""Time the compiled oracle kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json]

Each case runs on the same distance matrices under both backends; results
are checked to agree before timings are reported.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from nco import kernels
from nco.tsp import generate_instance, pairwise_distances


def _matrix(n, seed=0):
    return pairwise_distances(generate_instance(n, seed).coords)


CASES = [
    ("exhaustive n=9", lambda k, d: k.exhaustive(d), 9),
    ("subset_dp n=12", lambda k, d: k.subset_dp(d), 12),
    ("subset_dp n=15", lambda k, d: k.subset_dp(d), 15),
    ("hk_ascent n=30", lambda k, d: k.hk_ascent(d, 2.0, 30, 400), 30),
    ("hk_ascent n=100", lambda k, d: k.hk_ascent(d, 2.0, 100, 1100), 100),
    ("two_opt n=100", lambda k, d: k.two_opt(d, list(range(len(d)))), 100),
    ("nearest_neighbor n=200", lambda k, d: k.nearest_neighbor(d, 0), 200),
]


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="one JSON object per case")
    args = ap.parse_args(argv)

    backends = {name: kernels.load(name) for name in kernels.available()}
    if "cython" not in backends:
        print("compiled kernels not built; only timing the numpy fallback", file=sys.stderr)

    if not args.json:
        print(f"{'case':<24}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, fn, n in CASES:
        d = _matrix(n)
        outs = {b: fn(k, d) for b, k in backends.items()}
        if len(outs) > 1 and not _same(outs["cython"], outs["python"]):
            raise SystemExit(f"{label}: backends disagree")
        times = {}
        for b, k in backends.items():
            number = 1
            while timeit.timeit(lambda: fn(k, d), number=number) < 0.05 and number < 10_000:
                number *= 4
            times[b] = min(timeit.repeat(lambda: fn(k, d), number=number, repeat=args.repeat)) / number
        speedup = times["python"] / times["cython"] if "cython" in times else None
        if args.json:
            print(json.dumps({"case": label, "seconds": times, "speedup": speedup}, sort_keys=True))
        else:
            row = f"{label:<24}" + "".join(f"{times[b] * 1e3:>10.3f}ms" for b in backends)
            print(row + (f"{speedup:>11.1f}x" if speedup else ""))


if __name__ == "__main__":
    main()
