"""Compiled vs pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--rollouts N] [--rows N] [--repeat R]

Both backends are run on identical inputs; the script also checks that they
agree bit for bit before reporting timings.
"""
import argparse
import time

import numpy as np

from volleypg import kernels, synth
from volleypg.kernels import _pure
from volleypg.states import RECEIVER_WINS, SERVE_STATE, SERVER_WINS

try:
    from volleypg.kernels import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_mc(impl, kernel, rollouts, seed=0):
    start = kernel.index[SERVE_STATE]
    rw, sw = kernel.index[RECEIVER_WINS], kernel.index[SERVER_WINS]
    u = np.random.default_rng(seed).random(rollouts * 40)

    def run():
        st = np.zeros(7, dtype=np.int64)
        st[kernels.CUR] = start
        st[kernels.TARGET] = rollouts
        st[kernels.MAX_STEPS] = 10_000
        impl.mc_advance(kernel.indptr, kernel.indices, kernel.cum, start, rw, sw, u, st)
        return st.tolist()

    return run


def bench_crossprod(impl, rows, seed=0):
    rng = np.random.default_rng(seed)
    # intercept plus conference/team/player factors, sized like a full league
    sizes = [1, 4, 32, 320, 4, 32, 320]
    offsets = np.cumsum([0] + sizes[:-1])
    codes = np.column_stack([off + rng.integers(0, s, rows) for s, off in zip(sizes, offsets)])
    w = np.ones(rows)
    y = rng.normal(size=rows)
    q = int(sum(sizes))
    return lambda: impl.crossprod(codes, w, y, q)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rollouts", type=int, default=20_000)
    ap.add_argument("--rows", type=int, default=50_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _core is None:
        print("compiled kernels not built; only the pure-Python backend is available")
    kernel = synth.base_kernel()
    cases = [
        (f"mc_advance ({args.rollouts} rollouts)", lambda impl: bench_mc(impl, kernel, args.rollouts)),
        (f"crossprod ({args.rows} rows, 7 factors)", lambda impl: bench_crossprod(impl, args.rows)),
    ]
    print(f"{'kernel':40s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s}")
    for name, make in cases:
        tp, out_p = best_of(make(_pure), args.repeat)
        if _core is None:
            print(f"{name:40s} {tp:11.4f} {'-':>13s} {'-':>8s}")
            continue
        tc, out_c = best_of(make(_core), args.repeat)
        if isinstance(out_p, tuple):
            same = all(np.array_equal(a, b) for a, b in zip(out_p, out_c))
        else:
            same = out_p == out_c
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:40s} {tp:11.4f} {tc:13.4f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
