"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes follow a default training batch: about 350 windows of 10 turns,
18 actions, width 128.
"""
import argparse
import timeit

import numpy as np

from tedpolicy import kernels


def cases(rng):
    # attention rows flattened to 2-D, as the tensor layer passes them
    scores = rng.normal(size=(3500, 10))
    mask = np.tile(np.tril(np.ones((10, 10), dtype=np.uint8)), (350, 1))
    y = kernels.softmax_rows(scores, mask, impl=kernels.available_backends()["python"])
    gy = rng.normal(size=y.shape)
    z = rng.normal(size=(32, 4 * 128))
    c = rng.normal(size=(32, 128))
    s = rng.normal(size=(350, 18))
    gold = rng.integers(18, size=350)
    cand = np.ones((350, 18), dtype=np.uint8)
    w = np.full(350, 1 / 350)
    return {
        "softmax_rows": lambda impl: kernels.softmax_rows(scores, mask, impl=impl),
        "softmax_rows_backward": lambda impl: kernels.softmax_rows_backward(y, gy, mask, impl=impl),
        "lstm_gates": lambda impl: kernels.lstm_gates(z, c, impl=impl),
        "candidate_loss": lambda impl: kernels.candidate_loss(s, gold, cand, w, impl=impl),
        "logsumexp": lambda impl: kernels.logsumexp(s[0], impl=impl),
    }


def run(repeat=200, seed=0):
    backends = kernels.available_backends()
    rows = []
    for name, fn in cases(np.random.default_rng(seed)).items():
        times = {b: min(timeit.repeat(lambda: fn(impl), number=repeat, repeat=3)) / repeat
                 for b, impl in backends.items()}
        rows.append((name, times))
    return backends, rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    backends, rows = run(args.repeat)
    names = list(backends)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<24}" + "".join(f"{n + ' (us)':>16}" for n in names)
          + ("  speedup" if len(names) > 1 else ""))
    for name, t in rows:
        line = f"{name:<24}" + "".join(f"{t[n] * 1e6:>16.1f}" for n in names)
        if "cython" in t:
            line += f"  {t['python'] / t['cython']:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
