"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Times ``gemm`` and ``sq_dists`` at a few sizes, checks that both backends
return bit-identical arrays, then times one short MLP training run under each
backend (the fallback is forced in a subprocess via ``LOOAUDIT_PURE=1``).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from looaudit import _kernels_py as py
from looaudit import kernels

TRAIN_SNIPPET = """
import time
from looaudit import LearningRule, SyntheticSpec, sample_synthetic, train
from looaudit.kernels import BACKEND
ds = sample_synthetic(SyntheticSpec("uniform-bernoulli-square", n=100, seed=0))
rule = LearningRule("standard-mlp", hidden=(64, 64, 64), epochs=100, batch_size=32)
t = time.perf_counter()
model = train(rule, ds)
print(BACKEND, time.perf_counter() - t, model.fingerprint())
"""


def _best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat: int) -> None:
    if kernels.compiled is None:
        print("compiled extension not available; only the fallback can be timed")
    g = np.random.default_rng(0)
    print(f"{'kernel':<10}{'shape':>22}{'compiled ms':>14}{'python ms':>12}{'speedup':>9}  identical")
    for m, k, n in ((32, 2, 64), (32, 64, 64), (256, 64, 64), (1000, 128, 16)):
        a, b = g.normal(size=(m, k)), g.normal(size=(k, n))
        x, y = g.normal(size=(m, k)), g.normal(size=(n, k))
        for name, args, fast, slow in (
            ("gemm", (a, b), getattr(kernels.compiled, "gemm", None), py.gemm),
            ("sq_dists", (x, y), getattr(kernels.compiled, "sq_dists", None), py.sq_dists),
        ):
            t_py = _best(lambda: slow(*args), repeat)
            if fast is None:
                print(f"{name:<10}{str((m, k, n)):>22}{'-':>14}{1e3 * t_py:>12.3f}")
                continue
            t_c = _best(lambda: fast(*args), repeat)
            same = np.array_equal(fast(*args), slow(*args))
            print(f"{name:<10}{str((m, k, n)):>22}{1e3 * t_c:>14.3f}{1e3 * t_py:>12.3f}{t_py / t_c:>9.1f}  {same}")


def bench_training() -> None:
    print("\nMLP (2-64-64-64-1, 100 points, 100 epochs)")
    fingerprints = set()
    for pure in ("0", "1"):
        env = dict(os.environ, LOOAUDIT_PURE=pure) if pure == "1" else {
            k: v for k, v in os.environ.items() if k != "LOOAUDIT_PURE"
        }
        out = subprocess.run(
            [sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True
        ).stdout.split()
        backend, secs, fp = out[0], float(out[1]), out[2]
        fingerprints.add(fp)
        print(f"  {backend:<9} {secs:7.2f} s  model {fp[:16]}")
    print(f"  identical models: {len(fingerprints) == 1}")


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--skip-training", action="store_true")
    args = parser.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.repeat)
    if not args.skip_training:
        bench_training()


if __name__ == "__main__":
    main()
