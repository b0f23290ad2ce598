"""Time the compiled and pure-Python kernels on the two hot loops.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import timeit

import numpy as np

from entrodyn import kernels
from entrodyn.dynamics import DynamicsSpec
from entrodyn.entropy import GIBBS, EntropyKernel
from entrodyn.games import coordination_game, random_game
from entrodyn.learning import StepSchedule


def rk4_case(mod, code, q):
    g = random_game([3, 3], np.random.default_rng(0))
    h = GIBBS if code == 0 else EntropyKernel("tsallis", q)
    u2, shape, off, temps, rates = DynamicsSpec(g, h, 0.3)._arrays
    z0 = np.array([0.5, -0.5, 1.0, 0.0])
    return lambda: mod.rk4_score(u2, shape, off, code, q, temps, rates, z0, 0.01, 2000, -1.0, 700.0, 10)


def learn_case(mod, code, q, iters=5000):
    g = coordination_game()
    U = np.ascontiguousarray(g.payoffs.reshape(2, -1))
    shape = np.array(g.action_counts, dtype=np.intp)
    rng = np.random.default_rng(1)
    x0 = np.array([0.6, 0.4, 0.3, 0.7])
    gam = StepSchedule("power", 1.0, 5.0, 0.6).table(iters)
    uni = rng.random((iters, 2))
    noise = np.zeros((iters, 2))
    rev = np.ones((iters, 2), dtype=np.uint8)
    delays = np.zeros((iters, 2, 2), dtype=np.int32)
    temps = np.full(2, 0.2)

    def run():
        X = np.empty((iters + 1, 4))
        acts = np.empty((iters, 2), dtype=np.int32)
        seen = np.empty((iters, 2))
        mod.learn(U, shape, g.offsets, code, q, temps, x0, gam, uni, noise, rev, delays, 0, X, acts, seen)

    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled kernels not built; only the Python fallback is timed")
    cases = [
        ("rk4_score gibbs 2000 steps", rk4_case, 0, 1.0),
        ("rk4_score tsallis 2000 steps", rk4_case, 2, 0.5),
        ("learn gibbs 5000 iters", learn_case, 0, 1.0),
        ("learn tsallis 5000 iters", learn_case, 2, 0.5),
    ]
    print(f"{'case':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, make, code, q in cases:
        times = []
        for n in names:
            fn = make(kernels.get_backend(n), code, q)
            fn()
            times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)))
        row = f"{label:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
