"""Compare the compiled and pure-Python kernel backends.

Run with ``python benchmarks/bench_kernels.py``. Each case is timed with
``timeit`` per backend; the speedup column is python time over cython time.
"""

import argparse
import timeit

import numpy as np

from mfc_lab import kernels
from mfc_lab.scenario import builtin_scenario, run_closed_loop


def ring(cap=4096, nv=2):
    times = np.arange(cap, dtype=float) * 1e-3
    values = np.column_stack([np.sin(times * k) for k in range(1, nv + 1)])
    return times, values, 0, cap, cap


def case_interp(mod):
    times, values, start, count, cap = ring()
    pre = np.zeros(values.shape[1])
    out = np.empty_like(pre)
    tq = times[-1] * 0.6137

    def run():
        mod.interp_ring(times, values, start, count, cap, tq, pre, out)
    return run


def case_rk4(mod):
    times, values, start, count, cap = ring()
    a = np.array([[0.0, 1.0], [-400.0, -30.0]])
    a_tau = 0.1 * a
    b = np.array([0.0, 400.0])
    x = np.array([0.1, -0.2])
    pre = np.zeros(2)
    out = np.empty(2)

    def run():
        mod.rk4_step(a, b, a_tau, x, 1.0, 1e-3, 3.0, 0.05, times, values, start, count, cap, pre, out)
    return run


def case_scenario(name):
    cfg = builtin_scenario(name)

    def run():
        run_closed_loop(cfg)
    return run


def timed(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scenario", default="fig6td")
    args = parser.parse_args(argv)

    backends = kernels.available()
    print(f"backends available: {', '.join(backends)}")
    cases = [
        ("interp_ring", lambda name: case_interp(kernels.load(name)), 20000),
        ("rk4_step (delayed)", lambda name: case_rk4(kernels.load(name)), 20000),
        (f"run_closed_loop {args.scenario}", lambda name: case_scenario(args.scenario), 1),
    ]
    print(f"{'case':<28}" + "".join(f"{b + ' [us]':>16}" for b in backends) + f"{'speedup':>10}")
    original = kernels.BACKEND
    try:
        for label, make, number in cases:
            row = {}
            for name in backends:
                kernels.use(name)
                row[name] = timed(make(name), number, args.repeat) * 1e6
            speed = row["python"] / row["cython"] if len(row) == 2 else float("nan")
            print(f"{label:<28}" + "".join(f"{row[b]:>16.2f}" for b in backends) + f"{speed:>9.1f}x")
    finally:
        kernels.use(original)


if __name__ == "__main__":
    main()
