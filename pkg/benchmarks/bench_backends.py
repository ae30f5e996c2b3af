"""Throughput comparison: numba kernels vs the pure-numpy fallback.

Times the per-iteration Newton kernels (score/Hessian and balance
residual/Jacobian assembly) over a range of sample sizes, then the two
solvers end to end under each backend. Run:

    python benchmarks/bench_backends.py [--repeat 30]
"""

import argparse
import time

import numpy as np

from cbpsdid import _kernels_np
from cbpsdid import backend
from cbpsdid.numopt import LogisticLink, cbps_solve, logistic_mle

try:
    from cbpsdid import _kernels_nb

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def make_instance(n, k, seed=0):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    beta = rng.normal(scale=0.5, size=k)
    d = (rng.random(n) < LogisticLink.pi(x @ beta)).astype(float)
    return x, d, rng.normal(scale=0.3, size=k)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(repeat):
    print(f"{'kernel':<18}{'n':>9}{'numpy':>12}{'numba':>12}{'speedup':>9}")
    for n in (1_000, 10_000, 100_000):
        x, d, beta = make_instance(n, 5, seed=n)
        for name in ("logistic_terms", "balance_terms"):
            np_fn = getattr(_kernels_np, name)
            t_np = best_of(lambda: np_fn(x, d, beta), repeat)
            if HAS_NUMBA:
                nb_fn = getattr(_kernels_nb, name)
                nb_fn(x, d, beta)  # trigger compilation outside the timing
                t_nb = best_of(lambda: nb_fn(x, d, beta), repeat)
                print(f"{name:<18}{n:>9}{t_np * 1e6:>10.1f}us"
                      f"{t_nb * 1e6:>10.1f}us{t_np / t_nb:>9.2f}x")
            else:
                print(f"{name:<18}{n:>9}{t_np * 1e6:>10.1f}us{'-':>12}{'-':>9}")


def bench_solvers(repeat):
    print()
    print(f"{'solver':<18}{'n':>9}{'numpy':>12}{'numba':>12}{'speedup':>9}")
    backends = [("numpy", _kernels_np)]
    if HAS_NUMBA:
        backends.append(("numba", _kernels_nb))
    for n in (1_000, 20_000):
        x, d, _ = make_instance(n, 5, seed=n + 1)
        rows = {}
        for name, module in backends:
            backend._kernels, backend._name = module, name
            logistic_mle(x, d)  # warm any compilation
            rows[name] = (
                best_of(lambda: logistic_mle(x, d), repeat),
                best_of(lambda: cbps_solve(x, d), repeat),
            )
        for i, solver in enumerate(("logistic_mle", "cbps_solve")):
            t_np = rows["numpy"][i]
            if HAS_NUMBA:
                t_nb = rows["numba"][i]
                print(f"{solver:<18}{n:>9}{t_np * 1e3:>10.2f}ms"
                      f"{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.2f}x")
            else:
                print(f"{solver:<18}{n:>9}{t_np * 1e3:>10.2f}ms{'-':>12}{'-':>9}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=30)
    args = parser.parse_args()
    if not HAS_NUMBA:
        print("numba not installed; showing the numpy path only\n")
    bench_kernels(args.repeat)
    bench_solvers(args.repeat)


if __name__ == "__main__":
    main()
