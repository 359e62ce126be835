"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each kernel is compiled once before timing. Results are also checked for
agreement so a fast but wrong kernel shows up here.
"""
import argparse
import time

import numpy as np

from lcoclust import kernels
from lcoclust.numerics import PROB_FLOOR, log_softmax


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def lco_args(n, k, rng):
    logits = rng.normal(size=(n, k)) * 3
    logp = log_softmax(logits)
    p = np.exp(logp)
    clamped = np.maximum(p, PROB_FLOOR)
    sims = rng.random((n, n)) < 0.1
    sims = (sims | sims.T).astype(np.float64)
    return clamped, np.log(clamped), p, np.log(clamped), sims, np.ones((n, n)), 2.0


def cases(rng):
    yield "lco n=100 k=10", kernels.lco_pair_terms_numpy, kernels.lco_pair_terms_numba, lco_args(100, 10, rng)
    yield "lco n=256 k=100", kernels.lco_pair_terms_numpy, kernels.lco_pair_terms_numba, lco_args(256, 100, rng)
    for n in (10, 100):
        cost = rng.normal(size=(n, n))
        yield f"hungarian n={n}", kernels.hungarian_square_numpy, kernels.hungarian_square_numba, (cost,)
    a = rng.integers(0, 100, size=10_000)
    b = rng.integers(0, 10, size=10_000)
    yield "contingency N=10000", kernels.contingency_numpy, kernels.contingency_numba, (a, b, 100, 10)
    x = rng.normal(size=(5000, 16))
    c = rng.normal(size=(10, 16))
    yield "nearest_center 5000x10", kernels.nearest_center_numpy, kernels.nearest_center_numba, (x, c)


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, f_np, f_nb, inputs in cases(rng):
        f_nb(*inputs)  # compile
        t_np, out_np = best_of(f_np, inputs, args.repeat)
        t_nb, out_nb = best_of(f_nb, inputs, args.repeat)
        print(f"{name:<24}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x  {agree(out_np, out_nb)}")


if __name__ == "__main__":
    main()
