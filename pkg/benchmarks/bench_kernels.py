"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--rays 20000] [--samples 64]
       [--repeat 5]
Times composite forward/backward, trilinear gathering, and gradient
scatter on identical inputs and prints a speedup table.
"""

import argparse
import importlib
import time

import numpy as np

from voxocc.kernels import _impl as active
from voxocc.kernels import numpy_ref


def make_inputs(rays, samples, seed=0):
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0, 5, (rays, samples))
    t = np.sort(rng.uniform(0.4, 50.0, (rays, samples)), axis=1)
    delta = np.diff(t, axis=1, append=t[:, -1:] + 0.5)
    dims = (96, 16, 96)
    values = rng.normal(0, 1, dims)
    q = rng.uniform(0, np.array(dims) - 1.0, (rays * samples, 3))
    valid = rng.random(rays * samples) > 0.05
    grad_vals = rng.normal(0, 1, rays * samples)
    return sigma, delta, t, dims, values, q, valid, grad_vals


def bench(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if active.IMPL == "numpy":
        print("compiled kernels unavailable; both columns run the fallback")
    sigma, delta, t, dims, values, q, valid, grad_vals = \
        make_inputs(args.rays, args.samples)
    grad_depth = np.ones(args.rays)

    cases = {
        "composite_forward": lambda m: m.composite_forward(sigma, delta, t),
        "composite_backward": lambda m: m.composite_backward(
            sigma, delta, t, grad_depth),
    }

    def gather(m):
        return m.trilinear_gather(values, q, valid)

    cases["trilinear_gather"] = gather
    _, idx, w = numpy_ref.trilinear_gather(values, q, valid)

    def scatter(m):
        buf = np.zeros(values.size)
        m.scatter_add(buf, idx, w, grad_vals)
        return buf

    cases["scatter_add"] = scatter

    print(f"{args.rays} rays x {args.samples} samples "
          f"(active implementation: {active.IMPL})")
    print(f"{'kernel':>20s} {'numpy (ms)':>12s} {active.IMPL + ' (ms)':>12s} "
          f"{'speedup':>8s}")
    for name, fn in cases.items():
        t_np, ref = bench(lambda: fn(numpy_ref), args.repeat)
        t_ac, out = bench(lambda: fn(active), args.repeat)
        ref0 = ref[0] if isinstance(ref, tuple) else ref
        out0 = out[0] if isinstance(out, tuple) else out
        assert np.allclose(ref0, out0, atol=1e-12), name
        print(f"{name:>20s} {1e3 * t_np:12.2f} {1e3 * t_ac:12.2f} "
              f"{t_np / t_ac:8.2f}x")


if __name__ == "__main__":
    main()
