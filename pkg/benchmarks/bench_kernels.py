"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Each kernel is run once for JIT warm-up, then timed; results from both
paths are compared before timing so a speedup never hides a wrong answer.
Also times one full loss-and-gradient evaluation for the Burgers and
Boussinesq problems with each path.
"""
import argparse
import os
import time

import numpy as np

from sspinn import kernels


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_kernel(name, call, repeat):
    a = call(False)
    if not kernels.HAVE_NUMBA:
        t_np = best_of(lambda: call(False), repeat)
        print(f"{name:<34}{t_np * 1e3:10.3f} ms   numba unavailable")
        return
    b = call(True)
    for x, y in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                    np.atleast_1d(b) if not isinstance(b, tuple) else b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)
    t_np = best_of(lambda: call(False), repeat)
    t_nb = best_of(lambda: call(True), repeat)
    print(f"{name:<34}{t_np * 1e3:10.3f} ms {t_nb * 1e3:10.3f} ms {t_np / t_nb:8.2f}x")


def bench_loss(repeat):
    from sspinn.loss import LossAssembler
    from sspinn.optim import build_layout
    from sspinn.problems import get_problem
    from sspinn.sampling import build_collocation
    from sspinn.autodiff import gradient

    for name, opts, dims, n in [("burgers", {}, [20, 20, 20], (300, 200)),
                                ("boussinesq", {}, [30, 30, 30], (1500, 1000))]:
        prob = get_problem(name, **opts)
        half = max(prob.domain.hi)
        coll = build_collocation(prob, n[0], n[1], half / 4, 200, 0)
        layout, theta = build_layout(prob, dims, 0, 1.0 / half)
        asm = LossAssembler(prob, layout, coll)
        times = []
        for flag in (False, True):
            if flag and not kernels.HAVE_NUMBA:
                break
            kernels.USE_NUMBA = flag
            gradient(asm.objective, theta)
            times.append(best_of(lambda: gradient(asm.objective, theta), max(2, repeat // 5)))
        kernels.USE_NUMBA = kernels.HAVE_NUMBA
        line = f"{'loss+grad ' + name:<34}" + "".join(f"{t * 1e3:10.3f} ms " for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:7.2f}x"
        print(line)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {kernels.HAVE_NUMBA}  "
          f"(SSPINN_NO_NUMBA={os.environ.get('SSPINN_NO_NUMBA', '')!r})")
    print(f"{'kernel':<34}{'numpy':>13}{'numba':>14}{'speedup':>9}")
    for d, N, h in [(1, 500, 20), (2, 2500, 30)]:
        C = 1 + d + d * (d + 1) // 2
        Z = rng.normal(size=(C, N, h))
        G = rng.normal(size=(C, N, h))
        bench_kernel(f"tanh jet forward d={d} N={N}",
                     lambda nb: kernels.tanh_jet_forward(Z, d, use_numba=nb), args.repeat)
        bench_kernel(f"tanh jet backward d={d} N={N}",
                     lambda nb: kernels.tanh_jet_backward(Z, G, d, use_numba=nb), args.repeat)
    y = np.linspace(-50, 50, 20001)
    bench_kernel("implicit root N=20001", lambda nb: kernels.implicit_power_root(y, 0.5, use_numba=nb),
                 args.repeat)
    bench_loss(args.repeat)


if __name__ == "__main__":
    main()
