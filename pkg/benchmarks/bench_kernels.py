"""Compare the compiled and pure-numpy row kernels.

Run ``python3 benchmarks/bench_kernels.py [--sizes 1000,100000] [--repeat 50]``.
Also times a short MCMC run under each backend in a subprocess, since the
backend is fixed at import time by ``UNITREG_DISABLE_NUMBA``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from unitreg import kernels

CHAIN_SNIPPET = """
import time, numpy as np
from unitreg.simulate import GenConfig, gen_panel
from unitreg.likelihoods import ModelSpec
from unitreg import bayes, _accel
sim = gen_panel(GenConfig("model3", b=(0.5, 0.8), d=(3.0,), seed=1), 50, 8, 0.7)
spec = ModelSpec("model3", ("x1",))
bayes.run_chain(spec, sim.data, seed=0, n_warmup=10, n_iter=10)  # compile
t = time.perf_counter()
bayes.run_chain(spec, sim.data, seed=0, n_warmup=1000, n_iter={n_iter})
print(_accel.backend(), time.perf_counter() - t)
"""


def _inputs(n, rng):
    y = rng.beta(3, 2, n)
    cls = np.full(n, kernels.CLS_INTERIOR, dtype=np.int64)
    cls[: n // 20] = kernels.CLS_ONE
    cls[n // 20: n // 10] = kernels.CLS_ZERO
    mid = cls == kernels.CLS_INTERIOR
    logy = np.where(mid, np.log(y), 0.0)
    log1my = np.where(mid, np.log1p(-y), 0.0)
    eta = rng.normal(0.5, 1.0, n)
    return cls, logy, log1my, eta


def bench(sizes, repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'N':>9}{'numpy us':>12}{'numba us':>12}{'speedup':>9}")
    for n in sizes:
        cls, logy, log1my, eta = _inputs(n, rng)
        phi = np.full(n, 20.0)
        capped = np.zeros(n, dtype=bool)
        capped[::7] = True
        idx = (np.arange(n) % 100).astype(np.int64)
        cases = {
            "endpoint_beta_rows": (kernels.endpoint_beta_rows_np, kernels.endpoint_beta_rows_nb,
                                   (cls, logy, log1my, eta, phi)),
            "panel_rows": (kernels.panel_rows_np, kernels.panel_rows_nb,
                           (cls, logy, log1my, eta, 20.0, eta, True, capped, 2.9)),
            "segment_sum": (kernels.segment_sum_np, kernels.segment_sum_nb, (eta, idx, 100)),
        }
        for name, (f_np, f_nb, args) in cases.items():
            t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat)) * 1e6
            if f_nb is None:
                print(f"{name:<22}{n:>9}{t_np:>12.1f}{'n/a':>12}{'':>9}")
                continue
            np.testing.assert_allclose(f_np(*args), f_nb(*args), rtol=1e-10, atol=1e-12)
            t_nb = min(timeit.repeat(lambda: f_nb(*args), number=1, repeat=repeat)) * 1e6
            print(f"{name:<22}{n:>9}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>9.2f}")


def bench_chain(n_iter):
    for flag in ("0", "1"):
        env = dict(os.environ, UNITREG_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", CHAIN_SNIPPET.format(n_iter=n_iter)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"chain ({n_iter} iterations, 400 rows) backend={backend:<6} {float(secs):.2f} s")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="1000,100000")
    ap.add_argument("--repeat", type=int, default=30)
    ap.add_argument("--chain-iter", type=int, default=4000)
    a = ap.parse_args()
    bench([int(s) for s in a.sizes.split(",")], a.repeat)
    bench_chain(a.chain_iter)


if __name__ == "__main__":
    main()
