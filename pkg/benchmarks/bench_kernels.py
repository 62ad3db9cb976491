"""Compare the compiled and numpy dynamics kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Times each kernel per call on the desk arm, checks that both backends agree,
and times one closed-loop second of the step-response scenario per backend.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from energy_cbf import kernels
from energy_cbf.dynamics import desk_arm


def kernel_args(model, rng):
    q = rng.uniform(-np.pi, np.pi, model.n_links)
    qd = rng.normal(0.0, 1.0, model.n_links)
    tau = rng.normal(0.0, 5.0, model.n_links)
    f = np.array([1.0, -2.0])
    spring = np.array([1e4, 0.5, -0.3, 0.2])
    return q, qd, tau, f, spring


def bench_kernels(repeat: int):
    model = desk_arm()
    rng = np.random.default_rng(0)
    q, qd, tau, f, spring = kernel_args(model, rng)
    A, gm, L, base = model._A, model._gm, model.length, model.base_angle
    backends = kernels.available_backends()
    calls = {
        "terms": lambda k: k.terms(A, gm, L, base, q, qd),
        "accel": lambda k: k.accel(A, gm, L, base, q, qd, tau, f, spring),
        "integrate (10 RK4 steps)": lambda k: k.integrate(A, gm, L, base, q, qd, tau, f, spring, 1e-4, 10),
    }
    print(f"{'kernel':28s}" + "".join(f"{name:>14s}" for name in backends) + "   speed-up")
    for label, fn in calls.items():
        times = {}
        for name, mod in backends.items():
            n = max(repeat // (50 if name == "python" else 1), 20)
            times[name] = min(timeit.repeat(lambda: fn(mod), number=n, repeat=3)) / n
        row = "".join(f"{times[n] * 1e6:11.2f} us" for n in backends)
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:28s}{row}   {ratio:8.1f}x")

    if "cython" in backends:
        worst = 0.0
        for _ in range(200):
            q, qd, tau, f, spring = kernel_args(model, rng)
            a = backends["python"].integrate(A, gm, L, base, q, qd, tau, f, spring, 1e-4, 10)
            b = backends["cython"].integrate(A, gm, L, base, q, qd, tau, f, spring, 1e-4, 10)
            worst = max(worst, np.max(np.abs(a[0] - b[0])), np.max(np.abs(a[1] - b[1])))
        print(f"max |python - cython| over 200 integrate calls: {worst:.2e}")


_SIM = """
import time
from dataclasses import replace
from energy_cbf import kernels
from energy_cbf.scenarios import load_scenario, step_response
spec = load_scenario("exp1").with_overrides(gammas=[10.0], duration=1.0)
spec = replace(spec, sim=replace(spec.sim, qddot_max=None), auto_qddot_max=False)
t = time.perf_counter()
step_response(spec, include_off=False)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def bench_simulation():
    print("\nclosed loop, 1 s of the step-response scenario (1000 ticks):")
    for env in ({}, {"ENERGY_CBF_PURE_PYTHON": "1"}):
        out = subprocess.run([sys.executable, "-c", _SIM], capture_output=True, text=True,
                             env={**os.environ, **env}, check=True).stdout.split()
        print(f"  {out[0]:8s} {float(out[1]):7.3f} s")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    print(f"default backend: {kernels.BACKEND}\n")
    bench_kernels(args.repeat)
    bench_simulation()


if __name__ == "__main__":
    main()
