"""Time the compiled and pure-Python RK4 kernels on the same Λ-system run.

    python3 benchmarks/bench_kernel.py [--duration T] [--repeat R]
"""

import argparse
import math
import time

import numpy as np

from georabi import kernels
from georabi.dynamics import PathSampler, StepControl, evolve_full
from georabi.lambda_system import LambdaParams, circle_path, to_generic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=30.0, help="simulated time (default 30)")
    ap.add_argument("--repeat", type=int, default=3, help="timing repeats, best is reported")
    args = ap.parse_args()

    omega = 2 * math.pi / args.duration
    model, path, drive = to_generic(LambdaParams(field=0.02), circle_path(1.0, omega=omega))
    sampler = PathSampler.build(model, path, drive)
    control = StepControl(check=False)
    psi0 = np.array([1, 0, 0], dtype=complex)

    results = {}
    for backend in kernels.available():
        best = math.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            rec = evolve_full(model, path, drive, psi0, control, sampler=sampler, backend=backend)
            best = min(best, time.perf_counter() - t0)
        results[backend] = (best, rec)
        print(f"{backend:>9}: {best:8.4f} s  ({rec.diagnostics['steps']} RK4 steps)")

    if len(results) == 2:
        (tc, rc), (tp, rp) = results["compiled"], results["python"]
        diff = float(np.max(np.abs(rc.amplitudes - rp.amplitudes)))
        print(f"  speedup: {tp / tc:8.1f}x   max amplitude difference {diff:.1e}")


if __name__ == "__main__":
    main()
