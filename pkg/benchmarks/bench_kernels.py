"""Time the compiled path kernels against the numpy fallback.

Both backends consume the same per-path streams, so the benchmark also reports
the largest difference between their per-path summaries.

    python benchmarks/bench_kernels.py --paths 2000 --repeat 3
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from numinv.montecarlo import ensemble

CASES = {
    "gbm": dict(generator="gbm_martingale", n_steps=20000, dt=1e-3),
    "gbm_grid_max": dict(generator="gbm_martingale", n_steps=20000, dt=1e-3, bridge=False),
    "bessel": dict(generator="inverse_bessel3", n_steps=10**6, dt=1e-4, horizon=1e6, fractions=[0.0, 0.5, 1.0]),
}


def timed(backend: str, n_paths: int, seed: int, case: dict, repeat: int):
    best, ens = np.inf, None
    kw = dict(case)
    gen = kw.pop("generator")
    steps, dt = kw.pop("n_steps"), kw.pop("dt")
    for _ in range(repeat):
        t0 = time.perf_counter()
        ens = ensemble.simulate(gen, n_paths, steps, dt, seed, backend=backend, **kw)
        best = min(best, time.perf_counter() - t0)
    return best, ens


def max_difference(a, b) -> float:
    worst = 0.0
    for k, v in a.summary_arrays().items():
        w = b.summary_arrays()[k]
        worst = max(worst, float(np.max(np.abs(np.asarray(v, float) - np.asarray(w, float)), initial=0.0)))
    return worst


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--cases", nargs="*", default=list(CASES), choices=list(CASES))
    ap.add_argument("--json", action="store_true", help="print one JSON object instead of a table")
    args = ap.parse_args(argv)
    if ensemble._kernels is None:
        ap.error("the compiled extension is not built; run `pip install -e . --no-build-isolation` first")
    rows = []
    for name in args.cases:
        tc, a = timed("compiled", args.paths, args.seed, CASES[name], args.repeat)
        tp, b = timed("python", args.paths, args.seed, CASES[name], args.repeat)
        rows.append({"case": name, "paths": args.paths, "compiled_s": tc, "python_s": tp, "speedup": tp / tc,
                     "mean_steps": float(np.mean(a.steps)), "max_abs_diff": max_difference(a, b)})
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'case':<14}{'paths':>7}{'steps/path':>12}{'compiled s':>12}{'python s':>10}{'speedup':>9}{'max diff':>11}")
    for r in rows:
        print(f"{r['case']:<14}{r['paths']:>7}{r['mean_steps']:>12.0f}{r['compiled_s']:>12.3f}{r['python_s']:>10.3f}"
              f"{r['speedup']:>8.1f}x{r['max_abs_diff']:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
