"""Benchmark the hot kernels and a full Gibbs sweep under the current
backend; `--compare` re-runs the suite in subprocesses with the numba JIT
enabled and disabled (MIXIMPUTE_NUMBA) and prints both side by side.

Usage:
    python benchmarks/bench_kernels.py [--compare] [--n N] [--sweeps K]

Both backends draw the same random streams, so the numbers differ only in
speed, never in output.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def build_chain_inputs(n, G):
    from miximpute.cgmm import PriorConfig
    from miximpute.rng import RngStream
    from miximpute.simbench import ScenarioSpec, apply_missingness, generate_scenario

    spec = ScenarioSpec(1, "continuous", N=max(2 * n, 2000), n=n)
    stream = RngStream(2024)
    pop = generate_scenario(spec, stream.child(0))
    idx = stream.child(1).gen.choice(spec.N, size=n, replace=False)
    data = apply_missingness(pop.x[idx], pop.y[idx], pop.kinds, stream.child(2))
    return data, PriorConfig.from_data(data, G)


def make_loop_drivers():
    """Tight loops over the scalar kernels, jitted when the backend is numba,
    so the numbers reflect in-sweep usage rather than call-boundary overhead."""
    from miximpute import kernels
    from miximpute._jit import njit

    @njit(cache=False)
    def tn_loop(m, gen):
        s = 0.0
        for _ in range(m):
            s += kernels.truncnorm_draw(0.0, 1.0, 0.0, np.inf, gen)
        return s

    @njit(cache=False)
    def cat_loop(m, logw, gen):
        s = 0
        for _ in range(m):
            s += kernels.categorical_from_logits(logw, gen)
        return s

    return tn_loop, cat_loop


def run_benchmarks(n, sweeps):
    from miximpute import kernels
    from miximpute.gibbs import ChainConfig, _PriorCache, _Tables, init_state, sweep
    from miximpute.rng import RngStream

    gen = RngStream(7).gen
    results = {"backend": "numba" if kernels.NUMBA_ENABLED else "numpy"}

    sizes = {"pg_draw": 500_000, "truncnorm": 500_000, "categorical": 500_000}
    if not kernels.NUMBA_ENABLED:
        sizes = {k: v // 50 for k, v in sizes.items()}
    tn_loop, cat_loop = make_loop_drivers()

    m = sizes["pg_draw"]
    c = np.linspace(-4.0, 4.0, m)
    out = np.empty(m)
    kernels.pg_vector(c[:1000], out[:1000], gen)  # warm-up / JIT
    t0 = time.perf_counter()
    kernels.pg_vector(c, out, gen)
    results["pg_draw_ns"] = (time.perf_counter() - t0) / m * 1e9

    m = sizes["truncnorm"]
    tn_loop(100, gen)
    t0 = time.perf_counter()
    tn_loop(m, gen)
    results["truncnorm_ns"] = (time.perf_counter() - t0) / m * 1e9

    m = sizes["categorical"]
    logw = np.array([0.0, -1.0, 0.5, -2.0, 1.0, -0.5, 0.2])
    cat_loop(100, logw, gen)
    t0 = time.perf_counter()
    cat_loop(m, logw, gen)
    results["categorical_ns"] = (time.perf_counter() - t0) / m * 1e9

    G = 7
    data, priors = build_chain_inputs(n, G)
    cfg = ChainConfig(burn_in=1, keep=1, m_imputations=1)
    tables = _Tables(data)
    cache = _PriorCache(priors, data.p, data.q)
    state = init_state(data, G, priors, cfg, RngStream(5))
    sweep(state, data, priors, tables=tables, cache=cache)  # warm-up
    k = sweeps if kernels.NUMBA_ENABLED else max(2, sweeps // 10)
    t0 = time.perf_counter()
    for _ in range(k):
        sweep(state, data, priors, tables=tables, cache=cache)
    results["sweep_ms"] = (time.perf_counter() - t0) / k * 1e3
    results["sweep_n"] = n
    return results


def print_table(rows):
    keys = ["pg_draw_ns", "truncnorm_ns", "categorical_ns", "sweep_ms"]
    labels = {
        "pg_draw_ns": "PG(1,c) draw [ns]",
        "truncnorm_ns": "truncated normal draw [ns]",
        "categorical_ns": "categorical draw [ns]",
        "sweep_ms": "full Gibbs sweep [ms]",
    }
    backends = [r["backend"] for r in rows]
    print(f"{'kernel':<30}" + "".join(f"{b:>14}" for b in backends)
          + ("%14s" % "speedup" if len(rows) == 2 else ""))
    for key in keys:
        line = f"{labels[key]:<30}"
        for r in rows:
            line += f"{r[key]:>14.1f}"
        if len(rows) == 2 and rows[1][key] > 0:
            line += f"{rows[1][key] / rows[0][key]:>13.1f}x"
        print(line)
    print(f"(sweep at n={rows[0]['sweep_n']}, G=7, scenario-1-style data)")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--compare", action="store_true",
                    help="run both backends in subprocesses and compare")
    ap.add_argument("--n", type=int, default=500, help="rows for the sweep bench")
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--json", action="store_true", help="emit one JSON object")
    args = ap.parse_args()

    if not args.compare:
        res = run_benchmarks(args.n, args.sweeps)
        if args.json:
            print(json.dumps(res))
        else:
            print_table([res])
        return

    rows = []
    for flag in ("1", "0"):
        env = dict(os.environ, MIXIMPUTE_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, __file__, "--n", str(args.n),
             "--sweeps", str(args.sweeps), "--json"],
            capture_output=True, text=True, env=env, check=True,
        )
        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))
    print_table(rows)


if __name__ == "__main__":
    main()
