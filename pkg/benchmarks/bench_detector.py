#!/usr/bin/env python3
"""Timing comparison of the two detector implementations.

Runs identical trial streams through the compiled kernel and the NumPy
fallback and reports per-trial detector latency plus the end-to-end trial
rate. The two backends implement the same recursion; decisions may differ
only on numerically knife-edge trials.
"""

import argparse
import time

import numpy as np

from tbma import ScenarioConfig, assemble_system_matrix, gen_gaussian_codebooks
from tbma.amp import available_backends, context_for_config, detect, gamp_iterate
from tbma.channel import encode, transmit
from tbma.model import local_estimates, sample_channel, sample_events

CASES = [
    ("JSC  M=24 R=1 G=16  N=6", dict(M=24, R=1, G=16, rho=0.1, snr_db=12.0, N=6, coding="JSC")),
    ("SSC  M=24 R=1 G=8   N=6", dict(M=24, R=1, G=8, rho=0.1, snr_db=12.0, N=6, coding="SSC")),
    ("SSC  M=24 R=2 G=8   N=56", dict(M=24, R=2, G=8, rho=0.1, snr_db=12.0, N=56, coding="SSC")),
    ("JSC  M=24 R=2 G=64  N=24", dict(M=24, R=2, G=64, rho=0.1, snr_db=12.0, N=24, coding="JSC")),
]


def make_instances(cfg, trials, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        sm = assemble_system_matrix(gen_gaussian_codebooks(cfg, rng), cfg)
        ev = sample_events(cfg, rng)
        est = local_estimates(ev, cfg, rng)
        state = encode(ev, est, sample_channel(cfg, rng), sm)
        out.append((sm, ev, transmit(state, sm, cfg.sigma2, rng)))
    return out


def bench_backend(cfg, instances, backend):
    ctx = context_for_config(cfg)
    # warm-up
    gamp_iterate(instances[0][2], instances[0][0], ctx, backend=backend)
    t0 = time.perf_counter()
    agree = 0
    for sm, ev, rx in instances:
        beliefs = gamp_iterate(rx, sm, ctx, backend=backend)
        agree += int((detect(beliefs).xi == ev.xi).sum())
    dt = time.perf_counter() - t0
    return dt / len(instances), agree


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    header = f"{'case':28s}" + "".join(f"{b:>14s}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for label, params in CASES:
        cfg = ScenarioConfig.disjoint(**params)
        instances = make_instances(cfg, args.trials, args.seed)
        times = {}
        for backend in backends:
            per_trial, _ = bench_backend(cfg, instances, backend)
            times[backend] = per_trial
        line = f"{label:28s}" + "".join(
            f"{times[b] * 1e3:11.3f} ms" for b in backends
        )
        if len(backends) == 2:
            line += f"{times['numpy'] / times['cython']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
