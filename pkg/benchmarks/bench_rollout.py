"""Rollout throughput: numba kernel against the batched numpy path.

Usage: python3 benchmarks/bench_rollout.py [--n 64] [--repeat 3]

Both paths run the same batch of closed-loop rollouts from perturbed
nominal states; results must agree before timings are reported.
"""

import argparse
import time

import numpy as np

from retarget_guidance import kernels as K
from retarget_guidance._accel import HAVE_NUMBA
from retarget_guidance.config import RunConfig
from retarget_guidance.dataset import dispersion_bounds, nominal_state, sample_states
from retarget_guidance.guidance import initial_state_from_reduced


def batch(cfg, n, seed=0):
    states = sample_states(nominal_state(cfg), dispersion_bounds(cfg), n, seed)
    x0s = np.array([initial_state_from_reduced(s, cfg.target, cfg.physics.m_wet).as_vector() for s in states])
    tgos = np.random.default_rng(seed).uniform(150.0, 200.0, n)
    return x0s, tgos


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    cfg = RunConfig().validate()
    p = cfg.kernel_params()
    x0s, tgos = batch(cfg, args.n)

    def run(use_numba):
        return K.rollout_batch(x0s, cfg.a0_net, cfg.target, tgos, p, use_numba=use_numba)

    t_np, r_np = best_of(lambda: run(False), args.repeat)
    print(f"numpy : {t_np:8.3f} s  {1e3 * t_np / args.n:7.2f} ms/rollout")
    if not HAVE_NUMBA:
        print("numba : disabled (RETARGET_GUIDANCE_DISABLE_NUMBA=1 or not installed)")
        return
    t0 = time.perf_counter()
    run(True)  # compile or load from cache
    print(f"numba warm-up {time.perf_counter() - t0:.2f} s")
    t_nb, r_nb = best_of(lambda: run(True), args.repeat)
    err = float(np.max(np.abs(r_nb - r_np)))
    print(f"numba : {t_nb:8.3f} s  {1e3 * t_nb / args.n:7.2f} ms/rollout")
    print(f"speedup x{t_np / t_nb:.1f}, max |numba - numpy| = {err:.2e}")


if __name__ == "__main__":
    main()
