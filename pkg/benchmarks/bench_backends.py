#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times each hot kernel at desk-scale shapes (the sizes the acceptance
experiments actually use), then an end-to-end client training loop under
each backend in separate processes (the backend is chosen at import time
via SEQFED_BACKEND).

Usage:
    python benchmarks/bench_backends.py [--end-to-end]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from seqfed import backend

P = 2762          # parameter count of the [32, 64, 10] MLP
BATCH, CLASSES = 16, 10
POOL = 4


def time_call(fn, *args, repeat=2000):
    fn(*args)  # warm (JIT compile on the numba side)
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeat)
    return best * 1e6  # microseconds


def kernel_cases():
    rng = np.random.default_rng(0)
    logits = np.ascontiguousarray(rng.standard_normal((BATCH, CLASSES)))
    labels = rng.integers(0, CLASSES, size=BATCH)
    params = rng.standard_normal(P)
    grad = rng.standard_normal(P)
    m = np.zeros(P)
    v = np.zeros(P)
    cur = rng.standard_normal(P)
    pool = np.ascontiguousarray(rng.standard_normal((POOL, P)))
    return [
        ("softmax_xent_grad", lambda impl: impl["softmax_xent_grad"](logits, labels)),
        ("adam_update", lambda impl: impl["adam_update"](
            params.copy(), grad, m.copy(), v.copy(), 3, 1e-3, 0.9, 0.999, 1e-8, 1e-4)),
        ("sgd_update", lambda impl: impl["sgd_update"](params.copy(), grad, 1e-3)),
        ("pool_mean_dist", lambda impl: impl["pool_mean_dist"](cur, pool, 0, 1e-12)),
        ("pool_mean_dist_grad", lambda impl: impl["pool_mean_dist_grad"](
            cur, pool, 0, 1e-12)),
        ("pairwise_dist", lambda impl: impl["pairwise_dist"](pool, 0, 1e-12)),
    ]


def bench_kernels():
    numpy_impl = backend.IMPLS["numpy"]
    numba_impl = backend.IMPLS["numba"]
    print(f"kernel microbenchmarks (P={P}, batch={BATCH}, pool={POOL})")
    print(f"{'kernel':<22}{'numpy us':>10}{'numba us':>10}{'speedup':>9}")
    for name, call in kernel_cases():
        t_np = time_call(call, numpy_impl)
        if numba_impl is None:
            print(f"{name:<22}{t_np:>10.2f}{'n/a':>10}{'':>9}")
            continue
        t_nb = time_call(call, numba_impl)
        print(f"{name:<22}{t_np:>10.2f}{t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


END_TO_END = r"""
import time
from seqfed import (HyperParams, ModelSpec, PartitionSpec, RegularizerConfig,
                    backend, build_client_datasets, gen_synthetic_classification,
                    init_params, train_client)
import numpy as np
spec = ModelSpec([32, 64, 10])
ds = gen_synthetic_classification(10, 32, 200, 0.4, seed=0)
clients = build_client_datasets(ds, PartitionSpec(n_clients=2, beta=0.5, seed=0))
hp = HyperParams(num_clients=2, pool_models=3, local_epochs=10, warmup_epochs=0,
                 learning_rate=1.5e-3, batch_size=16, seed=0,
                 regularizer=RegularizerConfig(alpha=1.0, beta=1.0))
m0 = init_params(spec, np.random.default_rng(0))
train_client(spec, m0, clients[0], hp)   # warm compile outside the timing
start = time.perf_counter()
train_client(spec, m0, clients[1], hp, client=1)
print(f"{backend.BACKEND}: {time.perf_counter() - start:.3f}s per client")
"""


def bench_end_to_end():
    print("\nend-to-end train_client (pool of 3, 10 epochs, one client)")
    for flavor in ("numpy", "numba"):
        env = dict(os.environ, SEQFED_BACKEND=flavor)
        run = subprocess.run([sys.executable, "-c", END_TO_END], env=env,
                             capture_output=True, text=True)
        if run.returncode != 0:
            print(f"{flavor}: failed ({run.stderr.strip().splitlines()[-1]})")
        else:
            print(run.stdout.strip())


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--end-to-end", action="store_true",
                        help="also time a full client loop per backend")
    args = parser.parse_args()
    print(f"active backend: {backend.BACKEND}")
    bench_kernels()
    if args.end_to_end:
        bench_end_to_end()
