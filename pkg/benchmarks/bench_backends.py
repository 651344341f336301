"""Throughput of the integrator kernels per backend: ``python benchmarks/bench_backends.py``."""

import argparse
import time

import numpy as np

from rotorlattice import GaussianMeasure, IntegratorSpec, LatticeModel, PrecisionStencil, TorusLattice
from rotorlattice._backend import HAVE_NUMBA
from rotorlattice.integrators import Integrator

CASES = [
    ("split_exact", "strang", None),
    ("split_exact", "lie", None),
    ("split_exact", "random_perm", None),
    ("split_exact", "strang", "general"),
    ("em_ito", "strang", None),
    ("heun_strat", "strang", None),
]


def stencil(dim, kind):
    if kind is None:
        return PrecisionStencil.diagonal(1.0, dim)
    text = "0=2; 1=-0.4" if dim == 1 else "0,0=2; 1,0=-0.4; 0,1=-0.3"
    return PrecisionStencil.parse(text, dim)


def bench(dim, side, batch, steps, backend, scheme, order, kind, repeat):
    model = LatticeModel(TorusLattice(dim, side), stencil(dim, kind))
    integ = Integrator(model, IntegratorSpec(scheme, 0.01, order), backend)
    X0 = GaussianMeasure(model).sample(np.random.default_rng(0), batch)
    trajs = np.arange(batch, dtype=np.uint64)
    integ.advance(X0[:1].copy(), trajs[:1], 1, 0, 1)  # compile
    best = np.inf
    for _ in range(repeat):
        X = X0.copy()
        t0 = time.perf_counter()
        integ.advance(X, trajs, 1, 0, steps)
        best = min(best, time.perf_counter() - t0)
    return batch * steps * model.n_sites / best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--side", type=int, default=12, help="multiple of 6: even for the diagonal split, divisible by 3 for the general one")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    print(f"N={args.dim} L={args.side} batch={args.batch} steps={args.steps}; site-steps per second")
    print(f"{'scheme':12s} {'order':12s} {'stencil':8s} " + " ".join(f"{b:>12s}" for b in backends))
    for scheme, order, kind in CASES:
        rates = [bench(args.dim, args.side, args.batch, args.steps, b, scheme, order, kind, args.repeat)
                 for b in backends]
        print(f"{scheme:12s} {order:12s} {kind or 'diag':8s} " + " ".join(f"{r:12.3e}" for r in rates))


if __name__ == "__main__":
    main()
