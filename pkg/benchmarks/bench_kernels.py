"""Compare the compiled and pure-Python deformable sampling kernels.

Times the raw sampling kernels (forward and backward) and the full operator
forward in both v3 and v4 modes.

    python3 benchmarks/bench_kernels.py [--reps 20]
"""

import argparse
import time

import numpy as np

from nhdehaze.dcn import available_backends, dcn_bench, sampling_grid
from nhdehaze.dcn import backend as dcn_backend


def time_kernels(shape, groups, reps, name):
    n, c, h, w = shape
    k = 9
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, c, h, w))
    off = rng.normal(scale=1.5, size=(n, groups, k, 2, h, w))
    mod = rng.normal(size=(n, groups, k, h, w))
    grid = sampling_grid(3)
    kern = dcn_backend.get(name)
    out = kern.deform_sample_forward(x, off, mod, grid)
    g = np.ones_like(out)
    fwd, bwd = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        kern.deform_sample_forward(x, off, mod, grid)
        t1 = time.perf_counter()
        kern.deform_sample_backward(g, x, off, mod, grid)
        t2 = time.perf_counter()
        fwd.append(t1 - t0)
        bwd.append(t2 - t1)
    return 1e3 * float(np.median(fwd)), 1e3 * float(np.median(bwd))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()
    shapes = [(1, 16, 32, 32), (2, 32, 32, 32), (2, 64, 16, 16)]
    backends = available_backends()
    print("# raw sampling kernels (median ms)")
    base = {}
    for shape in shapes:
        for name in backends:
            f, b = time_kernels(shape, 4, args.reps, name)
            base.setdefault(shape, {})[name] = f + b
            print(f"shape={'x'.join(map(str, shape))} backend={name} forward_ms={f:.3f} backward_ms={b:.3f}")
        if len(base[shape]) == 2:
            print(f"shape={'x'.join(map(str, shape))} speedup={base[shape]['python'] / base[shape]['compiled']:.2f}x")
    print("# full operator forward")
    print(dcn_bench(shapes, repetitions=args.reps, backends=backends).format())


if __name__ == "__main__":
    main()
