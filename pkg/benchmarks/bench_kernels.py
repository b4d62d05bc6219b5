"""Time the compiled and NumPy kernel backends on model-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from veinmt.diffcore import kernels


def cases(rng):
    x = rng.standard_normal((8, 16, 34, 74)).astype(np.float32)      # padded half-res activations
    img = rng.standard_normal((8, 16, 32, 72)).astype(np.float32)
    flow = (rng.standard_normal((8, 2, 32, 72)) * 3).astype(np.float32)
    gout = rng.standard_normal(img.shape).astype(np.float32)
    cols = kernels.im2col(x, 3, 1, 32, 72)
    return {
        "im2col 3x3": lambda: kernels.im2col(x, 3, 1, 32, 72),
        "col2im 3x3": lambda: kernels.col2im(cols, 8, 16, 34, 74, 3, 1, 32, 72),
        "grid_sample fwd": lambda: kernels.grid_sample_fwd(img, flow),
        "grid_sample bwd": lambda: kernels.grid_sample_bwd(img, flow, gout),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = sorted(kernels.BACKENDS)
    if "cython" not in backends:
        print("compiled backend not built; timing the NumPy backend only")
    results = {}
    for b in backends:
        kernels.use(b)
        for name, fn in cases(np.random.default_rng(0)).items():
            fn()
            results[name, b] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
    print(f"{'kernel':<18}" + "".join(f"{b + ' ms':>12}" for b in backends)
          + (f"{'speedup':>10}" if len(backends) > 1 else ""))
    for name in cases(np.random.default_rng(0)):
        row = f"{name:<18}" + "".join(f"{results[name, b]:>12.3f}" for b in backends)
        if len(backends) > 1:
            row += f"{results[name, 'python'] / results[name, 'cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
