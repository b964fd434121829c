"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 5]

Outputs of both backends are checked for equality before timing.
"""
import argparse
import timeit

import numpy as np

from fenceguide import _pykernels
from fenceguide.dcl import feature_offsets

try:
    from fenceguide import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(size, rng):
    weak = (rng.random((size, size)) < 0.45).astype(np.uint8)
    strong = weak & (rng.random((size, size)) < 0.01).astype(np.uint8)
    y = rng.random((size, size))
    off = feature_offsets()
    _, arg = _pykernels.directional_response(y, off)
    return {
        "hysteresis": lambda mod: mod.hysteresis(strong, weak),
        "directional_response": lambda mod: mod.directional_response(y, off),
        "directional_scatter": lambda mod: mod.directional_scatter(arg, off, -1.0 / y.size),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"size={args.size} repeat={args.repeat} backends={','.join(n for n, _ in backends)}")
    for name, fn in cases(args.size, np.random.default_rng(args.seed)).items():
        if _ckernels is not None:
            assert same(fn(_pykernels), fn(_ckernels)), f"{name}: backends disagree"
        times = {b: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
                 for b, mod in backends}
        line = f"{name:22s}" + "".join(f" {b}={t * 1e3:8.2f}ms" for b, t in times.items())
        if len(times) == 2:
            line += f"  speedup={times['python'] / times['cython']:.1f}x"
        print(line)


if __name__ == "__main__":
    main()
