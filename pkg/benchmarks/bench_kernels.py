"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per kernel and size. Both backends are imported side by
side, so no environment variable is needed.
"""

import argparse
import timeit

import numpy as np

from brlgan import _fallback

try:
    from brlgan import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    for n in (16, 64):
        a, b = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        yield "matmul_ordered", f"{n}x{n}", (a, b)
    for shape in ((8, 4), (32, 16)):
        yield "singular_values", "x".join(map(str, shape)), (rng.normal(size=shape),)
    x = rng.normal(size=(64, 16, 16, 16))
    yield "im2col", "64x16x16x16 k3", (x, 3, 3, 1, 1)
    cols = _fallback.im2col(x, 3, 3, 1, 1)
    yield "col2im", "64x16x16x16 k3", (cols, 64, 16, 16, 16, 3, 3, 1, 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print("kernel,size,cython_ms,python_ms,speedup")
    for name, size, call_args in cases(rng):
        fast, slow = getattr(_kernels, name), getattr(_fallback, name)
        times = []
        for fn in (fast, slow):
            number = 3
            t = min(timeit.repeat(lambda: fn(*call_args), number=number, repeat=args.repeat))
            times.append(1e3 * t / number)
        print(f"{name},{size},{times[0]:.3f},{times[1]:.3f},{times[1] / times[0]:.1f}")


if __name__ == "__main__":
    main()
