"""Time the conv1d kernels on each available backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--number 50]
"""
import argparse
import timeit

import numpy as np

from optensor import kernels

# (batch, c_in, width, c_out, k, dilation, pad_left, pad_right)
SHAPES = {
    "convlstm gate, 'same' k=3": (64, 19, 5, 64, 3, 1, 1, 1),
    "timeline conv, valid k=3": (64, 15, 10, 16, 3, 1, 0, 0),
    "dilated, 'same' k=3 d=2": (64, 16, 10, 16, 3, 2, 2, 2),
    "wide, 'same' k=5": (32, 8, 256, 32, 5, 1, 2, 2),
}


def bench(shape, repeat, number):
    n, c_in, width, c_out, k, dil, pl, pr = shape
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(n, c_in, width)), rng.normal(size=(c_out, c_in, k)), rng.normal(size=c_out)
    y = kernels.conv1d_forward(x, w, b, dil, pl, pr)
    g = rng.normal(size=y.shape)
    fwd = min(timeit.repeat(lambda: kernels.conv1d_forward(x, w, b, dil, pl, pr), repeat=repeat, number=number))
    bwd = min(timeit.repeat(lambda: kernels.conv1d_backward(g, x, w, dil, pl, pr), repeat=repeat, number=number))
    return fwd / number * 1e6, bwd / number * 1e6


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=50)
    args = p.parse_args()

    backends = list(kernels.BACKENDS)
    results = {}
    for name in backends:
        prev = kernels.use_backend(name)
        results[name] = {label: bench(s, args.repeat, args.number) for label, s in SHAPES.items()}
        kernels.use_backend(prev)

    print(f"{'shape':28s} " + " ".join(f"{b + ' fwd/bwd (us)':>26s}" for b in backends)
          + ("    speedup fwd/bwd" if len(backends) > 1 else ""))
    for label in SHAPES:
        cells = " ".join(f"{results[b][label][0]:12.1f} {results[b][label][1]:12.1f} " for b in backends)
        line = f"{label:28s} {cells}"
        if "cython" in results:
            (pf, pb), (cf, cb) = results["python"][label], results["cython"][label]
            line += f"   {pf / cf:6.2f}x {pb / cb:6.2f}x"
        print(line)
    if len(backends) == 1:
        print("compiled backend unavailable; only the python fallback was timed")


if __name__ == "__main__":
    main()
