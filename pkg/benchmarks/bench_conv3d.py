"""Compare the compiled and numpy conv3d kernels on the default backbone's layer shapes.

    python3 benchmarks/bench_conv3d.py [--batch 12] [--repeat 5]

Prints the best-of-N wall time per kernel and whether the two forward
results are bit-identical.
"""
import argparse
import time

import numpy as np

from pimpnet import _kernels

# (name, Cin, Cout, input extent) for the 8/16/16 backbone on 32^3 volumes
LAYERS = [("block1", 1, 8, 32), ("block2", 8, 16, 16), ("block3", 16, 16, 8)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = ["python"]
    try:
        _kernels.get_backend("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled backend not built; timing the numpy fallback only")

    rng = np.random.default_rng(0)
    print(f"{'layer':8} {'backend':8} {'forward':>9} {'grad_w':>9} {'grad_x':>9}")
    for name, cin, cout, n in LAYERS:
        x = rng.random((args.batch, cin, n, n, n)).astype(np.float32)
        w = (rng.standard_normal((cout, cin, 3, 3, 3)) * 0.1).astype(np.float32)
        b = np.zeros(cout, np.float32)
        outs = {}
        for be in backends:
            impl = _kernels.get_backend(be)
            out = impl.conv3d_forward(x, w, b, 2, 1)
            g = np.ones(out.shape)
            outs[be] = out
            tf = best_of(lambda: impl.conv3d_forward(x, w, b, 2, 1), args.repeat)
            tw = best_of(lambda: impl.conv3d_backward_weight(x, g, 3, 2, 1), args.repeat)
            ti = best_of(lambda: impl.conv3d_backward_input(w, g, n, n, n, 2, 1), args.repeat)
            print(f"{name:8} {be:8} {tf * 1e3:8.2f}ms {tw * 1e3:8.2f}ms {ti * 1e3:8.2f}ms")
        if len(outs) == 2:
            same = np.array_equal(outs["cython"], outs["python"])
            print(f"{name:8} forward outputs bit-identical: {same}")


if __name__ == "__main__":
    main()
