"""Compare the compiled and numpy convolution kernels.

Times the depthwise/stem forward+backward hot loops and a full model
forward for each available backend.  Run from the repo root:

    python3 benchmarks/kernel_backends.py [--length 128] [--batch 64] [--reps 30]
"""

import argparse
import time

import numpy as np

from alwnn import kernels, model as M
from alwnn.kernels import numpy_backend


def time_call(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(name, batch, channels, length, reps):
    prev = kernels.use_backend(name)
    try:
        be = kernels.backend()
        rng = np.random.default_rng(0)
        xp = rng.normal(size=(batch, channels, length + 4)).astype(np.float32)
        w = rng.normal(size=(channels, 5)).astype(np.float32)
        g = np.ascontiguousarray(
            rng.normal(size=(batch, channels, length)).astype(np.float32))
        xs = rng.normal(size=(batch, 2, length + 6)).astype(np.float32)
        ws = rng.normal(size=(channels, 2, 7)).astype(np.float32)
        gs = np.ascontiguousarray(
            rng.normal(size=(batch, channels, length)).astype(np.float32))

        rows = {
            "dwconv fwd": time_call(lambda: be.dwconv1d_fwd(xp, w), reps),
            "dwconv bwd": time_call(lambda: be.dwconv1d_bwd(xp, w, g), reps),
            "stem fwd": time_call(lambda: be.stemconv_fwd(xs, ws), reps),
            "stem bwd": time_call(lambda: be.stemconv_bwd(xs, ws, gs), reps),
        }
        cfg = M.ModelConfig(levels=1, num_classes=11, length=length,
                            channels=channels)
        params = M.init_params(cfg, seed=0)
        x = rng.normal(size=(batch, 1, 2, length)).astype(np.float32)
        M.predict(params, cfg, x)              # warm up
        rows["model fwd"] = time_call(lambda: M.predict(params, cfg, x), reps)
        return rows
    finally:
        kernels.use_backend(prev)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--length", type=int, default=128)
    ap.add_argument("--reps", type=int, default=30)
    args = ap.parse_args()

    names = kernels.available_backends()
    if "compiled" not in names:
        print("compiled backend not built; showing numpy only")
    results = {n: bench_backend(n, args.batch, args.channels, args.length,
                                args.reps) for n in names}

    kinds = list(next(iter(results.values())))
    width = max(len(k) for k in kinds) + 2
    header = f"{'kernel':<{width}}" + "".join(f"{n:>14}" for n in names)
    if len(names) > 1:
        header += f"{'speedup':>10}"
    print(f"batch={args.batch} channels={args.channels} length={args.length} "
          f"best-of-{args.reps}")
    print(header)
    for kind in kinds:
        line = f"{kind:<{width}}"
        for n in names:
            line += f"{results[n][kind] * 1e3:>12.3f}ms"
        if len(names) > 1:
            line += f"{results['numpy'][kind] / results['compiled'][kind]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
