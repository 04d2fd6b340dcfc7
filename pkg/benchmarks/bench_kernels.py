"""Time each hot kernel in its numpy and numba flavour.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints median wall time per call and the numpy/numba ratio; the "auto"
backend picks whichever flavour wins here on the reference machine.
"""
import argparse
import time

import numpy as np

from dpsvoc import kernels


def _cases(rng):
    c, t, k = 16, 8000, 3
    x = rng.standard_normal((c, t + 2 * 4))
    w = rng.standard_normal((c, c, k))
    gy = rng.standard_normal((c, t))
    xt = rng.standard_normal((16, 400))
    wt = rng.standard_normal((16, 8, 8))
    gyt = rng.standard_normal((8, 399 * 4 + 8))
    ceps = rng.standard_normal((200, 513))
    sig = rng.standard_normal(16000 + 1000)
    starts = np.arange(0, 16000 - 400, 80)
    ref = rng.standard_normal((len(starts), 400))
    return {
        "conv1d_forward": (x, w, 4, t),
        "conv1d_backward": (x, w, gy, 4),
        "conv_transpose1d_forward": (xt, wt, 4),
        "conv_transpose1d_backward": (xt, wt, gyt, 4),
        "freqt": (ceps, 24, 0.42),
        "nccf": (sig, starts, 400, 39, 268),
        "shift_xcorr": (ref, sig, starts, 200),
    }


def _median_time(fn, args, repeat):
    fn(*args)  # JIT compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "numba" not in kernels.available_backends():
        print("numba unavailable; nothing to compare")
        return
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'np/nb':>7s}")
    for name, call_args in cases.items():
        t_np = _median_time(kernels.impl(name, "numpy"), call_args, args.repeat)
        t_nb = _median_time(kernels.impl(name, "numba"), call_args, args.repeat)
        print(f"{name:28s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:7.2f}")


if __name__ == "__main__":
    main()
