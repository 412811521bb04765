"""Time the numba and numpy kernel paths on shapes the pipeline uses.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The numba path is compiled (and cached) before timing starts.
"""

import argparse
import time

import numpy as np

from mmrel import _kernels


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    # (name, args) pairs; attention is one CT layer over a batch of documents
    for b, n, d, h in ((64, 8, 32, 8), (16, 77, 512, 8)):
        q, k, v = (rng.standard_normal((b, h, n, d // h)) for _ in range(3))
        mask = np.ones((b, n), dtype=bool)
        mask[::2, n // 2:] = False
        yield f"attention fwd  B={b} N={n} d={d}", ("attention_forward", (q, k, v, mask))
        out, probs = _kernels.numpy_impl.attention_forward(q, k, v, mask)
        yield f"attention bwd  B={b} N={n} d={d}", ("attention_backward", (out, q, k, v, probs))
    for m, n, d in ((6, 8, 32), (200, 400, 512)):
        a, c = rng.standard_normal((m, d)), rng.standard_normal((n, d))
        yield f"cosine matrix  {m}x{n} d={d}", ("cosine_matrix", (a, c))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        print("numba unavailable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, (name, a) in cases(rng):
        f_np = getattr(_kernels.numpy_impl, name)
        f_nb = getattr(_kernels.numba_impl, name)
        f_nb(*a)  # compile
        t_np = _best(lambda: f_np(*a), args.repeat)
        t_nb = _best(lambda: f_nb(*a), args.repeat)
        print(f"{label:<34}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
