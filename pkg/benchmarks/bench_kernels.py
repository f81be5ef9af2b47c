"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the four hot operations (conv forward/backward, maxpool
forward/backward) on CMNet-shaped tensors over a range of batch sizes and
prints the per-call speedup.  Both backends must also agree bitwise; the
benchmark asserts that on every measured case.

Usage: python benchmarks/bench_kernels.py [--m 8] [--repeats 5]
"""
import argparse
import time

import numpy as np

from ambclab.kernels import get_backend


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(m, batch_sizes, repeats, dtype=np.float32):
    numpy_be = get_backend("numpy")
    try:
        compiled_be = get_backend("compiled")
    except ValueError as exc:
        raise SystemExit(f"compiled backend unavailable: {exc}")

    rng = np.random.default_rng(0)
    header = f"{'op':18s} {'batch':>6s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for b in batch_sizes:
        x = rng.standard_normal((b, m, m, 2)).astype(dtype)
        w = rng.standard_normal((32, 3, 3, 2)).astype(dtype)
        bias = rng.standard_normal(32).astype(dtype)
        gy = rng.standard_normal((b, m, m, 32)).astype(dtype)
        pool_in = rng.standard_normal((b, m, m, 32)).astype(dtype)

        cases = [
            ("conv2d_forward", lambda be: be.conv2d_forward(x, w, bias)),
            ("conv2d_backward", lambda be: be.conv2d_backward(x, w, gy)),
            ("maxpool2_forward", lambda be: be.maxpool2_forward(pool_in)),
        ]
        _, idx = numpy_be.maxpool2_forward(pool_in)
        gp = rng.standard_normal((b, m // 2, m // 2, 32)).astype(dtype)
        cases.append(("maxpool2_backward",
                      lambda be: be.maxpool2_backward(idx, gp, (m, m))))

        for name, call in cases:
            ref = call(numpy_be)
            got = call(compiled_be)
            ref = ref if isinstance(ref, tuple) else (ref,)
            got = got if isinstance(got, tuple) else (got,)
            for r, g in zip(ref, got):
                assert np.array_equal(np.asarray(r), np.asarray(g)), \
                    f"backend mismatch in {name} at batch {b}"
            t_np = _time(lambda: call(numpy_be), repeats)
            t_c = _time(lambda: call(compiled_be), repeats)
            print(f"{name:18s} {b:6d} {t_np * 1e3:9.3f}ms {t_c * 1e3:9.3f}ms "
                  f"{t_np / t_c:7.2f}x")
        print()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--m", type=int, default=8, help="input height/width")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats (best is kept)")
    parser.add_argument("--batches", default="1,16,128,2000",
                        help="comma-separated batch sizes")
    args = parser.parse_args()
    batches = tuple(int(v) for v in args.batches.split(","))
    bench(args.m, batches, args.repeats)


if __name__ == "__main__":
    main()
