"""Timing comparison of the jitted kernels against their numpy twins.

Run as a script:

    python3 benchmarks/bench_kernels.py [--fisher-tables N] [--pairs N]

Both implementations are exercised on identical inputs and cross-checked
before timing. When numba is unavailable (or BBEVAL_DISABLE_NUMBA is set)
the jitted names alias the numpy functions and the script says so.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bbeval.kernels import (
    USING_NUMBA,
    fisher_two_sided_numba,
    fisher_two_sided_numpy,
    pair_any_overlap_numba,
    pair_any_overlap_numpy,
    warmup,
)


def _time(fn, reps: int = 3) -> float:
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def fisher_inputs(n_tables: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    tables = []
    for _ in range(n_tables):
        n = int(rng.integers(10, 400))
        r1 = int(rng.integers(1, n))
        c1 = int(rng.integers(1, n))
        lo, hi = max(0, c1 - (n - r1)), min(r1, c1)
        a = int(rng.integers(lo, hi + 1))
        tables.append((a, r1 - a, c1 - a, (n - r1) - (c1 - a)))
    # a few large-margin tables to stress the long tail sums
    tables += [(2400, 2600, 2600, 2400), (480, 5520, 430, 3570)]
    return tables


def overlap_inputs(n_pairs: int, samples: int = 12, seed: int = 7):
    rng = np.random.default_rng(seed)
    total = n_pairs * samples
    ex, ey = rng.normal(0, 30, total), rng.normal(0, 200, total)
    # most pairs stay apart; a few percent come close enough to overlap
    nx = ex + rng.normal(6, 4, total)
    ny = ey + rng.normal(8, 6, total)
    half_x = np.full(n_pairs, 2.4)
    half_y = np.full(n_pairs, 5.1)
    offsets = samples * np.arange(n_pairs + 1, dtype=np.int64)
    return ex, ey, nx, ny, half_x, half_y, offsets


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fisher-tables", type=int, default=4000)
    ap.add_argument("--pairs", type=int, default=400_000)
    args = ap.parse_args()

    print(f"numba path active: {USING_NUMBA}")
    warmup()

    tables = fisher_inputs(args.fisher_tables)
    got_nb = np.array([fisher_two_sided_numba(*t) for t in tables])
    got_np = np.array([fisher_two_sided_numpy(*t) for t in tables])
    scale = np.maximum(got_np, 1e-300)
    rel = float(np.max(np.abs(got_nb - got_np) / scale))
    t_nb = _time(lambda: [fisher_two_sided_numba(*t) for t in tables])
    t_np = _time(lambda: [fisher_two_sided_numpy(*t) for t in tables])
    print(
        f"fisher_two_sided  {len(tables)} tables: "
        f"numba {t_nb:.3f}s  numpy {t_np:.3f}s  "
        f"speedup {t_np / t_nb:.1f}x  max rel diff {rel:.1e}"
    )

    inp = overlap_inputs(args.pairs)
    out_nb = pair_any_overlap_numba(*inp)
    out_np = pair_any_overlap_numpy(*inp)
    assert np.array_equal(out_nb, out_np)
    t_nb = _time(lambda: pair_any_overlap_numba(*inp))
    t_np = _time(lambda: pair_any_overlap_numpy(*inp))
    print(
        f"pair_any_overlap  {args.pairs} pairs x 12 samples "
        f"({int(out_np.sum())} overlapping): "
        f"numba {t_nb:.3f}s  numpy {t_np:.3f}s  speedup {t_np / t_nb:.1f}x"
    )


if __name__ == "__main__":
    main()
