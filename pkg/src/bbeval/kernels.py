"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

The numba path is used when numba imports cleanly and BBEVAL_DISABLE_NUMBA is
unset; otherwise the numpy fallbacks take over. Both paths implement the same
contracts and are exercised by the test suite; benchmarks/bench_kernels.py
compares them.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = os.environ.get("BBEVAL_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on",
)

if not _DISABLED:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        HAS_NUMBA = False
else:
    HAS_NUMBA = False

USING_NUMBA = HAS_NUMBA


# ---------------------------------------------------------------------------
# two-sided hypergeometric tail sum (log-space)
# ---------------------------------------------------------------------------

# Relative slack when comparing point probabilities against the observed one:
# tables with p <= p_obs * (1 + FISHER_REL_SLACK) are counted as "as extreme".
FISHER_REL_SLACK = 1e-7
# Absolute log-space guard for float noise on top of the slack.
_LOG_GUARD = 1e-12

_lf_table = np.zeros(1)


def _log_factorials(n: int) -> np.ndarray:
    """Cached [log(0!), ..., log(n!)] via lgamma (per-entry accuracy, no
    cumulative drift)."""
    global _lf_table
    if _lf_table.size <= n:
        grown = np.empty(n + 1)
        grown[: _lf_table.size] = _lf_table
        for i in range(_lf_table.size, n + 1):
            grown[i] = math.lgamma(i + 1.0)
        _lf_table = grown
    return _lf_table


def _fisher_logp_terms(a: int, b: int, c: int, d: int):
    """Support indices and log point probabilities for the table's margins.

    Returns (xs, logp, obs_pos) where obs_pos indexes the observed table.
    """
    r1, r2 = a + b, c + d
    c1 = a + c
    n = r1 + r2
    lf = _log_factorials(n)
    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    xs = np.arange(lo, hi + 1)
    base = lf[r1] + lf[r2] + lf[c1] + lf[n - c1] - lf[n]
    logp = base - lf[xs] - lf[r1 - xs] - lf[c1 - xs] - lf[r2 - c1 + xs]
    return xs, logp, a - lo


def fisher_two_sided_numpy(a: int, b: int, c: int, d: int) -> float:
    """Vectorized tail sum over the hypergeometric support."""
    _, logp, obs = _fisher_logp_terms(a, b, c, d)
    cutoff = logp[obs] + math.log1p(FISHER_REL_SLACK) + _LOG_GUARD
    p = float(np.exp(logp[logp <= cutoff]).sum())
    return min(p, 1.0)


if HAS_NUMBA:

    @njit(cache=True)
    def _fisher_two_sided_jit(a, b, c, d):  # pragma: no cover - jitted
        r1 = a + b
        r2 = c + d
        c1 = a + c
        n = r1 + r2
        lo = max(0, c1 - r2)
        hi = min(r1, c1)
        base = (
            math.lgamma(r1 + 1.0)
            + math.lgamma(r2 + 1.0)
            + math.lgamma(c1 + 1.0)
            + math.lgamma(n - c1 + 1.0)
            - math.lgamma(n + 1.0)
        )
        logp_obs = (
            base
            - math.lgamma(a + 1.0)
            - math.lgamma(r1 - a + 1.0)
            - math.lgamma(c1 - a + 1.0)
            - math.lgamma(r2 - c1 + a + 1.0)
        )
        cutoff = logp_obs + math.log1p(FISHER_REL_SLACK) + _LOG_GUARD
        total = 0.0
        for x in range(lo, hi + 1):
            logp = (
                base
                - math.lgamma(x + 1.0)
                - math.lgamma(r1 - x + 1.0)
                - math.lgamma(c1 - x + 1.0)
                - math.lgamma(r2 - c1 + x + 1.0)
            )
            if logp <= cutoff:
                total += math.exp(logp)
        return min(total, 1.0)

    def fisher_two_sided_numba(a: int, b: int, c: int, d: int) -> float:
        return float(_fisher_two_sided_jit(int(a), int(b), int(c), int(d)))

else:
    fisher_two_sided_numba = fisher_two_sided_numpy

fisher_two_sided_kernel = (
    fisher_two_sided_numba if USING_NUMBA else fisher_two_sided_numpy
)


# ---------------------------------------------------------------------------
# any-frame box overlap per (ego, neighbor) pair
# ---------------------------------------------------------------------------

def pair_any_overlap_numpy(ex, ey, nx, ny, half_x, half_y, offsets):
    """For each pair i with aligned samples in [offsets[i], offsets[i+1]),
    True when |ex-nx| <= half_x[i] and |ey-ny| <= half_y[i] at any sample.

    Boundary contact counts as overlap. Pairs with no shared samples are
    False.
    """
    n_pairs = offsets.size - 1
    counts = np.diff(offsets)
    pair_of = np.repeat(np.arange(n_pairs), counts)
    hit = (np.abs(ex - nx) <= half_x[pair_of]) & (np.abs(ey - ny) <= half_y[pair_of])
    out = np.zeros(n_pairs, dtype=bool)
    nonempty = counts > 0
    if hit.size:
        seg_any = np.maximum.reduceat(hit, offsets[:-1][nonempty])
        out[nonempty] = seg_any
    return out


if HAS_NUMBA:

    @njit(cache=True)
    def _pair_any_overlap_jit(ex, ey, nx, ny, half_x, half_y, offsets, out):
        # pragma: no cover - jitted
        for i in range(offsets.size - 1):
            lo = offsets[i]
            hi = offsets[i + 1]
            flag = False
            for j in range(lo, hi):
                if (
                    abs(ex[j] - nx[j]) <= half_x[i]
                    and abs(ey[j] - ny[j]) <= half_y[i]
                ):
                    flag = True
                    break
            out[i] = flag
        return out

    def pair_any_overlap_numba(ex, ey, nx, ny, half_x, half_y, offsets):
        out = np.zeros(offsets.size - 1, dtype=np.bool_)
        if offsets.size > 1:
            _pair_any_overlap_jit(
                np.ascontiguousarray(ex, dtype=np.float64),
                np.ascontiguousarray(ey, dtype=np.float64),
                np.ascontiguousarray(nx, dtype=np.float64),
                np.ascontiguousarray(ny, dtype=np.float64),
                np.ascontiguousarray(half_x, dtype=np.float64),
                np.ascontiguousarray(half_y, dtype=np.float64),
                np.ascontiguousarray(offsets, dtype=np.int64),
                out,
            )
        return out

else:
    pair_any_overlap_numba = pair_any_overlap_numpy

pair_any_overlap_kernel = (
    pair_any_overlap_numba if USING_NUMBA else pair_any_overlap_numpy
)


def warmup():
    """Trigger JIT compilation so timing-sensitive callers pay it up front."""
    fisher_two_sided_kernel(1, 1, 1, 1)
    pair_any_overlap_kernel(
        np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1),
        np.ones(1), np.ones(1), np.array([0, 1], dtype=np.int64),
    )
