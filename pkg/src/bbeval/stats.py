"""Exact statistical primitives: two-sided Fisher test, binning, R^2.

The two-sided p-value is the sum of hypergeometric point probabilities, over
all tables sharing the observed margins, that are no larger than the observed
table's point probability (with a 1e-7 relative slack so float noise cannot
exclude genuinely tied tables). Computed in log space; stable up to N ~ 1e6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DataError
from .kernels import fisher_two_sided_kernel


@dataclass(frozen=True)
class Table2x2:
    """Counts with rows = condition {true, false}, cols = outcome {yes, no}."""

    a: int  # condition true,  outcome yes
    b: int  # condition true,  outcome no
    c: int  # condition false, outcome yes
    d: int  # condition false, outcome no

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise DataError(f"table cell {name} must be a nonnegative "
                                f"integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d

    @property
    def row_totals(self) -> tuple[int, int]:
        return (self.a + self.b, self.c + self.d)

    @property
    def col_totals(self) -> tuple[int, int]:
        return (self.a + self.c, self.b + self.d)

    def cells(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)


def fisher_exact_two_sided(table: Table2x2) -> float:
    """Two-sided Fisher's exact test; the all-zero table yields p = 1."""
    return fisher_two_sided_kernel(table.a, table.b, table.c, table.d)


@dataclass(frozen=True)
class BinnedCurve:
    """A per-bin success proportion over a fixed axis.

    Bins are left-closed ([e_i, e_{i+1})) except the last, which also includes
    its right edge so +inf sentinels land in the largest bin. Bins with fewer
    than min_count samples are masked; their values are NaN.
    """

    edges: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    successes: np.ndarray
    mask: np.ndarray
    n_dropped: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)


def bin_probability(values: np.ndarray, successes: np.ndarray,
                    edges: np.ndarray, min_count: int) -> BinnedCurve:
    """Proportion of successes per bin of ``values``.

    Samples outside the edges (or NaN) are dropped and counted in n_dropped.
    """
    values = np.asarray(values, dtype=np.float64)
    successes = np.asarray(successes, dtype=bool)
    edges = np.asarray(edges, dtype=np.float64)
    if values.shape != successes.shape:
        raise DataError("values and successes must have matching shapes")
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DataError("bin edges must be strictly increasing, >= 2 edges")
    n_bins = edges.size - 1
    # interior-edge samples go to the right bin; the final edge stays inside
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = n_bins - 1
    valid = (idx >= 0) & (idx < n_bins) & ~np.isnan(values)
    counts = np.bincount(idx[valid], minlength=n_bins).astype(np.int64)
    succ = np.bincount(idx[valid], weights=successes[valid].astype(np.float64),
                       minlength=n_bins).astype(np.int64)
    mask = counts < min_count
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = succ / counts
    vals[mask] = np.nan
    return BinnedCurve(
        edges=edges, values=vals, counts=counts, successes=succ, mask=mask,
        n_dropped=int(values.size - valid.sum()),
    )


def r_squared(reference: BinnedCurve, candidate: BinnedCurve) -> float:
    """Coefficient of determination between two curves on a shared axis.

    Only bins unmasked in both curves enter; at least two are required, and
    the reference must vary across them.
    """
    if reference.edges.shape != candidate.edges.shape or not np.array_equal(
        reference.edges, candidate.edges
    ):
        raise DataError("curves are on different bin axes")
    common = ~reference.mask & ~candidate.mask
    if int(common.sum()) < 2:
        raise DataError(
            f"only {int(common.sum())} common unmasked bins; need >= 2"
        )
    ref = reference.values[common]
    cand = candidate.values[common]
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("degenerate reference curve (zero variance)")
    ss_res = float(np.sum((ref - cand) ** 2))
    return 1.0 - ss_res / ss_tot
