"""Density estimators on [0, 1] for p-value sequences.

Two families are provided:

* the interpolated histogram: equal-width bins, with the bin count reduced
  until no bin is empty, densities placed at the bin centres and linearly
  interpolated between them (flat beyond the outer centres);
* the k-nearest-neighbour estimator ``min(n-1, k-1) / (n * L(R_k(x)))`` with
  a boundary-corrected window length ``L``.

The functional API (``fit_interpolated_histogram``, ``eval_interpolated``,
``integral_interpolated``, ``knn_density``) refits from scratch. The
betting function instead uses :class:`PValueHistory`, which keeps bin
counts for every bin count and a sorted sample up to date in O(kappa) per
new p-value, and the estimator objects that read from it.
"""

from __future__ import annotations

from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass

__all__ = [
    "InterpolatedHistogram",
    "KnnDensityConfig",
    "fit_interpolated_histogram",
    "eval_interpolated",
    "integral_interpolated",
    "knn_density",
    "PValueHistory",
    "InterpolatedHistogramEstimator",
    "HistogramEstimator",
    "KnnEstimator",
    "R_FLOOR",
]

# stand-in for a zero k-th neighbour distance
R_FLOOR = 1e-9


def _bin_of(p, kappa):
    b = int(p * kappa)
    return kappa - 1 if b >= kappa else b


@dataclass(frozen=True)
class InterpolatedHistogram:
    kappa: int
    counts: tuple
    sample_size: int

    @property
    def centers(self):
        k = self.kappa
        return tuple((2 * j - 1) / (2 * k) for j in range(1, k + 1))

    @property
    def center_densities(self):
        k, n = self.kappa, self.sample_size
        return tuple(c * k / n for c in self.counts)

    def __call__(self, x):
        return eval_interpolated(self, x)


@dataclass(frozen=True)
class KnnDensityConfig:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _count_bins(pvalues, kappa):
    counts = [0] * kappa
    for p in pvalues:
        counts[_bin_of(p, kappa)] += 1
    return counts


def fit_interpolated_histogram(pvalues, kappa_initial):
    """Histogram on ``kappa`` bins, decrementing ``kappa`` while a bin is empty."""
    pvalues = list(pvalues)
    if not pvalues:
        raise ValueError("need at least one p-value")
    if kappa_initial < 1:
        raise ValueError("kappa_initial must be >= 1")
    for p in pvalues:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value {p} outside [0, 1]")
    kappa = kappa_initial
    counts = _count_bins(pvalues, kappa)
    while kappa > 1 and min(counts) == 0:
        kappa -= 1
        counts = _count_bins(pvalues, kappa)
    return InterpolatedHistogram(kappa, tuple(counts), len(pvalues))


def _interp(counts, kappa, n, x):
    t = x * kappa - 0.5
    if t <= 0.0:
        return counts[0] * kappa / n
    if t >= kappa - 1:
        return counts[kappa - 1] * kappa / n
    j = int(t)
    frac = t - j
    lo = counts[j]
    return (lo + frac * (counts[j + 1] - lo)) * kappa / n


def eval_interpolated(hist: InterpolatedHistogram, x):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    return _interp(hist.counts, hist.kappa, hist.sample_size, x)


def integral_interpolated(hist: InterpolatedHistogram):
    """Exact area: two end rectangles plus one trapezoid per centre gap."""
    f = hist.center_densities
    k = hist.kappa
    c = hist.centers
    area = c[0] * f[0] + (1.0 - c[-1]) * f[-1]
    for j in range(1, k):
        area += 0.5 * (f[j - 1] + f[j]) * (c[j] - c[j - 1])
    return area


def _kth_distance(sorted_values, x, k):
    """Distance from ``x`` to its k-th nearest point (farthest if fewer)."""
    n = len(sorted_values)
    k = min(k, n)
    hi = bisect_left(sorted_values, x)
    lo = hi - 1
    d = 0.0
    for _ in range(k):
        if lo < 0:
            d = sorted_values[hi] - x
            hi += 1
        elif hi >= n:
            d = x - sorted_values[lo]
            lo -= 1
        else:
            dl = x - sorted_values[lo]
            dh = sorted_values[hi] - x
            if dl <= dh:
                d = dl
                lo -= 1
            else:
                d = dh
                hi += 1
    return d


def _knn_value(sorted_values, k, x):
    n = len(sorted_values)
    r = _kth_distance(sorted_values, x, k)
    if r <= 0.0:
        r = R_FLOOR
    length = min(1.0 - x, r) + min(x, r)
    if length <= 0.0:
        length = R_FLOOR
    return min(n - 1, k - 1) / (n * length)


def knn_density(pvalues, config, x):
    """kNN density estimate at ``x`` from the sample ``pvalues``."""
    k = config.k if isinstance(config, KnnDensityConfig) else int(config)
    if k < 1:
        raise ValueError("k must be >= 1")
    values = sorted(pvalues)
    if not values:
        raise ValueError("need at least one p-value")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    return _knn_value(values, k, x)


class PValueHistory:
    """P-values observed since the last reset, optionally only the last ``window``.

    Maintains, for every bin count 1..``max_kappa``, the per-bin counts and
    the number of empty bins, plus a sorted copy of the sample.
    """

    def __init__(self, max_kappa=15, window=None):
        if window is not None and window < 1:
            raise ValueError("window must be >= 1")
        self.max_kappa = max_kappa
        self.window = window
        self.reset()

    def reset(self):
        self._values = deque()
        self.sorted = []
        self.counts = [None] + [[0] * k for k in range(1, self.max_kappa + 1)]
        self.empty = [0] + list(range(1, self.max_kappa + 1))

    def __len__(self):
        return len(self._values)

    def values(self):
        return list(self._values)

    def add(self, p):
        if self.window is not None and len(self._values) >= self.window:
            self._remove(self._values.popleft())
        self._values.append(p)
        insort(self.sorted, p)
        counts, empty = self.counts, self.empty
        for k in range(1, self.max_kappa + 1):
            b = int(p * k)
            if b >= k:
                b = k - 1
            row = counts[k]
            if row[b] == 0:
                empty[k] -= 1
            row[b] += 1

    def _remove(self, p):
        s = self.sorted
        del s[bisect_left(s, p)]
        counts, empty = self.counts, self.empty
        for k in range(1, self.max_kappa + 1):
            b = int(p * k)
            if b >= k:
                b = k - 1
            row = counts[k]
            row[b] -= 1
            if row[b] == 0:
                empty[k] += 1

    def effective_kappa(self, kappa_initial):
        """Largest bin count <= ``kappa_initial`` with no empty bin."""
        k = kappa_initial
        empty = self.empty
        while k > 1 and empty[k]:
            k -= 1
        return k


class InterpolatedHistogramEstimator:
    name = "interp-hist"

    def __init__(self, bins):
        if bins < 1:
            raise ValueError("bins must be >= 1")
        self.bins = bins

    def __repr__(self):
        return f"InterpolatedHistogramEstimator({self.bins})"

    def density(self, history: PValueHistory, x):
        n = len(history)
        if n == 0:
            return 1.0
        k = history.effective_kappa(self.bins)
        return _interp(history.counts[k], k, n, x)

    def snapshot(self, history: PValueHistory):
        """The equivalent fitted :class:`InterpolatedHistogram` (None if empty)."""
        if len(history) == 0:
            return None
        k = history.effective_kappa(self.bins)
        return InterpolatedHistogram(k, tuple(history.counts[k]), len(history))

    def knots(self, history):
        h = self.snapshot(history)
        return () if h is None else h.centers


class HistogramEstimator:
    """Plain (piecewise-constant) histogram with the same empty-bin reduction."""

    name = "hist"

    def __init__(self, bins):
        if bins < 1:
            raise ValueError("bins must be >= 1")
        self.bins = bins

    def __repr__(self):
        return f"HistogramEstimator({self.bins})"

    def density(self, history: PValueHistory, x):
        n = len(history)
        if n == 0:
            return 1.0
        k = history.effective_kappa(self.bins)
        return history.counts[k][_bin_of(x, k)] * k / n

    def knots(self, history):
        if len(history) == 0:
            return ()
        k = history.effective_kappa(self.bins)
        return tuple(j / k for j in range(1, k))


class KnnEstimator:
    name = "knn"

    def __init__(self, k):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def __repr__(self):
        return f"KnnEstimator({self.k})"

    def density(self, history: PValueHistory, x):
        if len(history) == 0:
            return 1.0
        return _knn_value(history.sorted, self.k, x)

    def knots(self, history):
        return tuple(history.sorted)
