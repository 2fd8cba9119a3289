"""Nonconformity scores and smoothed inductive conformal p-values."""

from __future__ import annotations

from bisect import bisect_left, bisect_right, insort

from ._random import UniformStream

__all__ = ["score", "pvalue", "ScoreHistory", "TieBreaker"]


def score(posterior, true_label):
    """Nonconformity of an example: minus the posterior of its true label."""
    return -posterior.prob(true_label)


def pvalue(history, u):
    """Smoothed p-value of the last score in ``history``.

    ``(#{a > a_new} + u * #{a == a_new}) / len(history)``, where the equality
    count includes the new score itself, so the result lies in (0, 1].
    """
    if len(history) == 0:
        raise ValueError("p-value needs a non-empty score history")
    new = history[-1]
    greater = 0
    equal = 0
    for a in history:
        if a > new:
            greater += 1
        elif a == new:
            equal += 1
    return (greater + u * equal) / len(history)


class ScoreHistory:
    """Scores accumulated since the owning model was (re)trained.

    Kept sorted so each new p-value costs two bisections.
    """

    def __init__(self):
        self._sorted = []

    def __len__(self):
        return len(self._sorted)

    def add(self, alpha, u):
        """Append ``alpha`` and return its p-value against the whole history."""
        s = self._sorted
        insort(s, alpha)
        lo = bisect_left(s, alpha)
        hi = bisect_right(s, alpha)
        return ((len(s) - hi) + u * (hi - lo)) / len(s)

    def scores(self):
        return list(self._sorted)

    def clear(self):
        self._sorted.clear()


class TieBreaker(UniformStream):
    """Seeded U(0,1) draws for one pipeline's p-values."""

    def __init__(self, seed, pipeline=0):
        super().__init__(seed, "tiebreak", pipeline)
