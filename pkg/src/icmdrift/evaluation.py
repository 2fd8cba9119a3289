"""Accuracy, availability, all-subset re-voting and the difference Z-test."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .ensemble import RunRecord

__all__ = [
    "AccuracyEstimate",
    "HypothesisTestResult",
    "SubsetResult",
    "UndefinedTestError",
    "Z_CRITICAL",
    "accuracy",
    "aggregate",
    "subset_analysis",
    "revote",
    "variance_of_mean",
    "z_test",
    "write_subset_csv",
    "write_test_json",
]

# one-tailed 95% critical value of the standard normal
Z_CRITICAL = 1.645


class UndefinedTestError(ValueError):
    """Raised when the standard error of a difference is zero."""


@dataclass(frozen=True)
class AccuracyEstimate:
    p_hat: float
    n: float  # available predictions, averaged over simulations
    k: int = 1  # number of simulations
    unavailable: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_hat <= 1.0:
            raise ValueError(f"p_hat={self.p_hat} outside [0, 1]")
        if self.n < 1 or self.k < 1:
            raise ValueError("n and k must be >= 1")


@dataclass(frozen=True)
class HypothesisTestResult:
    d: float
    se: float
    z: float
    rho: float
    rejected: bool
    var_a: float
    var_b: float
    p_value: float  # one-tailed, upper

    def to_dict(self):
        return asdict(self)


def _accuracy_of(labels, preds):
    avail = preds >= 0
    n = int(avail.sum())
    if n == 0:
        raise ValueError("no available predictions")
    correct = int((preds[avail] == labels[avail]).sum())
    return correct / n, n, len(preds) - n


def accuracy(record: RunRecord) -> AccuracyEstimate:
    """Proportion correct over available ensemble predictions."""
    if len(record) == 0:
        raise ValueError("empty run record")
    p, n, na = _accuracy_of(record.labels, record.ensemble)
    return AccuracyEstimate(p, n, 1, na)


def aggregate(estimates) -> AccuracyEstimate:
    """Pool per-simulation estimates: mean p_hat, mean n, k = count."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("nothing to aggregate")
    k = len(estimates)
    return AccuracyEstimate(
        sum(e.p_hat for e in estimates) / k,
        sum(e.n for e in estimates) / k,
        k,
        sum(e.unavailable for e in estimates) / k,
    )


def revote(preds, confs, n_classes):
    """Majority vote per row of a ``(T, P)`` index matrix, ``-1`` meaning NA.

    Ties go to the class with the larger mean confidence among its voters,
    then to the smaller class index. Rows with no voter give ``-1``.
    """
    preds = np.asarray(preds)
    confs = np.nan_to_num(np.asarray(confs, dtype=float), nan=0.0)
    T = preds.shape[0]
    counts = np.zeros((T, n_classes), dtype=np.int64)
    sums = np.zeros((T, n_classes))
    for c in range(n_classes):
        hit = preds == c
        counts[:, c] = hit.sum(axis=1)
        sums[:, c] = np.where(hit, confs, 0.0).sum(axis=1)
    top = counts.max(axis=1, keepdims=True)
    tied = counts == top
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), -np.inf)
    mean = np.where(tied, mean, -np.inf)
    # argmax returns the first maximum, i.e. the smaller class index
    winner = mean.argmax(axis=1)
    winner[top[:, 0] == 0] = -1
    return winner


@dataclass(frozen=True)
class SubsetResult:
    members: tuple  # 0-based pipeline indices
    accuracy: float  # nan when the subset never predicts
    unavailable: int

    @property
    def size(self):
        return len(self.members)

    @property
    def mask(self):
        return sum(1 << j for j in self.members)


def subset_analysis(record: RunRecord, sizes=None):
    """Re-vote every non-empty pipeline subset from the cached predictions.

    Returns ``{size: [SubsetResult, ...]}``. ``sizes`` restricts the subset
    sizes considered (default: all).
    """
    P = record.n_pipelines
    wanted = range(1, P + 1) if sizes is None else sorted(set(sizes))
    labels = record.labels
    n_classes = len(record.classes)
    out = {}
    for size in wanted:
        if not 1 <= size <= P:
            raise ValueError(f"subset size {size} outside 1..{P}")
        rows = []
        for members in itertools.combinations(range(P), size):
            cols = list(members)
            votes = revote(record.preds[:, cols], record.confs[:, cols], n_classes)
            avail = votes >= 0
            n = int(avail.sum())
            acc = float((votes[avail] == labels[avail]).mean()) if n else math.nan
            rows.append(SubsetResult(members, acc, len(votes) - n))
        out[size] = rows
    return out


def variance_of_mean(p_hat, k, n):
    """Variance of a mean of ``k`` Bernoulli proportions over ``n`` trials each."""
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError("p_hat must lie in [0, 1]")
    if k * n < 1:
        raise ValueError("k * n must be >= 1")
    return p_hat * (1.0 - p_hat) / (k * n)


def z_test(a: AccuracyEstimate, b: AccuracyEstimate, rho=-1.0) -> HypothesisTestResult:
    """One-tailed test of H0: p_a <= p_b against H1: p_a > p_b."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    va = variance_of_mean(a.p_hat, a.k, a.n)
    vb = variance_of_mean(b.p_hat, b.k, b.n)
    se2 = va + vb - 2.0 * rho * math.sqrt(va * vb)
    se = math.sqrt(se2) if se2 > 0.0 else 0.0
    if se == 0.0:
        raise UndefinedTestError("standard error of the difference is zero")
    d = a.p_hat - b.p_hat
    z = d / se
    p_value = 0.5 * math.erfc(z / math.sqrt(2.0))
    return HypothesisTestResult(d, se, z, rho, z >= Z_CRITICAL, va, vb, p_value)


def write_subset_csv(results, path):
    """Per-subset table: size, bitmask, members (1-based), accuracy, unavailable."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "mask", "members", "accuracy", "unavailable"])
        for size in sorted(results):
            for r in results[size]:
                members = " ".join(str(j + 1) for j in r.members)
                w.writerow([size, r.mask, members, repr(r.accuracy), r.unavailable])


def write_test_json(result: HypothesisTestResult, path, **extra):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({**result.to_dict(), **extra}, fh, indent=2)
