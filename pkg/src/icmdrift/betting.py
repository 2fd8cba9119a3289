"""CAUTIOUS betting over one or several density estimators.

Every estimator ``j`` is a "shadow" player that always bets its own density
estimate, accumulating ``log S1_j``. Before each new p-value, the best
shadow gain over the last ``window`` steps,

    ratio_j = S1_j[n-1] / min(S1_j[n-1], ..., S1_j[n-W]),

is compared with ``epsilon``. If no ratio exceeds it the bet is the
constant 1; otherwise the density of the player with the largest ratio is
used. With a single estimator this is the original single-player rule.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .density import (
    HistogramEstimator,
    InterpolatedHistogramEstimator,
    KnnEstimator,
    PValueHistory,
)

__all__ = [
    "EstimatorSpec",
    "CautiousConfig",
    "BetDecision",
    "ShadowMartingale",
    "CautiousBetting",
    "betting_config",
    "cautious_bet",
    "update_shadows",
    "BETTING_CONFIGS",
    "DENSITY_FLOOR",
]

DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str  # "interp-hist", "hist" or "knn"
    param: int

    def build(self):
        if self.kind == "interp-hist":
            return InterpolatedHistogramEstimator(self.param)
        if self.kind == "hist":
            return HistogramEstimator(self.param)
        if self.kind == "knn":
            return KnnEstimator(self.param)
        raise ValueError(f"unknown estimator kind {self.kind!r}")

    def __str__(self):
        return f"{self.kind}({self.param})"


@dataclass(frozen=True)
class CautiousConfig:
    estimators: tuple
    epsilon: float = 100.0
    window: int = 5000
    pvalue_window: int | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if len(self.estimators) < 1:
            raise ValueError("need at least one estimator")

    @property
    def M(self):
        return len(self.estimators)


_IH = (EstimatorSpec("interp-hist", 15),)
_MIH = tuple(EstimatorSpec("interp-hist", b) for b in (5, 10, 15))
_NN = tuple(EstimatorSpec("knn", k) for k in (5, 10, 15))

BETTING_CONFIGS = {
    "IH": _IH,
    "MIH": _MIH,
    "MIHNN": _MIH + _NN,
    "CAU": (EstimatorSpec("hist", 15),),
}


def betting_config(name, epsilon=100.0, window=5000, pvalue_window=None):
    try:
        specs = BETTING_CONFIGS[name.upper()]
    except KeyError:
        raise ValueError(
            f"unknown betting config {name!r}; choose from {sorted(BETTING_CONFIGS)}"
        ) from None
    return CautiousConfig(specs, epsilon, window, pvalue_window)


class BetDecision(NamedTuple):
    value: float
    active: bool
    chosen: int | None  # 0-based estimator index, None when not betting


class ShadowMartingale:
    """Per-estimator log-products with a sliding-window minimum."""

    def __init__(self, M, window):
        self.M = M
        self.window = window
        self.reset()

    def reset(self):
        self.log_s = [0.0] * self.M
        self.steps = 0
        self.rings = [deque(maxlen=self.window) for _ in range(self.M)]
        # monotone deques of (step, value) for the window minimum
        self._mins = [deque() for _ in range(self.M)]

    def log_ratios(self):
        """``log(ratio_j)`` per estimator; all zero before the first update."""
        if self.steps == 0:
            return [0.0] * self.M
        return [s - m[0][1] for s, m in zip(self.log_s, self._mins)]

    def push(self, log_factors):
        self.steps += 1
        step, cutoff = self.steps, self.steps - self.window
        for j, lf in enumerate(log_factors):
            v = self.log_s[j] + lf
            self.log_s[j] = v
            self.rings[j].append(v)
            mins = self._mins[j]
            while mins and mins[-1][1] >= v:
                mins.pop()
            mins.append((step, v))
            if mins[0][0] <= cutoff:
                mins.popleft()

    def window_min(self, j):
        return self._mins[j][0][1] if self.steps else 0.0

    def state(self):
        return (tuple(self.log_s), self.steps, tuple(tuple(r) for r in self.rings))


class CautiousBetting:
    """Betting-function state of one pipeline."""

    def __init__(self, config: CautiousConfig):
        self.config = config
        self.estimators = [spec.build() for spec in config.estimators]
        max_kappa = max(
            (e.bins for e in self.estimators if hasattr(e, "bins")), default=1
        )
        self.history = PValueHistory(max_kappa=max_kappa, window=config.pvalue_window)
        self.shadows = ShadowMartingale(len(self.estimators), config.window)
        self._log_eps = math.log(config.epsilon)

    def reset(self):
        self.history.reset()
        self.shadows.reset()

    def choose(self):
        """Index of the estimator to bet with, or None to abstain."""
        ratios = self.shadows.log_ratios()
        best = 0
        for j in range(1, len(ratios)):
            if ratios[j] > ratios[best]:
                best = j
        return best if ratios[best] > self._log_eps else None

    def density(self, j, x):
        d = self.estimators[j].density(self.history, x)
        return d if d > DENSITY_FLOOR else DENSITY_FLOOR

    def bet(self, p):
        """The betting-function value at ``p`` without updating any state."""
        m = self.choose()
        if m is None:
            return BetDecision(1.0, False, None)
        return BetDecision(self.density(m, p), True, m)

    def function(self):
        """Current betting function ``x -> h(x)`` and its breakpoints."""
        m = self.choose()
        if m is None:
            return (lambda x: 1.0), ()
        return (lambda x: self.density(m, x)), self.estimators[m].knots(self.history)

    def update(self, p, densities=None):
        """Let every shadow player bet on ``p``, then add ``p`` to the history."""
        if densities is None:
            densities = [self.density(j, p) for j in range(len(self.estimators))]
        self.shadows.push([math.log(d) for d in densities])
        self.history.add(p)

    def step(self, p):
        """Bet on ``p`` and absorb it; returns the :class:`BetDecision`."""
        m = self.choose()
        densities = [self.density(j, p) for j in range(len(self.estimators))]
        decision = (
            BetDecision(1.0, False, None)
            if m is None
            else BetDecision(densities[m], True, m)
        )
        self.update(p, densities)
        return decision


def cautious_bet(state: CautiousBetting, p_new):
    """Decision for ``p_new`` given the shadows and history in ``state``."""
    return state.bet(p_new)


def update_shadows(state: CautiousBetting, p_new):
    state.update(p_new)
    return state
