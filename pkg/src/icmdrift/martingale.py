"""Log-scale exchangeability martingale with alarm and retrain-anchor logic."""

from __future__ import annotations

import csv
import math
from collections import deque
from typing import NamedTuple

__all__ = ["AlarmEvent", "MartingaleState", "retrain_anchor"]


class AlarmEvent(NamedTuple):
    at: int
    s_value: float  # log S at the alarm
    anchor: int


def retrain_anchor(log_values, r, start=1):
    """First index after the last entry with ``S < r``.

    ``log_values[i]`` is ``log S`` at index ``start + i``. When no entry is
    below ``r`` the anchor is ``start``.
    """
    log_r = math.log(r)
    last = None
    for i, v in enumerate(log_values):
        if v < log_r:
            last = i
    return start if last is None else start + last + 1


class MartingaleState:
    """Running ``log S_n`` of one pipeline.

    ``trajectory`` keeps ``(timestamp, log S)`` pairs since the last reset,
    capped at ``max_trajectory`` entries. The anchor does not need the
    trajectory: the last timestamp with ``S < r`` is tracked as values arrive.
    """

    def __init__(self, delta=0.01, r=10.0, max_trajectory=50_000):
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if r <= 1.0:
            raise ValueError("r must be > 1")
        self.delta = delta
        self.r = r
        self._log_threshold = math.log(1.0 / delta)
        self._log_r = math.log(r)
        self.trajectory = deque(maxlen=max_trajectory)
        self.reset()

    def reset(self, start=None):
        self.log_s = 0.0
        self.trajectory.clear()
        self.start = start
        self._last_below = None
        self._last_t = None

    @property
    def s(self):
        return math.exp(self.log_s)

    def update(self, value, timestamp=None):
        if not value > 0.0:
            raise ValueError(f"bet value must be positive, got {value}")
        if timestamp is None:
            timestamp = (self._last_t or (self.start or 1) - 1) + 1
        if self.start is None:
            self.start = timestamp
        self.log_s += math.log(value)
        self.trajectory.append((timestamp, self.log_s))
        self._last_t = timestamp
        if self.log_s < self._log_r:
            self._last_below = timestamp
        return self

    def check_alarm(self):
        """AlarmEvent when ``S > 1/delta``, else None."""
        if self.log_s > self._log_threshold:
            return AlarmEvent(self._last_t, self.log_s, self.anchor())
        return None

    def anchor(self):
        if self._last_below is None:
            return self.start if self.start is not None else 1
        return self._last_below + 1

    def state(self):
        return (self.log_s, tuple(self.trajectory), self.start, self._last_below)

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "log_s"])
            w.writerows(self.trajectory)
