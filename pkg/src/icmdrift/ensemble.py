"""Ensemble of inductive conformal martingale pipelines with backward-anchored retraining.

Each pipeline owns a bagged-tree model trained on ``theta`` consecutive
instances, its own score history, CAUTIOUS betting state and martingale.
When a pipeline's martingale exceeds ``1/delta`` it stops predicting and
is retrained on ``z_d .. z_{d+theta-1}``, where ``d`` is one past the last
time its martingale was below ``r``. Retraining happens at the first step
``t`` (possibly the alarm step itself) with ``t - d + 1 >= theta``; the
pipeline predicts again from ``t + 1``. The ensemble prediction is the
majority vote of the active pipelines.

Timestamps must be consecutive integers; the first one seen is the cold-start
anchor of every pipeline.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from ._random import derive_seed
from .betting import CautiousBetting, betting_config
from .conformal import ScoreHistory, TieBreaker
from .forest import FeatureEncoder, train
from .martingale import AlarmEvent, MartingaleState
from .streams import DataError, FeatureSchema

log = logging.getLogger(__name__)

__all__ = [
    "EnsembleConfig",
    "VoteResult",
    "Pipeline",
    "Ensemble",
    "RunRecord",
    "majority_vote",
    "run",
    "OutOfOrderError",
    "DEFAULT_THETAS",
]

DEFAULT_THETAS = tuple(range(100, 1001, 100))


class OutOfOrderError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    thetas: tuple = DEFAULT_THETAS
    r: float = 10.0
    delta: float = 0.01
    betting: str = "MIHNN"
    seed: int = 0
    tree_count: int = 40
    epsilon: float = 100.0
    window: int = 5000
    pvalue_window: int | None = 1000  # most recent p-values fed to the estimators; None = all
    buffer_cap: int = 50_000
    disabled: tuple = ()  # 1-based pipeline indices that never train

    def __post_init__(self):
        if len(self.thetas) < 1:
            raise ValueError("need at least one pipeline")
        if any(int(t) < 1 for t in self.thetas):
            raise ValueError("theta values must be >= 1")
        if self.r <= 1:
            raise ValueError("r must be > 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        betting_config(self.betting)  # validates the name

    def to_dict(self):
        d = asdict(self)
        d["thetas"] = list(self.thetas)
        d["disabled"] = list(self.disabled)
        return d


class VoteResult(NamedTuple):
    prediction: object  # class label, or None when unavailable
    voters: list  # (pipeline index, label)
    alarms: list  # (pipeline index, AlarmEvent)
    retrained: list  # pipeline indices retrained at this step

    @property
    def available(self):
        return self.prediction is not None


def majority_vote(votes, posteriors=None):
    """Modal label of ``votes`` (a list of ``(pipeline, label)``).

    Ties go to the tied label whose voters have the larger mean posterior,
    then to the smaller label. Returns None when there are no votes.
    """
    if not votes:
        return None
    if posteriors is None:
        posteriors = [0.0] * len(votes)
    count = {}
    mass = {}
    for (_, label), p in zip(votes, posteriors):
        count[label] = count.get(label, 0) + 1
        mass[label] = mass.get(label, 0.0) + p
    top = max(count.values())
    tied = [c for c in count if count[c] == top]
    if len(tied) == 1:
        return tied[0]
    return min(tied, key=lambda c: (-mass[c] / count[c], c))


def _vote_index(preds, confs, n_classes):
    """majority_vote on class indices (smaller index == smaller class)."""
    if not preds:
        return -1
    count = [0] * n_classes
    mass = [0.0] * n_classes
    for c, p in zip(preds, confs):
        count[c] += 1
        mass[c] += p
    top = max(count)
    best = -1
    best_mean = -1.0
    for c in range(n_classes):
        if count[c] == top:
            mean = mass[c] / top
            if mean > best_mean:
                best, best_mean = c, mean
    return best


class Pipeline:
    """One ICM pipeline: model, score history, betting state, martingale."""

    def __init__(self, index, theta, config: EnsembleConfig, schema: FeatureSchema):
        self.index = index
        self.theta = int(theta)
        self.config = config
        self.schema = schema
        self.model = None
        self.active = False
        self.d = 1
        self.scores = ScoreHistory()
        self.betting = CautiousBetting(
            betting_config(
                config.betting, config.epsilon, config.window, config.pvalue_window
            )
        )
        self.martingale = MartingaleState(config.delta, config.r)
        self.tiebreak = TieBreaker(config.seed, index)
        self.retrain_count = 0
        self.training_windows = []  # (retrain step, d, theta)
        self._cache = None  # (model, block id, first row, vote rows)

    @property
    def status(self):
        return "active" if self.active else "awaiting-training"

    def ready(self, t):
        return not self.active and t - self.d + 1 >= self.theta

    def retrain(self, window, t):
        seed = derive_seed(self.config.seed, "forest", self.index, self.retrain_count)
        self.model = train(window, self.schema, self.config.tree_count, seed)
        self.retrain_count += 1
        self.training_windows.append((t, window[0].timestamp, len(window)))
        self.scores.clear()
        self.betting.reset()
        self.martingale.reset()
        self.active = True

    def _votes(self, x, ahead):
        if ahead is None:
            return self.model.votes_encoded(x)
        block, X, row = ahead
        c = self._cache
        if c is None or c[0] is not self.model or c[1] != block:
            c = self._cache = (self.model, block, row, self.model.votes_many(X[row:]).tolist())
        return c[3][row - c[2]]

    def process(self, x, y, t, ahead=None):
        """Predict for encoded features ``x``, then consume label index ``y``.

        ``ahead`` is an optional ``(block id, encoded block, row)`` look-ahead
        that lets the current model score the rest of the block at once.
        Returns ``(pred, conf, pvalue, log_s, alarm)``.
        """
        votes = self._votes(x, ahead)
        total = self.model.tree_count
        pred = 0
        for c in range(1, len(votes)):
            if votes[c] > votes[pred]:
                pred = c
        conf = votes[pred] / total
        alpha = -votes[y] / total
        pv = self.scores.add(alpha, self.tiebreak.next())
        decision = self.betting.step(pv)
        mart = self.martingale
        mart.update(decision.value, t)
        alarm = mart.check_alarm()
        log_s = mart.log_s
        if alarm is not None:
            self.active = False
            self.d = alarm.anchor
            self.scores.clear()
            self.martingale.reset()
            self.betting.reset()
        return pred, conf, pv, log_s, alarm


class _Buffer:
    """Recent instances addressable by timestamp."""

    def __init__(self, capacity):
        self._items = deque(maxlen=capacity)

    def append(self, z):
        self._items.append(z)

    @property
    def oldest(self):
        return self._items[0].timestamp if self._items else None

    def window(self, start, length):
        first = self.oldest
        return list(itertools.islice(self._items, start - first, start - first + length))


class Ensemble:
    def __init__(self, config: EnsembleConfig, schema: FeatureSchema):
        self.config = config
        self.schema = schema
        self.classes = tuple(schema.classes)
        self._class_index = {c: i for i, c in enumerate(self.classes)}
        self.encoder = FeatureEncoder(schema)
        self.pipelines = [
            Pipeline(i + 1, theta, config, schema) for i, theta in enumerate(config.thetas)
        ]
        self._enabled = [p for p in self.pipelines if p.index not in set(config.disabled)]
        self.buffer = _Buffer(max(config.thetas) + config.buffer_cap)
        self.last_timestamp = None
        self._recorder = None

    def _label_index(self, label):
        try:
            return self._class_index[label]
        except KeyError:
            raise DataError(f"label {label!r} not in classes {self.classes}") from None

    def step(self, z, _ahead=None) -> VoteResult:
        t = z.timestamp
        if self.last_timestamp is None:
            # cold start: every pipeline's first training window begins here
            for pipe in self.pipelines:
                pipe.d = t
        elif t != self.last_timestamp + 1:
            raise OutOfOrderError(f"timestamp {t} after {self.last_timestamp}; expected consecutive")
        self.last_timestamp = t
        x = None if _ahead is not None else self.encoder.encode(z.features)
        y = self._label_index(z.label)
        self.buffer.append(z)

        P = len(self.pipelines)
        preds = [-1] * P
        confs = [math.nan] * P
        pvals = [math.nan] * P
        logs = [math.nan] * P
        voter_pred, voter_conf, voters, alarms, retrained = [], [], [], [], []

        for pipe in self._enabled:
            if not pipe.active:
                continue
            pred, conf, pv, log_s, alarm = pipe.process(x, y, t, _ahead)
            k = pipe.index - 1
            preds[k], confs[k], pvals[k], logs[k] = pred, conf, pv, log_s
            voter_pred.append(pred)
            voter_conf.append(conf)
            voters.append((pipe.index, self.classes[pred]))
            if alarm is not None:
                oldest = self.buffer.oldest
                if pipe.d < oldest:
                    log.warning(
                        "pipeline %d: anchor %d older than buffer; clamped to %d",
                        pipe.index, pipe.d, oldest,
                    )
                    pipe.d = oldest
                    alarm = alarm._replace(anchor=oldest)
                alarms.append((pipe.index, alarm))

        for pipe in self._enabled:
            if pipe.ready(t):
                pipe.retrain(self.buffer.window(pipe.d, pipe.theta), t)
                retrained.append(pipe.index)

        winner = _vote_index(voter_pred, voter_conf, len(self.classes))
        if self._recorder is not None:
            self._recorder.add(t, y, winner, preds, confs, pvals, logs, alarms, retrained)
        prediction = None if winner < 0 else self.classes[winner]
        return VoteResult(prediction, voters, alarms, retrained)

    def run(self, stream, block=512):
        """Process a whole stream, reading ``block`` instances ahead.

        Results are identical to calling :meth:`step` per instance; the
        look-ahead only lets each model score many instances per call.
        """
        self._recorder = _Recorder(len(self.pipelines))
        it = iter(stream)
        try:
            for block_id in itertools.count():
                chunk = list(itertools.islice(it, block))
                if not chunk:
                    break
                X = self.encoder.encode_many([z.features for z in chunk])
                for row, z in enumerate(chunk):
                    self.step(z, (block_id, X, row))
        finally:
            rec, self._recorder = self._recorder, None
        return rec.finish(self)


class _Recorder:
    def __init__(self, P):
        self.P = P
        self.t, self.y, self.ens = [], [], []
        self.preds, self.confs, self.pvals, self.logs = [], [], [], []
        self.alarms, self.retrains = [], []
        self.alarm_events = []

    def add(self, t, y, winner, preds, confs, pvals, logs, alarms, retrained):
        self.t.append(t)
        self.y.append(y)
        self.ens.append(winner)
        self.preds.append(preds)
        self.confs.append(confs)
        self.pvals.append(pvals)
        self.logs.append(logs)
        if alarms:
            row = [False] * self.P
            for idx, ev in alarms:
                row[idx - 1] = True
                self.alarm_events.append((idx, ev))
            self.alarms.append((len(self.t) - 1, row))
        if retrained:
            row = [False] * self.P
            for idx in retrained:
                row[idx - 1] = True
            self.retrains.append((len(self.t) - 1, row))

    def finish(self, ens):
        n, P = len(self.t), self.P

        def mat(rows, dtype, fill):
            return np.array(rows, dtype=dtype).reshape(n, P) if n else np.full((0, P), fill, dtype=dtype)

        alarms = np.zeros((n, P), dtype=bool)
        for i, row in self.alarms:
            alarms[i] = row
        retrains = np.zeros((n, P), dtype=bool)
        for i, row in self.retrains:
            retrains[i] = row
        return RunRecord(
            classes=ens.classes,
            thetas=tuple(p.theta for p in ens.pipelines),
            timestamps=np.array(self.t, dtype=np.int64),
            labels=np.array(self.y, dtype=np.int64),
            ensemble=np.array(self.ens, dtype=np.int64),
            preds=mat(self.preds, np.int64, -1),
            confs=mat(self.confs, float, math.nan),
            pvalues=mat(self.pvals, float, math.nan),
            log_s=mat(self.logs, float, math.nan),
            alarms=alarms,
            retrains=retrains,
            alarm_events=list(self.alarm_events),
            training_windows={p.index: list(p.training_windows) for p in ens.pipelines},
            config=ens.config.to_dict(),
        )


@dataclass
class RunRecord:
    """Everything a run produced, per instance and per pipeline.

    Class labels are stored as indices into ``classes``; ``-1`` marks an
    unavailable prediction.
    """

    classes: tuple
    thetas: tuple
    timestamps: np.ndarray
    labels: np.ndarray
    ensemble: np.ndarray
    preds: np.ndarray
    confs: np.ndarray
    pvalues: np.ndarray
    log_s: np.ndarray
    alarms: np.ndarray
    retrains: np.ndarray
    alarm_events: list = field(default_factory=list)
    training_windows: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.timestamps)

    @property
    def n_pipelines(self):
        return self.preds.shape[1]

    def same_as(self, other):
        arrays = ("timestamps", "labels", "ensemble", "preds", "confs", "pvalues", "log_s", "alarms", "retrains")
        return (
            self.classes == other.classes
            and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=a in ("confs", "pvalues", "log_s")) for a in arrays)
            and self.training_windows == other.training_windows
        )

    def to_csv(self, path):
        """One row per instance: labels, ensemble and per-pipeline outputs."""
        import csv

        P = self.n_pipelines
        header = ["timestamp", "label", "prediction"]
        header += [f"pred_{j + 1}" for j in range(P)]
        header += [f"conf_{j + 1}" for j in range(P)]
        header += [f"alarm_{j + 1}" for j in range(P)]

        def lab(i):
            return "NA" if i < 0 else self.classes[i]

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                row = [int(self.timestamps[i]), lab(self.labels[i]), lab(self.ensemble[i])]
                row += [lab(c) for c in self.preds[i].tolist()]
                row += ["NA" if math.isnan(c) else repr(c) for c in self.confs[i].tolist()]
                row += [int(a) for a in self.alarms[i].tolist()]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, classes):
        """Rebuild the prediction part of a record written by :meth:`to_csv`."""
        import csv

        classes = tuple(classes)
        lookup = {str(c): i for i, c in enumerate(classes)}
        lookup["NA"] = -1
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            P = sum(1 for h in header if h.startswith("pred_"))
            rows = list(reader)
        n = len(rows)
        try:
            t = np.array([int(r[0]) for r in rows], dtype=np.int64)
            y = np.array([lookup[r[1]] for r in rows], dtype=np.int64)
            ens = np.array([lookup[r[2]] for r in rows], dtype=np.int64)
            preds = np.array([[lookup[v] for v in r[3:3 + P]] for r in rows], dtype=np.int64).reshape(n, P)
            confs = np.array(
                [[math.nan if v == "NA" else float(v) for v in r[3 + P:3 + 2 * P]] for r in rows]
            ).reshape(n, P)
            alarms = np.array([[v == "1" for v in r[3 + 2 * P:3 + 3 * P]] for r in rows], dtype=bool).reshape(n, P)
        except (KeyError, ValueError, IndexError) as err:
            raise DataError(f"{path}: malformed run record ({err})") from None
        nan = np.full((n, P), math.nan)
        return cls(classes, tuple([None] * P), t, y, ens, preds, confs, nan, nan.copy(), alarms, np.zeros((n, P), dtype=bool))


def run(stream, config: EnsembleConfig, schema: FeatureSchema) -> RunRecord:
    """Drive a fresh ensemble over ``stream`` and record everything."""
    return Ensemble(config, schema).run(stream)
