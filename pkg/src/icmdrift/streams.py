"""Benchmark streams: STAGGER and SEA generators, label noise, CSV ingestion.

All generators are lazy iterators of :class:`LabeledInstance`. Timestamps
start at 1 and increase by one per instance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

from ._random import make_rng

__all__ = [
    "Categorical",
    "Numeric",
    "FeatureSchema",
    "LabeledInstance",
    "ConceptSchedule",
    "NoiseSpec",
    "SchemaError",
    "DataError",
    "UnsupportedLabelError",
    "STAGGER_SCHEMA",
    "SEA_SCHEMA",
    "ELEC_SCHEMA",
    "STAGGER_RULES",
    "SEA_THRESHOLDS",
    "generate_stagger",
    "generate_sea",
    "inject_label_noise",
    "load_csv",
    "schema_from_csv",
    "write_csv",
]


class SchemaError(ValueError):
    """A feature vector or schema definition is inconsistent."""


class DataError(ValueError):
    """Input data could not be read or parsed."""


class UnsupportedLabelError(ValueError):
    pass


@dataclass(frozen=True)
class Categorical:
    name: str
    levels: tuple

    def __post_init__(self):
        if len(self.levels) == 0:
            raise SchemaError(f"categorical attribute {self.name!r} has no levels")

    def check(self, value):
        return value in self.levels


@dataclass(frozen=True)
class Numeric:
    name: str
    low: float = -math.inf
    high: float = math.inf

    def __post_init__(self):
        if not self.low < self.high:
            raise SchemaError(f"numeric attribute {self.name!r} needs low < high")

    def check(self, value):
        return self.low <= value <= self.high


@dataclass(frozen=True)
class FeatureSchema:
    attributes: tuple
    classes: tuple = (0, 1)

    def __post_init__(self):
        if len(self.attributes) == 0:
            raise SchemaError("schema needs at least one attribute")
        if len(self.classes) == 0:
            raise SchemaError("schema needs at least one class")

    @property
    def names(self):
        return tuple(a.name for a in self.attributes)

    def validate(self, features):
        if len(features) != len(self.attributes):
            raise SchemaError(
                f"expected {len(self.attributes)} features, got {len(features)}"
            )
        for attr, value in zip(self.attributes, features):
            if not attr.check(value):
                raise SchemaError(f"value {value!r} invalid for attribute {attr.name!r}")


class LabeledInstance(NamedTuple):
    timestamp: int
    features: tuple
    label: object


@dataclass(frozen=True)
class ConceptSchedule:
    """Sudden-drift schedule: ``concepts[i]`` is active on the i-th chunk."""

    concepts: tuple
    chunk_size: int
    cycle: bool = True

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if len(self.concepts) == 0:
            raise ValueError("schedule needs at least one concept")

    def concept_at(self, t):
        seg = (t - 1) // self.chunk_size
        if self.cycle:
            return self.concepts[seg % len(self.concepts)]
        return self.concepts[min(seg, len(self.concepts) - 1)]

    def drift_points(self, n):
        """Timestamps in ``1..n`` at which the active concept changes."""
        points = []
        for t in range(self.chunk_size + 1, n + 1, self.chunk_size):
            if self.concept_at(t) != self.concept_at(t - 1):
                points.append(t)
        return points


@dataclass(frozen=True)
class NoiseSpec:
    """Label noise.

    ``mode="flip"`` flips each binary label with probability ``rate``.
    ``mode="randomize"`` replaces the label, with probability ``rate``, by a
    class drawn uniformly from ``classes`` (so for two classes only half of
    the touched labels actually change).
    """

    rate: float
    seed: int = 0
    mode: str = "flip"
    classes: tuple = (0, 1)

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")
        if self.mode not in ("flip", "randomize"):
            raise ValueError(f"unknown noise mode {self.mode!r}")


# --- STAGGER -----------------------------------------------------------------

STAGGER_SCHEMA = FeatureSchema(
    attributes=(
        Categorical("size", ("small", "medium", "large")),
        Categorical("color", ("red", "green", "blue")),
        Categorical("shape", ("circle", "square", "triangle")),
    ),
    classes=(0, 1),
)

# The first three are the classic STAGGER concepts; "d" is an added fourth.
STAGGER_RULES: dict[str, Callable[[tuple], bool]] = {
    "a": lambda f: f[0] == "small" and f[1] == "red",
    "b": lambda f: f[1] == "green" or f[2] == "circle",
    "c": lambda f: f[0] == "medium" or f[0] == "large",
    "d": lambda f: f[1] == "blue" and f[2] == "square",
}

SEA_SCHEMA = FeatureSchema(
    attributes=(
        Numeric("f1", 0.0, 10.0),
        Numeric("f2", 0.0, 10.0),
        Numeric("f3", 0.0, 10.0),
    ),
    classes=(0, 1),
)

SEA_THRESHOLDS: dict[str, float] = {"a": 8.0, "b": 9.0, "c": 7.0, "d": 9.5}

ELEC_SCHEMA = FeatureSchema(
    attributes=tuple(
        Numeric(name)
        for name in ("nswprice", "nswdemand", "transfer", "vicprice", "vicdemand")
    ),
    classes=("DOWN", "UP"),
)

_BLOCK = 8192


def generate_stagger(n, schedule=None, seed=0, rules=None):
    """STAGGER stream of ``n`` instances.

    Attribute values are drawn uniformly from their levels; the label is 1
    when the concept active at the instance's timestamp holds.
    """
    if schedule is None:
        schedule = ConceptSchedule(("a", "b", "c", "d"), 10_000, cycle=True)
    rules = STAGGER_RULES if rules is None else rules
    missing = set(schedule.concepts) - set(rules)
    if missing:
        raise SchemaError(f"no STAGGER rule for concepts {sorted(missing)}")
    return _stagger_iter(int(n), schedule, seed, rules)


def _stagger_iter(n, schedule, seed, rules):
    rng = make_rng(seed, "features")
    levels = [a.levels for a in STAGGER_SCHEMA.attributes]
    t = 0
    while t < n:
        m = min(_BLOCK, n - t)
        idx = rng.integers(0, 3, size=(m, 3)).tolist()
        for row in idx:
            t += 1
            f = (levels[0][row[0]], levels[1][row[1]], levels[2][row[2]])
            rule = rules[schedule.concept_at(t)]
            yield LabeledInstance(t, f, 1 if rule(f) else 0)


def generate_sea(n, schedule=None, seed=0, thresholds=None):
    """SEA stream: label 1 iff ``f1 + f2 <= threshold`` of the active concept."""
    if schedule is None:
        schedule = ConceptSchedule(("a", "b", "c", "d"), 250_000, cycle=False)
    thresholds = SEA_THRESHOLDS if thresholds is None else thresholds
    missing = set(schedule.concepts) - set(thresholds)
    if missing:
        raise SchemaError(f"no SEA threshold for concepts {sorted(missing)}")
    return _sea_iter(int(n), schedule, seed, thresholds)


def sea_label(features, threshold):
    return 1 if features[0] + features[1] <= threshold else 0


def _sea_iter(n, schedule, seed, thresholds):
    rng = make_rng(seed, "features")
    t = 0
    while t < n:
        m = min(_BLOCK, n - t)
        block = rng.uniform(0.0, 10.0, size=(m, 3)).tolist()
        for row in block:
            t += 1
            f = tuple(row)
            yield LabeledInstance(t, f, sea_label(f, thresholds[schedule.concept_at(t)]))


def inject_label_noise(stream: Iterable[LabeledInstance], spec: NoiseSpec):
    """Apply label noise per ``spec``; features are never touched."""
    classes = tuple(spec.classes)
    if spec.mode == "flip" and len(classes) != 2:
        raise UnsupportedLabelError("label flipping needs exactly two classes")
    return _noise_iter(iter(stream), spec, classes)


def _noise_iter(stream, spec, classes):
    rng = make_rng(spec.seed, "noise")
    other = {classes[0]: classes[-1], classes[-1]: classes[0]}
    touch, pick = [], []
    pos = _BLOCK
    for z in stream:
        if pos >= _BLOCK:
            touch = (rng.random(_BLOCK) < spec.rate).tolist()
            pick = rng.integers(0, len(classes), _BLOCK).tolist()
            pos = 0
        hit, j = touch[pos], pick[pos]
        pos += 1
        if z.label not in classes:
            raise UnsupportedLabelError(f"label {z.label!r} not in {classes}")
        if not hit:
            yield z
        elif spec.mode == "flip":
            yield z._replace(label=other[z.label])
        else:
            yield z._replace(label=classes[j])


# --- CSV ---------------------------------------------------------------------


def _parse_label(raw, classes):
    if raw in classes:
        return raw
    for c in classes:
        if str(c) == raw:
            return c
    return None


def load_csv(path, schema: FeatureSchema, label_column, keep_columns=None):
    """Read a comma-separated stream with a header row, in file order.

    ``keep_columns`` selects the predictor columns (default: the schema's
    attribute names) and must line up with ``schema.attributes``. Errors
    (missing column, unparseable cell) are raised as :class:`DataError`;
    the header is checked eagerly, rows lazily.
    """
    keep = tuple(keep_columns) if keep_columns is not None else schema.names
    if len(keep) != len(schema.attributes):
        raise SchemaError("keep_columns must match the schema attributes")
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise DataError(f"{path}: empty file (no header row)") from None
    header = [h.strip() for h in header]
    cols = {}
    for name in (*keep, label_column):
        if name not in header:
            fh.close()
            raise DataError(f"{path}: missing column {name!r}")
        cols[name] = header.index(name)
    return _csv_rows(fh, reader, path, schema, keep, cols, label_column)


def _csv_rows(fh, reader, path, schema, keep, cols, label_column):
    feat_idx = [cols[c] for c in keep]
    lab_idx = cols[label_column]
    attrs = schema.attributes
    with fh:
        t = 0
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            t += 1
            feats = []
            for attr, i in zip(attrs, feat_idx):
                cell = row[i].strip() if i < len(row) else ""
                if isinstance(attr, Numeric):
                    try:
                        v = float(cell)
                    except ValueError:
                        raise DataError(
                            f"{path}: row {rowno}: cannot parse {cell!r} in column {attr.name!r}"
                        ) from None
                else:
                    v = cell
                if not attr.check(v):
                    raise DataError(
                        f"{path}: row {rowno}: value {cell!r} outside schema for {attr.name!r}"
                    )
                feats.append(v)
            raw = row[lab_idx].strip() if lab_idx < len(row) else ""
            label = _parse_label(raw, schema.classes)
            if label is None:
                raise DataError(f"{path}: row {rowno}: unknown label {raw!r}")
            yield LabeledInstance(t, tuple(feats), label)


def schema_from_csv(path, label_column, keep_columns, categorical=()):
    """Scan a CSV once to build a schema (levels, ranges and classes)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file (no header row)")
        levels = {c: set() for c in keep_columns if c in categorical}
        classes = set()
        for row in reader:
            for c in levels:
                levels[c].add(row[c].strip())
            classes.add(row[label_column].strip())
    attrs = []
    for c in keep_columns:
        if c in categorical:
            attrs.append(Categorical(c, tuple(sorted(levels[c]))))
        else:
            attrs.append(Numeric(c))
    labels = sorted(classes)
    try:
        labels = sorted(int(x) for x in labels)
    except ValueError:
        pass
    return FeatureSchema(tuple(attrs), tuple(labels))


def write_csv(stream: Iterable[LabeledInstance], path, schema: FeatureSchema):
    """Export a stream as ``features..., label`` with a header row."""
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*schema.names, "label"])
        for z in stream:
            w.writerow([*(repr(v) if isinstance(v, float) else v for v in z.features), z.label])
            count += 1
    return count
