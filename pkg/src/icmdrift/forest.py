"""Bagged decision trees ("treebagger") with vote-fraction posteriors.

Trees are induced with scikit-learn's CART (Gini, exhaustive midpoint
thresholds, grown until pure, no pruning) on a one-hot view of categorical
attributes, which makes every categorical split a one-vs-rest test. After
fitting, each tree is flattened into plain Python lists so single-instance
prediction is a cheap loop with no per-call validation overhead. Blocks of
instances go through scikit-learn's compiled ``apply`` instead.

Numeric features are rounded to float32 on encoding, because that is the
precision scikit-learn fits and compares thresholds at.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from ._random import derive_seed, make_rng
from .streams import Categorical, FeatureSchema, SchemaError

__all__ = [
    "FeatureEncoder",
    "Tree",
    "ForestModel",
    "PosteriorEstimate",
    "train",
    "predict_posterior",
    "predict_label",
]


class FeatureEncoder:
    """Maps a schema-conformant feature tuple to a flat numeric vector."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self._plan = []
        width = 0
        for attr in schema.attributes:
            if isinstance(attr, Categorical):
                self._plan.append({lvl: i for i, lvl in enumerate(attr.levels)})
                width += len(attr.levels)
            else:
                self._plan.append(None)
                width += 1
        self.width = width

    def encode(self, features):
        if len(features) != len(self._plan):
            raise SchemaError(
                f"expected {len(self._plan)} features, got {len(features)}"
            )
        out = []
        for plan, value in zip(self._plan, features):
            if plan is None:
                out.append(float(np.float32(value)))
            else:
                pos = plan.get(value)
                if pos is None:
                    raise SchemaError(f"unknown categorical level {value!r}")
                row = [0.0] * len(plan)
                row[pos] = 1.0
                out.extend(row)
        return out

    def encode_many(self, rows):
        return np.array([self.encode(r) for r in rows], dtype=float).reshape(-1, self.width)


@dataclass
class Tree:
    """One flattened CART tree. Leaves have ``left[i] == -1``."""

    feature: list
    threshold: list
    left: list
    right: list
    leaf_class: list  # class index voted by the leaf (-1 for split nodes)
    tallies: list  # per-node class counts from the bootstrap sample

    def leaf_of(self, x):
        feat, thr, left, right = self.feature, self.threshold, self.left, self.right
        node = 0
        while left[node] != -1:
            node = left[node] if x[feat[node]] <= thr[node] else right[node]
        return node

    def vote(self, x):
        return self.leaf_class[self.leaf_of(x)]


@dataclass(frozen=True)
class PosteriorEstimate:
    classes: tuple
    probs: tuple

    def prob(self, label):
        try:
            return self.probs[self.classes.index(label)]
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None

    def argmax(self):
        # ties go to the earlier (smaller) class
        best = 0
        for i, p in enumerate(self.probs):
            if p > self.probs[best]:
                best = i
        return self.classes[best]


@dataclass
class ForestModel:
    trees: list
    schema: FeatureSchema
    classes: tuple
    seed: int
    encoder: FeatureEncoder = field(repr=False, default=None)
    # compiled sklearn trees for block prediction (None for a lone leaf)
    compiled: list = field(repr=False, default=None)

    def __post_init__(self):
        if self.encoder is None:
            self.encoder = FeatureEncoder(self.schema)
        self._flat = [(t.feature, t.threshold, t.left, t.right, t.leaf_class) for t in self.trees]
        # finite input space: memoize votes per encoded input
        self._memo = {} if _input_space_size(self.schema) <= 100_000 else None

    @property
    def tree_count(self):
        return len(self.trees)

    def votes_encoded(self, x):
        """Per-class vote counts for an already-encoded feature vector."""
        memo = self._memo
        if memo is not None:
            key = tuple(x)
            hit = memo.get(key)
            if hit is None:
                hit = memo[key] = self._walk(x)
            return list(hit)
        return self._walk(x)

    def _walk(self, x):
        votes = [0] * len(self.classes)
        for feat, thr, left, right, cls in self._flat:
            node = 0
            while left[node] != -1:
                node = left[node] if x[feat[node]] <= thr[node] else right[node]
            votes[cls[node]] += 1
        return votes

    def votes_many(self, X):
        """Vote counts, shape ``(len(X), n_classes)``, for encoded rows ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float32)
        out = np.zeros((X.shape[0], len(self.classes)), dtype=np.int64)
        rows = np.arange(X.shape[0])
        compiled = self.compiled or [None] * len(self.trees)
        for tree, sk in zip(self.trees, compiled):
            if sk is None and tree.left[0] == -1:
                out[:, tree.leaf_class[0]] += 1
            elif sk is None:
                for i in range(X.shape[0]):
                    out[i, tree.vote(X[i])] += 1
            else:
                out[rows, np.asarray(tree.leaf_class)[sk.apply(X)]] += 1
        return out

    def votes(self, features):
        return self.votes_encoded(self.encoder.encode(features))

    def posterior(self, features):
        votes = self.votes(features)
        total = len(self.trees)
        return PosteriorEstimate(self.classes, tuple(v / total for v in votes))

    def to_json(self):
        """Debug dump; not a stable format."""
        return json.dumps(
            {
                "classes": list(self.classes),
                "seed": self.seed,
                "attributes": list(self.schema.names),
                "trees": [
                    {
                        "feature": t.feature,
                        "threshold": t.threshold,
                        "left": t.left,
                        "right": t.right,
                        "leaf_class": t.leaf_class,
                    }
                    for t in self.trees
                ],
            }
        )


def _input_space_size(schema):
    size = 1
    for attr in schema.attributes:
        if not isinstance(attr, Categorical):
            return float("inf")
        size *= len(attr.levels)
    return size


def _flatten(sk_tree, class_map, n_classes):
    tr = sk_tree.tree_
    left = tr.children_left.tolist()
    right = tr.children_right.tolist()
    feature = [f if f >= 0 else -1 for f in tr.feature.tolist()]
    threshold = tr.threshold.tolist()
    # value holds per-node class fractions (or counts in old sklearn); rescale
    value = tr.value[:, 0, :]
    weights = tr.weighted_n_node_samples
    sums = value.sum(axis=1, keepdims=True)
    counts = np.rint(value / np.where(sums > 0, sums, 1) * weights[:, None]).astype(int)
    tallies = []
    leaf_class = []
    for node in range(tr.node_count):
        full = [0] * n_classes
        for j, c in enumerate(counts[node].tolist()):
            full[class_map[j]] += c
        tallies.append(full)
        if left[node] == -1:
            best = 0
            for j in range(1, n_classes):
                if full[j] > full[best]:
                    best = j
            leaf_class.append(best)
        else:
            leaf_class.append(-1)
    return Tree(feature, threshold, left, right, leaf_class, tallies)


def train(instances, schema: FeatureSchema, tree_count=40, seed=0, classes=None):
    """Fit ``tree_count`` trees, each on a same-size bootstrap resample.

    ``classes`` fixes the label space (default: the schema's classes); a
    class absent from the training data simply receives no votes.
    """
    instances = list(instances)
    if not instances:
        raise ValueError("cannot train on an empty training set")
    if tree_count < 1:
        raise ValueError("tree_count must be >= 1")
    classes = tuple(schema.classes if classes is None else classes)
    index = {c: i for i, c in enumerate(classes)}
    try:
        y = np.array([index[z.label] for z in instances])
    except KeyError as err:
        raise SchemaError(f"training label {err.args[0]!r} not in classes {classes}") from None
    encoder = FeatureEncoder(schema)
    X = encoder.encode_many([z.features for z in instances])

    rng = make_rng(seed, "bootstrap")
    n = len(instances)
    trees = []
    compiled = []
    for b in range(tree_count):
        idx = rng.integers(0, n, size=n)
        yb = y[idx]
        present = np.unique(yb)
        if len(present) == 1:
            # sklearn cannot be fit meaningfully on one class; a lone leaf is the CART result anyway
            c = int(present[0])
            tally = [0] * len(classes)
            tally[c] = n
            trees.append(Tree([-1], [-2.0], [-1], [-1], [c], [tally]))
            compiled.append(None)
            continue
        clf = DecisionTreeClassifier(
            criterion="gini",
            splitter="best",
            min_samples_split=2,
            min_samples_leaf=1,
            random_state=derive_seed(seed, "cart", b),
        )
        clf.fit(X[idx], yb)
        class_map = [int(c) for c in clf.classes_]
        trees.append(_flatten(clf, class_map, len(classes)))
        compiled.append(clf.tree_)
    return ForestModel(trees, schema, classes, seed, encoder, compiled)


def predict_posterior(model: ForestModel, features) -> PosteriorEstimate:
    """Per-class fraction of trees voting for that class."""
    return model.posterior(features)


def predict_label(model: ForestModel, features):
    return model.posterior(features).argmax()
