"""Concept-drift detection with inductive conformal martingales.

A treebagger ensemble whose pipelines each test exchangeability of their
conformal p-values with a CAUTIOUS betting martingale, and retrain from a
backward-anchored window when the martingale raises an alarm.
"""

__version__ = "0.1.0"

from .betting import BETTING_CONFIGS, CautiousBetting, CautiousConfig, betting_config
from .conformal import ScoreHistory, pvalue, score
from .ensemble import Ensemble, EnsembleConfig, RunRecord, run
from .evaluation import AccuracyEstimate, accuracy, subset_analysis, z_test
from .forest import ForestModel, train
from .martingale import MartingaleState
from .streams import (
    ConceptSchedule,
    FeatureSchema,
    LabeledInstance,
    NoiseSpec,
    generate_sea,
    generate_stagger,
    inject_label_noise,
    load_csv,
)

__all__ = [
    "BETTING_CONFIGS",
    "CautiousBetting",
    "CautiousConfig",
    "betting_config",
    "ScoreHistory",
    "pvalue",
    "score",
    "Ensemble",
    "EnsembleConfig",
    "RunRecord",
    "run",
    "AccuracyEstimate",
    "accuracy",
    "subset_analysis",
    "z_test",
    "ForestModel",
    "train",
    "MartingaleState",
    "ConceptSchedule",
    "FeatureSchema",
    "LabeledInstance",
    "NoiseSpec",
    "generate_sea",
    "generate_stagger",
    "inject_label_noise",
    "load_csv",
]
