"""Audit how much counterfactual and other post-hoc explanation methods disagree."""

__version__ = "0.1.0"

from .data import Dataset, FeatureSchema, SplitSpec, TabularEncoder, load_dataset, split_train_test  # noqa: E402
from .model import BaggedTreesClassifier, ForestConfig, PredictionModel, bridge_model, train_forest  # noqa: E402
from .cfgen import GeneratorConfig, Method, generate  # noqa: E402
from .explanations import Explanation, ExplanationSet  # noqa: E402
from .metrics import (feature_disagreement, jaccard, probe, relative_feature_exclusion,  # noqa: E402
                      relative_feature_span, scaled_l0)
from .analysis import ClassicalMDS, aggregate, boxplot_stats, classical_mds  # noqa: E402
from .pipeline import AuditConfig, run_audit  # noqa: E402

__all__ = [
    "Dataset", "FeatureSchema", "SplitSpec", "TabularEncoder", "load_dataset", "split_train_test",
    "BaggedTreesClassifier", "ForestConfig", "PredictionModel", "bridge_model", "train_forest",
    "GeneratorConfig", "Method", "generate", "Explanation", "ExplanationSet",
    "feature_disagreement", "jaccard", "probe", "relative_feature_exclusion", "relative_feature_span",
    "scaled_l0", "ClassicalMDS", "aggregate", "boxplot_stats", "classical_mds", "AuditConfig", "run_audit",
]
