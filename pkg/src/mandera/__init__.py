"""Rank-domain malicious node detection for federated learning."""

from ._validation import ValidationError
from .aggregation import (AggregationRule, RobustAggregator, aggregate, aggregate_mean, bulyan,
                          coordinate_median, krum_select, trimmed_mean)
from .attacks import (AttackKind, AttackSpec, apply_attack, apply_gaussian, apply_label_flip,
                      apply_sign_flip, apply_zero_gradient, benign_mean)
from .detect import DetectionResult, ManderaDetector, kmeans2, mandera, select_malicious
from .metrics import ConfusionCounts, box_stats, metrics
from .rank import NodeMoments, RankMoments, concat_epochs, node_moments, rank_column, rank_matrix

__all__ = [
    "AggregationRule", "AttackKind", "AttackSpec", "ConfusionCounts", "DetectionResult",
    "ManderaDetector", "NodeMoments", "RankMoments", "RobustAggregator", "ValidationError",
    "aggregate", "aggregate_mean", "apply_attack", "apply_gaussian", "apply_label_flip",
    "apply_sign_flip", "apply_zero_gradient", "benign_mean", "box_stats", "bulyan",
    "concat_epochs", "coordinate_median", "kmeans2", "krum_select", "mandera", "metrics",
    "node_moments", "rank_column", "rank_matrix", "select_malicious", "trimmed_mean",
]
