"""Serialization of metrics, logs and traces into minute-aligned data channels."""

from .channels import (MODALITY_INDEX, TRACE_FEATURES, DataChannel, Modality, align_clocks,
                       metric_series, normalize_metric, trace_window_stats, window_counts)
from .drain import WILDCARD, DrainParser, LogTemplate, parse_log, tokenize
from .state import (ChannelMatrix, SerializerConfig, SerializerState, fit_serializer,
                    instance_grid)
from .templates import (HashingEmbedder, TemplateCluster, assign_template, cluster_templates,
                        embed_template, medoid_index)

__all__ = [
    "MODALITY_INDEX", "TRACE_FEATURES", "DataChannel", "Modality", "align_clocks", "metric_series",
    "normalize_metric", "trace_window_stats", "window_counts", "WILDCARD", "DrainParser",
    "LogTemplate", "parse_log", "tokenize", "ChannelMatrix", "SerializerConfig", "SerializerState",
    "fit_serializer", "instance_grid", "HashingEmbedder", "TemplateCluster", "assign_template",
    "cluster_templates", "embed_template", "medoid_index",
]
