"""Graph Neural Additive Networks: interpretable additive models over graphs."""

from .datasets import SyntheticConfig, generate_synthetic, parse_dataset, read_geom_gcn, read_tudataset, write_dataset
from .estimator import GNANClassifier, GNANRegressor
from .exceptions import (ConfigError, ContractError, DataError, GnanError, GraphValidationError, NumericError,
                         ParseError, SchemaError, UndefinedMetricError)
from .explain import (bootstrap_bands, distance_curve, distance_curves, heatmap, node_contribution,
                      node_contributions, node_feature_influence, node_feature_influences, render_local_graph,
                      sample_shape_curves)
from .graph import UNREACHABLE, DistanceProfile, GraphInstance, all_pairs_distances, compute_profiles
from .model import (GnanModel, graph_logit, load_model, node_logits, node_representations_naive,
                    node_representations_tensor, predict_graph, predict_node, save_model)
from .training import PAPER_GRID, TaskData, TrainConfig, cross_validate, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "GraphInstance", "DistanceProfile", "UNREACHABLE", "all_pairs_distances", "compute_profiles",
    "GnanModel", "node_representations_naive", "node_representations_tensor", "node_logits",
    "graph_logit", "predict_node", "predict_graph", "save_model", "load_model",
    "TrainConfig", "TaskData", "fit", "evaluate", "cross_validate", "PAPER_GRID",
    "sample_shape_curves", "distance_curve", "distance_curves", "heatmap", "node_contribution",
    "node_contributions", "node_feature_influence", "node_feature_influences", "bootstrap_bands",
    "render_local_graph", "GNANClassifier", "GNANRegressor",
    "SyntheticConfig", "generate_synthetic", "parse_dataset", "write_dataset", "read_tudataset", "read_geom_gcn",
    "GnanError", "ConfigError", "DataError", "ParseError", "SchemaError", "GraphValidationError",
    "ContractError", "NumericError", "UndefinedMetricError",
]
