"""Two-view deep embedded clustering with a joint target, cross-view alignment and balance terms."""

__version__ = "0.1.0"

from .align import ClusterCorrespondence, align_views, hungarian, linear_assignment
from .data import PairedDataset, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigurationError, DataError, JeclError, StateError, TrainingError
from .kmeans import CentroidSet, kmeans
from .metrics import ClusterReport, accuracy, ari, cluster_report, nmi
from .objective import LossBreakdown, LossConfig, soft_assign, target_distribution, total_loss
from .pretrain import SdaeConfig, load_encoder, pretrain_view, save_encoder
from .trainer import JeclConfig, TrainConfig, fit, initialize, run_single_view, train

__all__ = [
    "CentroidSet",
    "ClusterCorrespondence",
    "ClusterReport",
    "ConfigurationError",
    "DataError",
    "JeclConfig",
    "JeclError",
    "LossBreakdown",
    "LossConfig",
    "PairedDataset",
    "SdaeConfig",
    "StateError",
    "TrainConfig",
    "TrainingError",
    "accuracy",
    "align_views",
    "ari",
    "cluster_report",
    "fit",
    "generate_synthetic",
    "hungarian",
    "initialize",
    "kmeans",
    "linear_assignment",
    "load_dataset",
    "load_encoder",
    "nmi",
    "pretrain_view",
    "run_single_view",
    "save_dataset",
    "save_encoder",
    "soft_assign",
    "target_distribution",
    "total_loss",
    "train",
]
