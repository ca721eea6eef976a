"""Saliency-driven vision graph network with a verified float64 autodiff core."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .cluster import ClusterParams, aggregate_multihead, aggregate_single, cluster_block, cluster_centers, dispatch
from .data import DatasetError, DatasetSplit, load_dataset, synth_dataset
from .gradcheck import GradCheckReport, grad_check, model_grad_check
from .graph import (
    build_graph,
    dilated_select,
    dilation_rates,
    knn_adjacency,
    pairwise_sq_euclidean,
    saliency_adjacency,
)
from .metrics import MetricsReport, average_precision, confusion_matrix, evaluate, roc_auc
from .model import ConfigError, FViGModel, ModelConfig, count_params
from .optim import AdamW, cosine_lr
from .saliency import ChannelSaliencyParams, attention_normalize, channel_saliency_forward
from .tensor import ShapeError, Tensor
from .train import TrainConfig, cross_entropy, train

__version__ = "0.1.0"
