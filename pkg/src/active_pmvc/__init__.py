"""Partial multi-view clustering by graph-contrastive autoencoders with cross-view graph transfer."""
from .dataio import MaskSpec, MultiViewDataset, generate_mask, generate_synthetic, load_dataset, normalize, save_dataset
from .evaluation import MetricsReport, accuracy, ari, evaluate, kmeans, nmi, nrmse
from .graph import RelationGraph, build_initial_graphs, build_learned_graphs, graph_error
from .losses import LossWeights
from .trainer import TrainConfig, TrainState, fine_tune_kl, train

__version__ = "0.1.0"
