"""Link-sign prediction on signed bipartite graphs with personalized and low-rank propagation."""

from .data import EdgeSplit, RawDataset, load_edge_list, split, synth_graph, training_graph
from .encoder import EncoderConfig, encode, encoder_vjp, rmp_encode, spmp_encode
from .graph import NormalizedGraph, Sign, SignedBiadjacency, SignedEdge, build_graph, normalize
from .lowrank import LowRankStore, SvdFactors, preprocess, randomized_svd, rmp_apply, target_rank
from .metrics import EvalReport, auc_roc, evaluate, f1_suite
from .model import HyperParams, ModelParams, TrainedModel, fit

__version__ = "0.1.0"
