"""Sparse decomposition of graph neural network embeddings.

Each node's embedding is approximated by a sparse nonnegative combination of
transformed features of nearby nodes, ``theta_z^T phi(X; W)``, so serving a
node reads only the few feature rows its weight vector selects.
"""

from .candidates import CandidateConfig, CandidateSet, build_all, build_candidates
from .errors import DataError, NotDecomposedError, NumericalError, TrainingAborted
from .graph_store import (Graph, NormalizedAdjacency, load_graph, load_matrix, neighbors,
                          normalized_adjacency, save_matrix)
from .lasso import LassoProblem, SparseSolution, kkt_residual, solve_lars, solve_oracle
from .sampler import WalkConfig, build_theta0, estimate_row, sampling_probs, warm_up_phi
from .serving import (BenchRecord, FeatureTable, ServingBundle, bench, infer_embedding,
                      infer_predict, receptive_stats)
from .store import SparseWeightStore, load_store, save_store
from .targets import (DecoderConfig, DecoderParams, SageParams, decoder_fit, decoder_predict,
                      sage_forward, sgc_target)
from .trainer import (FitReport, Schedule, TrainConfig, equalize, fit, fit_multi, objective,
                      objective_dense, objective_multi, reconstruct)
from .transform import (GradientBundle, TransformParams, forward, forward_batch, gd_step,
                        phase_phi_loss_grad)

__all__ = [
    "bench", "BenchRecord", "build_all", "build_candidates", "build_theta0", "CandidateConfig",
    "CandidateSet", "DataError", "decoder_fit", "decoder_predict", "DecoderConfig",
    "DecoderParams", "equalize", "estimate_row", "FeatureTable", "fit", "fit_multi",
    "FitReport", "forward", "forward_batch", "gd_step", "GradientBundle", "Graph",
    "infer_embedding", "infer_predict", "kkt_residual", "LassoProblem", "load_graph",
    "load_matrix", "load_store", "neighbors", "normalized_adjacency", "NormalizedAdjacency",
    "NotDecomposedError", "NumericalError", "objective", "objective_dense", "objective_multi",
    "phase_phi_loss_grad", "receptive_stats", "reconstruct", "sage_forward", "SageParams",
    "sampling_probs", "save_matrix", "save_store", "Schedule", "ServingBundle", "sgc_target",
    "solve_lars", "solve_oracle", "SparseSolution", "SparseWeightStore", "TrainConfig",
    "TrainingAborted", "TransformParams", "WalkConfig", "warm_up_phi",
]

__version__ = "0.1.0"
