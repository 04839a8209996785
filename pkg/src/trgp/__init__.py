"""Continual learning with trust-region gradient projection.

A fixed-capacity fully connected network learns a sequence of tasks. After
each task, the inputs every layer saw are distilled into a low-rank
orthonormal basis; later tasks train with gradients projected orthogonal to
the union of those bases, which freezes each old task's in-subspace weight
component. On top of that protection, each new task picks the old tasks its
gradients overlap most (its trust region) and learns small scaling matrices
that re-weight the frozen component inside those subspaces, transferring
knowledge forward without touching the shared weights.
"""

from .benchmarks import (
    BaseDataset,
    MetricsReport,
    Split,
    Task,
    TaskStream,
    backward_transfer,
    compute_metrics,
    gen_permuted_stream,
    gen_sign_flip_pair,
    gen_split_synthetic,
    load_idx,
    run_experiment,
)
from .config import RunConfig, StreamConfig, build_run_config, build_stream
from .linalg import SvdResult, frobenius_norm, project_onto_basis, svd_thin
from .network import (
    ForwardTrace,
    LayerGradients,
    ModelState,
    ScaledProjection,
    backward,
    effective_weight,
    forward_with_trace,
    init_mlp,
    project_gradient,
)
from .subspace import (
    LayerBasis,
    MergedBasis,
    RepresentationMatrix,
    SubspaceStore,
    collect_representations,
    extract_basis_first_task,
    extract_basis_later_task,
    merge_into_global,
)
from .trainers import (
    TaskArtifacts,
    TrainerConfig,
    evaluate_accuracy,
    finalize_task,
    frozen_projection_drift,
    train_joint,
    train_task_gpm,
    train_task_sgd,
    train_task_trgp,
)
from .trust_region import (
    TrustRegionSelection,
    probe_gradient,
    projection_ratio,
    select_top_k,
)

__version__ = "0.1.0"

__all__ = [
    "BaseDataset", "ForwardTrace", "LayerBasis", "LayerGradients",
    "MergedBasis", "MetricsReport", "ModelState", "RepresentationMatrix",
    "RunConfig", "ScaledProjection", "Split", "StreamConfig", "SubspaceStore",
    "SvdResult", "Task", "TaskArtifacts", "TaskStream", "TrainerConfig",
    "TrustRegionSelection", "backward", "backward_transfer",
    "build_run_config", "build_stream", "collect_representations",
    "compute_metrics", "effective_weight", "evaluate_accuracy",
    "extract_basis_first_task", "extract_basis_later_task", "finalize_task",
    "forward_with_trace", "frobenius_norm", "frozen_projection_drift",
    "gen_permuted_stream", "gen_sign_flip_pair", "gen_split_synthetic",
    "init_mlp", "load_idx", "merge_into_global", "probe_gradient",
    "project_gradient", "project_onto_basis", "projection_ratio",
    "run_experiment", "select_top_k", "svd_thin", "train_joint",
    "train_task_gpm", "train_task_sgd", "train_task_trgp",
]
