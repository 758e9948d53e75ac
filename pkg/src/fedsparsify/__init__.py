"""Federated averaging with progressive magnitude pruning.

Desk-scale simulator: a small exact-gradient network engine, a polynomial
sparsity schedule with never-resurrect masks, star-topology federated
training with communication accounting, heterogeneous data partitioning,
a membership-inference privacy audit, and a sparse inference benchmark.
"""

from ._kernels import available_backends, backend_name, set_backend
from .data import Dataset, EnvironmentKind, Partition, generate_synthetic, partition
from .federation import (
    CommLedger,
    FederationConfig,
    FederationResult,
    GlobalModelState,
    LearnerState,
    RoundMetrics,
    aggregate,
    local_train,
    run_centralized,
    run_federation,
    simulate_comm_ledger,
)
from .nn import (
    AvgPool,
    Batch,
    Conv,
    Dense,
    InstanceNorm,
    MaxPool,
    ModelSpec,
    Relu,
    backward,
    build_model,
    evaluate_mae,
    forward,
    masked_sgd_step,
    param_count,
    seven_block_cnn,
)
from .privacy import (
    AttackDataset,
    AttackModel,
    AttackReport,
    evaluate_attack,
    extract_features,
    federated_attack_matrix,
    train_attack,
)
from .serialization import SparseModelFile, load_model, save_model, spec_digest
from .sparse import BenchReport, CsrMatrix, SparseModel, benchmark, sparse_forward, to_dense, to_sparse
from .sparsify import PruneMask, SparsitySchedule, apply_mask, magnitude_mask, sparsity_at_round

__version__ = "0.1.0"
