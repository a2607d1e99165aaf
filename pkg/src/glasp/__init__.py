"""Sequence-parallel gated linear attention lab.

Exact chunkwise kernels with a token-level oracle, a simulated multi-rank
cluster with a pipelined state-scan collective, rival parallelization
strategies, and closed-form communication cost models.
"""

from .errors import (
    ConfigError,
    DeadlockError,
    DimsError,
    DomainError,
    LayoutError,
    PrecisionError,
    StateError,
    TensorFormatError,
)
from .gla import (
    ChunkScalings,
    CumDecay,
    GradShard,
    ModelDims,
    SeqShard,
    ShardLayout,
    State,
    backward,
    chunk_scalings,
    finite_diff_grad,
    forward_outputs,
    global_correct,
    local_state_scan,
    recurrent_forward,
    revcum,
)
from .cluster import (
    NetConfig,
    VirtualCluster,
    VirtualTimeline,
    VolumeLedger,
    create_cluster,
    read_ledger,
    read_timeline,
)
from .collectives import PipelineConfig, ScanDirection, all_gather, all_reduce, all_scan
from .costmodel import CostParams, CostReport, t_allscan, t_strategies, tau, volume_compute_table
from .engine import (
    ComputeCosts,
    GlobalSequence,
    RunArtifacts,
    StrategyKind,
    overlap_schedule,
    run_backward,
    run_forward,
    split,
)
from .instances import generate_sequence
from .reports import export_artifacts
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"
