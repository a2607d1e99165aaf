"""Closed-form communication and runtime models for the parallel strategies.

Times follow the latency/bandwidth message model tau(s) = alpha + s / beta.
With the state split into K pipeline blocks, the scan collective over P ranks
costs (K + P - 1) * tau(S / K); at alpha = 0 this is exactly
tau(S) + (P - 1) * tau(S) / K, i.e. one full-state serialization plus the
pipeline fill. A single rank communicates nothing, so the P = 1 cost is
defined as zero even though the closed form would evaluate to tau(S).

Strategy-level times, with t_ideal the per-rank compute time of a perfectly
parallel run and t_overlap the part of local compute that can hide the scan:

    zeco  = t_ideal - t_overlap + tau(S)
    lasp1 = P * (t_ideal + tau(S))          (strictly serial chain)
    lasp2 = t_ideal + P * tau(S)            (gather grows with P)

The volume/compute table uses multi-head sizes D = h * e with square per-head
states (e = e_k = e_v); volumes are in elements, compute in abstract op
counts. Two entries carry caveats recorded alongside the numbers: the lasp1
volume P*D*e counts the serialized execution order (each rank physically sends
D*e once), and the lasp2 volume P*D*e overstates the per-rank gather traffic,
which is (P-1)*D*e. The zeco compute row contains an N*d term whose d is read
as the model width D here; that reading is an assumption, flagged in the note.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cluster import NetConfig
from .errors import ConfigError
from .gla import ModelDims

METHODS = ("ulysses", "megatron_cp", "lasp1", "lasp2", "zeco")
SIMULATED_METHODS = ("zeco", "lasp1", "lasp2")


@dataclass(frozen=True)
class CostParams:
    net: NetConfig
    dims: ModelDims
    num_ranks: int
    pipeline_blocks: int = 1
    per_chunk_compute: float = 0.0
    chunks_per_rank: int = 1
    tokens_per_rank: int = 1

    def __post_init__(self):
        if self.num_ranks < 1:
            raise ConfigError(f"num_ranks must be >= 1, got {self.num_ranks}")
        if self.pipeline_blocks < 1:
            raise ConfigError(f"pipeline_blocks must be >= 1, got {self.pipeline_blocks}")
        if self.chunks_per_rank < 1 or self.tokens_per_rank < 1:
            raise ConfigError("chunks_per_rank and tokens_per_rank must be positive")
        if self.per_chunk_compute < 0.0:
            raise ConfigError("per_chunk_compute must be >= 0")

    @property
    def state_elements(self) -> int:
        return self.dims.state_elements


@dataclass(frozen=True)
class CostReport:
    """Predicted times per strategy plus the volume/compute table rows."""

    t_allscan: float
    t_zeco: float
    t_lasp1: float
    t_lasp2: float
    volumes: dict[str, float]
    computes: dict[str, float]


def tau(size: float, net: NetConfig) -> float:
    """Time to move ``size`` elements as one message."""
    if size < 0:
        raise ConfigError(f"message size must be >= 0, got {size}")
    return net.tau(size)


def t_allscan(params: CostParams) -> float:
    """Pipelined scan collective makespan; zero when there is a single rank."""
    P, K = params.num_ranks, params.pipeline_blocks
    if params.dims.key_dim % K != 0:
        raise ConfigError(f"pipeline_blocks {K} does not divide key dim {params.dims.key_dim}")
    if P == 1:
        return 0.0
    return (K + P - 1) * tau(params.state_elements / K, params.net)


def t_strategies(params: CostParams, t_ideal: float, t_overlap: float) -> CostReport:
    """Strategy-time model given the ideal per-rank compute and the overlappable part."""
    if t_overlap < 0.0 or t_ideal < 0.0:
        raise ConfigError("phase times must be >= 0")
    if t_overlap > t_ideal:
        raise ConfigError(f"t_overlap {t_overlap} exceeds t_ideal {t_ideal}")
    P = params.num_ranks
    ts = tau(params.state_elements, params.net)
    volumes, computes = {}, {}
    for method in METHODS:
        volumes[method], computes[method] = volume_compute_table(method, params)
    return CostReport(
        t_allscan=t_allscan(params),
        t_zeco=t_ideal - t_overlap + ts,
        t_lasp1=P * (t_ideal + ts),
        t_lasp2=t_ideal + P * ts,
        volumes=volumes,
        computes=computes,
    )


def volume_compute_table(method: str, params: CostParams):
    """Per-method (communication volume, computation cost) closed forms.

    Requires square per-head states; the table is stated in terms of D = h * e.
    """
    dims = params.dims
    if dims.key_dim != dims.value_dim:
        raise ConfigError("the unified table assumes e_k == e_v")
    e = dims.key_dim
    D = dims.heads * e
    P = params.num_ranks
    L = params.tokens_per_rank
    N = params.chunks_per_rank
    if method == "ulysses":
        return 4 * L * D, L * L * D * P
    if method == "megatron_cp":
        return 2 * P * L * D, L * L * D * P
    if method == "lasp1":
        return P * D * e, P * L * D * e
    if method == "lasp2":
        return P * D * e, L * D * e + math.log2(P) * D * e + N * D * e
    if method == "zeco":
        return D * e, L * D * e + N * D * e + N * D
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def table_note(method: str) -> str:
    """Caveat attached to a table row, empty when the row is unambiguous."""
    if method == "lasp1":
        return "volume counts serialized order; per-rank physical volume is D*e"
    if method == "lasp2":
        return "table volume P*D*e vs per-rank gather volume (P-1)*D*e"
    if method == "zeco":
        return "compute term N*d read with d = D"
    return ""


TABLE_COLUMNS = ("method", "P", "L", "D", "e", "N",
                 "volume_elements", "compute_ops", "t_model_seconds")


def table_rows(params: CostParams, methods=METHODS, report: CostReport | None = None):
    """Rows for the table CSV; time cells are empty for full-attention methods."""
    times = {}
    if report is not None:
        times = {"zeco": report.t_zeco, "lasp1": report.t_lasp1, "lasp2": report.t_lasp2}
    rows = []
    for method in methods:
        volume, compute = volume_compute_table(method, params)
        rows.append({
            "method": method,
            "P": params.num_ranks,
            "L": params.tokens_per_rank,
            "D": params.dims.heads * params.dims.key_dim,
            "e": params.dims.key_dim,
            "N": params.chunks_per_rank,
            "volume_elements": volume,
            "compute_ops": compute,
            "t_model_seconds": times.get(method, ""),
        })
    return rows
