"""Sequence-parallel forward and backward runs under four strategies.

A full-length sequence is split across P ranks, each holding a contiguous
token range. The strategies differ only in how the chunk-boundary state (and
its gradient, going backward) crosses rank boundaries:

  * zeco:   every rank scans its chunks locally, then a pipelined scan
            collective delivers each rank its incoming global state while a
            second stream precomputes the intra-chunk work; outputs apply the
            correction lazily.
  * lasp1:  a strictly serial chain; each rank waits for its predecessor's
            final state, computes everything, then forwards its own.
  * lasp2:  every rank scans locally in parallel, all final states (plus the
            per-rank total decay vectors, fused into the same round) are
            all-gathered, and each rank reduces its predecessors' states with
            decay weights.
  * single: the whole sequence on one device; the equivalence baseline.

All strategies run the same kernels with the same boundary values, so their
numeric outputs and gradients agree with the single-device run to float64
scan-reordering error. Virtual time charges a configurable constant per chunk
for each compute phase (scan, intra, outputs; plus one more phase going
backward) and a per-state constant for lasp2's gather reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cluster import NetConfig, VirtualCluster, VirtualTimeline, VolumeLedger, create_cluster
from .collectives import PipelineConfig, ScanDirection, all_gather_grouped, all_scan
from .errors import ConfigError, LayoutError, StateError
from .gla import (
    CumDecay,
    GradShard,
    ModelDims,
    SeqShard,
    ShardLayout,
    State,
    backward,
    forward_outputs,
    global_correct,
    local_state_scan,
    recurrent_forward,
    reverse_boundary_scan,
)


class StrategyKind(Enum):
    ZECO = "zeco"
    LASP1 = "lasp1"
    LASP2 = "lasp2"
    SINGLE_DEVICE = "single"


@dataclass(frozen=True)
class ComputeCosts:
    """Virtual compute charges: seconds per chunk per phase, and per state
    update in gather reductions. The defaults make local compute visible next
    to the default network model without dominating it."""

    per_chunk: float = 1e-5
    per_state: float = 0.0

    def __post_init__(self):
        if self.per_chunk < 0.0 or self.per_state < 0.0:
            raise ConfigError("compute costs must be >= 0")


DEFAULT_COSTS = ComputeCosts()

FORWARD_PHASES = 3   # local scan, intra precompute, outputs
BACKWARD_PHASES = 4  # reverse scan, state recompute, intra grads, assembly


@dataclass
class GlobalSequence:
    """Full-length inputs plus the per-rank layout they will be split under."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    g: np.ndarray
    num_ranks: int
    layout: ShardLayout  # per-rank view
    dims: ModelDims

    def __post_init__(self):
        if self.num_ranks < 1:
            raise LayoutError(f"num_ranks must be >= 1, got {self.num_ranks}")
        total = self.num_ranks * self.layout.seq_len
        if self.q.shape[1] != total:
            raise LayoutError(
                f"sequence length {self.q.shape[1]} != num_ranks * per-rank length {total}"
            )

    @property
    def total_len(self) -> int:
        return self.num_ranks * self.layout.seq_len


def split(seq: GlobalSequence) -> list[SeqShard]:
    """Contiguous per-rank shards; concatenating them reproduces the sequence."""
    L = seq.layout.seq_len
    shards = []
    for p in range(seq.num_ranks):
        sl = slice(p * L, (p + 1) * L)
        shards.append(SeqShard(
            q=seq.q[:, sl], k=seq.k[:, sl], v=seq.v[:, sl], g=seq.g[:, sl],
            layout=seq.layout, dims=seq.dims,
        ))
    return shards


@dataclass
class SavedForward:
    """What the backward pass needs from the forward run."""

    strategy: StrategyKind
    prev_states: list[State]
    final_states: list[State]
    total_log_decays: list[np.ndarray]
    local_states: list[list[State]] | None = None


@dataclass
class RunArtifacts:
    outputs: np.ndarray
    ledger: VolumeLedger
    timeline: VirtualTimeline
    boundary_states: list[list[State]]
    grads: GradShard | None = None
    saved: SavedForward | None = None


def _check_cluster(seq: GlobalSequence, strategy: StrategyKind,
                   cluster: VirtualCluster | None) -> VirtualCluster:
    if strategy is StrategyKind.SINGLE_DEVICE:
        if cluster is None:
            return create_cluster(1, NetConfig())
        if cluster.num_ranks != 1:
            raise ConfigError("single-device runs take a 1-rank cluster")
        return cluster
    if cluster is None:
        raise ConfigError(f"{strategy.value} requires a cluster")
    if cluster.num_ranks != seq.num_ranks:
        raise ConfigError(
            f"cluster has {cluster.num_ranks} ranks but sequence is split {seq.num_ranks} ways"
        )
    return cluster


def merged_shard(seq: GlobalSequence) -> SeqShard:
    return SeqShard(
        q=seq.q, k=seq.k, v=seq.v, g=seq.g,
        layout=ShardLayout(seq.total_len, seq.layout.chunk_len),
        dims=seq.dims,
    )


def _lasp2_prev_states(finals: list[np.ndarray], total_logs: list[np.ndarray]) -> list[State]:
    # Exclusive decay-weighted scan over rank order; every rank computes the
    # identical reduction from the gathered tensors.
    prev = np.zeros_like(finals[0])
    prevs = [State(prev.copy())]
    for q in range(len(finals) - 1):
        prev = np.exp(total_logs[q])[:, :, None] * prev + finals[q]
        prevs.append(State(prev.copy()))
    return prevs


def run_forward(
    seq: GlobalSequence,
    strategy: StrategyKind,
    cluster: VirtualCluster | None,
    pipe: PipelineConfig = PipelineConfig(),
    costs: ComputeCosts = DEFAULT_COSTS,
    save_all: bool = False,
) -> RunArtifacts:
    """Distributed forward pass; outputs cover the full sequence."""
    cluster = _check_cluster(seq, strategy, cluster)
    c = costs.per_chunk
    N = seq.layout.num_chunks
    P = seq.num_ranks

    if strategy is StrategyKind.SINGLE_DEVICE:
        shard = merged_shard(seq)
        n_total = shard.layout.num_chunks
        states, cumdecay = local_state_scan(shard)
        cluster.compute(0, n_total * c, "local_scan")
        cluster.compute(0, n_total * c, "intra_precompute")
        prev = State.zeros(seq.dims, dtype=seq.q.dtype)
        outputs = forward_outputs(shard, states, cumdecay, prev)
        cluster.compute(0, n_total * c, "outputs")
        saved = SavedForward(
            strategy=strategy, prev_states=[prev],
            final_states=[states[-1]],
            total_log_decays=[cumdecay[-1].log_values],
            local_states=[states] if save_all else None,
        )
        return RunArtifacts(
            outputs=outputs,
            ledger=cluster.read_ledger(),
            timeline=cluster.read_timeline(),
            boundary_states=[states],
            saved=saved,
        )

    shards = split(seq)
    zero = State.zeros(seq.dims, dtype=seq.q.dtype)
    out = np.empty((seq.dims.heads, seq.total_len, seq.dims.value_dim), dtype=seq.q.dtype)
    L = seq.layout.seq_len

    if strategy is StrategyKind.ZECO:
        scans = [local_state_scan(sh) for sh in shards]
        for r in range(P):
            cluster.compute(r, N * c, "local_scan")
        entry = list(cluster.clocks)
        finals = [scans[r][0][N] for r in range(P)]
        totals = [scans[r][1][N] for r in range(P)]
        prevs, scanneds = all_scan(cluster, finals, totals, pipe, ScanDirection.FWD)
        for r in range(P):
            intra_end = cluster.side_event(r, entry[r], N * c, "intra_precompute", stream="compute2")
            cluster.join(r, intra_end)
        for r in range(P):
            out[:, r * L:(r + 1) * L] = forward_outputs(shards[r], scans[r][0], scans[r][1], prevs[r])
            cluster.compute(r, N * c, "outputs")
        boundary = [global_correct(scans[r][0], scans[r][1], prevs[r]) for r in range(P)]
        saved = SavedForward(
            strategy=strategy, prev_states=prevs, final_states=scanneds,
            total_log_decays=[t.log_values for t in totals],
            local_states=[s[0] for s in scans] if save_all else None,
        )

    elif strategy is StrategyKind.LASP1:
        prevs, boundary, final_list, total_list, local_list = [], [], [], [], []
        for r in range(P):
            if r > 0:
                prev = State(cluster.p2p_recv(r, r - 1, primitive="p2p", label="recv:state"))
            else:
                prev = zero
            cluster.compute(r, N * c, "local_scan")
            states, cumdecay = local_state_scan(shards[r])
            cluster.compute(r, N * c, "intra_precompute")
            out[:, r * L:(r + 1) * L] = forward_outputs(shards[r], states, cumdecay, prev)
            cluster.compute(r, N * c, "outputs")
            corrected = global_correct(states, cumdecay, prev)
            if r < P - 1:
                cluster.p2p_send(r, r + 1, corrected[N].values, primitive="p2p", label="send:state")
            prevs.append(prev)
            boundary.append(corrected)
            final_list.append(corrected[N])
            total_list.append(cumdecay[N].log_values)
            local_list.append(states)
        saved = SavedForward(
            strategy=strategy, prev_states=prevs, final_states=final_list,
            total_log_decays=total_list,
            local_states=local_list if save_all else None,
        )

    elif strategy is StrategyKind.LASP2:
        scans = [local_state_scan(sh) for sh in shards]
        for r in range(P):
            cluster.compute(r, N * c, "local_scan")
        totals = [scans[r][1][N].log_values for r in range(P)]
        gathered = all_gather_grouped(cluster, {
            "all_gather": [scans[r][0][N].values for r in range(P)],
            "all_gather_cumdecay": totals,
        })
        prevs = _lasp2_prev_states(gathered["all_gather"], gathered["all_gather_cumdecay"])
        for r in range(P):
            if costs.per_state > 0.0 and P > 1:
                cluster.compute(r, math.log2(P) * costs.per_state, "state_reduce")
            cluster.compute(r, N * c, "intra_precompute")
            out[:, r * L:(r + 1) * L] = forward_outputs(shards[r], scans[r][0], scans[r][1], prevs[r])
            cluster.compute(r, N * c, "outputs")
        boundary = [global_correct(scans[r][0], scans[r][1], prevs[r]) for r in range(P)]
        saved = SavedForward(
            strategy=strategy, prev_states=prevs,
            final_states=[boundary[r][N] for r in range(P)],
            total_log_decays=totals,
            local_states=[s[0] for s in scans] if save_all else None,
        )

    else:
        raise ConfigError(f"unsupported strategy {strategy}")

    return RunArtifacts(
        outputs=out,
        ledger=cluster.read_ledger(),
        timeline=cluster.read_timeline(),
        boundary_states=boundary,
        saved=saved,
    )


def run_backward(
    seq: GlobalSequence,
    d_out: np.ndarray,
    strategy: StrategyKind,
    cluster: VirtualCluster | None,
    pipe: PipelineConfig,
    saved_artifacts: RunArtifacts,
    costs: ComputeCosts = DEFAULT_COSTS,
) -> RunArtifacts:
    """Distributed backward pass using state saved by ``run_forward``."""
    cluster = _check_cluster(seq, strategy, cluster)
    saved = saved_artifacts.saved
    if saved is None:
        raise StateError("backward requires artifacts from a forward run")
    if saved.strategy is not strategy:
        raise StateError(
            f"saved forward used {saved.strategy.value}, backward asked for {strategy.value}"
        )
    c = costs.per_chunk
    N = seq.layout.num_chunks
    P = seq.num_ranks
    zero = State.zeros(seq.dims, dtype=seq.q.dtype)

    if strategy is StrategyKind.SINGLE_DEVICE:
        shard = merged_shard(seq)
        n_total = shard.layout.num_chunks
        cluster.compute(0, n_total * c, "reverse_scan")
        cluster.compute(0, 2 * n_total * c, "grad_precompute")
        grads, _ = backward(
            shard, d_out, saved.prev_states[0], zero,
            saved_states=saved.local_states[0] if saved.local_states else None,
        )
        cluster.compute(0, n_total * c, "grad_outputs")
        return RunArtifacts(
            outputs=saved_artifacts.outputs,
            ledger=cluster.read_ledger(),
            timeline=cluster.read_timeline(),
            boundary_states=saved_artifacts.boundary_states,
            grads=grads,
            saved=saved,
        )

    shards = split(seq)
    L = seq.layout.seq_len
    douts = [d_out[:, r * L:(r + 1) * L] for r in range(P)]
    parts: list[GradShard] = [None] * P  # type: ignore[list-item]

    if strategy is StrategyKind.ZECO:
        revs = [reverse_boundary_scan(shards[r], douts[r]) for r in range(P)]
        for r in range(P):
            cluster.compute(r, N * c, "reverse_scan")
        entry = list(cluster.clocks)
        locals0 = [revs[r][0] for r in range(P)]
        totals = [CumDecay(saved.total_log_decays[r]) for r in range(P)]
        ds_nexts, _ = all_scan(cluster, locals0, totals, pipe, ScanDirection.BWD)
        for r in range(P):
            end = cluster.side_event(r, entry[r], 2 * N * c, "grad_precompute", stream="compute2")
            cluster.join(r, end)
        for r in range(P):
            parts[r], _ = backward(
                shards[r], douts[r], saved.prev_states[r], ds_nexts[r],
                saved_states=saved.local_states[r] if saved.local_states else None,
            )
            cluster.compute(r, N * c, "grad_outputs")

    elif strategy is StrategyKind.LASP1:
        for r in range(P - 1, -1, -1):
            if r < P - 1:
                ds_next = State(cluster.p2p_recv(r, r + 1, primitive="p2p", label="recv:dstate"))
            else:
                ds_next = zero
            cluster.compute(r, BACKWARD_PHASES * N * c, "rank_grad_work")
            parts[r], ds_bound = backward(
                shards[r], douts[r], saved.prev_states[r], ds_next,
                saved_states=saved.local_states[r] if saved.local_states else None,
            )
            if r > 0:
                cluster.p2p_send(r, r - 1, ds_bound.values, primitive="p2p", label="send:dstate")

    elif strategy is StrategyKind.LASP2:
        revs = [reverse_boundary_scan(shards[r], douts[r]) for r in range(P)]
        for r in range(P):
            cluster.compute(r, N * c, "reverse_scan")
        gathered = all_gather_grouped(
            cluster, {"all_gather": [revs[r][0].values for r in range(P)]}
        )["all_gather"]
        # Decay-weighted suffix reduction; total decays were saved in forward.
        ds_nexts: list[State] = [None] * P  # type: ignore[list-item]
        ds = np.zeros_like(gathered[0])
        ds_nexts[P - 1] = State(ds.copy())
        for r in range(P - 2, -1, -1):
            ds = gathered[r + 1] + np.exp(saved.total_log_decays[r + 1])[:, :, None] * ds
            ds_nexts[r] = State(ds.copy())
        for r in range(P):
            if costs.per_state > 0.0 and P > 1:
                cluster.compute(r, math.log2(P) * costs.per_state, "state_reduce")
            cluster.compute(r, 2 * N * c, "grad_precompute")
            parts[r], _ = backward(
                shards[r], douts[r], saved.prev_states[r], ds_nexts[r],
                saved_states=saved.local_states[r] if saved.local_states else None,
            )
            cluster.compute(r, N * c, "grad_outputs")

    else:
        raise ConfigError(f"unsupported strategy {strategy}")

    grads = GradShard(
        dq=np.concatenate([p.dq for p in parts], axis=1),
        dk=np.concatenate([p.dk for p in parts], axis=1),
        dv=np.concatenate([p.dv for p in parts], axis=1),
        dg=np.concatenate([p.dg for p in parts], axis=1),
    )
    return RunArtifacts(
        outputs=saved_artifacts.outputs,
        ledger=cluster.read_ledger(),
        timeline=cluster.read_timeline(),
        boundary_states=saved_artifacts.boundary_states,
        grads=grads,
        saved=saved,
    )


def ideal_makespan(strategy: StrategyKind, P: int, chunks_per_rank: int,
                   costs: ComputeCosts = DEFAULT_COSTS, backward_pass: bool = False) -> float:
    """Makespan of the same run with all communication removed."""
    phases = BACKWARD_PHASES if backward_pass else FORWARD_PHASES
    work = phases * chunks_per_rank * costs.per_chunk
    if strategy is StrategyKind.LASP1:
        return P * work
    if strategy is StrategyKind.SINGLE_DEVICE:
        return P * work  # all chunks on one device
    extra = math.log2(P) * costs.per_state if (strategy is StrategyKind.LASP2 and P > 1) else 0.0
    return work + extra


def overlap_schedule(t_local_scan: float, t_all_scan: float,
                     t_intra_precompute: float, t_outputs: float):
    """Compose the two-stream forward timeline for one rank.

    Total time is scan + max(collective, intra precompute) + outputs; the
    collective is fully hidden whenever the precompute stream is longer.
    """
    from .cluster import Event, VirtualTimeline

    for name, t in (("t_local_scan", t_local_scan), ("t_all_scan", t_all_scan),
                    ("t_intra_precompute", t_intra_precompute), ("t_outputs", t_outputs)):
        if t < 0.0:
            raise ConfigError(f"{name} must be >= 0, got {t}")
    events = []
    if t_local_scan > 0.0:
        events.append(Event(0, "local_scan", 0.0, t_local_scan, "compute"))
    if t_all_scan > 0.0:
        events.append(Event(0, "all_scan", t_local_scan, t_local_scan + t_all_scan, "net"))
    if t_intra_precompute > 0.0:
        events.append(Event(0, "intra_precompute", t_local_scan,
                            t_local_scan + t_intra_precompute, "compute2"))
    barrier = t_local_scan + max(t_all_scan, t_intra_precompute)
    if t_outputs > 0.0:
        events.append(Event(0, "outputs", barrier, barrier + t_outputs, "compute"))
    return VirtualTimeline(events=tuple(events))
