"""Collectives over the virtual cluster: pipelined state scan, gather, reduce.

The state-scan collective (``all_scan``) runs on a chain. The source rank
streams its state in K blocks split along the key dimension; every other rank
receives a block, applies the decay-weighted update

    scanned_block = exp(cumdecay_block) (x) recv_block + local_block,

and immediately forwards the updated block. Each non-terminal rank therefore
sends exactly one state's worth of elements regardless of K and P. The source
additionally pays one block-serialization slot per block for reading the block
out of local memory, which makes the makespan on an idle cluster exactly

    (K + P - 1) * tau(S / K).

All-gather timing uses a ring schedule of (P - 1) full-state steps; all-reduce
uses ring reduce-scatter plus all-gather over near-equal integer chunks. Both
are modeled schedules (events and ledger counts), not routed over the chain
channels; their volume accounting is the contract that matters.

Because the simulator is single-process, a "collective call" takes every
rank's argument at once (one list entry per rank) and returns per-rank results.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cluster import VirtualCluster
from .errors import ConfigError, DimsError
from .gla import CumDecay, State


class ScanDirection(Enum):
    FWD = "fwd"
    BWD = "bwd"


@dataclass(frozen=True)
class PipelineConfig:
    """Number of blocks the scanned state is split into, plus an optional
    per-block update cost for sensitivity studies (zero by default, matching a
    communication-only model)."""

    num_blocks: int = 1
    block_update_cost: float = 0.0

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ConfigError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.block_update_cost < 0.0:
            raise ConfigError("block_update_cost must be >= 0")


def _check_collective_shapes(cluster, values, what):
    if len(values) != cluster.num_ranks:
        raise DimsError(
            f"{what}: got {len(values)} entries for {cluster.num_ranks} ranks"
        )
    shape = values[0].shape
    for i, v in enumerate(values):
        if v.shape != shape:
            raise DimsError(f"{what}: rank {i} has shape {v.shape}, rank 0 has {shape}")


def all_scan(
    cluster: VirtualCluster,
    local_states: list[State],
    cumdecays: list[CumDecay],
    pipe: PipelineConfig,
    direction: ScanDirection,
):
    """Pipelined exclusive scan of states along the rank chain.

    FWD scans from rank 0 toward rank P-1, BWD the other way. Returns
    ``(recv, scanned)`` lists: ``recv[p]`` is the exclusive scan over the ranks
    before p in scan order (zeros at the source) and ``scanned[p]`` folds in
    rank p's own state. Numeric results are bit-identical for every valid K;
    only the virtual timeline depends on K.
    """
    P = cluster.num_ranks
    vals = [s.values for s in local_states]
    _check_collective_shapes(cluster, vals, "all_scan states")
    h, ek, ev = vals[0].shape
    for i, cd in enumerate(cumdecays):
        if cd.log_values.shape != (h, ek):
            raise DimsError(f"all_scan cumdecay {i} has shape {cd.log_values.shape}")
    K = pipe.num_blocks
    if ek % K != 0:
        raise ConfigError(f"num_blocks {K} does not divide key dim {ek}")

    if P == 1:
        zeros = np.zeros_like(vals[0])
        return [State(zeros)], [State(vals[0].copy())]

    blk = ek // K
    slices = [slice(b * blk, (b + 1) * blk) for b in range(K)]
    block_elements = h * blk * ev
    tau_b = cluster.net.tau(block_elements)

    chain = list(range(P)) if direction is ScanDirection.FWD else list(range(P - 1, 0 - 1, -1))
    recv_vals: list[np.ndarray] = [None] * P  # type: ignore[list-item]
    scanned_vals: list[np.ndarray] = [np.empty_like(vals[0]) for _ in range(P)]

    def update_block(p, sl, recv_block):
        gate = np.exp(cumdecays[p].log_values[:, sl])[:, :, None]
        scanned_vals[p][:, sl, :] = gate * recv_block + vals[p][:, sl, :]

    src = chain[0]
    recv_vals[src] = np.zeros_like(vals[0])
    t0 = cluster.clocks[src]
    for b, sl in enumerate(slices):
        update_block(src, sl, recv_vals[src][:, sl, :])
        # Reading the block out of local memory occupies one serialization
        # slot before the send can start; this is what puts the source K block
        # times ahead of the sink.
        ready = cluster.side_event(src, t0 + b * tau_b, tau_b, f"all_scan:stage[{b}]", stream="net")
        cluster.p2p_send(src, chain[1], scanned_vals[src][:, sl, :].copy(),
                         primitive="all_scan", not_before=ready)

    for i in range(1, P):
        p = chain[i]
        received = []
        for b, sl in enumerate(slices):
            block = cluster.p2p_recv(p, chain[i - 1], primitive="all_scan",
                                     label=f"recv:all_scan[{b}]")
            received.append(block)
            update_block(p, sl, block)
            if pipe.block_update_cost > 0.0:
                cluster.compute(p, pipe.block_update_cost, f"all_scan:update[{b}]")
            if i < P - 1:
                cluster.p2p_send(p, chain[i + 1], scanned_vals[p][:, sl, :].copy(),
                                 primitive="all_scan", not_before=None)
        recv_vals[p] = np.concatenate(received, axis=1)

    return [State(r) for r in recv_vals], [State(s) for s in scanned_vals]


def all_gather(cluster: VirtualCluster, values: list[np.ndarray],
               primitive: str = "all_gather") -> list[np.ndarray]:
    """Every rank ends up with all P tensors in rank order."""
    return all_gather_grouped(cluster, {primitive: values})[primitive]


def all_gather_grouped(cluster: VirtualCluster,
                       groups: dict[str, list[np.ndarray]]) -> dict[str, list[np.ndarray]]:
    """Ring all-gather of several tensor groups fused into one round.

    The groups share the (P - 1) ring steps, so the per-message latency is paid
    once, while the ledger attributes each group's elements under its own
    primitive name.
    """
    P = cluster.num_ranks
    for name, values in groups.items():
        _check_collective_shapes(cluster, values, name)
    if P == 1:
        return {name: [values[0].copy()] for name, values in groups.items()}

    per_rank = {name: int(values[0].size) for name, values in groups.items()}
    total = sum(per_rank.values())
    step = cluster.net.tau(total)
    t0 = max(cluster.clocks)
    for r in range(P):
        for s in range(P - 1):
            cluster.side_event(r, t0 + s * step, step, f"all_gather:step[{s}]", stream="net")
        for name, elements in per_rank.items():
            cluster._count_sent(r, name, (P - 1) * elements)
            cluster._count_received(r, name, (P - 1) * elements)
        cluster.join(r, t0 + (P - 1) * step)
    return {name: [v.copy() for v in values] for name, values in groups.items()}


def all_reduce(cluster: VirtualCluster, values: list[np.ndarray]) -> np.ndarray:
    """Elementwise sum across ranks, ring reduce-scatter plus all-gather."""
    _check_collective_shapes(cluster, values, "all_reduce")
    result = functools.reduce(np.add, values[1:], values[0].copy())
    P = cluster.num_ranks
    if P == 1:
        return result

    total = int(values[0].size)
    base, rem = divmod(total, P)
    sizes = [base + (1 if i < rem else 0) for i in range(P)]
    step = cluster.net.tau(max(sizes))
    t0 = max(cluster.clocks)
    for r in range(P):
        sent = received = 0
        for s in range(P - 1):  # reduce-scatter
            sent += sizes[(r - s) % P]
            received += sizes[(r - s - 1) % P]
        for s in range(P - 1):  # all-gather of reduced chunks
            sent += sizes[(r - s + 1) % P]
            received += sizes[(r - s) % P]
        for s in range(2 * (P - 1)):
            cluster.side_event(r, t0 + s * step, step, f"all_reduce:step[{s}]", stream="net")
        cluster._count_sent(r, "all_reduce", sent)
        cluster._count_received(r, "all_reduce", received)
        cluster.join(r, t0 + 2 * (P - 1) * step)
    return result
