"""A deterministic virtual cluster: logical ranks, FIFO channels, virtual time.

Ranks are logical devices laid out on a chain; rank p owns channels to its
neighbors p-1 and p+1 in both directions. Message timing follows the
latency/bandwidth model

    tau(s) = latency_alpha + s / bandwidth_beta        (s in elements),

a message arrives tau(s) after its send starts, and a rank's egress port is
busy for tau(s) per message, so back-to-back sends from one rank are spaced by
tau of each message. Receives block in virtual time until the arrival instant.

Execution is a single-threaded schedule over per-rank clocks rather than real
concurrency: every operation stamps events against the owning rank's clock, so
ledgers, timelines, and numeric payloads are functions of the configuration and
inputs only. A receive finding no pending message is a global stall and raises
DeadlockError immediately. Side streams (the network port, a second compute
stream) may overlap a rank's main stream; events within one stream never
overlap.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DeadlockError, DimsError


@dataclass(frozen=True)
class NetConfig:
    """Latency/bandwidth network model; bandwidth is in elements per second."""

    latency_alpha: float = 0.0
    bandwidth_beta: float = 1e9
    element_bytes: int = 8  # informational only

    def __post_init__(self):
        if self.latency_alpha < 0.0:
            raise ConfigError(f"latency_alpha must be >= 0, got {self.latency_alpha}")
        if self.bandwidth_beta <= 0.0:
            raise ConfigError(f"bandwidth_beta must be > 0, got {self.bandwidth_beta}")

    def tau(self, elements: float) -> float:
        return self.latency_alpha + elements / self.bandwidth_beta


@dataclass(frozen=True)
class Event:
    rank: int
    label: str
    start: float
    end: float
    stream: str = "compute"


@dataclass(frozen=True)
class VirtualTimeline:
    """Immutable snapshot of all recorded events."""

    events: tuple[Event, ...]

    @property
    def makespan(self) -> float:
        return max((e.end for e in self.events), default=0.0)

    def for_rank(self, rank: int) -> tuple[Event, ...]:
        return tuple(e for e in self.events if e.rank == rank)

    def to_json_rows(self) -> list[dict]:
        return [
            {"rank": e.rank, "label": e.label, "start": e.start, "end": e.end}
            for e in self.events
        ]


@dataclass(frozen=True)
class LedgerRow:
    rank: int
    primitive: str
    sent_elements: int
    received_elements: int


@dataclass(frozen=True)
class VolumeLedger:
    """Per-rank, per-primitive element counts for all communication."""

    num_ranks: int
    rows: tuple[LedgerRow, ...] = field(default_factory=tuple)

    def sent(self, rank: int | None = None, primitive: str | None = None) -> int:
        return sum(
            r.sent_elements
            for r in self.rows
            if (rank is None or r.rank == rank) and (primitive is None or r.primitive == primitive)
        )

    def received(self, rank: int | None = None, primitive: str | None = None) -> int:
        return sum(
            r.received_elements
            for r in self.rows
            if (rank is None or r.rank == rank) and (primitive is None or r.primitive == primitive)
        )

    @property
    def total_sent(self) -> int:
        return self.sent()

    @property
    def total_received(self) -> int:
        return self.received()

    def to_csv_rows(self) -> list[dict]:
        return [
            {
                "rank": r.rank,
                "primitive": r.primitive,
                "sent_elements": r.sent_elements,
                "received_elements": r.received_elements,
            }
            for r in sorted(self.rows, key=lambda r: (r.rank, r.primitive))
        ]


class VirtualCluster:
    """P logical ranks with per-rank clocks, chain channels, and a ledger."""

    def __init__(self, num_ranks: int, net: NetConfig):
        if num_ranks < 1:
            raise ConfigError(f"need at least one rank, got {num_ranks}")
        self.num_ranks = num_ranks
        self.net = net
        self.clocks = [0.0] * num_ranks
        self._port_free = [0.0] * num_ranks
        # FIFO queues between chain neighbors, both directions.
        self._channels: dict[tuple[int, int], deque] = {}
        for p in range(num_ranks - 1):
            self._channels[(p, p + 1)] = deque()
            self._channels[(p + 1, p)] = deque()
        self._events: list[Event] = []
        self._sent: dict[tuple[int, str], int] = {}
        self._received: dict[tuple[int, str], int] = {}

    # -- bookkeeping -------------------------------------------------------

    def channels(self) -> list[tuple[int, int]]:
        return sorted(self._channels)

    def _check_rank(self, rank: int):
        if not 0 <= rank < self.num_ranks:
            raise ConfigError(f"rank {rank} out of range for {self.num_ranks} ranks")

    def _log(self, rank, label, start, end, stream):
        self._events.append(Event(rank=rank, label=label, start=start, end=end, stream=stream))

    def _count_sent(self, rank, primitive, elements):
        key = (rank, primitive)
        self._sent[key] = self._sent.get(key, 0) + elements

    def _count_received(self, rank, primitive, elements):
        key = (rank, primitive)
        self._received[key] = self._received.get(key, 0) + elements

    # -- virtual time ------------------------------------------------------

    def compute(self, rank: int, duration: float, label: str, stream: str = "compute") -> float:
        """Advance the rank's clock by ``duration`` and log the interval."""
        self._check_rank(rank)
        if duration < 0.0:
            raise ConfigError(f"negative compute duration {duration}")
        start = self.clocks[rank]
        self.clocks[rank] = start + duration
        if duration > 0.0:
            self._log(rank, label, start, self.clocks[rank], stream)
        return self.clocks[rank]

    def side_event(self, rank: int, start: float, duration: float, label: str, stream: str) -> float:
        """Log work on a parallel stream without touching the main clock."""
        self._check_rank(rank)
        if duration < 0.0:
            raise ConfigError(f"negative duration {duration}")
        if duration > 0.0:
            self._log(rank, label, start, start + duration, stream)
        return start + duration

    def join(self, rank: int, until: float):
        """Barrier: the rank's clock cannot be earlier than ``until``."""
        self._check_rank(rank)
        self.clocks[rank] = max(self.clocks[rank], until)

    # -- point to point ----------------------------------------------------

    def p2p_send(self, src: int, dst: int, payload: np.ndarray, primitive: str = "p2p",
                 label: str | None = None, not_before: float | None = None):
        """Enqueue a message; the sender's port serializes consecutive sends.

        ``not_before`` delays the send start past the clock/port constraints,
        e.g. until the payload has been staged.
        """
        self._check_rank(src)
        self._check_rank(dst)
        if src == dst:
            raise ConfigError("cannot send to self")
        if (src, dst) not in self._channels:
            raise ConfigError(f"no channel {src}->{dst}; ranks must be chain neighbors")
        elements = int(payload.size)
        start = max(self.clocks[src], self._port_free[src], not_before or 0.0)
        arrival = start + self.net.tau(elements)
        self._port_free[src] = arrival
        self._channels[(src, dst)].append((payload, arrival, elements))
        self._count_sent(src, primitive, elements)
        self._log(src, label or f"send:{primitive}", start, arrival, stream="net")

    def p2p_recv(self, at: int, src: int, primitive: str = "p2p", label: str | None = None):
        """Pop the next message from ``src``; blocks (in virtual time) until arrival.

        An empty channel means no sender can ever satisfy this receive in the
        single-threaded schedule, so it raises DeadlockError.
        """
        self._check_rank(at)
        self._check_rank(src)
        if (src, at) not in self._channels:
            raise ConfigError(f"no channel {src}->{at}; ranks must be chain neighbors")
        chan = self._channels[(src, at)]
        if not chan:
            raise DeadlockError(f"rank {at} waits on rank {src} with no pending message")
        payload, arrival, elements = chan.popleft()
        start = self.clocks[at]
        self.clocks[at] = max(start, arrival)
        self._count_received(at, primitive, elements)
        self._log(at, label or f"recv:{primitive}", start, self.clocks[at], stream="compute")
        return payload

    def pending_messages(self) -> int:
        return sum(len(c) for c in self._channels.values())

    # -- snapshots ---------------------------------------------------------

    def read_ledger(self) -> VolumeLedger:
        keys = sorted(set(self._sent) | set(self._received))
        rows = tuple(
            LedgerRow(
                rank=rank,
                primitive=primitive,
                sent_elements=self._sent.get((rank, primitive), 0),
                received_elements=self._received.get((rank, primitive), 0),
            )
            for rank, primitive in keys
        )
        return VolumeLedger(num_ranks=self.num_ranks, rows=rows)

    def read_timeline(self) -> VirtualTimeline:
        return VirtualTimeline(events=tuple(self._events))


def create_cluster(num_ranks: int, net: NetConfig) -> VirtualCluster:
    """Fresh cluster: empty channels, zeroed ledger, clocks at zero."""
    return VirtualCluster(num_ranks, net)


def read_ledger(cluster: VirtualCluster) -> VolumeLedger:
    return cluster.read_ledger()


def read_timeline(cluster: VirtualCluster) -> VirtualTimeline:
    return cluster.read_timeline()
