"""Command-line harness: verify | bench | cost | volume.

Configuration comes from flags, optionally layered over a flat JSON config
file (flags win). All report output is deterministic for a fixed config and
seed: CSV or JSON with a stable column order and round-trip float rendering.

Exit status: 0 on success, 1 when a verification check fails, 2 on usage
errors (including invalid flag/config combinations).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields

import numpy as np

from .cluster import NetConfig, create_cluster
from .collectives import PipelineConfig, ScanDirection, all_gather, all_reduce, all_scan
from .costmodel import (
    METHODS,
    SIMULATED_METHODS,
    CostParams,
    t_allscan,
    t_strategies,
    table_note,
    table_rows,
    volume_compute_table,
)
from .engine import (
    DEFAULT_COSTS,
    FORWARD_PHASES,
    StrategyKind,
    merged_shard,
    ideal_makespan,
    run_backward,
    run_forward,
)
from .errors import ConfigError, DimsError, DomainError, LayoutError
from .gla import (
    CumDecay,
    ModelDims,
    ShardLayout,
    State,
    finite_diff_grad,
    recurrent_forward,
)
from .instances import generate_sequence
from .reports import render_report, write_report


@dataclass
class ExperimentConfig:
    strategy: str = "zeco"
    ranks: int = 4
    seq_per_rank: int = 4096
    chunk: int = 64
    heads: int = 2
    dk: int = 64
    dv: int = 64
    pipeline_blocks: int = 4
    seed: int = 0
    precision: str = "f64"
    net_alpha: float = 0.0
    net_beta: float = 1e9
    format: str = "csv"
    output: str | None = None
    warmup: int = 0
    repeats: int = 1

    def validate(self):
        if self.strategy not in {s.value for s in StrategyKind}:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.precision not in ("f64", "f32"):
            raise ConfigError(f"precision must be f64 or f32, got {self.precision!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit value")
        if self.warmup < 0 or self.repeats < 1:
            raise ConfigError("warmup must be >= 0 and repeats >= 1")
        if self.ranks < 1:
            raise ConfigError("ranks must be >= 1")
        # Raises LayoutError/DimsError on divisibility and positivity problems.
        ShardLayout(self.seq_per_rank, self.chunk)
        ModelDims(self.heads, self.dk, self.dv)
        if self.dk % self.pipeline_blocks != 0:
            raise ConfigError(
                f"pipeline_blocks {self.pipeline_blocks} does not divide dk {self.dk}"
            )
        NetConfig(latency_alpha=self.net_alpha, bandwidth_beta=self.net_beta)

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.heads, self.dk, self.dv)

    @property
    def net(self) -> NetConfig:
        return NetConfig(latency_alpha=self.net_alpha, bandwidth_beta=self.net_beta)

    @property
    def num_chunks(self) -> int:
        return self.seq_per_rank // self.chunk


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_INT_KEYS = {"ranks", "seq_per_rank", "chunk", "heads", "dk", "dv",
             "pipeline_blocks", "seed", "warmup", "repeats"}
_FLOAT_KEYS = {"net_alpha", "net_beta"}


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} has invalid value {value!r}")
    if not isinstance(value, str) and value is not None:
        raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
    return value


def _load_config_file(path: str) -> dict:
    try:
        raw = json.loads(open(path).read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a flat JSON object")
    merged = {}
    for key, value in raw.items():
        canon = key.replace("-", "_")
        if canon not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[canon] = _coerce(canon, value)
    return merged


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("experiment")
    g.add_argument("--strategy", choices=[s.value for s in StrategyKind])
    g.add_argument("--ranks", type=int)
    g.add_argument("--seq-per-rank", dest="seq_per_rank", type=int)
    g.add_argument("--chunk", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--dk", type=int)
    g.add_argument("--dv", type=int)
    g.add_argument("--pipeline-blocks", dest="pipeline_blocks", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--precision", choices=["f64", "f32"])
    g.add_argument("--net-alpha", dest="net_alpha", type=float)
    g.add_argument("--net-beta", dest="net_beta", type=float)
    g.add_argument("--format", choices=["csv", "json"])
    g.add_argument("--output", metavar="PATH")
    g.add_argument("--config", metavar="PATH")
    g.add_argument("--warmup", type=int)
    g.add_argument("--repeats", type=int)

    parser = argparse.ArgumentParser(
        prog="glasp",
        description="Sequence-parallel gated linear attention lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[shared],
                   help="check strategy equivalence and gradients; exit 1 on failure")
    bench = sub.add_parser("bench", parents=[shared],
                           help="simulated makespans and volumes for collectives and strategies")
    bench.add_argument("sweep", nargs="*", metavar="P[:K]",
                       help="rank counts to sweep, optionally with pipeline blocks")
    cost = sub.add_parser("cost", parents=[shared],
                          help="analytical volume/compute/time table")
    cost.add_argument("methods", nargs="*", metavar="METHOD",
                      help=f"methods to tabulate (default: all of {', '.join(METHODS)})")
    volume = sub.add_parser("volume", parents=[shared],
                            help="model vs ledger-measured communication volume")
    volume.add_argument("methods", nargs="*", metavar="METHOD",
                        help="simulated methods (default: zeco lasp1 lasp2)")
    return parser


def parse_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, then the config file, then explicit flags."""
    values = {}
    if args.config:
        values.update(_load_config_file(args.config))
    for name in _FIELD_TYPES:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


VERIFY_COLUMNS = ("check_name", "max_rel_err", "tolerance", "pass")

# Central differences at the configured size would need millions of forward
# passes, so the gradient check runs on this fixed probe instance instead;
# every other check uses the configured size.
GRADCHECK_PROBE = dict(ranks=2, seq_per_rank=8, chunk=4, heads=1, dk=4, dv=4,
                       step=1e-5, num_seeds=2)


def _gradcheck_fd(cfg: ExperimentConfig) -> float:
    p = GRADCHECK_PROBE
    dims = ModelDims(p["heads"], p["dk"], p["dv"])
    worst = 0.0
    for offset in range(p["num_seeds"]):
        seed = (cfg.seed + offset) % 2 ** 64
        seq = generate_sequence(p["ranks"], p["seq_per_rank"], p["chunk"], dims, seed=seed)
        rng = np.random.default_rng(seed + 1)
        d_out = rng.uniform(-1, 1, (dims.heads, seq.total_len, dims.value_dim))
        shard = merged_shard(seq)
        fd = finite_diff_grad(shard, d_out, step=p["step"])
        cluster = create_cluster(p["ranks"], cfg.net)
        fwd = run_forward(seq, StrategyKind.ZECO, cluster, PipelineConfig(1))
        bwd = run_backward(seq, d_out, StrategyKind.ZECO, create_cluster(p["ranks"], cfg.net),
                           PipelineConfig(1), fwd)
        for got, want in ((bwd.grads.dq, fd.dq), (bwd.grads.dk, fd.dk),
                          (bwd.grads.dv, fd.dv), (bwd.grads.dg, fd.dg)):
            worst = max(worst, _rel_err(got, want))
    return worst


def cmd_verify(cfg: ExperimentConfig) -> int:
    if cfg.precision != "f64":
        raise ConfigError("verify runs oracle comparisons and requires --precision f64")
    seq = generate_sequence(cfg.ranks, cfg.seq_per_rank, cfg.chunk, cfg.dims, seed=cfg.seed)
    pipe = PipelineConfig(cfg.pipeline_blocks)
    rng = np.random.default_rng(cfg.seed + 1)
    d_out = rng.uniform(-1, 1, (cfg.heads, seq.total_len, cfg.dv))

    oracle_out, oracle_bounds, _ = recurrent_forward(merged_shard(seq))
    single_fwd = run_forward(seq, StrategyKind.SINGLE_DEVICE, None, pipe)
    single_bwd = run_backward(seq, d_out, StrategyKind.SINGLE_DEVICE, None, pipe, single_fwd)

    rows = []

    def add(name, err, tol):
        rows.append({"check_name": name, "max_rel_err": float(err),
                     "tolerance": tol, "pass": err <= tol})

    add("fwd_single_vs_recurrent", _rel_err(single_fwd.outputs, oracle_out), 1e-10)

    strategies = [StrategyKind.ZECO, StrategyKind.LASP1, StrategyKind.LASP2]
    N = cfg.num_chunks
    for strategy in strategies:
        fwd = run_forward(seq, strategy, create_cluster(cfg.ranks, cfg.net), pipe)
        add(f"fwd_{strategy.value}_vs_single", _rel_err(fwd.outputs, single_fwd.outputs), 1e-10)
        if strategy is StrategyKind.ZECO:
            worst = 0.0
            for r, states in enumerate(fwd.boundary_states):
                for n, st in enumerate(states):
                    worst = max(worst, _rel_err(st.values, oracle_bounds[r * N + n].values))
            add("boundary_zeco_vs_recurrent", worst, 1e-12)
        bwd = run_backward(seq, d_out, strategy, create_cluster(cfg.ranks, cfg.net), pipe, fwd)
        err = max(
            _rel_err(bwd.grads.dq, single_bwd.grads.dq),
            _rel_err(bwd.grads.dk, single_bwd.grads.dk),
            _rel_err(bwd.grads.dv, single_bwd.grads.dv),
            _rel_err(bwd.grads.dg, single_bwd.grads.dg),
        )
        add(f"bwd_{strategy.value}_vs_single", err, 1e-10)

    add("gradcheck_fd_probe", _gradcheck_fd(cfg), 1e-5)

    write_report(render_report(rows, VERIFY_COLUMNS, cfg.format), cfg.output)
    return 0 if all(r["pass"] for r in rows) else 1


BENCH_COLUMNS = ("strategy", "P", "K", "L", "h", "ek", "ev",
                 "sim_makespan", "comm_exposed", "volume_sent", "volume_received")


def _parse_sweep(cfg: ExperimentConfig, specs: list[str]) -> list[tuple[int, int]]:
    if not specs:
        return [(cfg.ranks, cfg.pipeline_blocks)]
    points = []
    for spec in specs:
        head, _, tail = spec.partition(":")
        try:
            P = int(head)
            K = int(tail) if tail else cfg.pipeline_blocks
        except ValueError:
            raise ConfigError(f"bad sweep entry {spec!r}; expected P or P:K")
        if P < 1 or K < 1 or cfg.dk % K != 0:
            raise ConfigError(f"bad sweep entry {spec!r} for dk={cfg.dk}")
        points.append((P, K))
    return points


def _bench_collective_row(cfg, name, P, K):
    cluster = create_cluster(P, cfg.net)
    zeros_state = [State(np.zeros((cfg.heads, cfg.dk, cfg.dv))) for _ in range(P)]
    if name == "all_scan":
        cds = [CumDecay(np.zeros((cfg.heads, cfg.dk))) for _ in range(P)]
        all_scan(cluster, zeros_state, cds, PipelineConfig(K), ScanDirection.FWD)
    elif name == "all_gather":
        all_gather(cluster, [s.values for s in zeros_state])
    else:
        all_reduce(cluster, [s.values for s in zeros_state])
    ledger = cluster.read_ledger()
    makespan = cluster.read_timeline().makespan
    return {
        "strategy": name, "P": P, "K": K, "L": cfg.seq_per_rank,
        "h": cfg.heads, "ek": cfg.dk, "ev": cfg.dv,
        "sim_makespan": makespan, "comm_exposed": makespan,
        "volume_sent": max((ledger.sent(rank=r) for r in range(P)), default=0),
        "volume_received": max((ledger.received(rank=r) for r in range(P)), default=0),
    }


def _bench_strategy_row(cfg, strategy, P, K):
    dims = cfg.dims
    seq = generate_sequence(P, cfg.seq_per_rank, cfg.chunk, dims, seed=cfg.seed,
                            precision=cfg.precision)
    spans = []
    for _ in range(cfg.warmup + cfg.repeats):
        cluster = create_cluster(1 if strategy is StrategyKind.SINGLE_DEVICE else P, cfg.net)
        art = run_forward(seq, strategy, cluster, PipelineConfig(K))
        spans.append(art.timeline.makespan)
    spans = spans[cfg.warmup:]
    makespan = sum(spans) / len(spans)
    ranks = 1 if strategy is StrategyKind.SINGLE_DEVICE else P
    ideal = ideal_makespan(strategy, P, cfg.num_chunks, DEFAULT_COSTS)
    ledger = art.ledger
    return {
        "strategy": strategy.value, "P": P, "K": K, "L": cfg.seq_per_rank,
        "h": cfg.heads, "ek": cfg.dk, "ev": cfg.dv,
        "sim_makespan": makespan, "comm_exposed": max(0.0, makespan - ideal),
        "volume_sent": max((ledger.sent(rank=r) for r in range(ranks)), default=0),
        "volume_received": max((ledger.received(rank=r) for r in range(ranks)), default=0),
    }


def cmd_bench(cfg: ExperimentConfig, sweep_specs: list[str]) -> int:
    rows = []
    for P, K in _parse_sweep(cfg, sweep_specs):
        for name in ("all_scan", "all_gather", "all_reduce"):
            rows.append(_bench_collective_row(cfg, name, P, K))
        for strategy in (StrategyKind.ZECO, StrategyKind.LASP1, StrategyKind.LASP2,
                         StrategyKind.SINGLE_DEVICE):
            rows.append(_bench_strategy_row(cfg, strategy, P, K))
    write_report(render_report(rows, BENCH_COLUMNS, cfg.format), cfg.output)
    return 0


COST_COLUMNS = ("method", "P", "L", "D", "e", "N",
                "volume_elements", "compute_ops", "t_model_seconds", "note")


def _cost_params(cfg: ExperimentConfig, P=None, K=None) -> CostParams:
    return CostParams(
        net=cfg.net, dims=cfg.dims, num_ranks=P or cfg.ranks,
        pipeline_blocks=K or cfg.pipeline_blocks,
        per_chunk_compute=DEFAULT_COSTS.per_chunk,
        chunks_per_rank=cfg.num_chunks, tokens_per_rank=cfg.seq_per_rank,
    )


def cmd_cost(cfg: ExperimentConfig, methods: list[str]) -> int:
    methods = methods or list(METHODS)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")
    params = _cost_params(cfg)
    t_ideal = FORWARD_PHASES * cfg.num_chunks * DEFAULT_COSTS.per_chunk
    t_overlap = min(t_allscan(params), cfg.num_chunks * DEFAULT_COSTS.per_chunk)
    report = t_strategies(params, t_ideal, t_overlap)
    rows = table_rows(params, methods, report)
    for row in rows:
        row["note"] = table_note(row["method"])
    write_report(render_report(rows, COST_COLUMNS, cfg.format), cfg.output)
    return 0


VOLUME_COLUMNS = ("strategy", "P", "L", "h", "ek", "ev", "model_volume_elements",
                  "measured_sent", "measured_received", "discrepancy", "note")


def cmd_volume(cfg: ExperimentConfig, methods: list[str]) -> int:
    methods = methods or list(SIMULATED_METHODS)
    bad = [m for m in methods if m not in SIMULATED_METHODS]
    if bad:
        raise ConfigError(f"volume only simulates {SIMULATED_METHODS}, got {bad}")
    params = _cost_params(cfg)
    seq = generate_sequence(cfg.ranks, cfg.seq_per_rank, cfg.chunk, cfg.dims, seed=cfg.seed,
                            precision=cfg.precision)
    # Volume accounting covers the state payloads themselves; lasp2's fused
    # decay-vector side channel stays visible in the ledger export but is not
    # part of the modeled state volume.
    state_primitive = {"zeco": "all_scan", "lasp1": "p2p", "lasp2": "all_gather"}
    rows = []
    for method in methods:
        strategy = StrategyKind(method)
        cluster = create_cluster(cfg.ranks, cfg.net)
        art = run_forward(seq, strategy, cluster, PipelineConfig(cfg.pipeline_blocks))
        prim = state_primitive[method]
        sent = max((art.ledger.sent(rank=r, primitive=prim) for r in range(cfg.ranks)), default=0)
        received = max((art.ledger.received(rank=r, primitive=prim) for r in range(cfg.ranks)),
                       default=0)
        model_volume, _ = volume_compute_table(method, params)
        measured_reference = received if method == "lasp2" else sent
        rows.append({
            "strategy": method, "P": cfg.ranks, "L": cfg.seq_per_rank,
            "h": cfg.heads, "ek": cfg.dk, "ev": cfg.dv,
            "model_volume_elements": model_volume,
            "measured_sent": sent, "measured_received": received,
            "discrepancy": measured_reference - model_volume,
            "note": table_note(method),
        })
    write_report(render_report(rows, VOLUME_COLUMNS, cfg.format), cfg.output)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "bench":
            return cmd_bench(cfg, args.sweep)
        if args.command == "cost":
            return cmd_cost(cfg, args.methods)
        if args.command == "volume":
            return cmd_volume(cfg, args.methods)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, LayoutError, DimsError, DomainError) as exc:
        print(f"glasp {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
