"""Chunkwise kernel against the token-level oracle, across chunk sizes and splits."""

import math

import numpy as np
import pytest

from glasp import (
    ModelDims,
    SeqShard,
    ShardLayout,
    State,
    forward_outputs,
    global_correct,
    local_state_scan,
    recurrent_forward,
)


def make_shard(rng, h, L, C, ek, ev):
    return SeqShard(
        q=rng.uniform(-1, 1, (h, L, ek)),
        k=rng.uniform(-1, 1, (h, L, ek)),
        v=rng.uniform(-1, 1, (h, L, ev)),
        g=rng.uniform(math.log(0.9), math.log(0.999), (h, L, ek)),
        layout=ShardLayout(seq_len=L, chunk_len=C),
        dims=ModelDims(heads=h, key_dim=ek, value_dim=ev),
    )


def rechunk(shard, C):
    return SeqShard(
        q=shard.q, k=shard.k, v=shard.v, g=shard.g,
        layout=ShardLayout(seq_len=shard.layout.seq_len, chunk_len=C),
        dims=shard.dims,
    )


def rel_frob(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def run_chunkwise(shard, prev=None):
    prev = prev if prev is not None else State.zeros(shard.dims)
    states, cumdecay = local_state_scan(shard)
    return forward_outputs(shard, states, cumdecay, prev)


@pytest.mark.parametrize("h,L,C", [(1, 64, 1), (2, 128, 16), (4, 512, 64), (3, 96, 96)])
def test_chunkwise_equals_recurrent(h, L, C):
    rng = np.random.default_rng(100 + h * L + C)
    shard = make_shard(rng, h=h, L=L, C=C, ek=5, ev=4)
    ref, _, _ = recurrent_forward(shard)
    out = run_chunkwise(shard)
    assert rel_frob(out, ref) <= 1e-10


def test_chunk_size_invariance():
    rng = np.random.default_rng(200)
    L = 64
    shard = make_shard(rng, h=2, L=L, C=1, ek=3, ev=3)
    outs = [run_chunkwise(rechunk(shard, C)) for C in (1, 2, 16, L)]
    for other in outs[1:]:
        assert rel_frob(other, outs[0]) <= 1e-12


def test_two_way_split_matches_concatenated(seed=300):
    # Second half, seeded with the first half's final state, must reproduce
    # the concatenated run restricted to the second half.
    rng = np.random.default_rng(seed)
    full = make_shard(rng, h=2, L=64, C=8, ek=4, ev=3)
    half = 32
    first = SeqShard(
        q=full.q[:, :half], k=full.k[:, :half], v=full.v[:, :half], g=full.g[:, :half],
        layout=ShardLayout(half, 8), dims=full.dims,
    )
    second = SeqShard(
        q=full.q[:, half:], k=full.k[:, half:], v=full.v[:, half:], g=full.g[:, half:],
        layout=ShardLayout(half, 8), dims=full.dims,
    )
    _, _, first_final = recurrent_forward(first)
    ref, _, _ = recurrent_forward(full)
    out_second = run_chunkwise(second, prev=first_final)
    assert rel_frob(out_second, ref[:, half:]) <= 1e-10


def test_global_correction_soundness():
    # Corrected boundary states of the second shard equal the recurrent
    # boundary states of the concatenated sequence.
    rng = np.random.default_rng(400)
    full = make_shard(rng, h=2, L=96, C=8, ek=4, ev=4)
    half = 48
    first = SeqShard(
        q=full.q[:, :half], k=full.k[:, :half], v=full.v[:, :half], g=full.g[:, :half],
        layout=ShardLayout(half, 8), dims=full.dims,
    )
    second = SeqShard(
        q=full.q[:, half:], k=full.k[:, half:], v=full.v[:, half:], g=full.g[:, half:],
        layout=ShardLayout(half, 8), dims=full.dims,
    )
    _, _, first_final = recurrent_forward(first)
    _, boundaries, _ = recurrent_forward(full)
    states, cumdecay = local_state_scan(second)
    corrected = global_correct(states, cumdecay, first_final)
    offset = half // 8
    for n, st in enumerate(corrected):
        want = boundaries[offset + n].values
        assert rel_frob(st.values, want) <= 1e-12


def test_prev_zero_whole_shard_oracle():
    rng = np.random.default_rng(500)
    shard = make_shard(rng, h=1, L=40, C=5, ek=2, ev=6)
    ref, _, _ = recurrent_forward(shard)
    assert rel_frob(run_chunkwise(shard), ref) <= 1e-10
