"""Hand-checked values and basic contracts for the core attention kernels."""

import math

import numpy as np
import pytest

from glasp import (
    CumDecay,
    DimsError,
    DomainError,
    ModelDims,
    PrecisionError,
    SeqShard,
    ShardLayout,
    State,
    chunk_scalings,
    finite_diff_grad,
    global_correct,
    local_state_scan,
    recurrent_forward,
    revcum,
)
from glasp.gla import backward, forward_outputs


def scalar_shard(alphas, qs, ks, vs, chunk_len):
    """h=1, e_k=e_v=1 shard from plain lists."""
    L = len(alphas)
    g = np.log(np.asarray(alphas, dtype=np.float64)).reshape(1, L, 1)
    q = np.asarray(qs, dtype=np.float64).reshape(1, L, 1)
    k = np.asarray(ks, dtype=np.float64).reshape(1, L, 1)
    v = np.asarray(vs, dtype=np.float64).reshape(1, L, 1)
    return SeqShard(
        q=q, k=k, v=v, g=g,
        layout=ShardLayout(seq_len=L, chunk_len=chunk_len),
        dims=ModelDims(heads=1, key_dim=1, value_dim=1),
    )


def random_shard(rng, h, L, C, ek, ev):
    return SeqShard(
        q=rng.uniform(-1, 1, (h, L, ek)),
        k=rng.uniform(-1, 1, (h, L, ek)),
        v=rng.uniform(-1, 1, (h, L, ev)),
        g=rng.uniform(math.log(0.9), math.log(0.999), (h, L, ek)),
        layout=ShardLayout(seq_len=L, chunk_len=C),
        dims=ModelDims(heads=h, key_dim=ek, value_dim=ev),
    )


class TestRecurrentForward:
    def test_hand_example(self):
        shard = scalar_shard([0.5, 0.5], [1, 1], [1, 2], [1, 1], chunk_len=2)
        outputs, boundaries, final = recurrent_forward(shard)
        np.testing.assert_allclose(outputs.ravel(), [1.0, 2.5])
        assert final.values.item() == pytest.approx(2.5)
        assert len(boundaries) == 2
        assert boundaries[1].values.item() == pytest.approx(2.5)

    def test_zero_values_propagate(self):
        rng = np.random.default_rng(0)
        shard = random_shard(rng, h=2, L=8, C=4, ek=3, ev=2)
        shard.v[:] = 0.0
        outputs, _, final = recurrent_forward(shard)
        assert np.all(outputs == 0.0)
        assert np.all(final.values == 0.0)

    def test_single_token_decay_irrelevant(self):
        shard = scalar_shard([1 - 1e-12], [2], [3], [5], chunk_len=1)
        outputs, _, _ = recurrent_forward(shard)
        assert outputs.item() == pytest.approx(30.0)

    def test_init_shape_mismatch(self):
        shard = scalar_shard([0.5], [1], [1], [1], chunk_len=1)
        bad = State(np.zeros((1, 2, 2)))
        with pytest.raises(DimsError):
            recurrent_forward(shard, init=bad)

    def test_boundary_states_per_chunk(self):
        rng = np.random.default_rng(1)
        shard = random_shard(rng, h=1, L=12, C=3, ek=2, ev=2)
        _, boundaries, final = recurrent_forward(shard)
        assert len(boundaries) == 5
        np.testing.assert_array_equal(boundaries[-1].values, final.values)


class TestChunkScalings:
    def test_hand_example(self):
        g = np.log(np.array([[[0.5], [0.5]]]))
        sc = chunk_scalings(g)
        assert sc.chunk_decay.item() == pytest.approx(0.25)
        np.testing.assert_allclose(sc.decay_from_start.ravel(), [0.5, 0.25])
        np.testing.assert_allclose(sc.decay_to_end.ravel(), [0.5, 1.0])

    def test_single_token_chunk(self):
        g = np.log(np.array([[[0.7]]]))
        sc = chunk_scalings(g)
        assert sc.chunk_decay.item() == pytest.approx(0.7)
        assert sc.decay_from_start.item() == pytest.approx(0.7)
        assert sc.decay_to_end.item() == pytest.approx(1.0)

    def test_product_identity(self):
        rng = np.random.default_rng(2)
        g = rng.uniform(math.log(0.5), math.log(0.99), (2, 7, 3))
        sc = chunk_scalings(g)
        np.testing.assert_allclose(
            sc.decay_from_start * sc.decay_to_end,
            np.broadcast_to(sc.chunk_decay[:, None, :], sc.decay_from_start.shape),
            rtol=1e-14,
        )

    def test_first_row_is_own_gate(self):
        rng = np.random.default_rng(3)
        g = rng.uniform(math.log(0.5), math.log(0.99), (1, 4, 2))
        sc = chunk_scalings(g)
        np.testing.assert_allclose(sc.decay_from_start[:, 0, :], np.exp(g[:, 0, :]))
        np.testing.assert_allclose(sc.decay_to_end[:, -1, :], 1.0)

    def test_rejects_nonnegative_log_decay(self):
        with pytest.raises(DomainError):
            chunk_scalings(np.zeros((1, 2, 1)))


class TestLocalStateScan:
    def test_single_chunk_equals_scaled_kv(self):
        rng = np.random.default_rng(4)
        shard = random_shard(rng, h=1, L=4, C=4, ek=2, ev=2)
        states, cumdecay = local_state_scan(shard)
        sc = chunk_scalings(shard.g)
        expected = np.einsum("hck,hcv->hkv", shard.k * sc.decay_to_end, shard.v)
        assert np.all(states[0].values == 0.0)
        np.testing.assert_allclose(states[1].values, expected, rtol=1e-14)
        np.testing.assert_array_equal(cumdecay[0].log_values, 0.0)

    def test_matches_recurrent_boundaries(self):
        shard = scalar_shard([0.5, 0.5], [1, 1], [1, 2], [1, 1], chunk_len=2)
        states, cumdecay = local_state_scan(shard)
        assert states[1].values.item() == pytest.approx(2.5)
        assert cumdecay[1].log_values.item() == pytest.approx(math.log(0.25))

    def test_matches_recurrent_boundaries_random(self):
        rng = np.random.default_rng(5)
        shard = random_shard(rng, h=2, L=24, C=4, ek=3, ev=2)
        states, _ = local_state_scan(shard)
        _, boundaries, _ = recurrent_forward(shard)
        for got, want in zip(states, boundaries):
            np.testing.assert_allclose(got.values, want.values, rtol=1e-12, atol=1e-14)


class TestGlobalCorrect:
    def test_zero_prev_is_identity(self):
        rng = np.random.default_rng(6)
        shard = random_shard(rng, h=1, L=8, C=4, ek=2, ev=2)
        states, cumdecay = local_state_scan(shard)
        prev = State.zeros(shard.dims)
        out = global_correct(states, cumdecay, prev)
        for got, want in zip(out, states):
            np.testing.assert_array_equal(got.values, want.values)

    def test_scalar_no_decay(self):
        prev = State(np.full((1, 1, 1), 2.0))
        states = [State(np.full((1, 1, 1), 3.0))]
        cumdecay = [CumDecay(np.zeros((1, 1)))]
        out = global_correct(states, cumdecay, prev)
        assert out[0].values.item() == pytest.approx(5.0)

    def test_scalar_hand_value(self):
        prev = State(np.full((1, 1, 1), 4.0))
        states = [State(np.full((1, 1, 1), 1.0))]
        cumdecay = [CumDecay(np.full((1, 1), math.log(0.25)))]
        out = global_correct(states, cumdecay, prev)
        assert out[0].values.item() == pytest.approx(2.0)

    def test_length_mismatch(self):
        prev = State.zeros(ModelDims(1, 1, 1))
        with pytest.raises(DimsError):
            global_correct([State.zeros(ModelDims(1, 1, 1))], [], prev)


class TestRevcum:
    def test_definition(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
        np.testing.assert_allclose(revcum(x).ravel(), [6.0, 5.0, 3.0])

    def test_zeros(self):
        x = np.zeros((2, 5, 3))
        np.testing.assert_array_equal(revcum(x), x)

    def test_single_token_identity(self):
        x = np.array([7.0]).reshape(1, 1, 1)
        np.testing.assert_array_equal(revcum(x), x)

    def test_reverse_identity(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 9, 4))
        lhs = revcum(x[:, ::-1, :])
        rhs = np.cumsum(x, axis=1)[:, ::-1, :]
        np.testing.assert_array_equal(lhs, rhs)


class TestFiniteDiff:
    def test_zero_probe(self):
        rng = np.random.default_rng(8)
        shard = random_shard(rng, h=1, L=3, C=1, ek=2, ev=2)
        probe = np.zeros((1, 3, 2))
        grads = finite_diff_grad(shard, probe, step=1e-5)
        for arr in (grads.dq, grads.dk, grads.dv, grads.dg):
            np.testing.assert_array_equal(arr, np.zeros_like(arr))

    def test_linear_in_v(self):
        # With q, k, g fixed the loss is linear in v, so central differences
        # agree with the analytic dv to roundoff.
        rng = np.random.default_rng(9)
        shard = random_shard(rng, h=1, L=4, C=2, ek=2, ev=2)
        probe = rng.uniform(-1, 1, (1, 4, 2))
        fd = finite_diff_grad(shard, probe, step=1e-5)
        grads, _ = backward(shard, probe, State.zeros(shard.dims), State.zeros(shard.dims))
        num = np.linalg.norm(fd.dv - grads.dv)
        den = np.linalg.norm(grads.dv)
        assert num / den < 1e-9

    def test_causality(self):
        # Probe only the first token: later tokens must get zero gradients.
        rng = np.random.default_rng(10)
        shard = random_shard(rng, h=1, L=4, C=2, ek=2, ev=2)
        probe = np.zeros((1, 4, 2))
        probe[:, 0, :] = 1.0
        fd = finite_diff_grad(shard, probe, step=1e-5)
        for arr in (fd.dq, fd.dk, fd.dv, fd.dg):
            np.testing.assert_allclose(arr[:, 1:, :], 0.0, atol=1e-9)

    def test_rejects_f32(self):
        rng = np.random.default_rng(11)
        shard = random_shard(rng, h=1, L=2, C=1, ek=1, ev=1)
        probe = np.ones((1, 2, 1), dtype=np.float32)
        with pytest.raises(PrecisionError):
            finite_diff_grad(shard, probe, step=1e-5)


class TestShardValidation:
    def test_rejects_nonnegative_gate(self):
        with pytest.raises(DomainError):
            scalar_shard([1.0], [1], [1], [1], chunk_len=1)

    def test_rejects_bad_chunking(self):
        with pytest.raises(DimsError):
            ShardLayout(seq_len=10, chunk_len=4)

    def test_rejects_zero_len(self):
        with pytest.raises(DimsError):
            ShardLayout(seq_len=0, chunk_len=1)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimsError):
            SeqShard(
                q=np.zeros((1, 4, 2)),
                k=np.zeros((1, 4, 2)),
                v=np.zeros((1, 4, 2)),
                g=np.full((1, 4, 3), -0.1),
                layout=ShardLayout(4, 2),
                dims=ModelDims(1, 2, 2),
            )


class TestForwardOutputsSmall:
    def test_single_column_chunk(self):
        # C=1 reduces the intra term to the diagonal q_t (k_t^T v_t).
        rng = np.random.default_rng(12)
        shard = random_shard(rng, h=1, L=3, C=1, ek=2, ev=2)
        states, cumdecay = local_state_scan(shard)
        out = forward_outputs(shard, states, cumdecay, State.zeros(shard.dims))
        ref, _, _ = recurrent_forward(shard)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-14)
