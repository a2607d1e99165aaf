"""Gated linear attention numerics: token-level oracle, chunkwise kernels, gradients.

The operator keeps a per-head state matrix ``S`` of shape ``[e_k, e_v]`` that is
updated once per token,

    S_t = alpha_t (x) S_{t-1} + k_t^T v_t,        o_t = q_t S_t,

where ``alpha_t in (0, 1)^{e_k}`` is a per-channel forget gate broadcast down
the rows of ``S``. Gates are carried in log space (``G = log alpha``) so that
cumulative decay products over long ranges are prefix sums followed by a single
``exp``; products in linear scale would underflow after a few thousand tokens.

The chunkwise form splits a length-``L`` shard into ``N = L / C`` chunks. With
``b_t`` the within-chunk running product of gates (``b_0 = 1``):

  * state update per chunk:   S_[n] = gamma_n (x) S_[n-1] + (K . Gout)^T V
  * output per chunk:         O = (Q . Gin) S_[n-1]^global + (A . M) V

where ``Gin[j] = b_j`` (includes token j's own gate), ``Gout[j] = b_C / b_j``
(decay remaining to the chunk end), ``gamma_n = b_C``, ``M`` is the inclusive
lower-triangular causal mask, and the masked score matrix is

    A[i, j] = sum_c Q[i, c] K[j, c] exp(logb[i, c] - logb[j, c]),   i >= j.

The pairwise log-difference form is used instead of the algebraically equal
``(Q . Gin)(K / Gin)^T`` because the exponent is nonpositive wherever the mask
is set, so it cannot overflow for strong decay.

All tensors are laid out ``[heads, tokens, channels]`` and all functions here
are pure; float64 is the working precision for every oracle comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimsError, DomainError, PrecisionError


@dataclass(frozen=True)
class ModelDims:
    """Per-head sizes: number of heads, key channels, value channels."""

    heads: int
    key_dim: int
    value_dim: int

    def __post_init__(self):
        if self.heads < 1 or self.key_dim < 1 or self.value_dim < 1:
            raise DimsError(f"dims must be positive, got {self}")

    @property
    def state_elements(self) -> int:
        return self.heads * self.key_dim * self.value_dim


@dataclass(frozen=True)
class ShardLayout:
    """Tokens per rank and chunk length; the chunk length must divide evenly."""

    seq_len: int
    chunk_len: int

    def __post_init__(self):
        if self.seq_len < 1 or self.chunk_len < 1:
            raise DimsError(f"layout must be positive, got {self}")
        if self.seq_len % self.chunk_len != 0:
            raise DimsError(
                f"chunk_len {self.chunk_len} does not divide seq_len {self.seq_len}"
            )

    @property
    def num_chunks(self) -> int:
        return self.seq_len // self.chunk_len


@dataclass
class SeqShard:
    """One rank's slice of the inputs.

    ``q, k, g`` have shape ``[h, L, e_k]`` and ``v`` has ``[h, L, e_v]``.
    ``g`` holds log-decay values and must be strictly negative and finite so
    the per-token gate ``exp(g)`` lies in (0, 1).
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    g: np.ndarray
    layout: ShardLayout
    dims: ModelDims

    def __post_init__(self):
        h, ek, ev = self.dims.heads, self.dims.key_dim, self.dims.value_dim
        L = self.layout.seq_len
        for name, arr, shape in (
            ("q", self.q, (h, L, ek)),
            ("k", self.k, (h, L, ek)),
            ("v", self.v, (h, L, ev)),
            ("g", self.g, (h, L, ek)),
        ):
            if arr.shape != shape:
                raise DimsError(f"{name} has shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(self.g)) or not np.all(self.g < 0.0):
            raise DomainError("log-decay entries must be strictly negative and finite")

    @property
    def dtype(self):
        return self.q.dtype


@dataclass
class State:
    """Per-head attention state matrix, shape ``[h, e_k, e_v]``."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3:
            raise DimsError(f"state must be rank-3, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("state entries must be finite")

    @classmethod
    def zeros(cls, dims: ModelDims, dtype=np.float64) -> "State":
        return cls(np.zeros((dims.heads, dims.key_dim, dims.value_dim), dtype=dtype))

    def copy(self) -> "State":
        return State(self.values.copy())


@dataclass
class CumDecay:
    """Cumulative decay vector in log space, shape ``[h, e_k]``, entries <= 0."""

    log_values: np.ndarray

    def __post_init__(self):
        if self.log_values.ndim != 2:
            raise DimsError(f"cumdecay must be rank-2, got {self.log_values.shape}")
        if not np.all(np.isfinite(self.log_values)) or not np.all(self.log_values <= 0.0):
            raise DomainError("cumulative log-decay entries must be finite and <= 0")

    @classmethod
    def ones(cls, dims: ModelDims, dtype=np.float64) -> "CumDecay":
        # log(1) = 0: no decay accumulated yet.
        return cls(np.zeros((dims.heads, dims.key_dim), dtype=dtype))


@dataclass
class ChunkScalings:
    """Per-chunk decay scalings, all in linear scale and within (0, 1].

    ``chunk_decay``      [h, e_k]     total gate product across the chunk
    ``decay_from_start`` [h, C, e_k]  product from the chunk start through the
                                      token, inclusive of the token's own gate
    ``decay_to_end``     [h, C, e_k]  product from just after the token to the
                                      chunk end; all-ones at the last row

    For every row, decay_from_start * decay_to_end == chunk_decay.
    """

    chunk_decay: np.ndarray
    decay_from_start: np.ndarray
    decay_to_end: np.ndarray


@dataclass
class GradShard:
    """Gradients mirroring SeqShard; ``dg`` is with respect to log-decay."""

    dq: np.ndarray
    dk: np.ndarray
    dv: np.ndarray
    dg: np.ndarray

    def __post_init__(self):
        for name, arr in (("dq", self.dq), ("dk", self.dk), ("dv", self.dv), ("dg", self.dg)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite entries")


def _chunked(x: np.ndarray, chunk_len: int) -> np.ndarray:
    # [h, L, e] -> [h, N, C, e]
    h, L, e = x.shape
    return x.reshape(h, L // chunk_len, chunk_len, e)


def _chunk_log_cumsum(g: np.ndarray, chunk_len: int):
    """Within-chunk inclusive prefix sums of log-decay.

    Returns (logb [h, N, C, e_k], chunk_log [h, N, e_k]) where chunk_log is the
    log of the full chunk gate product.
    """
    logb = np.cumsum(_chunked(g, chunk_len), axis=2)
    return logb, logb[:, :, -1, :]


def _check_init_state(init: State | None, dims: ModelDims, dtype) -> np.ndarray:
    if init is None:
        return np.zeros((dims.heads, dims.key_dim, dims.value_dim), dtype=dtype)
    expected = (dims.heads, dims.key_dim, dims.value_dim)
    if init.values.shape != expected:
        raise DimsError(f"initial state has shape {init.values.shape}, expected {expected}")
    return init.values.astype(dtype, copy=True)


def recurrent_forward(shard: SeqShard, init: State | None = None):
    """Token-by-token reference recurrence.

    Returns ``(outputs [h, L, e_v], boundary_states, final)`` where
    ``boundary_states[n]`` is the state after ``n`` full chunks (N+1 entries,
    the first being the initial state). This is the exactness oracle that every
    chunkwise and distributed path is checked against; it is deliberately
    unoptimized.
    """
    h, L, ev = shard.dims.heads, shard.layout.seq_len, shard.dims.value_dim
    C = shard.layout.chunk_len
    s = _check_init_state(init, shard.dims, shard.dtype)
    alpha = np.exp(shard.g)
    outputs = np.empty((h, L, ev), dtype=shard.dtype)
    boundaries = [State(s.copy())]
    for t in range(L):
        s = alpha[:, t, :, None] * s + shard.k[:, t, :, None] * shard.v[:, t, None, :]
        outputs[:, t, :] = np.einsum("hk,hkv->hv", shard.q[:, t, :], s)
        if (t + 1) % C == 0:
            boundaries.append(State(s.copy()))
    return outputs, boundaries, State(s.copy())


def chunk_scalings(g_chunk: np.ndarray) -> ChunkScalings:
    """Decay scalings for one chunk of log-decay values ``[h, C, e_k]``."""
    if g_chunk.ndim != 3:
        raise DimsError(f"expected [h, C, e_k], got shape {g_chunk.shape}")
    if not np.all(np.isfinite(g_chunk)) or not np.all(g_chunk < 0.0):
        raise DomainError("log-decay entries must be strictly negative and finite")
    logb = np.cumsum(g_chunk, axis=1)
    total = logb[:, -1, :]
    return ChunkScalings(
        chunk_decay=np.exp(total),
        decay_from_start=np.exp(logb),
        decay_to_end=np.exp(total[:, None, :] - logb),
    )


def local_state_scan(shard: SeqShard):
    """Chunk-level state scan from a zero initial state.

    Returns ``(states, cumdecay)``: N+1 states with ``states[0] = 0`` and N+1
    cumulative decays with ``cumdecay[0] = log 1``; ``cumdecay[n]`` covers
    chunks 1..n of this shard.
    """
    C = shard.layout.chunk_len
    logb, chunk_log = _chunk_log_cumsum(shard.g, C)
    k_scaled = _chunked(shard.k, C) * np.exp(chunk_log[:, :, None, :] - logb)
    chunk_kv = np.einsum("hnck,hncv->hnkv", k_scaled, _chunked(shard.v, C))

    s = np.zeros((shard.dims.heads, shard.dims.key_dim, shard.dims.value_dim), dtype=shard.dtype)
    cum = np.zeros((shard.dims.heads, shard.dims.key_dim), dtype=shard.dtype)
    states = [State(s.copy())]
    cumdecay = [CumDecay(cum.copy())]
    for n in range(shard.layout.num_chunks):
        s = np.exp(chunk_log[:, n])[:, :, None] * s + chunk_kv[:, n]
        cum = cum + chunk_log[:, n]
        states.append(State(s.copy()))
        cumdecay.append(CumDecay(cum.copy()))
    return states, cumdecay


def global_correct(states: list[State], cumdecay: list[CumDecay], prev: State) -> list[State]:
    """Lift locally scanned states to global ones given the predecessor state.

    ``out[n] = exp(cumdecay[n]) (x) prev + states[n]``; the n = 0 entry is
    exactly ``prev``.
    """
    if len(states) != len(cumdecay):
        raise DimsError(f"got {len(states)} states but {len(cumdecay)} cumulative decays")
    out = []
    for st, cd in zip(states, cumdecay):
        if st.values.shape != prev.values.shape:
            raise DimsError(
                f"state shape {st.values.shape} != prev shape {prev.values.shape}"
            )
        out.append(State(np.exp(cd.log_values)[:, :, None] * prev.values + st.values))
    return out


def _masked_decay_weights(logb_n: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # exp(logb_i - logb_j) on the causal triangle, 0 above it. The masked
    # exponent is <= 0, so this never overflows.
    diff = logb_n[:, :, None, :] - logb_n[:, None, :, :]
    return np.exp(np.where(mask[None, :, :, None], diff, -np.inf))


def forward_outputs(
    shard: SeqShard,
    states: list[State],
    cumdecay: list[CumDecay],
    prev: State,
) -> np.ndarray:
    """Chunkwise outputs with lazy global correction.

    ``states``/``cumdecay`` must come from ``local_state_scan`` of the same
    shard; ``prev`` is the incoming global state (zero for the first rank).
    The inter-chunk term folds ``prev`` in per chunk instead of materializing
    corrected states.
    """
    C = shard.layout.chunk_len
    N = shard.layout.num_chunks
    if len(states) != N + 1 or len(cumdecay) != N + 1:
        raise DimsError(f"expected {N + 1} scan entries, got {len(states)}/{len(cumdecay)}")
    logb, _ = _chunk_log_cumsum(shard.g, C)
    qs = _chunked(shard.q, C)
    ks = _chunked(shard.k, C)
    vs = _chunked(shard.v, C)
    mask = np.tril(np.ones((C, C), dtype=bool))
    out = np.empty((shard.dims.heads, shard.layout.seq_len, shard.dims.value_dim), dtype=shard.dtype)
    for n in range(N):
        base = states[n].values + np.exp(cumdecay[n].log_values)[:, :, None] * prev.values
        q_in = qs[:, n] * np.exp(logb[:, n])
        inter = np.einsum("hck,hkv->hcv", q_in, base)
        w = _masked_decay_weights(logb[:, n], mask)
        scores = np.einsum("hik,hjk,hijk->hij", qs[:, n], ks[:, n], w, optimize=True)
        intra = np.einsum("hij,hjv->hiv", scores, vs[:, n])
        out[:, n * C:(n + 1) * C, :] = inter + intra
    return out


def revcum(values: np.ndarray) -> np.ndarray:
    """Inclusive reverse cumulative sum along the token axis (axis 1)."""
    return np.flip(np.cumsum(np.flip(values, axis=1), axis=1), axis=1)


def reverse_boundary_scan(shard: SeqShard, d_out: np.ndarray) -> list[State]:
    """Suffix scan of output cotangents onto chunk-boundary states.

    Entry ``m`` is the gradient of the loss with respect to the state at chunk
    boundary ``m``, counting only this shard's chunks ``m+1..N`` (zero seed at
    the shard end). The scan runs right to left:

        d[m-1] = gamma_m (x) d[m] + (Q_m . Gin_m)^T dO_m.
    """
    C = shard.layout.chunk_len
    N = shard.layout.num_chunks
    logb, chunk_log = _chunk_log_cumsum(shard.g, C)
    q_in = _chunked(shard.q, C) * np.exp(logb)
    qdo = np.einsum("hnck,hncv->hnkv", q_in, _chunked(d_out, C))
    d = np.zeros((shard.dims.heads, shard.dims.key_dim, shard.dims.value_dim), dtype=shard.dtype)
    rev: list[State | None] = [None] * (N + 1)
    rev[N] = State(d.copy())
    for n in range(N, 0, -1):
        d = np.exp(chunk_log[:, n - 1])[:, :, None] * d + qdo[:, n - 1]
        rev[n - 1] = State(d.copy())
    return rev  # type: ignore[return-value]


def backward(
    shard: SeqShard,
    d_out: np.ndarray,
    prev: State,
    ds_next: State,
    saved_states: list[State] | None = None,
):
    """Chunkwise backward pass for one shard.

    ``prev`` is the forward-time incoming global state for this shard and
    ``ds_next`` the state gradient arriving from the successor (zero when this
    shard ends the sequence). Returns ``(grads, ds_boundary)`` where
    ``ds_boundary`` is the state gradient to hand to the predecessor.

    Forward chunk-start states are recomputed from ``prev`` by default; pass
    ``saved_states`` (the forward local scan list) to reuse them instead.
    """
    C = shard.layout.chunk_len
    N = shard.layout.num_chunks
    h, ek, ev = shard.dims.heads, shard.dims.key_dim, shard.dims.value_dim
    if d_out.shape != (h, shard.layout.seq_len, ev):
        raise DimsError(f"d_out has shape {d_out.shape}")
    logb, chunk_log = _chunk_log_cumsum(shard.g, C)
    cum = np.concatenate(
        [np.zeros((h, 1, ek), dtype=shard.dtype), np.cumsum(chunk_log, axis=1)], axis=1
    )  # [h, N+1, e_k]

    qs = _chunked(shard.q, C)
    ks = _chunked(shard.k, C)
    vs = _chunked(shard.v, C)
    dos = _chunked(d_out, C)

    # Boundary-state gradients, globally corrected with the successor's cotangent.
    rev = reverse_boundary_scan(shard, d_out)
    tail_decay = np.exp(cum[:, N][:, None, :] - cum)[..., None]  # [h, N+1, e_k, 1]
    d_bound = [rev[n].values + tail_decay[:, n] * ds_next.values for n in range(N + 1)]
    ds_boundary = State(d_bound[0].copy())

    # Forward chunk-start states in global coordinates.
    if saved_states is not None:
        if len(saved_states) != N + 1:
            raise DimsError(f"expected {N + 1} saved states, got {len(saved_states)}")
        glob = [
            st.values + np.exp(cum[:, n])[:, :, None] * prev.values
            for n, st in enumerate(saved_states)
        ]
    else:
        k_scaled = _chunked(shard.k, C) * np.exp(chunk_log[:, :, None, :] - logb)
        chunk_kv = np.einsum("hnck,hncv->hnkv", k_scaled, _chunked(shard.v, C))
        s = prev.values.astype(shard.dtype, copy=True)
        glob = [s]
        for n in range(N):
            s = np.exp(chunk_log[:, n])[:, :, None] * s + chunk_kv[:, n]
            glob.append(s)

    mask = np.tril(np.ones((C, C), dtype=bool))
    dq = np.empty_like(shard.q)
    dk = np.empty_like(shard.k)
    dv = np.empty_like(shard.v)
    for n in range(N):
        lam = np.exp(logb[:, n])
        gout = np.exp(chunk_log[:, n][:, None, :] - logb[:, n])
        w = _masked_decay_weights(logb[:, n], mask)
        d_after = d_bound[n + 1]
        dp = np.einsum("hiv,hjv->hij", dos[:, n], vs[:, n]) * mask[None]
        scores = np.einsum("hik,hjk,hijk->hij", qs[:, n], ks[:, n], w, optimize=True)

        dq_n = np.einsum("hij,hjk,hijk->hik", dp, ks[:, n], w, optimize=True)
        dq_n += np.einsum("hiv,hkv->hik", dos[:, n], glob[n]) * lam
        dk_n = np.einsum("hij,hik,hijk->hjk", dp, qs[:, n], w, optimize=True)
        dk_n += np.einsum("hcv,hkv->hck", vs[:, n], d_after) * gout
        dv_n = np.einsum("hij,hiv->hjv", scores, dos[:, n])
        dv_n += np.einsum("hck,hkv->hcv", ks[:, n] * gout, d_after)

        sl = slice(n * C, (n + 1) * C)
        dq[:, sl, :] = dq_n
        dk[:, sl, :] = dk_n
        dv[:, sl, :] = dv_n

    da = shard.q * dq - shard.k * dk
    dg = revcum(da)
    # Suffix contributions from tokens beyond this shard enter through the
    # final-state cotangent; without this term the reverse cumsum is short by a
    # constant on every token whenever ds_next is nonzero.
    dg += np.einsum("hkv,hkv->hk", glob[N], ds_next.values)[:, None, :]
    return GradShard(dq=dq, dk=dk, dv=dv, dg=dg), ds_boundary


def finite_diff_grad(shard: SeqShard, probe: np.ndarray, step: float) -> GradShard:
    """Central-difference gradients of ``<probe, recurrent_forward(shard)>``.

    Independent of every chunkwise code path; used to arbitrate the analytic
    backward. float64 only.
    """
    if step <= 0.0:
        raise DomainError(f"step must be positive, got {step}")
    for name, arr in (("q", shard.q), ("k", shard.k), ("v", shard.v), ("g", shard.g), ("probe", probe)):
        if arr.dtype != np.float64:
            raise PrecisionError(f"{name} must be float64 for finite differences, got {arr.dtype}")

    def loss(q, k, v, g):
        trial = SeqShard(q=q, k=k, v=v, g=g, layout=shard.layout, dims=shard.dims)
        outputs, _, _ = recurrent_forward(trial)
        return float(np.sum(probe * outputs))

    tensors = {"q": shard.q, "k": shard.k, "v": shard.v, "g": shard.g}
    grads = {}
    for name, base in tensors.items():
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            args = {n: t for n, t in tensors.items()}
            bumped = base.copy()
            bumped[idx] = base[idx] + step
            args[name] = bumped
            plus = loss(**args)
            bumped = base.copy()
            bumped[idx] = base[idx] - step
            args[name] = bumped
            minus = loss(**args)
            grad[idx] = (plus - minus) / (2.0 * step)
        grads[name] = grad
    return GradShard(dq=grads["q"], dk=grads["k"], dv=grads["v"], dg=grads["g"])
