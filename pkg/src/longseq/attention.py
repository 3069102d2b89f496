"""Blockwise, overlapping, global-token and pooling-augmented attention.

Every local variant has a mask builder, so it can be checked against
``full_attention`` under the same mask. The blockwise implementations never
materialize an L x L score matrix; they gather a key set per query group and
score only that.
"""

from __future__ import annotations

import contextvars
import math
import time
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .numerics import (
    Tensor,
    avg_pool_rows,
    concat_rows,
    masked_softmax,
    matmul,
    take_rows,
    transpose,
)

__all__ = [
    "AttentionConfig",
    "AttentionMask",
    "FlopCounter",
    "VARIANTS",
    "full_attention",
    "build_block_mask",
    "block_attention",
    "overlap_block_attention",
    "global_block_attention",
    "local_attention",
    "pooling_attention_layer",
    "pooling_attention_reference",
    "encoder_stack",
    "count_score_flops",
    "benchmark",
]

VARIANTS = ("full", "block", "overlap", "global", "pooling")


@dataclass(frozen=True)
class AttentionConfig:
    seq_len: int
    block_size: int
    overlap: bool = False
    n_global: int = 0
    pool_kernel: int = 1
    pool_stride: int = 1
    head_dim: int = 8
    # False: global rows see everything but local rows do not see globals
    symmetric_global: bool = True

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if not 0 <= self.n_global <= self.block_size:
            raise ValueError(f"n_global must be in [0, block_size], got {self.n_global}")
        if self.overlap and self.block_size % 2:
            raise ValueError(f"overlapping windows need an even block_size, got {self.block_size}")
        if self.pool_kernel < 1 or self.pool_stride < 1:
            raise ValueError("pool_kernel and pool_stride must be >= 1")
        if self.head_dim < 1:
            raise ValueError("head_dim must be >= 1")

    @property
    def n_blocks(self) -> int:
        return -(-self.seq_len // self.block_size)

    def blocks(self) -> Iterator[tuple[int, int]]:
        """Yield ``(start, end)`` of each block; the last may be short."""
        B, L = self.block_size, self.seq_len
        for s in range(0, L, B):
            yield s, min(s + B, L)

    def global_positions(self) -> np.ndarray:
        if self.n_global == 0:
            return np.zeros(0, dtype=np.intp)
        return np.concatenate(
            [np.arange(s, min(s + self.n_global, e)) for s, e in self.blocks()]
        ).astype(np.intp)


@dataclass(frozen=True)
class AttentionMask:
    allowed: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.allowed, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"mask must be square, got {a.shape}")
        if not a.any(axis=1).all():
            raise ValueError("every mask row needs at least one allowed entry")
        object.__setattr__(self, "allowed", a)

    @classmethod
    def ones(cls, L: int) -> AttentionMask:
        return cls(np.ones((L, L), dtype=bool))

    @property
    def size(self) -> int:
        return self.allowed.shape[0]


class FlopCounter:
    """Collects the multiply-accumulate count of every score product.

    Use as a context manager; nested counters each see the work done inside
    them.
    """

    _active: contextvars.ContextVar[tuple] = contextvars.ContextVar("longseq_flop_counters", default=())

    def __init__(self):
        self.score_macs = 0
        self._token = None

    def __enter__(self) -> FlopCounter:
        self._token = FlopCounter._active.set(FlopCounter._active.get() + (self,))
        return self

    def __exit__(self, *exc):
        FlopCounter._active.reset(self._token)
        return False

    @classmethod
    def record(cls, macs: int) -> None:
        for c in cls._active.get():
            c.score_macs += macs


def _scores(q: Tensor, k: Tensor) -> Tensor:
    """Scaled dot-product scores ``q k^T / sqrt(h)``, counted."""
    m, h = q.shape
    n = k.shape[0]
    FlopCounter.record(m * n * h)
    return matmul(q, transpose(k)) * (1.0 / math.sqrt(h))


def _check_qkv(Q: Tensor, K: Tensor, V: Tensor) -> None:
    if not (len(Q.shape) == len(K.shape) == len(V.shape) == 2):
        raise ValueError("Q, K, V must be 2-d")
    if Q.shape != K.shape or K.shape[0] != V.shape[0]:
        raise ValueError(f"incompatible Q/K/V shapes {Q.shape}, {K.shape}, {V.shape}")


def full_attention(Q: Tensor, K: Tensor, V: Tensor, mask: AttentionMask | None = None) -> Tensor:
    """Reference ``softmax(QK^T / sqrt(h), mask) V``."""
    _check_qkv(Q, K, V)
    L = Q.shape[0]
    allowed = np.ones((L, L), dtype=bool) if mask is None else mask.allowed
    if allowed.shape != (L, L):
        raise ValueError(f"mask is {allowed.shape}, sequence length is {L}")
    return matmul(masked_softmax(_scores(Q, K), allowed), V)


def _context_columns(cfg: AttentionConfig, start: int, end: int) -> np.ndarray:
    """Key columns a block sees: own block plus half-block borders when overlapping."""
    if not cfg.overlap:
        return np.arange(start, end)
    half = cfg.block_size // 2
    lo = max(start - half, 0)
    hi = min(end + half, cfg.seq_len)
    return np.arange(lo, hi)


def build_block_mask(cfg: AttentionConfig) -> AttentionMask:
    L = cfg.seq_len
    allowed = np.zeros((L, L), dtype=bool)
    for s, e in cfg.blocks():
        cols = _context_columns(cfg, s, e)
        allowed[s:e, cols[0] : cols[-1] + 1] = True
    g = cfg.global_positions()
    if g.size:
        allowed[g, :] = True
        if cfg.symmetric_global:
            allowed[:, g] = True
    return AttentionMask(allowed)


def _attend(Q: Tensor, K: Tensor, V: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    q = take_rows(Q, rows)
    k = take_rows(K, cols)
    v = take_rows(V, cols)
    p = masked_softmax(_scores(q, k), np.ones((rows.size, cols.size), dtype=bool))
    return matmul(p, v)


def _row_groups(cfg: AttentionConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split queries into groups sharing one key set; the blockwise plan."""
    L = cfg.seq_len
    g = cfg.global_positions()
    is_global = np.zeros(L, dtype=bool)
    is_global[g] = True
    groups = []
    for s, e in cfg.blocks():
        rows = np.arange(s, e)
        rows = rows[~is_global[rows]]
        if rows.size == 0:
            continue
        cols = _context_columns(cfg, s, e)
        if g.size and cfg.symmetric_global:
            cols = np.union1d(cols, g)
        groups.append((rows, cols))
    if g.size:
        groups.append((g, np.arange(L)))
    return groups


def local_attention(Q: Tensor, K: Tensor, V: Tensor, cfg: AttentionConfig) -> Tensor:
    """Blockwise attention for any mix of overlap and global tokens."""
    _check_qkv(Q, K, V)
    if Q.shape[0] != cfg.seq_len:
        raise ValueError(f"inputs have {Q.shape[0]} rows, config says seq_len={cfg.seq_len}")
    groups = _row_groups(cfg)
    parts = [_attend(Q, K, V, rows, cols) for rows, cols in groups]
    if len(groups) == 1 and groups[0][0].size == cfg.seq_len:
        return parts[0]
    order = np.concatenate([rows for rows, _ in groups])
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return take_rows(concat_rows(parts), inverse)


def block_attention(Q: Tensor, K: Tensor, V: Tensor, cfg: AttentionConfig) -> Tensor:
    if cfg.overlap or cfg.n_global:
        raise ValueError("block_attention needs overlap=False and n_global=0")
    return local_attention(Q, K, V, cfg)


def overlap_block_attention(Q: Tensor, K: Tensor, V: Tensor, cfg: AttentionConfig) -> Tensor:
    if not cfg.overlap:
        raise ValueError("overlap_block_attention needs overlap=True")
    return local_attention(Q, K, V, cfg)


def global_block_attention(Q: Tensor, K: Tensor, V: Tensor, cfg: AttentionConfig) -> Tensor:
    # globals reuse Q/K/V: no separate projections for global tokens
    if cfg.n_global < 1:
        raise ValueError("global_block_attention needs n_global >= 1")
    return local_attention(Q, K, V, cfg)


def pooling_attention_layer(
    X: Tensor, Wq: Tensor, Wk: Tensor, Wv: Tensor, Wo: Tensor, cfg: AttentionConfig
) -> Tensor:
    """``X + softmax(Q K~^T / sqrt(h)) V~ Wo`` with K~, V~ average-pooled.

    The score matrix is L x ceil(L / pool_stride).
    """
    if len(X.shape) != 2:
        raise ValueError("X must be 2-d")
    Q = matmul(X, Wq)
    Kp = avg_pool_rows(matmul(X, Wk), cfg.pool_kernel, cfg.pool_stride)
    Vp = avg_pool_rows(matmul(X, Wv), cfg.pool_kernel, cfg.pool_stride)
    s = _scores(Q, Kp)
    p = masked_softmax(s, np.ones(s.shape, dtype=bool))
    return X + matmul(matmul(p, Vp), Wo)


def pooling_attention_reference(X, Wq, Wk, Wv, Wo, kernel: int, stride: int) -> np.ndarray:
    """Direct loop implementation of the pooling layer on raw arrays."""
    X = np.asarray(X, dtype=np.float64)
    L, h = X.shape
    Q = X @ Wq
    K = X @ Wk
    V = X @ Wv
    n_out = -(-L // stride)
    Kp = np.zeros((n_out, Wk.shape[1]))
    Vp = np.zeros((n_out, Wv.shape[1]))
    for i in range(n_out):
        rows = range(i * stride, min(i * stride + kernel, L))
        for r in rows:
            Kp[i] += K[r]
            Vp[i] += V[r]
        Kp[i] /= len(rows)
        Vp[i] /= len(rows)
    out = np.array(X, copy=True)
    for t in range(L):
        logits = np.array([Q[t] @ Kp[j] for j in range(n_out)]) / math.sqrt(Q.shape[1])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        ctx = sum(w[j] * Vp[j] for j in range(n_out))
        out[t] += ctx @ Wo
    return out


def encoder_stack(X: Tensor, layers, cfg: AttentionConfig, n_pool_layers: int = 1) -> Tensor:
    """Stack of block self-attention layers, pooling added in the top ``n_pool_layers``.

    ``layers`` is a list of dicts with keys ``Wq, Wk, Wv, Wo`` (block attention)
    and, for pooled layers, ``Pq, Pk, Pv, Po``.
    """
    n = len(layers)
    if not 0 <= n_pool_layers <= n:
        raise ValueError(f"n_pool_layers must be in [0, {n}]")
    for i, w in enumerate(layers):
        att = local_attention(matmul(X, w["Wq"]), matmul(X, w["Wk"]), matmul(X, w["Wv"]), cfg)
        X = X + matmul(att, w["Wo"])
        if i >= n - n_pool_layers:
            X = pooling_attention_layer(X, w["Pq"], w["Pk"], w["Pv"], w["Po"], cfg)
    return X


def count_score_flops(variant: str, cfg: AttentionConfig) -> int:
    """Closed-form multiply-accumulate count of the score computation."""
    L, B, h = cfg.seq_len, cfg.block_size, cfg.head_dim
    if variant == "full":
        return L * L * h
    if variant == "block":
        return sum((e - s) ** 2 for s, e in cfg.blocks()) * h
    if variant == "pooling":
        return L * (-(-L // cfg.pool_stride)) * h
    if variant not in ("overlap", "global"):
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    half = B // 2 if cfg.overlap else 0
    n_glob = cfg.n_global if variant == "global" else 0
    total = 0
    n_global_total = 0
    for s, e in cfg.blocks():
        width = (e - s) + min(half, s) + min(half, L - e)
        g_here = min(n_glob, e - s)
        n_global_total += g_here
        local_rows = (e - s) - g_here
        if n_glob and cfg.symmetric_global:
            # globals outside the context window, counted arithmetically
            lo, hi = s - min(half, s), e + min(half, L - e)
            inside = 0
            for s2, e2 in cfg.blocks():
                g_lo, g_hi = s2, s2 + min(n_glob, e2 - s2)
                inside += max(0, min(g_hi, hi) - max(g_lo, lo))
            width += _n_globals(cfg) - inside
        total += local_rows * width
    total += n_global_total * L
    return total * h


def _n_globals(cfg: AttentionConfig) -> int:
    return sum(min(cfg.n_global, e - s) for s, e in cfg.blocks())


_RUNNERS = {
    "full": lambda Q, K, V, cfg: full_attention(Q, K, V),
    "block": block_attention,
    "overlap": overlap_block_attention,
    "global": global_block_attention,
}


def benchmark(
    variants=("full", "block", "pooling"),
    lengths=(64, 128, 256, 512, 1024, 2048, 4096),
    block_size: int = 64,
    pool_stride: int = 16,
    head_dim: int = 8,
    seed: int = 0,
) -> list[dict]:
    """Run each variant at each length; report counted FLOPs and wall time.

    Records follow ``{"variant", "L", "B", "stride", "flops", "wall_ns"}``.
    ``flops`` is the instrumented count; it is compared against
    ``count_score_flops`` by the caller.
    """
    rng = np.random.default_rng(seed)
    records = []
    for L in lengths:
        B = min(block_size, L)
        for variant in variants:
            cfg = AttentionConfig(
                seq_len=L,
                block_size=B,
                overlap=variant == "overlap",
                n_global=min(1, B) if variant == "global" else 0,
                pool_kernel=pool_stride,
                pool_stride=pool_stride,
                head_dim=head_dim,
            )
            X = rng.standard_normal((L, head_dim))
            with FlopCounter() as fc:
                t0 = time.perf_counter_ns()
                if variant == "pooling":
                    W = [Tensor(rng.standard_normal((head_dim, head_dim)) / math.sqrt(head_dim)) for _ in range(4)]
                    pooling_attention_layer(Tensor(X), *W, cfg)
                else:
                    T = Tensor(X)
                    _RUNNERS[variant](T, T, T, cfg)
                wall = time.perf_counter_ns() - t0
            records.append(
                {
                    "variant": variant,
                    "L": L,
                    "B": B,
                    "stride": pool_stride,
                    "flops": fc.score_macs,
                    "wall_ns": int(wall),
                }
            )
    return records

