"""Randomized verification suites behind ``attn-check`` and ``grad-check``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionConfig,
    build_block_mask,
    full_attention,
    local_attention,
    pooling_attention_layer,
    pooling_attention_reference,
)
from .numerics import Tensor, finite_difference_check, no_grad

EQUIV_TOL = 1e-10
COLLAPSE_TOL = 1e-12
GRAD_TOL = 1e-5
GRAD_STEP = 1e-6


@dataclass
class SuiteReport:
    name: str
    n_cases: int = 0
    failures: list[dict] = field(default_factory=list)
    worst: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {
            "suite": self.name,
            "cases": self.n_cases,
            "failures": self.failures,
            "worst_error": self.worst,
            "passed": self.passed,
        }


def random_config(rng: np.random.Generator, max_len: int, variant: str) -> AttentionConfig:
    L = int(rng.integers(1, max_len + 1))
    h = int(rng.integers(1, 9))
    if variant == "overlap":
        B = 2 * int(rng.integers(1, max(1, L // 2) + 1))
    else:
        B = int(rng.integers(1, L + 1))
    n_global = int(rng.integers(1, B + 1)) if variant == "global" else 0
    stride = int(rng.integers(1, L + 1))
    kernel = int(rng.integers(1, L + 1))
    return AttentionConfig(
        seq_len=L,
        block_size=B,
        overlap=variant == "overlap",
        n_global=n_global,
        pool_kernel=kernel,
        pool_stride=stride,
        head_dim=h,
    )


def attention_equivalence(n_configs: int = 200, max_len: int = 64, seed: int = 0) -> SuiteReport:
    """Blockwise variants vs masked full attention; pooling vs its loop reference.

    ``n_configs`` draws per variant. Each draw also checks the B = L collapse.
    """
    rng = np.random.default_rng(seed)
    rep = SuiteReport("attention_equivalence")
    with no_grad():
        for variant in ("block", "overlap", "global", "pooling"):
            for i in range(n_configs):
                cfg = random_config(rng, max_len, variant)
                L, h = cfg.seq_len, cfg.head_dim
                Q, K, V = (Tensor(rng.standard_normal((L, h))) for _ in range(3))
                if variant == "pooling":
                    X = rng.standard_normal((L, h))
                    W = [rng.standard_normal((h, h)) / math.sqrt(h) for _ in range(4)]
                    got = pooling_attention_layer(Tensor(X), *map(Tensor, W), cfg).data
                    want = pooling_attention_reference(X, *W, cfg.pool_kernel, cfg.pool_stride)
                    _record(rep, variant, i, cfg, float(np.max(np.abs(got - want))), EQUIV_TOL)
                    continue
                got = local_attention(Q, K, V, cfg).data
                want = full_attention(Q, K, V, build_block_mask(cfg)).data
                _record(rep, variant, i, cfg, float(np.max(np.abs(got - want))), EQUIV_TOL)
                whole = AttentionConfig(L, L, overlap=cfg.overlap and L % 2 == 0, head_dim=h)
                got = local_attention(Q, K, V, whole).data
                want = full_attention(Q, K, V).data
                _record(rep, variant + "/collapse", i, whole, float(np.max(np.abs(got - want))), COLLAPSE_TOL)
    return rep


def _record(rep: SuiteReport, variant: str, i: int, cfg, err: float, tol: float) -> None:
    rep.n_cases += 1
    rep.worst = max(rep.worst, err)
    if not err <= tol:
        rep.failures.append({"variant": variant, "case": i, "config": repr(cfg), "error": err, "tol": tol})


def _grad_case(variant: str, seed: int):
    """Scalar function and parameters for one finite-difference case."""
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 13))
    h = int(rng.integers(2, 5))
    B = int(rng.choice([2, 4, 6]))
    cfg = AttentionConfig(
        L,
        B,
        overlap=variant == "overlap",
        n_global=1 if variant == "global" else 0,
        head_dim=h,
        pool_kernel=2,
        pool_stride=2,
    )
    R = Tensor(rng.standard_normal((L, h)))
    if variant == "pooling":
        X = Tensor(rng.standard_normal((L, h)), requires_grad=True, name="X")
        W = [
            Tensor(rng.standard_normal((h, h)) / math.sqrt(h), requires_grad=True, name=n)
            for n in ("Wq", "Wk", "Wv", "Wo")
        ]
        return (lambda: (pooling_attention_layer(X, *W, cfg) * R).sum()), [X, *W]
    params = [Tensor(rng.standard_normal((L, h)), requires_grad=True, name=n) for n in "QKV"]
    if variant == "full":
        return (lambda: (full_attention(*params) * R).sum()), params
    return (lambda: (local_attention(*params, cfg) * R).sum()), params


GRAD_VARIANTS = ("full", "block", "overlap", "global", "pooling")


def gradient_suite(n_seeds: int = 50, variants=GRAD_VARIANTS, h: float = GRAD_STEP, tol: float = GRAD_TOL) -> dict[str, SuiteReport]:
    out = {}
    for variant in variants:
        rep = SuiteReport(f"gradients/{variant}")
        for seed in range(n_seeds):
            f, params = _grad_case(variant, seed)
            r = finite_difference_check(f, params, h=h, tolerance=tol)
            rep.n_cases += 1
            rep.worst = max(rep.worst, r.max_relative_error)
            if not r.passed:
                rep.failures.append({"seed": seed, "errors": r.per_parameter_errors})
        out[variant] = rep
    return out
