"""Acceptance gate. Run ``pytest tests/test_acceptance.py`` for the per-criterion summary."""

import decimal
import json
import math
import time
from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from conftest import synthetic_text, topic_corpus
from longseq import attention, checks
from longseq.cli import main
from longseq.corpus import SEPARATOR_ID, assemble_linked, embed_document, kmeans, neighbor_order
from longseq.objectives import (
    ChoiceSpan,
    FixedSpan,
    Vocab,
    decorrupt,
    model_based_corrupt,
    pegasus_corrupt,
    qa_format,
    select_primary_sentences,
    t5_corrupt,
    unigram_oracle,
)
from longseq.rouge import lcs_length, rouge_l, rouge_n
from longseq.util import derive_seed

V = Vocab()
BASE = V.first_corpus_id
VARIANTS = ("full", "block", "overlap", "global", "pooling")


def corpus_tokens(rng, n, vocab=50):
    return (BASE + rng.integers(0, vocab, size=n)).tolist()


def n_corpus(ids):
    return sum(1 for t in ids if not V.is_placeholder(t))


def test_c01_attention_equivalence():
    """Blockwise variants equal masked full attention (1e-10); B=L collapse (1e-12); under 30 s"""
    t0 = time.perf_counter()
    rep = checks.attention_equivalence(n_configs=200, max_len=64, seed=0)
    elapsed = time.perf_counter() - t0
    assert rep.n_cases >= 3 * 200 * 2 + 200
    assert rep.passed, rep.failures[:3]
    assert elapsed < 30, f"{elapsed:.1f} s"


def test_c02_gradient_suite():
    """Finite-difference gradients, rel 1e-5 at h=1e-6, 50 seeds per variant incl. pooling layer; under 2 min"""
    t0 = time.perf_counter()
    reps = checks.gradient_suite(n_seeds=50, h=1e-6, tol=1e-5)
    elapsed = time.perf_counter() - t0
    assert set(reps) == set(VARIANTS)
    for name, rep in reps.items():
        assert rep.n_cases == 50
        assert rep.passed, (name, rep.failures[:2])
    assert elapsed < 120, f"{elapsed:.1f} s"


def test_c03_score_flops():
    """Instrumented score FLOPs equal the closed form for L=64..4096; full x4.0 and block x2.0 per doubling"""
    lengths = [64 * 2**k for k in range(7)]
    recs = attention.benchmark(variants=VARIANTS, lengths=lengths, block_size=64, pool_stride=16)
    by = {}
    for r in recs:
        cfg = attention.AttentionConfig(
            r["L"], r["B"], overlap=r["variant"] == "overlap", n_global=1 if r["variant"] == "global" else 0,
            pool_kernel=16, pool_stride=16, head_dim=8,
        )
        assert r["flops"] == attention.count_score_flops(r["variant"], cfg), r
        by[r["variant"], r["L"]] = r["flops"]
    for a, b in zip(lengths, lengths[1:]):
        assert by["full", b] / by["full", a] == 4.0
        assert by["block", b] / by["block", a] == 2.0


@pytest.mark.parametrize("L, ratio", [(8192, 1 / 8), (16384, 1 / 16)])
def test_c04_masking_arithmetic(L, ratio):
    """L=8192 at 1/8 and L=16384 at 1/16 give exactly 1024 target corpus tokens over 100 seeds"""
    rng = np.random.default_rng(L)
    src = corpus_tokens(rng, L, vocab=5000)
    for seed in range(100):
        ex = t5_corrupt(src, ratio, FixedSpan(5), seed=seed)
        assert n_corpus(ex.target_ids) == 1024, seed
        assert len(ex.input_ids) == L - 1024 + len(ex.spans)


def test_c05_model_based_budget():
    """Stage-1 budget 5120 of 16384, keep 20%: kept total 1024 +/- 5 and kept set equals brute-force top sort, 50 seeds"""
    rng = np.random.default_rng(5)
    src = corpus_tokens(rng, 16384, vocab=3000)
    counts = Counter(src)
    total, n_types = sum(counts.values()), len(counts)

    def brute_loss(span):
        return sum(-math.log((counts[t] + 1) / (total + n_types)) for t in span) / len(span)

    oracle = unigram_oracle(counts)
    for seed in range(50):
        stage1 = t5_corrupt(src, 5120 / 16384, FixedSpan(5), seed=seed)
        assert stage1.n_masked == 5120
        spans = [(s.start, s.length) for s in stage1.spans]
        losses = [brute_loss(src[s : s + n]) for s, n in spans]
        order = sorted(range(len(spans)), key=lambda i: (-losses[i], spans[i][0]))
        want = sorted(spans[i] for i in order[: math.ceil(0.2 * len(spans))])

        ex = model_based_corrupt(src, oracle, 5120 / 16384, 0.2, seed=seed)
        assert [(s.start, s.length) for s in ex.spans] == want, seed
        assert abs(ex.n_masked - 1024) <= 5
        assert decorrupt(ex.input_ids, ex.target_ids) == src


def _fuzz_source(rng):
    n = int(rng.integers(2, 400))
    src = corpus_tokens(rng, n, vocab=int(rng.integers(2, 200)))
    # separators and padding may appear in real sequences
    for pos in rng.integers(0, n, size=int(rng.integers(0, 3))):
        src[int(pos)] = int(rng.choice([Vocab.DOC_SEP, Vocab.PAD]))
    return src


def _fuzz_starts(rng, n):
    k = int(rng.integers(1, min(n, 25)))
    return [0] + sorted(int(x) for x in rng.choice(np.arange(1, n), size=k, replace=False))


@pytest.mark.parametrize("objective", ["t5_fixed", "t5_mixed", "pegasus", "model_based"])
def test_c06_round_trip(objective):
    """decorrupt(corrupt(x)) == x on 1000 fuzzed sequences per objective"""
    rng = np.random.default_rng(["t5_fixed", "t5_mixed", "pegasus", "model_based"].index(objective))
    failures = 0
    for i in range(1000):
        src = _fuzz_source(rng)
        ratio = float(rng.uniform(0.01, 0.49))
        if objective == "t5_fixed":
            ex = t5_corrupt(src, ratio, FixedSpan(int(rng.integers(1, 8))), seed=i)
        elif objective == "t5_mixed":
            ex = t5_corrupt(src, ratio, ChoiceSpan((3, 8, 32, 64)), seed=i, objective="t5_mixed")
        elif objective == "pegasus":
            ex = pegasus_corrupt(src, _fuzz_starts(rng, len(src)), ratio)
        else:
            oracle = unigram_oracle(Counter(src))
            ex = model_based_corrupt(src, oracle, ratio, float(rng.uniform(0.05, 1.0)), seed=i)
        failures += decorrupt(ex.input_ids, ex.target_ids) != src
    assert failures == 0


def _brute_rouge_n(cand, ref, n):
    cg = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
    pool = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
    n_ref, overlap = len(pool), 0
    for g in cg:
        if g in pool:
            pool.remove(g)
            overlap += 1
    p = overlap / len(cg) if cg else 0.0
    r = overlap / n_ref if n_ref else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def _brute_lcs(a, b):
    def is_subseq(s, t):
        it = iter(t)
        return all(x in it for x in s)

    for k in range(min(len(a), len(b)), 0, -1):
        if any(is_subseq(c, b) for c in combinations(a, k)):
            return k
    return 0


def test_c07_pegasus_selection_and_rouge():
    """Primary-sentence selection equals brute-force ROUGE ranking on 100 docs; ROUGE equals exhaustive oracle"""
    rng = np.random.default_rng(7)
    for _ in range(100):
        n_sent = int(rng.integers(2, 21))
        lens = rng.integers(1, 15, size=n_sent)
        src = corpus_tokens(rng, int(lens.sum()), vocab=int(rng.integers(3, 30)))
        starts = [0] + np.cumsum(lens)[:-1].tolist()
        ends = starts[1:] + [len(src)]
        ratio = float(rng.uniform(0.05, 0.45))
        scores = [_brute_rouge_n(src[s:e], src[:s] + src[e:], 1)[2] for s, e in zip(starts, ends)]
        ranked = sorted(range(n_sent), key=lambda i: (-scores[i], starts[i]))
        want, total = [], 0
        for i in ranked:
            if total >= ratio * len(src):
                break
            want.append(i)
            total += ends[i] - starts[i]
        assert select_primary_sentences(src, starts, ratio) == sorted(want)
        ex = pegasus_corrupt(src, starts, ratio)
        assert [s.start for s in ex.spans] == [starts[i] for i in sorted(want)]

    for _ in range(300):
        a = rng.integers(0, 4, size=int(rng.integers(0, 10))).tolist()
        b = rng.integers(0, 4, size=int(rng.integers(0, 10))).tolist()
        for n in (1, 2, 3):
            got = rouge_n(a, b, n)
            assert (got.precision, got.recall, got.f1) == _brute_rouge_n(a, b, n)
        k = _brute_lcs(a, b)
        assert lcs_length(a, b) == k
        p = k / len(a) if a else 0.0
        r = k / len(b) if b else 0.0
        got = rouge_l(a, b)
        assert (got.precision, got.recall) == (p, r)
        assert got.f1 == (2 * p * r / (p + r) if p + r else 0.0)


def test_c08_linked_assembly():
    """1000-doc corpus: usage <= 2, every sequence exactly S, neighbor order equals brute-force cosine sort"""
    store = topic_corpus(1000, n_topics=12, seed=8)
    S, K, top_k = 512, 12, 32
    batch = assemble_linked(store, S, K=K, top_k=top_k, seed=3, threads=4)
    assert batch.sequences
    assert all(len(s) == S for s in batch.sequences)
    usage = Counter(d for prov in batch.provenance for d, _, _ in prov if d != SEPARATOR_ID)
    assert max(usage.values()) <= 2

    # brute-force cosine ranking within each cluster, in 60-digit decimals
    emb = [embed_document(d) for d in store]
    E = np.array([e.vector for e in emb])
    C = np.array([e.counts for e in emb])
    bags = [[int(x) for x in c] for c in C]
    ctx = decimal.Context(prec=60)

    def cosine(a, b):
        dot = sum(x * y for x, y in zip(bags[a], bags[b]))
        den = ctx.sqrt(decimal.Decimal(sum(x * x for x in bags[a]) * sum(y * y for y in bags[b])))
        return ctx.divide(decimal.Decimal(dot), den).quantize(decimal.Decimal(10) ** -40, context=ctx)

    def brute_order(seed_doc, members):
        return [m for _, m in sorted((-cosine(seed_doc, m), m) for m in members if m != seed_doc)]

    clusters = kmeans(E, K, seed=derive_seed(3, "kmeans")).clusters()
    orders = {}
    for members in clusters:
        for seed_doc in members:
            orders[seed_doc] = brute_order(seed_doc, members)
            assert neighbor_order(C, members, seed_doc) == orders[seed_doc]

    # replay the packing from the brute-force order and compare whole sequences
    used = [0] * len(store)
    replay = []
    for members in clusters:
        for seed_doc in members:
            if used[seed_doc] >= 2:
                continue
            order = orders[seed_doc]
            picked, length = [seed_doc], len(store[seed_doc])
            for m in [m for m in order if used[m] < 2][:top_k]:
                if length >= S:
                    break
                picked.append(m)
                length += 1 + len(store[m])
            if length < S:
                continue
            toks, contributed = [], []
            for j, m in enumerate(picked):
                if len(toks) >= S:
                    break
                if j:
                    toks.append(Vocab.DOC_SEP)
                    if len(toks) >= S:
                        break
                contributed.append(m)
                toks.extend(store[m].tokens[: S - len(toks)])
            for m in contributed:
                used[m] += 1
            replay.append(toks)
    assert replay == batch.sequences


def _cli(*argv):
    return main([str(a) for a in argv])


def test_c09_cli_determinism(tmp_path, capsys):
    """Every CLI command twice with identical flags gives byte-identical output, including --threads > 1"""
    rng = np.random.default_rng(9)
    docs = tmp_path / "docs.jsonl"
    with open(docs, "w") as fh:
        for i in range(150):
            fh.write(json.dumps({"id": f"d{i}", "text": synthetic_text(rng, int(rng.integers(2, 15))),
                                 "source": ["web", "books", "news"][i % 3]}) + "\n")

    def twice(tag, argv, outputs, strip=None):
        blobs = []
        for run in ("a", "b"):
            paths = {k: tmp_path / f"{tag}.{run}.{k}" for k in outputs}
            args = [a.format(**paths) if isinstance(a, str) else a for a in argv]
            code = _cli(*args)
            assert code == 0, (tag, capsys.readouterr().err)
            blob = b""
            for k in outputs:
                data = paths[k].read_bytes()
                if strip:
                    data = strip(data)
                blob += data
                for side in (".vocab.json", ".diagnostics.json"):
                    extra = tmp_path / f"{tag}.{run}.{k}{side}"
                    if extra.exists():
                        blob += extra.read_bytes()
            blobs.append(blob)
        assert blobs[0] == blobs[1], tag
        return tmp_path / f"{tag}.a.out"

    rnd = twice("rand", ["assemble", "--input", str(docs), "--output", "{out}", "--seq-len", "256", "--seed", "4"], ["out"])
    for threads in ("1", "3"):
        twice(f"linked{threads}", ["assemble", "--input", str(docs), "--output", "{out}", "--mode", "linked",
                                   "--seq-len", "96", "--clusters", "4", "--threads", threads], ["out"])
    for obj in ("t5", "t5_mixed", "pegasus", "model_based"):
        for threads in ("1", "4"):
            twice(f"corrupt-{obj}-{threads}", ["corrupt", "--input", str(rnd), "--output", "{out}", "--seq-len", "256",
                                               "--objective", obj, "--mask-ratio", "0.125", "--threads", threads], ["out"])
    twice("stats", ["stats", "--input", str(docs), "--output", "{out}"], ["out"])
    twice("attn", ["attn-check", "--n-configs", "20", "--output", "{out}"], ["out"])
    twice("grad", ["grad-check", "--n-seeds", "3", "--output", "{out}"], ["out"])

    def no_wall(data):
        recs = [json.loads(l) for l in data.decode().splitlines()]
        assert all(r["wall_ns"] > 0 for r in recs)
        return "\n".join(json.dumps({k: v for k, v in r.items() if k != "wall_ns"}) for r in recs).encode()

    twice("bench", ["bench", "--max-len", "512", "--output", "{out}"], ["out"], strip=no_wall)


def test_c10_qa_format():
    """100 random (query, context, B): each block starts with the query and length is a multiple of B"""
    rng = np.random.default_rng(10)
    for _ in range(100):
        B = int(rng.integers(2, 128))
        q = corpus_tokens(rng, int(rng.integers(0, B - 1)))
        ctx = corpus_tokens(rng, int(rng.integers(0, 1000)))
        out = qa_format(q, ctx, B)
        assert len(out) % B == 0 and len(out) >= B
        head = [V.QUERY_PREFIX] + q
        for b in range(0, len(out), B):
            assert out[b : b + len(head)] == head
        body = [t for i, t in enumerate(out) if i % B >= len(head) and t != V.PAD]
        assert body == ctx
