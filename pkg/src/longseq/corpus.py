"""Long-sequence corpus assembly.

Two ways of building fixed-length pretraining sequences from short documents:
random concatenation, and similarity-linked packing (hashed bag-of-tokens
embeddings, spherical k-means, nearest neighbours inside each cluster, every
document used at most twice). Also exact per-source length statistics.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .objectives import Vocab, select_primary_sentences
from .util import JsonlError, derive_seed, read_jsonl

__all__ = [
    "Document",
    "SequenceBatch",
    "Embedding",
    "KMeansResult",
    "TagStats",
    "LengthStats",
    "SEPARATOR_ID",
    "tokenize",
    "load_documents",
    "assemble_random",
    "embed_document",
    "kmeans",
    "neighbor_order",
    "assemble_linked",
    "length_stats",
]

log = logging.getLogger(__name__)

# provenance entry standing for one doc_separator token
SEPARATOR_ID = "<sep>"
MAX_EMBED_TOKENS = 512
PRIMARY_FRACTION = 0.2
FALLBACK_SENTENCE_LEN = 32
MAX_USES = 2


@dataclass
class Document:
    id: str
    tokens: list[int]
    source_tag: str = "default"
    sentence_starts: list[int] | None = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"document {self.id!r} has no tokens")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class SequenceBatch:
    seq_len: int
    sequences: list[list[int]] = field(default_factory=list)
    provenance: list[list[tuple[str, int, int]]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def records(self):
        for toks, prov in zip(self.sequences, self.provenance):
            yield {"tokens": list(toks), "provenance": [list(p) for p in prov]}


@dataclass(frozen=True)
class Embedding:
    doc_id: str
    vector: np.ndarray
    counts: np.ndarray  # signed hashed counts; vector is counts / |counts|


def tokenize(text: str, vocab: Vocab) -> tuple[list[int], list[int]]:
    """Whitespace tokens plus sentence start offsets (split after . ! ?)."""
    words = text.split()
    ids = vocab.encode(words)
    starts = [0] if words else []
    for i, w in enumerate(words[:-1]):
        if w[-1] in ".!?":
            starts.append(i + 1)
    return ids, starts


def load_documents(path, vocab: Vocab) -> list[Document]:
    docs = []
    for lineno, rec in read_jsonl(path):
        try:
            doc_id, text = rec["id"], rec["text"]
        except KeyError as e:
            raise JsonlError(path, lineno, f"missing field {e.args[0]!r}") from None
        if not isinstance(text, str) or not text.split():
            raise JsonlError(path, lineno, "text must be a non-empty string")
        ids, starts = tokenize(text, vocab)
        docs.append(Document(str(doc_id), ids, str(rec.get("source", "default")), starts))
    return docs


# random concatenation


def assemble_random(store: Sequence[Document], S: int, seed: int, sep_id: int = Vocab.DOC_SEP) -> SequenceBatch:
    """Shuffle, join with separators, cut into consecutive S-token chunks.

    The trailing partial chunk is dropped; documents may straddle chunks.
    """
    if S < 1:
        raise ValueError("S must be positive")
    stream_len = sum(len(d) for d in store) + max(len(store) - 1, 0)
    if stream_len < S:
        raise ValueError(f"not enough tokens: stream has {stream_len}, need {S} (short by {S - stream_len})")
    order = np.random.default_rng(seed).permutation(len(store)).tolist()

    # pieces: (doc_id, start, end, tokens); separators are their own piece
    pieces: list[tuple[str, int, int, list[int]]] = []
    for k, i in enumerate(order):
        if k:
            pieces.append((SEPARATOR_ID, 0, 1, [sep_id]))
        d = store[i]
        pieces.append((d.id, 0, len(d), d.tokens))

    batch = SequenceBatch(S)
    cur: list[int] = []
    prov: list[tuple[str, int, int]] = []
    for doc_id, start, end, toks in pieces:
        pos = start
        while pos < end:
            take = min(end - pos, S - len(cur))
            cur.extend(toks[pos : pos + take])
            prov.append((doc_id, pos, pos + take))
            pos += take
            if len(cur) == S:
                batch.sequences.append(cur)
                batch.provenance.append(prov)
                cur, prov = [], []
    batch.diagnostics = {"mode": "random", "dropped_tokens": len(cur), "n_documents": len(store)}
    return batch


# embeddings and clustering


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized."""
    z = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def token_hash(tokens, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate and +-1 sign for each token id."""
    h = _mix64(np.asarray(tokens, dtype=np.int64))
    coord = (h % np.uint64(dim)).astype(np.intp)
    sign = np.where((h >> np.uint64(63)) == 1, -1.0, 1.0)
    return coord, sign


def embedding_input(doc: Document) -> list[int]:
    """Tokens fed to the embedding: primary sentences for long documents."""
    if len(doc) <= MAX_EMBED_TOKENS:
        return list(doc.tokens)
    starts = doc.sentence_starts or list(range(0, len(doc), FALLBACK_SENTENCE_LEN))
    if len(starts) < 2:
        return list(doc.tokens)
    chosen = select_primary_sentences(doc.tokens, starts, PRIMARY_FRACTION)
    ends = list(starts[1:]) + [len(doc)]
    out: list[int] = []
    for i in chosen:
        out.extend(doc.tokens[starts[i] : ends[i]])
    return out


def _bag_counts(tokens: Sequence[int], dim: int) -> np.ndarray:
    coord, sign = token_hash(tokens, dim)
    c = np.zeros(dim, dtype=np.int64)
    np.add.at(c, coord, sign.astype(np.int64))
    if not c.any():
        # every coordinate cancelled; fall back to a fixed unit vector
        c[0] = 1
    return c


def _bag_vector(tokens: Sequence[int], dim: int) -> np.ndarray:
    c = _bag_counts(tokens, dim).astype(np.float64)
    return c / np.linalg.norm(c)


def embed_document(doc: Document, dim: int = 256) -> Embedding:
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    c = _bag_counts(embedding_input(doc), dim)
    return Embedding(doc.id, c / np.linalg.norm(c.astype(np.float64)), c)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]

    def clusters(self) -> list[list[int]]:
        return [np.flatnonzero(self.labels == k).tolist() for k in range(len(self.centroids))]


def _normalize_rows(M: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(M, axis=1, keepdims=True)
    return np.divide(M, n, out=np.zeros_like(M), where=n > 0)


def _inertia(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    return float(np.sum(1.0 - np.einsum("ij,ij->i", X, C[labels])))


def _plus_plus(X: np.ndarray, K: int, rng: np.random.Generator) -> list[int]:
    n = len(X)
    chosen = [int(rng.integers(n))]
    best = 1.0 - X @ X[chosen[0]]
    for _ in range(1, K):
        d = np.clip(best, 0.0, None)
        d[chosen] = 0.0
        total = d.sum()
        if total <= 0:
            # all remaining points coincide with a centre
            nxt = next(i for i in range(n) if i not in chosen)
        else:
            nxt = int(rng.choice(n, p=d / total))
        chosen.append(nxt)
        best = np.minimum(best, 1.0 - X @ X[nxt])
    return chosen


def kmeans(embeddings: Sequence[Embedding] | np.ndarray, K: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    """Spherical Lloyd's k-means with k-means++ seeding.

    Distance is 1 - cosine. Empty clusters are re-seeded with the point
    farthest from its centre, so every cluster ends non-empty.
    """
    X = np.asarray([e.vector for e in embeddings] if not isinstance(embeddings, np.ndarray) else embeddings, dtype=np.float64)
    n = len(X)
    if not 1 <= K <= n:
        raise ValueError(f"K must be in [1, {n}], got {K}")
    X = _normalize_rows(X)
    rng = np.random.default_rng(seed)
    C = X[_plus_plus(X, K, rng)].copy()
    labels = np.argmax(X @ C.T, axis=1)
    labels = _fill_empty(X, C, labels, K)
    C = _centroids(X, labels, K, C)
    history = [_inertia(X, C, labels)]
    for _ in range(max_iters):
        new = np.argmax(X @ C.T, axis=1)
        new = _fill_empty(X, C, new, K)
        if np.array_equal(new, labels):
            break
        labels = new
        C = _centroids(X, labels, K, C)
        history.append(_inertia(X, C, labels))
    return KMeansResult(labels, C, history)


def _fill_empty(X, C, labels, K):
    labels = labels.copy()
    for k in range(K):
        if np.any(labels == k):
            continue
        sizes = np.bincount(labels, minlength=K)
        dist = 1.0 - np.einsum("ij,ij->i", X, C[labels])
        dist[sizes[labels] < 2] = -np.inf
        far = int(np.argmax(dist))
        labels[far] = k
        C[k] = X[far]
    return labels


def _centroids(X, labels, K, prev):
    C = np.zeros((K, X.shape[1]))
    np.add.at(C, labels, X)
    norms = np.linalg.norm(C, axis=1)
    for k in range(K):
        C[k] = C[k] / norms[k] if norms[k] > 0 else prev[k]
    return C


def neighbor_order(E: np.ndarray, members: Sequence[int], seed_doc: int) -> list[int]:
    """Cluster members other than ``seed_doc`` by descending cosine, ties by index.

    Integer rows (hashed counts) are ranked exactly: cosines of count vectors
    tie often, and float rounding would break those ties arbitrarily.
    """
    if np.issubdtype(E.dtype, np.integer):
        rows = E[members]
        dots = (rows @ E[seed_doc]).tolist()
        norms = np.einsum("ij,ij->i", rows, rows).tolist()
        # sign(cos) * cos^2, up to the seed's constant norm, is monotone in cos
        keyed = [(-Fraction(d * abs(d), n), m) for d, n, m in zip(dots, norms, members) if m != seed_doc]
    else:
        sims = E[members] @ E[seed_doc]
        keyed = [(-float(x), m) for x, m in zip(sims, members) if m != seed_doc]
    return [m for _, m in sorted(keyed)]


def _assemble_cluster(store, E, counts, members, S, top_k, usage, sep_id):
    """Sequential pass over one cluster; mutates ``usage`` for its own members only."""
    sequences, provenance, max_sims = [], [], []
    discarded = 0
    for seed_doc in members:
        if usage[seed_doc] >= MAX_USES:
            continue
        picked = [seed_doc]
        length = len(store[seed_doc])
        candidates = [m for m in neighbor_order(counts, members, seed_doc) if usage[m] < MAX_USES][:top_k]
        for m in candidates:
            if length >= S:
                break
            picked.append(m)
            length += 1 + len(store[m])
        if length < S:
            discarded += 1
            continue
        toks: list[int] = []
        prov: list[tuple[str, int, int]] = []
        used = []
        for k, m in enumerate(picked):
            if len(toks) == S:
                break
            if k:
                toks.append(sep_id)
                prov.append((SEPARATOR_ID, 0, 1))
                if len(toks) == S:
                    break
            d = store[m]
            take = min(len(d), S - len(toks))
            toks.extend(d.tokens[:take])
            prov.append((d.id, 0, take))
            used.append(m)
        for m in used:
            usage[m] += 1
        sequences.append(toks)
        provenance.append(prov)
        if len(used) > 1:
            sub = E[used] @ E[used].T
            np.fill_diagonal(sub, -np.inf)
            max_sims.append(float(sub.max()))
        else:
            max_sims.append(None)
    return sequences, provenance, max_sims, discarded


def assemble_linked(
    store: Sequence[Document],
    S: int,
    K: int = 16,
    top_k: int = 32,
    seed: int = 0,
    dim: int = 256,
    max_iters: int = 100,
    threads: int = 1,
    sep_id: int = Vocab.DOC_SEP,
) -> SequenceBatch:
    """Pack each cluster's documents with their nearest neighbours.

    For every seed document (cluster order, then store order) neighbours are
    appended by descending similarity until the sequence reaches S tokens;
    it is then cut to exactly S. No document appears in more than two
    sequences. Seeds whose cluster runs out first are discarded and counted.
    """
    if S < 1:
        raise ValueError("S must be positive")
    total = sum(len(d) for d in store) + max(len(store) - 1, 0)
    if total < S:
        raise ValueError(f"not enough tokens: corpus has {total}, need {S} (short by {S - total})")
    with ThreadPoolExecutor(max(1, threads)) as pool:
        embedded = list(pool.map(lambda d: embed_document(d, dim), store))
    E = np.asarray([e.vector for e in embedded])
    counts = np.asarray([e.counts for e in embedded])
    km = kmeans(E, min(K, len(store)), seed=derive_seed(seed, "kmeans"), max_iters=max_iters)
    clusters = km.clusters()
    usage = [0] * len(store)

    def run(members):
        return _assemble_cluster(store, E, counts, members, S, top_k, usage, sep_id)

    # clusters own disjoint documents, so their passes never touch the same counters
    with ThreadPoolExecutor(max(1, threads)) as pool:
        results = list(pool.map(run, clusters))

    batch = SequenceBatch(S)
    max_sims: list = []
    discarded = 0
    for seqs, provs, sims, disc in results:
        batch.sequences.extend(seqs)
        batch.provenance.extend(provs)
        max_sims.extend(sims)
        discarded += disc
    batch.diagnostics = {
        "mode": "linked",
        "n_documents": len(store),
        "clusters": len(clusters),
        "discarded_sequences": discarded,
        "max_usage": max(usage) if usage else 0,
        "max_pair_similarity": max_sims,
        "kmeans_inertia": km.inertia,
    }
    log.info("linked assembly: %d sequences, %d discarded", len(batch.sequences), discarded)
    return batch


# length statistics


@dataclass(frozen=True)
class TagStats:
    count: int
    total_tokens: int
    mean: Fraction
    median: Fraction
    histogram: list[tuple[int, int, int]]

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "total_tokens": self.total_tokens,
            "mean": float(self.mean),
            "median": float(self.median),
            "histogram": [list(b) for b in self.histogram],
        }


@dataclass(frozen=True)
class LengthStats:
    overall: TagStats
    by_source: dict[str, TagStats]

    def to_json(self) -> dict:
        return {
            "overall": self.overall.to_json(),
            "by_source": {k: v.to_json() for k, v in sorted(self.by_source.items())},
        }


def _tag_stats(lengths: list[int]) -> TagStats:
    if not lengths:
        return TagStats(0, 0, Fraction(0), Fraction(0), [])
    xs = sorted(lengths)
    n = len(xs)
    total = sum(xs)
    mid = n // 2
    median = Fraction(xs[mid]) if n % 2 else Fraction(xs[mid - 1] + xs[mid], 2)
    # log2-spaced bins [2^k, 2^(k+1))
    bins: dict[int, int] = {}
    for x in xs:
        k = x.bit_length() - 1
        bins[k] = bins.get(k, 0) + 1
    hist = [(1 << k, 1 << (k + 1), bins.get(k, 0)) for k in range(min(bins), max(bins) + 1)]
    return TagStats(n, total, Fraction(total, n), median, hist)


def length_stats(store: Sequence[Document]) -> LengthStats:
    by_tag: dict[str, list[int]] = {}
    for d in store:
        by_tag.setdefault(d.source_tag, []).append(len(d))
    return LengthStats(
        _tag_stats([len(d) for d in store]),
        {tag: _tag_stats(v) for tag, v in by_tag.items()},
    )
