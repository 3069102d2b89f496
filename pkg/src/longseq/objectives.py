"""Span-corruption pretraining objectives.

Three ways of choosing what the decoder must produce:

* T5-style random spans (fixed or mixed lengths), each replaced by a sentinel;
* Pegasus-style primary sentences, each replaced by one mask-sentence token;
* model-based selection, which over-masks and keeps only the spans an oracle
  finds hardest.

Targets are ``marker span marker span ...`` so that :func:`decorrupt` can
splice them back. Ties are always broken by lowest start offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .rouge import rouge_n
from .util import round_half_up

__all__ = [
    "Vocab",
    "SpanSpec",
    "CorruptionExample",
    "CorruptionError",
    "FixedSpan",
    "GeometricSpan",
    "ChoiceSpan",
    "parse_span_lengths",
    "t5_corrupt",
    "t5_mixed_corrupt",
    "sentence_scores",
    "select_primary_sentences",
    "pegasus_corrupt",
    "model_based_corrupt",
    "unigram_oracle",
    "decorrupt",
    "qa_format",
    "OBJECTIVES",
]

OBJECTIVES = ("t5_fixed", "t5_mixed", "pegasus", "model_based")


class Vocab:
    """Token table with a fixed block of reserved ids at the bottom.

    Layout: pad=0, doc_separator=1, mask_sentence=2, query_prefix=3, then
    ``n_sentinels`` sentinel ids, then corpus tokens.
    """

    PAD = 0
    DOC_SEP = 1
    MASK_SENTENCE = 2
    QUERY_PREFIX = 3
    _SENTINEL_BASE = 4

    def __init__(self, n_sentinels: int = 4096, tokens: Sequence[str] = ()):
        if n_sentinels < 1:
            raise ValueError("need at least one sentinel")
        self.n_sentinels = n_sentinels
        self.id_to_token: list[str] = []
        self.token_to_id: dict[str, int] = {}
        for t in tokens:
            self.add(t)

    @property
    def first_corpus_id(self) -> int:
        return self._SENTINEL_BASE + self.n_sentinels

    def __len__(self) -> int:
        return self.first_corpus_id + len(self.id_to_token)

    def sentinel(self, i: int) -> int:
        if not 0 <= i < self.n_sentinels:
            raise CorruptionError(f"sentinel index {i} out of range (vocab has {self.n_sentinels})")
        return self._SENTINEL_BASE + i

    def is_sentinel(self, tok: int) -> bool:
        return self._SENTINEL_BASE <= tok < self.first_corpus_id

    def is_placeholder(self, tok: int) -> bool:
        return tok == self.MASK_SENTENCE or self.is_sentinel(tok)

    def is_reserved(self, tok: int) -> bool:
        return tok < self.first_corpus_id

    def add(self, token: str) -> int:
        tid = self.token_to_id.get(token)
        if tid is None:
            tid = self.first_corpus_id + len(self.id_to_token)
            self.token_to_id[token] = tid
            self.id_to_token.append(token)
        return tid

    def encode(self, words: Sequence[str], grow: bool = True) -> list[int]:
        if grow:
            return [self.add(w) for w in words]
        return [self.token_to_id[w] for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for t in ids:
            if t >= self.first_corpus_id:
                out.append(self.id_to_token[t - self.first_corpus_id])
            elif self.is_sentinel(t):
                out.append(f"<extra_id_{t - self._SENTINEL_BASE}>")
            else:
                out.append(("<pad>", "<sep>", "<mask_sent>", "<query>")[t])
        return out

    def to_dict(self) -> dict:
        return {"n_sentinels": self.n_sentinels, "tokens": list(self.id_to_token)}

    @classmethod
    def from_dict(cls, d: Mapping) -> Vocab:
        return cls(int(d["n_sentinels"]), d.get("tokens", ()))


DEFAULT_VOCAB = Vocab()


class CorruptionError(ValueError):
    """Invalid corruption request or an inconsistent (input, target) pair."""

    def __init__(self, msg: str, position: int | None = None, token: int | None = None):
        super().__init__(msg)
        self.position = position
        self.token = token


@dataclass(frozen=True)
class SpanSpec:
    start: int
    length: int
    sentinel_id: int


@dataclass
class CorruptionExample:
    source_ids: list[int]
    input_ids: list[int]
    target_ids: list[int]
    spans: list[SpanSpec]
    objective: str

    @property
    def n_masked(self) -> int:
        return sum(s.length for s in self.spans)

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "input_ids": list(self.input_ids),
            "target_ids": list(self.target_ids),
            "spans": [[s.start, s.length, s.sentinel_id] for s in self.spans],
        }


# span-length samplers


@dataclass(frozen=True)
class FixedSpan:
    length: int = 5

    def __call__(self, rng: np.random.Generator) -> int:
        return self.length

    @property
    def mean(self) -> float:
        return float(self.length)


@dataclass(frozen=True)
class GeometricSpan:
    mean_length: float = 5.0

    def __call__(self, rng: np.random.Generator) -> int:
        return int(rng.geometric(1.0 / self.mean_length))

    @property
    def mean(self) -> float:
        return self.mean_length


@dataclass(frozen=True)
class ChoiceSpan:
    lengths: tuple[int, ...] = (3, 8, 32, 64)

    def __call__(self, rng: np.random.Generator) -> int:
        return int(self.lengths[rng.integers(len(self.lengths))])

    @property
    def mean(self) -> float:
        return float(np.mean(self.lengths))


def parse_span_lengths(spec: str):
    """``"5"`` -> fixed, ``"3,8,32,64"`` -> uniform choice, ``"geom:5"`` -> geometric."""
    spec = spec.strip()
    if spec.startswith("geom:"):
        return GeometricSpan(float(spec[5:]))
    lengths = tuple(int(x) for x in spec.split(",") if x.strip())
    if not lengths or min(lengths) < 1:
        raise ValueError(f"bad span length spec {spec!r}")
    return FixedSpan(lengths[0]) if len(lengths) == 1 else ChoiceSpan(lengths)


# T5 span denoising


def _check_source(source: Sequence[int], vocab: Vocab) -> list[int]:
    src = [int(t) for t in source]
    if not src:
        raise CorruptionError("empty source")
    for i, t in enumerate(src):
        if vocab.is_placeholder(t) or t < 0:
            raise CorruptionError(f"source holds reserved id {t} at {i}", position=i, token=t)
    return src


def _draw_lengths(budget: int, sampler, rng: np.random.Generator) -> list[int]:
    lengths: list[int] = []
    total = 0
    while total < budget:
        n = int(sampler(rng))
        if n < 1:
            raise CorruptionError(f"span sampler produced length {n}")
        n = min(n, budget - total)
        lengths.append(n)
        total += n
    return lengths


def _place_spans(L: int, lengths: list[int], rng: np.random.Generator) -> list[int]:
    """Uniform non-overlapping placement: interleave spans among unmasked tokens."""
    n = len(lengths)
    if n == 0:
        return []
    unmasked = L - sum(lengths)
    slots = np.sort(rng.choice(unmasked + n, size=n, replace=False))
    starts = []
    consumed = 0
    for i, slot in enumerate(slots.tolist()):
        starts.append(slot - i + consumed)
        consumed += lengths[i]
    return starts


def _apply_spans(src: list[int], spans: list[tuple[int, int]], markers: list[int]):
    inp: list[int] = []
    tgt: list[int] = []
    pos = 0
    out_spans = []
    for (start, length), marker in zip(spans, markers):
        inp.extend(src[pos:start])
        inp.append(marker)
        tgt.append(marker)
        tgt.extend(src[start : start + length])
        pos = start + length
        out_spans.append(SpanSpec(start, length, marker))
    inp.extend(src[pos:])
    return inp, tgt, out_spans


def _random_spans(src, mask_ratio, sampler, seed, vocab) -> list[tuple[int, int]]:
    if not 0 < mask_ratio < 0.5:
        raise CorruptionError(f"mask_ratio must be in (0, 0.5), got {mask_ratio}")
    L = len(src)
    budget = round_half_up(mask_ratio * L)
    rng = np.random.default_rng(seed)
    lengths = _draw_lengths(budget, sampler, rng)
    if len(lengths) > vocab.n_sentinels:
        raise CorruptionError(
            f"{len(lengths)} spans needed but only {vocab.n_sentinels} sentinels exist"
        )
    if budget > L:
        raise CorruptionError(f"cannot mask {budget} tokens of a {L}-token source")
    return list(zip(_place_spans(L, lengths, rng), lengths))


def t5_corrupt(
    source: Sequence[int],
    mask_ratio: float,
    span_len_sampler=FixedSpan(5),
    seed: int = 0,
    vocab: Vocab = DEFAULT_VOCAB,
    objective: str = "t5_fixed",
) -> CorruptionExample:
    """Mask exactly ``round(mask_ratio * L)`` tokens as sentinel-marked spans.

    The last drawn span is truncated so the budget is hit exactly.
    """
    src = _check_source(source, vocab)
    spans = _random_spans(src, mask_ratio, span_len_sampler, seed, vocab)
    markers = [vocab.sentinel(i) for i in range(len(spans))]
    inp, tgt, specs = _apply_spans(src, spans, markers)
    return CorruptionExample(src, inp, tgt, specs, objective)


def t5_mixed_corrupt(
    source: Sequence[int],
    mask_ratio: float,
    seed: int = 0,
    lengths: Sequence[int] = (3, 8, 32, 64),
    vocab: Vocab = DEFAULT_VOCAB,
) -> CorruptionExample:
    return t5_corrupt(source, mask_ratio, ChoiceSpan(tuple(lengths)), seed, vocab, "t5_mixed")


# Pegasus primary sentences


def _sentence_bounds(L: int, starts: Sequence[int]) -> list[tuple[int, int]]:
    starts = [int(s) for s in starts]
    if not starts or starts[0] != 0:
        raise CorruptionError("sentence boundaries must start at offset 0")
    if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] >= L:
        raise CorruptionError("sentence boundaries must be strictly increasing and inside the source")
    ends = starts[1:] + [L]
    return list(zip(starts, ends))


def sentence_scores(source: Sequence[int], sentence_starts: Sequence[int]) -> list[float]:
    """ROUGE-1 F1 of each sentence against the rest of the document."""
    src = list(source)
    bounds = _sentence_bounds(len(src), sentence_starts)
    scores = []
    for s, e in bounds:
        rest = src[:s] + src[e:]
        scores.append(rouge_n(src[s:e], rest, 1).f1)
    return scores


def select_primary_sentences(
    source: Sequence[int], sentence_starts: Sequence[int], target_ratio: float
) -> list[int]:
    """Indices (document order) of the greedily chosen primary sentences.

    Sentences are taken by descending score until their total length reaches
    ``target_ratio * L``.
    """
    src = list(source)
    bounds = _sentence_bounds(len(src), sentence_starts)
    if len(bounds) < 2:
        raise CorruptionError("need at least two sentences to score against the rest")
    scores = sentence_scores(src, sentence_starts)
    ranked = sorted(range(len(bounds)), key=lambda i: (-scores[i], bounds[i][0]))
    need = target_ratio * len(src)
    chosen, total = [], 0
    for i in ranked:
        if total >= need:
            break
        chosen.append(i)
        total += bounds[i][1] - bounds[i][0]
    return sorted(chosen)


def pegasus_corrupt(
    source: Sequence[int],
    sentence_starts: Sequence[int],
    target_ratio: float,
    vocab: Vocab = DEFAULT_VOCAB,
) -> CorruptionExample:
    if not 0 < target_ratio < 0.5:
        raise CorruptionError(f"target_ratio must be in (0, 0.5), got {target_ratio}")
    src = _check_source(source, vocab)
    bounds = _sentence_bounds(len(src), sentence_starts)
    chosen = select_primary_sentences(src, sentence_starts, target_ratio)
    spans = [(bounds[i][0], bounds[i][1] - bounds[i][0]) for i in chosen]
    inp, tgt, specs = _apply_spans(src, spans, [vocab.MASK_SENTENCE] * len(spans))
    return CorruptionExample(src, inp, tgt, specs, "pegasus")


# model-based denoising


def unigram_oracle(corpus_counts: Mapping[int, int], vocab_size: int | None = None) -> Callable:
    """Span loss = mean add-one-smoothed negative log unigram probability."""
    if not corpus_counts:
        raise ValueError("corpus_counts is empty")
    total = sum(corpus_counts.values())
    V = len(corpus_counts) if vocab_size is None else vocab_size
    denom = total + V

    def loss(span_tokens: Sequence[int]) -> float:
        return float(
            np.mean([-math.log((corpus_counts.get(int(t), 0) + 1) / denom) for t in span_tokens])
        )

    return loss


def model_based_corrupt(
    source: Sequence[int],
    oracle: Callable[[Sequence[int]], float],
    initial_mask_ratio: float,
    keep_fraction: float,
    seed: int = 0,
    span_len_sampler=FixedSpan(5),
    vocab: Vocab = DEFAULT_VOCAB,
) -> CorruptionExample:
    """Over-mask, then keep the ``ceil(keep_fraction * n)`` highest-loss spans.

    Spans that are not kept are restored in the input.
    """
    if not 0 < keep_fraction <= 1:
        raise CorruptionError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    src = _check_source(source, vocab)
    spans = _random_spans(src, initial_mask_ratio, span_len_sampler, seed, vocab)
    losses = []
    for start, length in spans:
        v = float(oracle(src[start : start + length]))
        if not math.isfinite(v):
            raise CorruptionError(f"oracle returned {v} for span at {start} (length {length})", position=start)
        losses.append(v)
    n_keep = math.ceil(keep_fraction * len(spans)) if spans else 0
    ranked = sorted(range(len(spans)), key=lambda i: (-losses[i], spans[i][0]))
    kept = sorted(ranked[:n_keep])
    kept_spans = [spans[i] for i in kept]
    markers = [vocab.sentinel(i) for i in range(len(kept_spans))]
    inp, tgt, specs = _apply_spans(src, kept_spans, markers)
    return CorruptionExample(src, inp, tgt, specs, "model_based")


# inverse and QA formatting


def decorrupt(
    input_ids: Sequence[int], target_ids: Sequence[int], vocab: Vocab = DEFAULT_VOCAB
) -> list[int]:
    """Splice target segments back over their placeholders in ``input_ids``."""
    segments: list[tuple[int, list[int]]] = []
    for pos, t in enumerate(target_ids):
        t = int(t)
        if vocab.is_placeholder(t):
            segments.append((t, []))
        elif not segments:
            raise CorruptionError("target does not start with a sentinel", position=pos, token=t)
        else:
            segments[-1][1].append(t)

    out: list[int] = []
    seg = 0
    last_sentinel = -1
    for pos, t in enumerate(input_ids):
        t = int(t)
        if not vocab.is_placeholder(t):
            out.append(t)
            continue
        if vocab.is_sentinel(t):
            if t <= last_sentinel:
                raise CorruptionError(f"sentinel {t} out of order in input", position=pos, token=t)
            last_sentinel = t
        if seg >= len(segments):
            raise CorruptionError(f"placeholder {t} in input has no target segment", position=pos, token=t)
        marker, tokens = segments[seg]
        if marker != t:
            raise CorruptionError(
                f"input placeholder {t} at {pos} but target segment {seg} is marked {marker}",
                position=pos,
                token=t,
            )
        out.extend(tokens)
        seg += 1
    if seg != len(segments):
        raise CorruptionError(f"{len(segments) - seg} target segment(s) have no placeholder in input")
    return out


def qa_format(
    query: Sequence[int], context: Sequence[int], block_size: int, vocab: Vocab = DEFAULT_VOCAB
) -> list[int]:
    """Repeat ``query_prefix + query`` at the start of every attention block."""
    head = [vocab.QUERY_PREFIX, *map(int, query)]
    room = block_size - len(head)
    if room < 1:
        raise ValueError(f"query of {len(query)} tokens does not fit a block of {block_size}")
    ctx = [int(t) for t in context]
    n_blocks = max(1, -(-len(ctx) // room))
    out: list[int] = []
    for b in range(n_blocks):
        piece = ctx[b * room : (b + 1) * room]
        out.extend(head)
        out.extend(piece)
        out.extend([vocab.PAD] * (room - len(piece)))
    return out
