"""Command-line driver: ``longseq <command> [flags]``.

Commands: assemble, corrupt, stats, attn-check, grad-check, bench.
Exit status is 0 on success, 1 when a check fails, 2 on bad input or usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import attention, checks, corpus, objectives
from .util import JsonlError, derive_seed, dumps, read_jsonl, write_jsonl

log = logging.getLogger("longseq")

COMMANDS = ("assemble", "corrupt", "stats", "attn-check", "grad-check", "bench")
OBJECTIVE_ALIASES = {"t5": "t5_fixed", "t5_fixed": "t5_fixed", "t5_mixed": "t5_mixed",
                     "pegasus": "pegasus", "model_based": "model_based"}


@dataclass
class RunConfig:
    command: str = "stats"
    input: str = ""
    output: str = ""
    seq_len: int = 16384
    seed: int = 0
    mode: str = "random"
    objective: str = "t5"
    mask_ratio: float = 0.0625
    span_lengths: str = ""  # empty: 5 for t5, 3,8,32,64 for t5_mixed
    initial_mask_ratio: float = 0.3125
    keep_fraction: float = 0.2
    block_size: int = 64
    overlap: bool = False
    n_global: int = 0
    pool_kernel: int = 16
    pool_stride: int = 16
    head_dim: int = 8
    clusters: int = 16
    top_k: int = 32
    embed_dim: int = 256
    max_len: int = 0  # 0: 64 for attn-check, 4096 for bench
    n_configs: int = 200
    n_seeds: int = 50
    threads: int = 1

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        raw = json.loads(text)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_parser() -> argparse.ArgumentParser:
    d = RunConfig()
    p = argparse.ArgumentParser(prog="longseq", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON RunConfig supplying defaults")
    p.add_argument("--dump-config", help="write the effective RunConfig here")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--seq-len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("random", "linked"))
    p.add_argument("--objective", choices=sorted(OBJECTIVE_ALIASES))
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--span-lengths", help='"5", "3,8,32,64" or "geom:5"')
    p.add_argument("--initial-mask-ratio", type=float)
    p.add_argument("--keep-fraction", type=float)
    p.add_argument("--block-size", type=int)
    p.add_argument("--overlap", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--n-global", type=int)
    p.add_argument("--pool-kernel", type=int)
    p.add_argument("--pool-stride", type=int)
    p.add_argument("--head-dim", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--n-configs", type=int)
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(**{k: None for k in dataclasses.asdict(d) if k != "command"})
    return p


def parse_config(argv=None) -> tuple[RunConfig, argparse.Namespace]:
    ns = build_parser().parse_args(argv)
    cfg = RunConfig.load(ns.config) if ns.config else RunConfig()
    updates = {"command": ns.command}
    for f in dataclasses.fields(RunConfig):
        v = getattr(ns, f.name, None)
        if f.name != "command" and v is not None:
            updates[f.name] = v
    return dataclasses.replace(cfg, **updates), ns


def _need(path: str, flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required for this command")
    return Path(path)


class UsageError(Exception):
    pass


def _write_text(path: str, text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_assemble(cfg: RunConfig) -> int:
    src = _need(cfg.input, "--input")
    out = _need(cfg.output, "--output")
    vocab = objectives.Vocab()
    docs = corpus.load_documents(src, vocab)
    if cfg.mode == "random":
        batch = corpus.assemble_random(docs, cfg.seq_len, derive_seed(cfg.seed, "assemble/shuffle"))
    else:
        batch = corpus.assemble_linked(
            docs,
            cfg.seq_len,
            K=cfg.clusters,
            top_k=cfg.top_k,
            seed=derive_seed(cfg.seed, "assemble/linked"),
            dim=cfg.embed_dim,
            threads=cfg.threads,
        )
    n = write_jsonl(out, batch.records())
    Path(f"{out}.vocab.json").write_text(dumps(vocab.to_dict()) + "\n", encoding="utf-8")
    Path(f"{out}.diagnostics.json").write_text(json.dumps(batch.diagnostics, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote %d sequences to %s", n, out)
    return 0


def _sentence_starts(tokens: list[int], vocab: objectives.Vocab | None) -> list[int]:
    """Sentence starts after . ! ? tokens and document separators."""
    if vocab is None:
        return list(range(0, len(tokens), corpus.FALLBACK_SENTENCE_LEN))
    starts = [0]
    for i, t in enumerate(tokens[:-1]):
        ends = t == objectives.Vocab.DOC_SEP or (
            t >= vocab.first_corpus_id and vocab.id_to_token[t - vocab.first_corpus_id][-1] in ".!?"
        )
        if ends:
            starts.append(i + 1)
    return starts


def cmd_corrupt(cfg: RunConfig) -> int:
    src = _need(cfg.input, "--input")
    out = _need(cfg.output, "--output")
    objective = OBJECTIVE_ALIASES[cfg.objective]
    vocab_path = Path(f"{src}.vocab.json")
    table = objectives.Vocab.from_dict(json.loads(vocab_path.read_text())) if vocab_path.exists() else None
    vocab = objectives.Vocab(table.n_sentinels) if table else objectives.Vocab()

    sequences = []
    for lineno, rec in read_jsonl(src):
        toks = rec.get("tokens")
        if not isinstance(toks, list) or not all(isinstance(t, int) for t in toks):
            raise JsonlError(src, lineno, "'tokens' must be a list of integers")
        if len(toks) != cfg.seq_len:
            raise JsonlError(src, lineno, f"sequence has {len(toks)} tokens, --seq-len is {cfg.seq_len}")
        sequences.append(toks)

    spans = cfg.span_lengths or ("3,8,32,64" if objective == "t5_mixed" else "5")
    sampler = objectives.parse_span_lengths(spans)
    oracle = None
    if objective == "model_based":
        counts: dict[int, int] = {}
        for toks in sequences:
            for t in toks:
                if not vocab.is_reserved(t):
                    counts[t] = counts.get(t, 0) + 1
        oracle = objectives.unigram_oracle(counts or {0: 1})

    def one(item):
        i, toks = item
        seed = derive_seed(cfg.seed, f"corrupt/{i}")
        if objective in ("t5_fixed", "t5_mixed"):
            ex = objectives.t5_corrupt(toks, cfg.mask_ratio, sampler, seed, vocab, objective)
        elif objective == "pegasus":
            ex = objectives.pegasus_corrupt(toks, _sentence_starts(toks, table), cfg.mask_ratio, vocab)
        else:
            ex = objectives.model_based_corrupt(
                toks, oracle, cfg.initial_mask_ratio, cfg.keep_fraction, seed, sampler, vocab
            )
        return ex.to_json()

    with ThreadPoolExecutor(max(1, cfg.threads)) as pool:
        records = list(pool.map(one, enumerate(sequences)))
    write_jsonl(out, records)
    log.info("wrote %d %s examples to %s", len(records), objective, out)
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    src = _need(cfg.input, "--input")
    docs = corpus.load_documents(src, objectives.Vocab())
    stats = corpus.length_stats(docs)
    _write_text(cfg.output, json.dumps(stats.to_json(), sort_keys=True, indent=2) + "\n")
    return 0


def _report(cfg: RunConfig, payload: dict, ok: bool) -> int:
    _write_text(cfg.output, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return 0 if ok else 1


def cmd_attn_check(cfg: RunConfig) -> int:
    rep = checks.attention_equivalence(cfg.n_configs, cfg.max_len or 64, cfg.seed)
    return _report(cfg, rep.to_json(), rep.passed)


def cmd_grad_check(cfg: RunConfig) -> int:
    reps = checks.gradient_suite(cfg.n_seeds)
    ok = all(r.passed for r in reps.values())
    return _report(cfg, {"passed": ok, "suites": [r.to_json() for r in reps.values()]}, ok)


def cmd_bench(cfg: RunConfig) -> int:
    max_len = cfg.max_len or 4096
    lengths = []
    L = 64
    while L <= max_len:
        lengths.append(L)
        L *= 2
    if not lengths:
        raise UsageError("--max-len must be at least 64 for bench")
    records = attention.benchmark(
        variants=("full", "block", "overlap", "global", "pooling"),
        lengths=lengths,
        block_size=cfg.block_size,
        pool_stride=cfg.pool_stride,
        head_dim=cfg.head_dim,
        seed=cfg.seed,
    )
    ok = True
    for r in records:
        acfg = attention.AttentionConfig(
            r["L"], r["B"], overlap=r["variant"] == "overlap",
            n_global=1 if r["variant"] == "global" else 0,
            pool_kernel=cfg.pool_stride, pool_stride=cfg.pool_stride, head_dim=cfg.head_dim,
        )
        expected = attention.count_score_flops(r["variant"], acfg)
        if expected != r["flops"]:
            log.error("%s L=%d: counted %d MACs, closed form %d", r["variant"], r["L"], r["flops"], expected)
            ok = False
    if cfg.output:
        write_jsonl(cfg.output, records)
    else:
        for r in records:
            print(dumps(r))
    return 0 if ok else 1


HANDLERS = {
    "assemble": cmd_assemble,
    "corrupt": cmd_corrupt,
    "stats": cmd_stats,
    "attn-check": cmd_attn_check,
    "grad-check": cmd_grad_check,
    "bench": cmd_bench,
}


def run(cfg: RunConfig) -> int:
    return HANDLERS[cfg.command](cfg)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("LONGSEQ_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg, ns = parse_config(argv)
        if ns.dump_config:
            cfg.save(ns.dump_config)
        return run(cfg)
    except (UsageError, JsonlError, FileNotFoundError, ValueError) as e:
        print(f"longseq: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
