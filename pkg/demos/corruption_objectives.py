# Span corruption three ways, and the inverse that undoes all of them.

from collections import Counter

import numpy as np

from longseq.objectives import (
    FixedSpan, Vocab, decorrupt, model_based_corrupt, pegasus_corrupt, qa_format, t5_corrupt, unigram_oracle,
)

vocab = Vocab()
words = "the cat sat on the mat . a dog ran in the park . the cat saw the dog . it was a sunny day .".split()
src = vocab.encode(words)
starts = [0] + [i + 1 for i, w in enumerate(words[:-1]) if w == "."]


def show(ex):
    print(ex.objective)
    print("  input :", " ".join(vocab.decode(ex.input_ids)))
    print("  target:", " ".join(vocab.decode(ex.target_ids)))
    assert decorrupt(ex.input_ids, ex.target_ids, vocab) == src


show(t5_corrupt(src, 0.25, seed=1, vocab=vocab))

# Pegasus takes the sentences that overlap most with the rest of the document.

show(pegasus_corrupt(src, starts, 0.25, vocab))

# Model-based: over-mask, then keep only the spans a unigram model finds hardest.

oracle = unigram_oracle(Counter(src))
show(model_based_corrupt(src, oracle, 0.45, 0.5, seed=1, span_len_sampler=FixedSpan(2), vocab=vocab))

# The decoder budget is fixed: 16384 tokens at 1/16 always gives 1024 target tokens.

big = (vocab.first_corpus_id + np.random.default_rng(0).integers(0, 1000, 16384)).tolist()
ex = t5_corrupt(big, 1 / 16, seed=3)
print("masked:", ex.n_masked, "spans:", len(ex.spans))

# QA: the query is repeated at the front of every block.

q = vocab.encode("who sat ?".split())
print(" ".join(vocab.decode(qa_format(q, src[:14], 8, vocab))))
