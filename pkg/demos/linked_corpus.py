# Random packing vs linked packing of short documents into long sequences.

from collections import Counter

import numpy as np

from longseq.corpus import SEPARATOR_ID, Document, assemble_linked, assemble_random, length_stats

rng = np.random.default_rng(0)
docs = []
for i in range(400):
    topic = i % 5
    n = int(rng.integers(30, 90))
    docs.append(Document(f"d{i}", (10000 + 50 * topic + rng.integers(0, 50, n)).tolist(), f"topic{topic}"))

print(length_stats(docs).overall)

rand = assemble_random(docs, 512, seed=0)
linked = assemble_linked(docs, 512, K=5, seed=0)


def purity(batch):
    """Share of each sequence's documents that come from its majority topic."""
    out = []
    for prov in batch.provenance:
        topics = [int(d[1:]) % 5 for d, _, _ in prov if d != SEPARATOR_ID]
        out.append(Counter(topics).most_common(1)[0][1] / len(topics))
    return np.mean(out)


print("random  sequences:", len(rand.sequences), "topic purity: %.2f" % purity(rand))
print("linked  sequences:", len(linked.sequences), "topic purity: %.2f" % purity(linked))
print("max document reuse:", linked.diagnostics["max_usage"])
