import json

import numpy as np
import pytest

from longseq.corpus import Document


def topic_corpus(n_docs, n_topics=8, seed=0, min_len=20, max_len=120, words_per_topic=40):
    """Documents drawn from disjoint per-topic vocabularies."""
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_docs):
        topic = i % n_topics
        base = 5000 + topic * words_per_topic
        n = int(rng.integers(min_len, max_len + 1))
        toks = (base + rng.integers(0, words_per_topic, size=n)).tolist()
        docs.append(Document(f"d{i}", toks, f"src{topic % 2}"))
    return docs


def synthetic_text(rng, n_sentences, words=("alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta")):
    out = []
    for _ in range(n_sentences):
        k = int(rng.integers(3, 9))
        sent = [words[int(j)] for j in rng.integers(0, len(words), size=k)]
        sent[-1] += "."
        out.extend(sent)
    return " ".join(out)


@pytest.fixture
def docs_jsonl(tmp_path):
    rng = np.random.default_rng(7)
    path = tmp_path / "docs.jsonl"
    with open(path, "w") as fh:
        for i in range(60):
            rec = {"id": f"doc{i}", "text": synthetic_text(rng, int(rng.integers(2, 12))), "source": ["web", "books"][i % 2]}
            fh.write(json.dumps(rec) + "\n")
    return path


# acceptance summary: one line per criterion, printed after the run

_acceptance: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__ != "test_acceptance":
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _acceptance[item.name] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        title, status = _acceptance[name]
        terminalreporter.write_line(f"{status}  {name}: {title}")
