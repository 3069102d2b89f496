from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longseq.rouge import RougeScore, lcs_length, rouge_l, rouge_n

tokens = st.lists(st.sampled_from("abcde"), max_size=10)


def brute_lcs(a, b):
    """Longest subsequence of ``a`` that is also a subsequence of ``b``, by enumeration."""

    def is_subseq(s, t):
        it = iter(t)
        return all(x in it for x in s)

    for k in range(min(len(a), len(b)), 0, -1):
        if any(is_subseq(c, b) for c in combinations(a, k)):
            return k
    return 0


def brute_rouge_n(cand, ref, n):
    cgrams = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
    rgrams = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
    pool = list(rgrams)
    overlap = 0
    for g in cgrams:
        if g in pool:
            pool.remove(g)
            overlap += 1
    return overlap, len(cgrams), len(rgrams)


class TestRougeN:
    def test_identity(self):
        s = rouge_n(list("abcab"), list("abcab"), 1)
        assert s.precision == s.recall == s.f1 == 1.0

    def test_disjoint(self):
        assert rouge_n(["a", "b"], ["c", "d"], 1) == RougeScore(0.0, 0.0, 0.0)

    def test_clipping(self):
        s = rouge_n(["a", "b", "a"], ["a", "a", "c"], 1)
        assert s.precision == pytest.approx(2 / 3) and s.recall == pytest.approx(2 / 3)

    def test_empty_ngram_sets(self):
        assert rouge_n(["a"], ["a", "b"], 2) == RougeScore(0.0, 0.0, 0.0)

    def test_bad_n(self):
        with pytest.raises(ValueError):
            rouge_n(["a"], ["a"], 0)

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_against_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        cand = list(rng.integers(0, 4, size=int(rng.integers(0, 9))))
        ref = list(rng.integers(0, 4, size=int(rng.integers(0, 9))))
        ov, nc, nr = brute_rouge_n(cand, ref, n)
        assert rouge_n(cand, ref, n) == RougeScore.from_counts(ov, nc, nr)

    @settings(max_examples=200, deadline=None)
    @given(tokens, tokens, st.integers(1, 3))
    def test_f1_symmetric(self, a, b, n):
        x, y = rouge_n(a, b, n), rouge_n(b, a, n)
        assert x.precision == y.recall and x.recall == y.precision
        assert x.f1 == pytest.approx(y.f1, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(tokens, st.lists(st.sampled_from("abcde"), min_size=2, max_size=10), st.data())
    def test_appending_reference_ngram_keeps_recall(self, cand, ref, data):
        n = data.draw(st.integers(1, len(ref)))
        i = data.draw(st.integers(0, len(ref) - n))
        before = rouge_n(cand, ref, n).recall
        after = rouge_n(cand + ref[i : i + n], ref, n).recall
        assert after >= before


class TestRougeL:
    def test_identity(self):
        assert rouge_l(list("abc"), list("abc")).f1 == 1.0

    def test_hand_table(self):
        s = rouge_l(["a", "x", "b", "y"], ["a", "b"])
        assert lcs_length(["a", "x", "b", "y"], ["a", "b"]) == 2
        assert s.recall == 1.0 and s.precision == 0.5

    def test_empty_candidate(self):
        assert rouge_l([], ["a"]) == RougeScore(0.0, 0.0, 0.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_against_subsequence_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = list(rng.integers(0, 4, size=int(rng.integers(0, 9))))
        b = list(rng.integers(0, 4, size=int(rng.integers(0, 9))))
        k = brute_lcs(a, b)
        assert lcs_length(a, b) == k
        assert rouge_l(a, b) == RougeScore.from_counts(k, len(a), len(b))

    @settings(max_examples=200, deadline=None)
    @given(tokens, tokens)
    def test_lcs_bounded(self, a, b):
        assert lcs_length(a, b) <= min(len(a), len(b))
        assert lcs_length(a, b) == lcs_length(b, a)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 20), st.integers(1, 20), st.integers(1, 20))
def test_f1_is_harmonic_mean(ov, nc, nr):
    ov = min(ov, nc, nr)
    s = RougeScore.from_counts(ov, nc, nr)
    p, r = s.precision, s.recall
    assert s.f1 == (2 * p * r / (p + r) if p + r else 0.0)
