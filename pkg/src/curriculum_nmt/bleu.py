"""Sentence- and corpus-level BLEU on token sequences (0-100 scale).

Sentence BLEU uses add-one smoothing on the 2..4-gram precisions only, so an
identical pair scores exactly 100 and short or poor hypotheses still get a
non-zero, rankable score. An empty hypothesis scores 0. Corpus BLEU pools the
clipped counts over all pairs and is unsmoothed.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

MAX_N = 4


@dataclass(frozen=True)
class NgramStats:
    matches: tuple[int, ...]
    candidates: tuple[int, ...]
    hyp_len: int
    ref_len: int

    def __add__(self, other: NgramStats) -> NgramStats:
        return NgramStats(
            tuple(a + b for a, b in zip(self.matches, other.matches)),
            tuple(a + b for a, b in zip(self.candidates, other.candidates)),
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )


@dataclass(frozen=True)
class BleuScore:
    value: float
    brevity_penalty: float
    precisions: tuple[float, ...]

    def __float__(self) -> float:
        return self.value


def _ngrams(seq: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def ngram_stats(hyp: Sequence[Hashable], ref: Sequence[Hashable], max_n: int = MAX_N) -> NgramStats:
    matches, candidates = [], []
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        matches.append(sum(min(c, r[g]) for g, c in h.items()))
        candidates.append(max(0, len(hyp) - n + 1))
    return NgramStats(tuple(matches), tuple(candidates), len(hyp), len(ref))


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def _combine(precisions: list[float], bp: float) -> BleuScore:
    if bp == 0.0 or min(precisions) == 0.0:
        value = 0.0
    else:
        value = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    return BleuScore(value, bp, tuple(precisions))


def sentence_bleu(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> BleuScore:
    if len(ref) == 0:
        raise ValueError("sentence_bleu needs a non-empty reference")
    st = ngram_stats(hyp, ref)
    precisions = [st.matches[0] / st.candidates[0] if st.candidates[0] else 0.0]
    for m, c in zip(st.matches[1:], st.candidates[1:]):
        precisions.append((m + 1) / (c + 1))
    return _combine(precisions, brevity_penalty(st.hyp_len, st.ref_len))


def bleu_from_stats(st: NgramStats) -> BleuScore:
    """Unsmoothed BLEU from (possibly pooled) statistics."""
    precisions = [m / c if c else 0.0 for m, c in zip(st.matches, st.candidates)]
    return _combine(precisions, brevity_penalty(st.hyp_len, st.ref_len))


def corpus_bleu(pairs: Iterable[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> BleuScore:
    total = None
    for hyp, ref in pairs:
        if len(ref) == 0:
            raise ValueError("corpus_bleu needs non-empty references")
        st = ngram_stats(hyp, ref)
        total = st if total is None else total + st
    if total is None:
        raise ValueError("corpus_bleu needs at least one (hyp, ref) pair")
    return bleu_from_stats(total)
