"""Per-example difficulty criteria and the score-table file format.

Every criterion returns a :class:`DifficultyScoreTable` where a larger score
means a harder example. The recovery criterion is the negated sentence BLEU
of a trained model's greedy output against the reference, so it lives in
[-100, 0]. Feature and embedding-norm criteria are mapped through the
empirical CDF into (0, 1].
"""

from __future__ import annotations

import bisect
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .bleu import sentence_bleu
from .corpus import RESERVED_TOKENS, ParallelCorpus
from .errors import ConfigError, ScoringError, TraceParseError

CRITERIA = ("recovery", "length", "rarity", "lm", "embed-norm", "loss-decline")

BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = RESERVED_TOKENS[1], RESERVED_TOKENS[2], RESERVED_TOKENS[3]


@dataclass
class DifficultyScoreTable:
    criterion: str
    scores: dict[int, float]
    cdf: bool = False
    raw: dict[int, float] | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for i, s in self.scores.items():
            if not math.isfinite(s):
                raise ValueError(f"non-finite score {s} for example {i}")

    def __len__(self) -> int:
        return len(self.scores)

    def ids(self) -> list[int]:
        return sorted(self.scores)

    def check_covers(self, corpus: ParallelCorpus) -> None:
        expected = set(corpus.ids)
        got = set(self.scores)
        if got != expected:
            missing = sorted(expected - got)[:10]
            extra = sorted(got - expected)[:10]
            raise ValueError(f"score table does not cover the corpus: missing {missing}, extra {extra}")


# -- recovery degree ----------------------------------------------------------

def recovery_difficulty(corpus: ParallelCorpus, predictor: Callable[[Sequence[str]], Sequence[str]],
                        chunk_size: int = 256) -> DifficultyScoreTable:
    """Score each example by -BLEU(predictor(src), tgt).

    ``predictor`` maps one source token sequence to a hypothesis. If it also
    has a ``translate_many`` method, sources are decoded in chunks through it.
    """
    many = getattr(predictor, "translate_many", None)
    scores: dict[int, float] = {}
    examples = corpus.examples
    for start in range(0, len(examples), chunk_size):
        chunk = examples[start:start + chunk_size]
        hyps = None
        if many is not None:
            try:
                hyps = many([ex.src_tokens for ex in chunk])
            except Exception:
                hyps = None  # fall through to per-example decoding to locate the failure
        if hyps is None:
            hyps = []
            for ex in chunk:
                try:
                    hyps.append(predictor(ex.src_tokens))
                except Exception as e:
                    raise ScoringError(f"predictor failed on example {ex.id}: {e}", ex.id) from e
        for ex, hyp in zip(chunk, hyps):
            scores[ex.id] = -sentence_bleu(list(hyp), ex.tgt_tokens).value
    return DifficultyScoreTable("recovery", scores, cdf=False, metadata={"level": "token"})


# -- CDF normalisation and explicit features ----------------------------------

def empirical_cdf(raw: Mapping[int, float]) -> dict[int, float]:
    if not raw:
        raise ValueError("empirical_cdf needs at least one value")
    ordered = sorted(raw.values())
    n = len(ordered)
    return {i: bisect.bisect_right(ordered, v) / n for i, v in raw.items()}


def source_unigram_freqs(corpus: ParallelCorpus) -> dict[str, float]:
    counts = Counter(t for ex in corpus.examples for t in ex.src_tokens)
    total = sum(counts.values())
    return {t: c / total for t, c in counts.items()}


def feature_difficulty(corpus: ParallelCorpus, feature: str) -> DifficultyScoreTable:
    if feature in ("sentence-length", "length"):
        raw = {ex.id: float(len(ex.src_tokens)) for ex in corpus.examples}
        name = "length"
    elif feature in ("word-rarity", "rarity"):
        freq = source_unigram_freqs(corpus)
        raw = {ex.id: -sum(math.log(freq[t]) for t in ex.src_tokens) for ex in corpus.examples}
        name = "rarity"
    else:
        raise ConfigError(f"unknown feature {feature!r}")
    return DifficultyScoreTable(name, empirical_cdf(raw), cdf=True, raw=raw)


# -- n-gram language model ----------------------------------------------------

class NgramLM:
    """Add-one smoothed n-gram model over the training vocabulary + UNK + EOS.

    Contexts are the previous ``order - 1`` tokens, left-padded with BOS. An
    unseen context falls back to the uniform distribution 1/V.
    """

    def __init__(self, order: int, vocab: Sequence[str]):
        self.order = order
        self.events: list[str] = sorted(set(vocab)) + [UNK_TOKEN, EOS_TOKEN]
        self._known = set(vocab)
        self.counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
        self.totals: Counter = Counter()

    @property
    def V(self) -> int:
        return len(self.events)

    def _norm(self, tok: str) -> str:
        return tok if tok in self._known or tok in (BOS_TOKEN, EOS_TOKEN) else UNK_TOKEN

    def context(self, history: Sequence[str]) -> tuple[str, ...]:
        k = self.order - 1
        if k == 0:
            return ()
        padded = [BOS_TOKEN] * k + [self._norm(t) for t in history]
        return tuple(padded[-k:])

    def prob(self, token: str, ctx: tuple[str, ...]) -> float:
        tok = self._norm(token)
        return (self.counts[ctx][tok] + 1) / (self.totals[ctx] + self.V) if ctx in self.counts \
            else 1.0 / self.V

    def distribution(self, ctx: tuple[str, ...]) -> dict[str, float]:
        return {e: self.prob(e, ctx) for e in self.events}

    def sentence_logprobs(self, sentence: Sequence[str]) -> list[float]:
        """Natural-log probabilities of each word followed by EOS."""
        out = []
        for i, tok in enumerate(list(sentence) + [EOS_TOKEN]):
            out.append(math.log(self.prob(tok, self.context(sentence[:i]))))
        return out


def train_ngram_lm(sentences: Sequence[Sequence[str]], order: int = 2) -> NgramLM:
    if order not in (1, 2, 3):
        raise ConfigError(f"n-gram order must be 1..3, got {order}")
    if not sentences:
        raise ValueError("train_ngram_lm needs at least one sentence")
    lm = NgramLM(order, {t for s in sentences for t in s})
    for s in sentences:
        for i, tok in enumerate(list(s) + [EOS_TOKEN]):
            ctx = lm.context(s[:i])
            lm.counts[ctx][tok] += 1
            lm.totals[ctx] += 1
    return lm


def per_word_cross_entropy(log_probs: Sequence[float], num_words: int) -> float:
    return -sum(log_probs) / num_words


def lm_difficulty(corpus: ParallelCorpus, lm: NgramLM, side: str = "source") -> DifficultyScoreTable:
    if side not in ("source", "target"):
        raise ConfigError(f"unknown side {side!r}")
    scores = {}
    for ex in corpus.examples:
        sent = ex.src_tokens if side == "source" else ex.tgt_tokens
        scores[ex.id] = per_word_cross_entropy(lm.sentence_logprobs(sent), len(sent))
    return DifficultyScoreTable("lm", scores, metadata={"order": str(lm.order), "side": side})


# -- embedding norm -----------------------------------------------------------

class EmbeddingTable:
    def __init__(self, vectors: Mapping[str, Sequence[float]]):
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise ConfigError(f"embedding vectors have mixed dimensions {sorted(dims)}")
        self.vectors = {t: np.asarray(v, dtype=np.float64) for t, v in vectors.items()}
        for t, v in self.vectors.items():
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"non-finite embedding for {t!r}")
        self.dim = dims.pop()

    def norm(self, token: str) -> float:
        v = self.vectors.get(token)
        if v is None:
            v = self.vectors.get(UNK_TOKEN)
            if v is None:
                raise ConfigError(f"token {token!r} missing and no {UNK_TOKEN} vector")
        return float(np.linalg.norm(v))


def embedding_norm_difficulty(corpus: ParallelCorpus, table: EmbeddingTable) -> DifficultyScoreTable:
    raw = {ex.id: sum(table.norm(t) for t in ex.src_tokens) for ex in corpus.examples}
    return DifficultyScoreTable("embed-norm", empirical_cdf(raw), cdf=True, raw=raw)


# -- loss decline -------------------------------------------------------------

def loss_decline_difficulty(prev_losses: Mapping[int, float],
                            cur_losses: Mapping[int, float]) -> DifficultyScoreTable:
    """Relative change of per-example sequence-sum NLL between two checkpoints."""
    if set(prev_losses) != set(cur_losses):
        missing = sorted(set(prev_losses) ^ set(cur_losses))
        raise ValueError(f"loss maps disagree on ids, e.g. {missing[0]}")
    scores = {}
    for i, prev in prev_losses.items():
        if prev <= 0:
            raise ValueError(f"previous loss for example {i} is {prev}; must be > 0")
        scores[i] = (cur_losses[i] - prev) / prev
    return DifficultyScoreTable("loss-decline", scores, metadata={"loss": "sequence-sum"})


# -- score-table TSV ----------------------------------------------------------

def write_score_table(table: DifficultyScoreTable, path) -> Path:
    """Write ``#criterion=..\\tcdf=..[\\tkey=value..]`` then ``id\\tscore[\\traw]`` rows."""
    path = Path(path)
    header = [f"criterion={table.criterion}", f"cdf={'true' if table.cdf else 'false'}"]
    header += [f"{k}={v}" for k, v in sorted(table.metadata.items())]
    lines = ["#" + "\t".join(header)]
    for i in table.ids():
        row = f"{i}\t{table.scores[i]:.6f}"
        if table.raw is not None:
            row += f"\t{table.raw[i]:.6f}"
        lines.append(row)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_score_table(path) -> DifficultyScoreTable:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise TraceParseError(f"{path}:1: missing '#criterion=...' header")
    meta = {}
    for part in lines[0][1:].split("\t"):
        key, sep, value = part.partition("=")
        if not sep:
            raise TraceParseError(f"{path}:1: malformed header field {part!r}")
        meta[key] = value
    if "criterion" not in meta or "cdf" not in meta:
        raise TraceParseError(f"{path}:1: header needs criterion= and cdf=")
    criterion, cdf = meta.pop("criterion"), meta.pop("cdf") == "true"
    scores: dict[int, float] = {}
    raw: dict[int, float] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        try:
            if len(cols) not in (2, 3):
                raise ValueError(f"expected 2 or 3 columns, got {len(cols)}")
            i = int(cols[0])
            if i in scores:
                raise ValueError(f"duplicate id {i}")
            scores[i] = float(cols[1])
            if not math.isfinite(scores[i]):
                raise ValueError("non-finite score")
            if len(cols) == 3:
                raw[i] = float(cols[2])
        except ValueError as e:
            raise TraceParseError(f"{path}:{lineno}: {e}") from e
    return DifficultyScoreTable(criterion, scores, cdf=cdf, raw=raw or None, metadata=meta)
