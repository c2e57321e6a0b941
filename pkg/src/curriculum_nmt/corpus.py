"""Parallel corpora: loading, tokenization, vocabularies, batching, synthetic tasks."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")

TOKENIZE_MODES = ("whitespace", "character")
SYNTHETIC_TASKS = ("copy", "substitution-cipher", "reversal-cipher", "noisy-cipher")


@dataclass(frozen=True)
class Example:
    id: int
    src_tokens: tuple[str, ...]
    tgt_tokens: tuple[str, ...]


@dataclass(frozen=True)
class ParallelCorpus:
    examples: tuple[Example, ...]
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.examples:
            raise ValueError("a parallel corpus needs at least one example")
        for i, ex in enumerate(self.examples):
            if ex.id != i:
                raise ValueError(f"example ids must be dense 0..N-1, got {ex.id} at position {i}")
            if not ex.src_tokens or not ex.tgt_tokens:
                raise ValueError(f"example {ex.id} has an empty side")

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    @property
    def ids(self) -> list[int]:
        return list(range(len(self.examples)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Sequence[str], Sequence[str]]], **metadata) -> ParallelCorpus:
        examples = tuple(
            Example(i, tuple(src), tuple(tgt)) for i, (src, tgt) in enumerate(pairs)
        )
        return cls(examples, dict(metadata))

    def subset(self, ids: Sequence[int]) -> ParallelCorpus:
        """Re-index the selected examples densely, keeping a map back to the old ids."""
        ids = list(ids)
        new = ParallelCorpus.from_pairs(
            (self.examples[i].src_tokens, self.examples[i].tgt_tokens) for i in ids
        )
        meta = {k: v for k, v in self.metadata.items() if k != "corrupted"}
        if "corrupted" in self.metadata:
            old_flags = set(self.metadata["corrupted"])
            meta["corrupted"] = [j for j, i in enumerate(ids) if i in old_flags]
        meta["parent_ids"] = ids
        return ParallelCorpus(new.examples, meta)


def tokenize(text: str, mode: str = "whitespace") -> list[str]:
    if mode == "whitespace":
        return text.split()
    if mode == "character":
        return [ch for ch in text if not ch.isspace()]
    raise ConfigError(f"unknown tokenization mode {mode!r}; expected one of {TOKENIZE_MODES}")


def _read_lines(path: Path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise OSError(f"cannot read corpus file {path}: {e}") from e


def load_parallel(src_path, tgt_path, mode: str = "whitespace") -> ParallelCorpus:
    """Read two line-aligned UTF-8 files into a corpus.

    Pairs where either side tokenizes to nothing are skipped; the skip count
    is logged and stored in the corpus metadata.
    """
    src_path, tgt_path = Path(src_path), Path(tgt_path)
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise AlignmentError(
            f"{src_path} has {len(src_lines)} lines but {tgt_path} has {len(tgt_lines)}",
            counts=(len(src_lines), len(tgt_lines)),
        )
    pairs = []
    skipped = 0
    for s, t in zip(src_lines, tgt_lines):
        src, tgt = tokenize(s, mode), tokenize(t, mode)
        if not src or not tgt:
            skipped += 1
            continue
        pairs.append((src, tgt))
    if skipped:
        log.info("skipped %d blank line pairs in %s / %s", skipped, src_path, tgt_path)
    if not pairs:
        raise AlignmentError(f"no usable line pairs in {src_path} / {tgt_path}", counts=(0, 0))
    return ParallelCorpus.from_pairs(
        pairs,
        source=str(src_path),
        target=str(tgt_path),
        tokenization=mode,
        skipped_blank=skipped,
    )


class Vocabulary:
    """Token <-> id bijection with ids 0..3 reserved for PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        self.itos: list[str] = list(RESERVED_TOKENS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate or reserved token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.itos[len(RESERVED_TOKENS):]


def build_vocab(corpus: ParallelCorpus, side: str = "source", min_freq: int = 1) -> Vocabulary:
    if side not in ("source", "target", "joint"):
        raise ConfigError(f"unknown vocabulary side {side!r}")
    if min_freq < 1:
        raise ConfigError("min_freq must be positive")
    counts: Counter[str] = Counter()
    for ex in corpus.examples:
        if side in ("source", "joint"):
            counts.update(ex.src_tokens)
        if side in ("target", "joint"):
            counts.update(ex.tgt_tokens)
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def encode(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    return [vocab.stoi.get(t, UNK) for t in tokens]


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    return [vocab.itos[i] for i in ids]


def example_length(ex: Example) -> int:
    return len(ex.src_tokens) + len(ex.tgt_tokens)


def make_batches(example_ids: Iterable[int], corpus: ParallelCorpus, max_tokens: int,
                 seed: int) -> list[list[int]]:
    """Shuffle ids with ``seed`` and pack them greedily under a token budget.

    A batch's budget counts source plus target tokens. An example that alone
    exceeds ``max_tokens`` becomes a singleton batch.
    """
    if max_tokens < 1:
        raise ConfigError("max_tokens must be positive")
    ids = np.asarray(sorted(set(example_ids)), dtype=np.int64)
    if ids.size == 0:
        return []
    order = np.random.default_rng(seed).permutation(ids)
    batches: list[list[int]] = []
    cur: list[int] = []
    used = 0
    for i in order.tolist():
        n = example_length(corpus[i])
        if cur and used + n > max_tokens:
            batches.append(cur)
            cur, used = [], 0
        cur.append(i)
        used += n
    if cur:
        batches.append(cur)
    return batches


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Generator settings for a desk-scale translation task.

    ``zipf`` skews source token frequencies (0 = uniform); rare tokens make
    examples harder to recover, which spreads the difficulty distribution.
    """

    task: str = "noisy-cipher"
    vocab_size: int = 50
    min_len: int = 3
    max_len: int = 12
    corrupt_fraction: float = 0.2
    rho: float = 0.5
    zipf: float = 0.0

    def validate(self) -> None:
        if self.task not in SYNTHETIC_TASKS:
            raise ConfigError(f"unknown synthetic task {self.task!r}; expected one of {SYNTHETIC_TASKS}")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError(f"empty length range [{self.min_len}, {self.max_len}]")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"corruption probability rho={self.rho} outside [0, 1]")
        if not 0.0 <= self.corrupt_fraction <= 1.0:
            raise ConfigError(f"corrupt_fraction={self.corrupt_fraction} outside [0, 1]")
        if self.zipf < 0:
            raise ConfigError("zipf exponent must be non-negative")


def generate_synthetic(task: SyntheticTaskSpec, n: int, seed: int) -> ParallelCorpus:
    task.validate()
    if n < 1:
        raise ConfigError("n must be positive")
    # independent streams so noise settings never perturb the clean data
    map_ss, src_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    V = task.vocab_size
    src_vocab = [f"s{i}" for i in range(V)]
    if task.task == "copy":
        mapping = {s: s for s in src_vocab}
    else:
        perm = np.random.default_rng(map_ss).permutation(V)
        mapping = {f"s{i}": f"t{int(perm[i])}" for i in range(V)}

    rng = np.random.default_rng(src_ss)
    if task.zipf > 0:
        w = 1.0 / np.arange(1, V + 1) ** task.zipf
        probs = w / w.sum()
    else:
        probs = None
    sources = []
    for _ in range(n):
        length = int(rng.integers(task.min_len, task.max_len + 1))
        sources.append([src_vocab[j] for j in rng.choice(V, size=length, p=probs)])

    targets = [[mapping[t] for t in s] for s in sources]
    corrupted: list[int] = []
    if task.task == "noisy-cipher":
        nrng = np.random.default_rng(noise_ss)
        n_bad = int(round(task.corrupt_fraction * n))
        corrupted = sorted(nrng.choice(n, size=n_bad, replace=False).tolist())
        tgt_vocab = sorted(set(mapping.values()))
        for i in corrupted:
            tgt = targets[i]
            for j in range(len(tgt)):
                if nrng.random() < task.rho and len(tgt_vocab) > 1:
                    choices = [t for t in tgt_vocab if t != tgt[j]]
                    tgt[j] = choices[int(nrng.integers(len(choices)))]
    if task.task == "reversal-cipher":
        targets = [t[::-1] for t in targets]

    return ParallelCorpus.from_pairs(
        zip(sources, targets),
        source="synthetic",
        generator={"task": task.task, "n": n, "seed": seed, **_spec_dict(task)},
        mapping=mapping,
        corrupted=corrupted,
        tokenization="whitespace",
    )


def _spec_dict(task: SyntheticTaskSpec) -> dict[str, Any]:
    return {k: getattr(task, k) for k in ("vocab_size", "min_len", "max_len",
                                           "corrupt_fraction", "rho", "zipf")}


def train_dev_split(corpus: ParallelCorpus, dev_fraction: float, seed: int
                    ) -> tuple[ParallelCorpus, ParallelCorpus]:
    """Hold out a seeded random fraction as a dev set; both halves re-indexed."""
    n = len(corpus)
    n_dev = int(round(dev_fraction * n))
    if n_dev < 1 or n_dev >= n:
        raise ConfigError(f"dev_fraction={dev_fraction} leaves an empty train or dev set for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    dev_ids = sorted(perm[:n_dev].tolist())
    dev_set = set(dev_ids)
    train_ids = [i for i in range(n) if i not in dev_set]
    return corpus.subset(train_ids), corpus.subset(dev_ids)
