from __future__ import annotations

import hashlib
import logging
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from ..bleu import corpus_bleu
from ..corpus import ParallelCorpus, Vocabulary, decode, encode, epoch_seed, make_batches
from .model import Batch, ModelConfig, batch_loss, collate, grad, greedy_decode_batch, init_model
from .optim import TrainState, adam_step

log = logging.getLogger(__name__)

StepCallback = Callable[[TrainState, float], None]


def ids_digest(ids: Iterable[int]) -> str:
    arr = np.asarray(sorted(ids), dtype="<i8")
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


class Translator:
    """Greedy decoder over a frozen copy of the parameters; safe to share."""

    def __init__(self, params: dict[str, torch.Tensor], src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                 max_len: int, batch_size: int = 128):
        self.params = {k: v.detach().clone() for k, v in params.items()}
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.max_len = max_len
        self.batch_size = batch_size

    def __call__(self, src_tokens: Sequence[str]) -> list[str]:
        return self.translate_many([src_tokens])[0]

    def translate_many(self, sources: Sequence[Sequence[str]]) -> list[list[str]]:
        encoded = [encode(s, self.src_vocab) for s in sources]
        # length-sorted batches keep padding low; output order is restored below
        order = sorted(range(len(encoded)), key=lambda i: (len(encoded[i]), i))
        out: list[list[str]] = [[] for _ in encoded]
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            hyps = greedy_decode_batch(self.params, [encoded[i] for i in idx], self.max_len)
            for i, h in zip(idx, hyps):
                out[i] = decode(h, self.tgt_vocab)
        return out


def dev_bleu(translator: Translator, dev: ParallelCorpus) -> float:
    hyps = translator.translate_many([ex.src_tokens for ex in dev.examples])
    return corpus_bleu((h, ex.tgt_tokens) for h, ex in zip(hyps, dev.examples)).value


class Trainer:
    """Owns a :class:`TrainState` and trains it on subsets of one corpus."""

    def __init__(self, cfg: ModelConfig, corpus: ParallelCorpus, src_vocab: Vocabulary,
                 tgt_vocab: Vocabulary, state: TrainState, max_tokens: int):
        cfg.validate()
        self.cfg = cfg
        self.corpus = corpus
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.state = state
        self.max_tokens = max_tokens
        self.encoded = [(encode(ex.src_tokens, src_vocab), encode(ex.tgt_tokens, tgt_vocab))
                        for ex in corpus.examples]
        self._batch_cache: tuple[str, int, list[list[int]]] | None = None
        self.last_loss: float | None = None

    @classmethod
    def create(cls, cfg: ModelConfig, corpus: ParallelCorpus, src_vocab: Vocabulary,
               tgt_vocab: Vocabulary, *, seed: int, peak_lr: float, warmup_steps: int,
               max_tokens: int) -> Trainer:
        state = TrainState.fresh(init_model(cfg, seed), peak_lr=peak_lr,
                                 warmup_steps=warmup_steps, seed=seed)
        return cls(cfg, corpus, src_vocab, tgt_vocab, state, max_tokens)

    def _batches(self, digest: str, ids: Sequence[int], epoch: int) -> list[list[int]]:
        if self._batch_cache and self._batch_cache[:2] == (digest, epoch):
            return self._batch_cache[2]
        batches = make_batches(ids, self.corpus, self.max_tokens,
                               epoch_seed(self.state.data.seed, epoch))
        self._batch_cache = (digest, epoch, batches)
        return batches

    def next_batch_ids(self, ids: Sequence[int]) -> list[int]:
        cur = self.state.data
        digest = ids_digest(ids)
        if cur.ids_digest != digest:
            cur.ids_digest, cur.epoch, cur.index = digest, 0, 0
        batches = self._batches(digest, ids, cur.epoch)
        if cur.index >= len(batches):
            cur.epoch += 1
            cur.index = 0
            batches = self._batches(digest, ids, cur.epoch)
        chosen = batches[cur.index]
        cur.index += 1
        return chosen

    def make_batch(self, ids: Sequence[int]) -> Batch:
        return collate([self.encoded[i] for i in ids])

    def train_steps(self, ids: Sequence[int], n: int,
                    callbacks: Sequence[StepCallback] = ()) -> TrainState:
        """Run ``n`` optimizer steps on batches drawn from ``ids``."""
        if n < 0:
            raise ValueError("n must be >= 0")
        if n and not ids:
            raise ValueError("cannot train on an empty id set")
        gen = self.state.dropout_rng if self.cfg.dropout > 0 else None
        for _ in range(n):
            batch = self.make_batch(self.next_batch_ids(ids))
            loss_value, grads = grad(self.state.params, batch, self.cfg.label_smoothing,
                                     self.cfg.dropout, gen)
            adam_step(self.state, grads, self.state.current_lr())
            self.last_loss = loss_value
            for cb in callbacks:
                cb(self.state, loss_value)
        return self.state

    def restart_warmup(self) -> None:
        self.state.restart_warmup()

    def translator(self) -> Translator:
        return Translator(self.state.params, self.src_vocab, self.tgt_vocab, self.cfg.max_decode_len)

    @torch.no_grad()
    def mean_loss(self, ids: Sequence[int]) -> float:
        """Label-smoothed token-mean loss over ``ids``, dropout off."""
        total, tokens = 0.0, 0
        for start in range(0, len(ids), 256):
            batch = self.make_batch(ids[start:start + 256])
            mean, _ = batch_loss(self.state.params, batch, self.cfg.label_smoothing)
            n = int((batch.tgt_out != 0).sum())
            total += float(mean) * n
            tokens += n
        return total / max(tokens, 1)

    @torch.no_grad()
    def example_losses(self, ids: Sequence[int] | None = None) -> dict[int, float]:
        """Per-example -log P(y|x), summed over target tokens including EOS."""
        ids = list(self.corpus.ids if ids is None else ids)
        out = {}
        for start in range(0, len(ids), 256):
            chunk = ids[start:start + 256]
            _, per_example = batch_loss(self.state.params, self.make_batch(chunk), 0.0)
            out.update({i: float(x) for i, x in zip(chunk, per_example)})
        return out
