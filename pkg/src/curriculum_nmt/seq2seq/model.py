"""One-layer GRU encoder-decoder with single-head dot-product attention.

Parameters live in a plain ``dict[str, Tensor]`` (float64) keyed in
``PARAM_ORDER``; that order is also the on-disk order in checkpoints.

Shapes (E = emb_dim, H = hidden_dim, Vs/Vt = vocab sizes)::

    src_emb (Vs, E)   tgt_emb (Vt, E)
    enc_Wx  (E, 3H)   enc_Wh  (H, 3H)   enc_b (3H,)     gates ordered r, z, n
    dec_Wx  (E, 3H)   dec_Wh  (H, 3H)   dec_b (3H,)
    att_W   (2H, H)   att_b   (H,)      combines [decoder state; context]
    out_W   (H, Vt)   out_b   (Vt,)

The encoder reads the source followed by EOS. The decoder starts from the
final encoder state, is fed BOS then the target prefix, and attends over all
encoder states at every position (no input feeding).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch

from ..corpus import BOS, EOS, PAD
from ..errors import ConfigError

DTYPE = torch.float64

PARAM_ORDER = ("src_emb", "tgt_emb", "enc_Wx", "enc_Wh", "enc_b", "dec_Wx", "dec_Wh", "dec_b",
               "att_W", "att_b", "out_W", "out_b")


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    emb_dim: int = 32
    hidden_dim: int = 64
    layers: int = 1
    dropout: float = 0.0
    label_smoothing: float = 0.1
    max_decode_len: int = 40

    def validate(self) -> None:
        for name in ("src_vocab", "tgt_vocab", "emb_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.layers != 1:
            raise ConfigError("only single-layer encoders are supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout={self.dropout} outside [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing={self.label_smoothing} outside [0, 1)")
        if self.max_decode_len < 0:
            raise ConfigError("max_decode_len must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    E, H = cfg.emb_dim, cfg.hidden_dim
    return {
        "src_emb": (cfg.src_vocab, E), "tgt_emb": (cfg.tgt_vocab, E),
        "enc_Wx": (E, 3 * H), "enc_Wh": (H, 3 * H), "enc_b": (3 * H,),
        "dec_Wx": (E, 3 * H), "dec_Wh": (H, 3 * H), "dec_b": (3 * H,),
        "att_W": (2 * H, H), "att_b": (H,),
        "out_W": (H, cfg.tgt_vocab), "out_b": (cfg.tgt_vocab,),
    }


def init_model(cfg: ModelConfig, seed: int) -> dict[str, torch.Tensor]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, zero PAD rows."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_b"):
            arr = np.zeros(shape)
        else:
            fan_in = shape[1] if name.endswith("_emb") else shape[0]
            scale = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-scale, scale, size=shape)
        params[name] = torch.from_numpy(arr).to(DTYPE)
    params["src_emb"][PAD].zero_()
    params["tgt_emb"][PAD].zero_()
    return params


class Batch(NamedTuple):
    src: torch.Tensor      # (B, S) source ids + EOS, PAD-filled
    tgt_in: torch.Tensor   # (B, L) BOS + target
    tgt_out: torch.Tensor  # (B, L) target + EOS


def collate(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> Batch:
    B = len(pairs)
    S = max(len(s) for s, _ in pairs) + 1
    L = max(len(t) for _, t in pairs) + 1
    src = torch.full((B, S), PAD, dtype=torch.long)
    tgt_in = torch.full((B, L), PAD, dtype=torch.long)
    tgt_out = torch.full((B, L), PAD, dtype=torch.long)
    for b, (s, t) in enumerate(pairs):
        src[b, :len(s) + 1] = torch.tensor(list(s) + [EOS])
        tgt_in[b, :len(t) + 1] = torch.tensor([BOS] + list(t))
        tgt_out[b, :len(t) + 1] = torch.tensor(list(t) + [EOS])
    return Batch(src, tgt_in, tgt_out)


def _dropout(x: torch.Tensor, rate: float, gen: torch.Generator | None) -> torch.Tensor:
    if gen is None or rate == 0.0:
        return x
    keep = torch.empty(x.shape, dtype=x.dtype).bernoulli_(1.0 - rate, generator=gen)
    return x * keep / (1.0 - rate)


def _gru_step(xg: torch.Tensor, h: torch.Tensor, Wh: torch.Tensor) -> torch.Tensor:
    H = h.shape[-1]
    hg = h @ Wh
    r = torch.sigmoid(xg[:, :H] + hg[:, :H])
    z = torch.sigmoid(xg[:, H:2 * H] + hg[:, H:2 * H])
    n = torch.tanh(xg[:, 2 * H:] + r * hg[:, 2 * H:])
    return (1.0 - z) * n + z * h


def encode_source(params, src: torch.Tensor, dropout: float = 0.0, gen=None):
    """Return encoder states (B, S, H) and the final state of each row (B, H)."""
    B, S = src.shape
    H = params["enc_Wh"].shape[0]
    mask = (src != PAD).to(DTYPE).unsqueeze(-1)
    x = _dropout(params["src_emb"][src], dropout, gen)
    xg = x @ params["enc_Wx"] + params["enc_b"]
    h = torch.zeros(B, H, dtype=DTYPE)
    states = []
    for t in range(S):
        h_new = _gru_step(xg[:, t], h, params["enc_Wh"])
        m = mask[:, t]
        h = m * h_new + (1.0 - m) * h
        states.append(h)
    enc = torch.stack(states, dim=1)
    return _dropout(enc, dropout, gen), h


def _attend(params, dec_h: torch.Tensor, enc: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
    """dec_h (B, L, H), enc (B, S, H) -> logits (B, L, Vt)."""
    scores = dec_h @ enc.transpose(1, 2)
    scores = scores.masked_fill(~src_mask.unsqueeze(1), float("-inf"))
    alpha = torch.softmax(scores, dim=-1)
    ctx = alpha @ enc
    comb = torch.tanh(torch.cat([dec_h, ctx], dim=-1) @ params["att_W"] + params["att_b"])
    return comb @ params["out_W"] + params["out_b"]


def forward_batch(params, batch_src: torch.Tensor, tgt_in: torch.Tensor,
                  dropout: float = 0.0, gen: torch.Generator | None = None) -> torch.Tensor:
    """Teacher-forced logits (B, L, Vt)."""
    enc, h = encode_source(params, batch_src, dropout, gen)
    y = _dropout(params["tgt_emb"][tgt_in], dropout, gen)
    yg = y @ params["dec_Wx"] + params["dec_b"]
    states = []
    for t in range(tgt_in.shape[1]):
        h = _gru_step(yg[:, t], h, params["dec_Wh"])
        states.append(h)
    dec_h = _dropout(torch.stack(states, dim=1), dropout, gen)
    return _attend(params, dec_h, enc, batch_src != PAD)


def _check_ids(ids: Sequence[int], vocab: int, what: str) -> None:
    for i in ids:
        if not 0 <= i < vocab:
            raise ValueError(f"{what} id {i} outside vocabulary of size {vocab}")


def forward(params, src_ids: Sequence[int], prefix_ids: Sequence[int]) -> torch.Tensor:
    """Logits (len(prefix), Vt) for one source and a BOS-initial target prefix.

    ``src_ids`` excludes the trailing EOS, which is appended here.
    """
    _check_ids(src_ids, params["src_emb"].shape[0], "source")
    _check_ids(prefix_ids, params["tgt_emb"].shape[0], "target")
    if not prefix_ids or prefix_ids[0] != BOS:
        raise ValueError("target prefix must start with BOS")
    src = torch.tensor([list(src_ids) + [EOS]], dtype=torch.long)
    tgt = torch.tensor([list(prefix_ids)], dtype=torch.long)
    return forward_batch(params, src, tgt)[0]


def loss(logits: torch.Tensor, targets: torch.Tensor, eps: float):
    """Label-smoothed cross-entropy.

    Returns the mean smoothed loss over non-PAD target positions and the
    per-example sum of plain negative log-likelihood, -log P(y|x).
    """
    V = logits.shape[-1]
    logp = torch.log_softmax(logits, dim=-1)
    mask = (targets != PAD).to(DTYPE)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if eps > 0.0:
        other = eps / (V - 1)
        # sum_v q_v (-log p_v) with q = 1-eps on the target, eps/(V-1) elsewhere
        smoothed = (1.0 - eps - other) * nll - other * logp.sum(-1)
    else:
        smoothed = nll
    n_tokens = mask.sum()
    mean = (smoothed * mask).sum() / torch.clamp(n_tokens, min=1.0)
    per_example = (nll * mask).sum(-1)
    return mean, per_example


def batch_loss(params, batch: Batch, eps: float, dropout: float = 0.0, gen=None):
    logits = forward_batch(params, batch.src, batch.tgt_in, dropout, gen)
    return loss(logits, batch.tgt_out, eps)


def grad(params, batch: Batch, eps: float = 0.0, dropout: float = 0.0, gen=None):
    """Reverse-mode gradient of the mean batch loss; returns (loss, grads)."""
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    mean, _ = batch_loss(leaves, batch, eps, dropout, gen)
    grads = torch.autograd.grad(mean, [leaves[k] for k in PARAM_ORDER], allow_unused=True)
    out = {}
    for k, g in zip(PARAM_ORDER, grads):
        out[k] = torch.zeros_like(params[k]) if g is None else g
    return float(mean.detach()), out


@torch.no_grad()
def greedy_decode_batch(params, srcs: Sequence[Sequence[int]], max_len: int) -> list[list[int]]:
    """Beam-1 decoding; argmax ties resolve to the lowest token id."""
    if not srcs:
        return []
    if max_len <= 0:
        return [[] for _ in srcs]
    S = max(len(s) for s in srcs) + 1
    src = torch.full((len(srcs), S), PAD, dtype=torch.long)
    for b, s in enumerate(srcs):
        src[b, :len(s) + 1] = torch.tensor(list(s) + [EOS])
    enc, h = encode_source(params, src)
    src_mask = src != PAD
    B = len(srcs)
    prev = torch.full((B,), BOS, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    out: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max_len):
        yg = params["tgt_emb"][prev] @ params["dec_Wx"] + params["dec_b"]
        h = _gru_step(yg, h, params["dec_Wh"])
        logits = _attend(params, h.unsqueeze(1), enc, src_mask)[:, 0]
        nxt = torch.argmax(logits, dim=-1)
        for b in range(B):
            if not done[b]:
                tok = int(nxt[b])
                if tok == EOS:
                    done[b] = True
                else:
                    out[b].append(tok)
        if bool(done.all()):
            break
        prev = nxt
    return out


def greedy_decode(params, src_ids: Sequence[int], max_len: int) -> list[int]:
    return greedy_decode_batch(params, [src_ids], max_len)[0]
