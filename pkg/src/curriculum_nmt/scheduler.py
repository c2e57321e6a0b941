"""Difficulty-ordered corpus splitting and curriculum phase scheduling.

``run_schedule`` drives K training phases. Under the baby-steps regimen the
training set of phase k is the union of the first k subsets; under one-pass
it is subset k alone. Phase duration is either fixed, or dynamic: after a
warm-up budget the CL model's corpus BLEU on a sample of the newly added
subset is compared against the vanilla model's, and the phase ends early once
the CL model has been ahead for enough consecutive checks. Competence mode
instead re-selects every example whose normalised difficulty is below c(t)
at each phase start.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .bleu import corpus_bleu
from .corpus import Example
from .difficulty import DifficultyScoreTable
from .errors import ConfigError, ScoringError

log = logging.getLogger(__name__)

MODES = ("fixed", "dynamic", "competence")
REGIMENS = ("baby-steps", "one-pass")
EVENT_KINDS = ("phase-start", "recovery-check", "phase-advance", "train-step-summary")
TRACE_COLUMNS = ("step", "phase", "event", "train_set_size", "o_c", "o_v", "dev_bleu", "lr")


@dataclass
class CurriculumPartition:
    criterion: str
    subsets: list[list[int]]

    @property
    def K(self) -> int:
        return len(self.subsets)

    def all_ids(self) -> list[int]:
        return sorted(i for s in self.subsets for i in s)

    def to_json(self) -> dict[str, Any]:
        return {"criterion": self.criterion, "K": self.K,
                "subsets": [sorted(s) for s in self.subsets]}


def split_corpus(scores: DifficultyScoreTable, K: int) -> CurriculumPartition:
    """Sort ids by (score, id) and cut them into K contiguous, near-equal blocks."""
    n = len(scores.scores)
    if K < 1 or K > n:
        raise ValueError(f"K must be in [1, {n}], got {K}")
    order = sorted(scores.scores, key=lambda i: (scores.scores[i], i))
    base, extra = divmod(n, K)
    subsets, start = [], 0
    for k in range(K):
        size = base + (1 if k < extra else 0)
        subsets.append(order[start:start + size])
        start += size
    return CurriculumPartition(scores.criterion, subsets)


def write_manifest(partition: CurriculumPartition, path, extra: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    doc = partition.to_json()
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> tuple[CurriculumPartition, dict[str, Any]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        part = CurriculumPartition(doc.pop("criterion"), [list(map(int, s)) for s in doc.pop("subsets")])
        K = doc.pop("K")
    except KeyError as e:
        raise ValueError(f"{path}: manifest missing key {e}") from None
    if K != part.K:
        raise ValueError(f"{path}: K={K} but {part.K} subsets listed")
    return part, doc


@dataclass
class ScheduleConfig:
    mode: str = "fixed"
    K: int = 4
    T: int = 500
    regimen: str = "baby-steps"
    # fixed mode: explicit per-phase budgets override the uniform T
    phase_steps: list[int] | None = None
    warmup_steps_before_check: int = 200
    check_interval: int = 100
    consecutive_successes_required: float = 2
    subsample_size: int = 500
    c0: float = 0.01
    p: float = 2.0
    total_steps: int | None = None
    log_interval: int = 100

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown schedule mode {self.mode!r}; expected one of {MODES}")
        if self.regimen not in REGIMENS:
            raise ConfigError(f"unknown regimen {self.regimen!r}; expected one of {REGIMENS}")
        for name in ("K", "T", "warmup_steps_before_check", "check_interval", "subsample_size",
                     "log_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.consecutive_successes_required < 1:
            raise ConfigError("consecutive_successes_required must be >= 1")
        if not 0.0 <= self.c0 < 1.0:
            raise ConfigError(f"c0={self.c0} outside [0, 1)")
        if self.p < 1:
            raise ConfigError("competence exponent p must be >= 1")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigError("total_steps must be positive")
        if self.phase_steps is not None:
            if len(self.phase_steps) != self.K or min(self.phase_steps) < 1:
                raise ConfigError(f"phase_steps needs {self.K} positive entries")

    @property
    def competence_horizon(self) -> int:
        return self.total_steps if self.total_steps is not None else max(1, (self.K - 1) * self.T)

    def phase_budget(self, k: int) -> int:
        """Step budget of 1-based phase ``k`` (the maximum T in dynamic mode)."""
        if self.mode == "fixed" and self.phase_steps is not None:
            return self.phase_steps[k - 1]
        return self.T


def long_tail_budget(total: int, K: int = 4) -> list[int]:
    """Split ``total`` CL steps 10/10/10/70 percent style: each early phase 10%,
    the final phase takes the remainder."""
    early = [total // 10] * (K - 1)
    return early + [total - sum(early)]


def competence(t: float, cfg: ScheduleConfig) -> float:
    T = cfg.competence_horizon
    c0p = cfg.c0 ** cfg.p
    return min(1.0, (t * (1.0 - c0p) / T + c0p) ** (1.0 / cfg.p))


def competence_training_set(scores_01: DifficultyScoreTable, t: float, cfg: ScheduleConfig) -> list[int]:
    bad = [i for i, s in scores_01.scores.items() if not 0.0 <= s <= 1.0]
    if bad:
        raise ValueError(f"competence scheduling needs scores in [0, 1]; example {bad[0]} "
                         f"has {scores_01.scores[bad[0]]}")
    c = competence(t, cfg)
    chosen = sorted(i for i, s in scores_01.scores.items() if s <= c)
    if not chosen:
        chosen = [min(scores_01.scores, key=lambda i: (scores_01.scores[i], i))]
    return chosen


def subsample(subset: Sequence[int], size: int, seed: int) -> list[int]:
    if not subset:
        raise ValueError("cannot subsample an empty subset")
    if size < 1:
        raise ValueError("subsample size must be >= 1")
    rng = np.random.default_rng(seed)
    picked = rng.permutation(len(subset))[:min(size, len(subset))]
    return [subset[j] for j in picked]


Decoder = Callable[[Sequence[str]], Sequence[str]]


def model_recovery(decoder: Decoder, sample: Sequence[Example]) -> float:
    """Corpus BLEU of ``decoder`` over a sample of examples."""
    if not sample:
        raise ValueError("model_recovery needs a non-empty sample")
    many = getattr(decoder, "translate_many", None)
    hyps = None
    if many is not None:
        try:
            hyps = many([ex.src_tokens for ex in sample])
        except Exception:
            hyps = None
    if hyps is None:
        hyps = []
        for ex in sample:
            try:
                hyps.append(decoder(ex.src_tokens))
            except Exception as e:
                raise ScoringError(f"decoder failed on example {ex.id}: {e}", ex.id) from e
    return corpus_bleu((list(h), ex.tgt_tokens) for h, ex in zip(hyps, sample)).value


# -- trace --------------------------------------------------------------------

@dataclass
class TraceEvent:
    step: int
    phase: int
    event: str
    train_set_size: int | None = None
    o_c: float | None = None
    o_v: float | None = None
    dev_bleu: float | None = None
    lr: float | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


@dataclass
class PhaseTrace:
    events: list[TraceEvent] = field(default_factory=list)

    def add(self, step: int, phase: int, event: str, **payload) -> TraceEvent:
        if event not in EVENT_KINDS:
            raise ValueError(f"unknown trace event {event!r}")
        ev = TraceEvent(step, phase, event, **payload)
        self.events.append(ev)
        return ev

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.event == kind]

    @property
    def final_step(self) -> int:
        return self.events[-1].step if self.events else 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for e in self.events:
            w.writerow([_fmt(getattr(e, c)) for c in TRACE_COLUMNS])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> PhaseTrace:
        trace = cls()
        with open(path, encoding="utf-8", newline="") as f:
            for row in csv.DictReader(f):
                payload = {}
                for c in ("train_set_size",):
                    payload[c] = int(row[c]) if row[c] else None
                for c in ("o_c", "o_v", "dev_bleu", "lr"):
                    payload[c] = float(row[c]) if row[c] else None
                trace.add(int(row["step"]), int(row["phase"]), row["event"], **payload)
        return trace


# -- the schedule state machine -----------------------------------------------

class TrainerCallbacks(Protocol):
    def restart_warmup(self) -> None: ...

    def train_steps(self, ids: Sequence[int], n: int) -> None: ...

    def cl_decoder(self) -> Decoder: ...

    def vanilla_decoder(self) -> Decoder: ...

    def summary(self, step: int) -> dict[str, float | None]:
        """Return ``lr`` and optionally ``dev_bleu`` for a train-step-summary event."""
        ...


def run_schedule(partition: CurriculumPartition, cfg: ScheduleConfig, callbacks: TrainerCallbacks, *,
                 examples: Sequence[Example] | None = None, scores_01: DifficultyScoreTable | None = None,
                 seed: int = 0, trace_path=None) -> PhaseTrace:
    """Run all K phases and return the event trace.

    ``examples`` (indexed by id) is required in dynamic mode for the recovery
    checks; ``scores_01`` is required in competence mode. If a callback
    raises, the partial trace is written to ``trace_path`` before re-raising.
    """
    cfg.validate()
    if partition.K != cfg.K:
        raise ConfigError(f"partition has K={partition.K} but schedule expects K={cfg.K}")
    if cfg.mode == "dynamic" and examples is None:
        raise ConfigError("dynamic scheduling needs the corpus examples for recovery checks")
    if cfg.mode == "competence" and scores_01 is None:
        raise ConfigError("competence scheduling needs CDF-normalised scores")

    trace = PhaseTrace()
    try:
        _run(partition, cfg, callbacks, examples, scores_01, seed, trace)
    except BaseException:
        if trace_path is not None:
            trace.write(trace_path)
            log.error("schedule aborted at step %d; partial trace written to %s",
                      trace.final_step, trace_path)
        raise
    if trace_path is not None:
        trace.write(trace_path)
    return trace


def _run(partition, cfg, callbacks, examples, scores_01, seed, trace) -> None:
    t = 0
    train_set: list[int] = []
    checks_enabled = cfg.mode == "dynamic" and math.isfinite(cfg.consecutive_successes_required)

    def train(n: int, k: int) -> None:
        nonlocal t
        while n > 0:
            chunk = min(n, cfg.log_interval - t % cfg.log_interval)
            callbacks.train_steps(train_set, chunk)
            t += chunk
            n -= chunk
            if t % cfg.log_interval == 0:
                trace.add(t, k, "train-step-summary", train_set_size=len(train_set),
                          **callbacks.summary(t))

    for k in range(1, cfg.K + 1):
        subset = partition.subsets[k - 1]
        if cfg.mode == "competence":
            train_set = competence_training_set(scores_01, t, cfg)
        elif cfg.regimen == "baby-steps":
            train_set = sorted(set(train_set) | set(subset))
        else:
            train_set = sorted(subset)
        callbacks.restart_warmup()
        trace.add(t, k, "phase-start", train_set_size=len(train_set))

        budget = cfg.phase_budget(k)
        start = t
        if checks_enabled:
            sample_ids = subsample(subset, cfg.subsample_size, seed + k)
            sample = [examples[i] for i in sample_ids]
            o_v = model_recovery(callbacks.vanilla_decoder(), sample)
            streak = 0
            next_check = min(cfg.warmup_steps_before_check, budget)
            while t - start < budget:
                train(start + next_check - t, k)
                o_c = model_recovery(callbacks.cl_decoder(), sample)
                trace.add(t, k, "recovery-check", train_set_size=len(train_set), o_c=o_c, o_v=o_v)
                streak = streak + 1 if o_c > o_v else 0
                if streak >= cfg.consecutive_successes_required:
                    log.info("phase %d: CL model ahead on %d consecutive checks at step %d",
                             k, streak, t)
                    break
                next_check = min(next_check + cfg.check_interval, budget)
        else:
            train(budget, k)

        if t % cfg.log_interval != 0:
            trace.add(t, k, "train-step-summary", train_set_size=len(train_set), **callbacks.summary(t))
        if k < cfg.K:
            trace.add(t, k, "phase-advance", train_set_size=len(train_set))
