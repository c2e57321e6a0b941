"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as they happen (visible with ``-s``) and repeated in the
terminal summary under "acceptance criteria".
"""

from __future__ import annotations

import contextlib
import logging
import math
import random
import time

import pytest

import oracles
from conftest import CRITERION_LINES
from curriculum_nmt import scheduler
from curriculum_nmt.bleu import sentence_bleu
from curriculum_nmt.difficulty import (DifficultyScoreTable, EmbeddingTable, embedding_norm_difficulty,
                                       empirical_cdf, loss_decline_difficulty, per_word_cross_entropy)
from curriculum_nmt.corpus import ParallelCorpus
from curriculum_nmt.harness import pipeline
from curriculum_nmt.harness.config import config_from_dict
from curriculum_nmt.scheduler import ScheduleConfig, competence, run_schedule, split_corpus
from test_scheduler import EXAMPLES, StubTrainer, even_partition, simulate_phase_lengths
from test_seq2seq import _max_relative_fd_error

log = logging.getLogger(__name__)

SMOKE_SEEDS = (0, 1, 2)
SMOKE_BUDGET_S = 600.0
ARTIFACTS = ("scores.tsv", "manifest.json", "trace.csv")


@contextlib.contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    """Time the block, assert its budget and record one PASS/FAIL line."""
    start = time.perf_counter()
    status, note = "PASS", ""
    try:
        yield
        elapsed = time.perf_counter() - start
        if budget_s is not None:
            assert elapsed < budget_s, f"took {elapsed:.2f}s, budget {budget_s}s"
    except BaseException as exc:
        status, note = "FAIL", f" ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        raise
    finally:
        elapsed = time.perf_counter() - start
        line = f"[{status}] criterion {number}: {title} in {elapsed:.2f}s{note}"
        CRITERION_LINES.append(line)
        print(line)


def _random_tokens(rng, vocab, lo, hi):
    return [rng.choice(vocab) for _ in range(rng.randint(lo, hi))]


# 1 ---------------------------------------------------------------------------

def test_criterion_1_bleu_matches_brute_force():
    with criterion(1, "sentence BLEU vs brute force on 200 pairs plus hand cases", 5.0):
        rng = random.Random(7)
        vocab = list("abcdef")
        for _ in range(200):
            ref = _random_tokens(rng, vocab, 1, 15)
            hyp = _random_tokens(rng, vocab, 0, 15)
            assert abs(float(sentence_bleu(hyp, ref)) - oracles.sentence_bleu(hyp, ref)) <= 1e-9
        cases = [(list("abcd"), list("abcd"), 100.0), (list("abcd"), list("abxd"), 50.0),
                 (list("ab"), list("abcd"), 100 * math.exp(-1))]
        for hyp, ref, want in cases:
            assert abs(float(sentence_bleu(hyp, ref)) - want) <= 1e-9
            assert abs(oracles.sentence_bleu(hyp, ref) - want) <= 1e-9
        assert round(float(sentence_bleu(list("ab"), list("abcd"))), 3) == 36.788


# 2 ---------------------------------------------------------------------------

def test_criterion_2_partition_invariants():
    with criterion(2, "partition invariants on 1000 random tables, K in {2,3,4,7}", 10.0):
        rng = random.Random(11)
        for trial in range(1000):
            K = (2, 3, 4, 7)[trial % 4]
            n = rng.randint(K, 80)
            scores = {i: float(rng.randint(-30, 0)) if rng.random() < 0.4 else -100 * rng.random()
                      for i in rng.sample(range(10 * n), n)}
            part = split_corpus(DifficultyScoreTable("recovery", scores), K)
            flat = [i for s in part.subsets for i in s]
            assert len(flat) == len(set(flat)), "subsets overlap"
            assert set(flat) == set(scores), "ids lost or invented"
            for a, b in zip(part.subsets, part.subsets[1:]):
                assert max(scores[i] for i in a) <= min(scores[i] for i in b)
            sizes = [len(s) for s in part.subsets]
            assert max(sizes) - min(sizes) <= 1


# 3 ---------------------------------------------------------------------------

def test_criterion_3_competence_grid():
    with criterion(3, "competence endpoints, clamping and monotonicity on a 20x20 grid", 1.0):
        total = 200
        for i in range(20):
            c0 = i / 20
            for j in range(20):
                cfg = ScheduleConfig(mode="competence", c0=c0, p=1 + j * 0.5, total_steps=total)
                assert competence(0, cfg) == pytest.approx(c0, abs=1e-12)
                assert competence(total, cfg) == pytest.approx(1.0, abs=1e-12)
                assert competence(3 * total, cfg) == 1.0
                values = [competence(t, cfg) for t in range(0, total + 1, 10)]
                assert all(b >= a for a, b in zip(values, values[1:]))
                assert all(0.0 <= v <= 1.0 for v in values)
        half = ScheduleConfig(mode="competence", c0=0.1, p=1.0, total_steps=100)
        assert competence(50, half) == pytest.approx(0.55, abs=1e-12)


# 4 ---------------------------------------------------------------------------

def test_criterion_4_scheduler_traces(monkeypatch):
    monkeypatch.setattr(scheduler, "model_recovery", lambda decoder, sample: decoder.value)
    with criterion(4, "fixed, dynamic and infinite-requirement scheduler traces", 5.0):
        fixed_cfg = ScheduleConfig(mode="fixed", K=4, T=25, log_interval=10)
        fixed = run_schedule(even_partition(4), fixed_cfg, StubTrainer())
        starts = [e.step for e in fixed.of_kind("phase-start")] + [fixed.final_step]
        assert [b - a for a, b in zip(starts, starts[1:])] == [25] * 4

        dyn = ScheduleConfig(mode="dynamic", K=2, T=20, warmup_steps_before_check=4, check_interval=2,
                             consecutive_successes_required=2, subsample_size=3)
        trace = run_schedule(even_partition(2, 5), dyn, StubTrainer([18, 21, 22] + [0] * 20, o_v=20),
                             examples=EXAMPLES())
        first = [(e.step, e.o_c) for e in trace.of_kind("recovery-check") if e.phase == 1]
        assert first == [(4, 18), (6, 21), (8, 22)]
        assert [e.step for e in trace.of_kind("phase-advance")] == [8]

        rng = random.Random(3)
        for _ in range(200):
            K, T = rng.randint(1, 4), rng.randint(1, 30)
            w, ci, need = rng.randint(1, 12), rng.randint(1, 8), rng.randint(1, 3)
            readings = [rng.choice([10.0, 20.0, 30.0]) for _ in range(200)]
            cfg = ScheduleConfig(mode="dynamic", K=K, T=T, warmup_steps_before_check=w, check_interval=ci,
                                 consecutive_successes_required=need, subsample_size=3)
            got = run_schedule(even_partition(K), cfg, StubTrainer(readings, o_v=20.0), examples=EXAMPLES())
            starts = [e.step for e in got.of_kind("phase-start")] + [got.final_step]
            lengths = [b - a for a, b in zip(starts, starts[1:])]
            assert lengths == simulate_phase_lengths(readings, 20.0, K, T, w, ci, need)

        never = ScheduleConfig(mode="dynamic", K=4, T=25, log_interval=10, warmup_steps_before_check=4,
                               check_interval=2, consecutive_successes_required=math.inf)
        same = run_schedule(even_partition(4), never, StubTrainer([99.0] * 100, o_v=0.0), examples=EXAMPLES())
        assert same.to_csv() == fixed.to_csv()


# 5 ---------------------------------------------------------------------------

def test_criterion_5_gradients_match_finite_differences():
    with criterion(5, "finite-difference gradient check over 5 seeds in float64", 30.0):
        worst = {seed: _max_relative_fd_error(seed) for seed in range(5)}
        print(f"max relative FD error per seed: {worst}")
        assert max(worst.values()) < 1e-4


# 6 and 7 ---------------------------------------------------------------------

def smoke_config(out_dir, offset: int):
    """The default noisy-cipher configuration with every seed shifted by `offset`."""
    cfg = config_from_dict({"output_dir": str(out_dir)})
    cfg.seeds.data += 10 * offset
    cfg.seeds.vanilla += 10 * offset
    cfg.seeds.cl += 10 * offset
    cfg.report.figures = False
    cfg.validate()
    return cfg


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    runs = {}
    for offset in SMOKE_SEEDS:
        cfg = smoke_config(tmp_path_factory.mktemp(f"smoke{offset}"), offset)
        start = time.perf_counter()
        summary = pipeline.run_all(cfg)
        runs[offset] = (cfg, summary, time.perf_counter() - start)
    return runs


@pytest.mark.slow
def test_criterion_6_end_to_end_smoke(smoke_runs):
    times = ", ".join(f"{e:.0f}s" for _, _, e in smoke_runs.values())
    with criterion(6, f"run-all on the noisy-cipher default config, 3 seeds (runs took {times}); checks"):
        for offset, (cfg, s, elapsed) in smoke_runs.items():
            tag = f"seed offset {offset}"
            print(f"{tag}: {elapsed:.1f}s, subset means {s['subset_mean']}, corrupted "
                  f"{s['corrupted_fraction']}, CL {s['cl_final_dev_bleu']:.2f} vs baseline "
                  f"{s['baseline_final_dev_bleu']:.2f}")
            assert elapsed < SMOKE_BUDGET_S, f"{tag}: {elapsed:.1f}s"
            assert s["phases"] == cfg.schedule.K == 4, tag
            assert s["corrupted_fraction"][-1] > s["corrupted_fraction"][0], tag
            means = s["subset_mean"]
            assert all(a > b for a, b in zip(means, means[1:])), f"{tag}: {means}"
            cl, base = s["cl_final_dev_bleu"], s["baseline_final_dev_bleu"]
            assert cl >= base - 1.0, f"{tag}: CL {cl} vs baseline {base}"
            if cl > base:
                log.info("%s: CL beats the continued baseline (%.2f > %.2f)", tag, cl, base)
                print(f"{tag}: CL exceeds the continued baseline by {cl - base:.2f} BLEU")


@pytest.mark.slow
def test_criterion_7_repeat_run_is_byte_identical(smoke_runs, tmp_path):
    with criterion(7, "repeated run-all yields byte-identical scores, manifest and trace"):
        cfg, _, _ = smoke_runs[SMOKE_SEEDS[0]]
        again = smoke_config(tmp_path / "repeat", SMOKE_SEEDS[0])
        pipeline.run_all(again)
        for name in ARTIFACTS:
            assert (cfg.out / name).read_bytes() == (again.out / name).read_bytes(), name


# 8 ---------------------------------------------------------------------------

def test_criterion_8_alternate_criteria_hand_cases():
    with criterion(8, "LM, loss-decline, CDF and embedding-norm hand cases", 1.0):
        assert abs(per_word_cross_entropy([math.log(0.5), math.log(0.25)], 2) - 1.0397208) <= 1e-6

        decline = loss_decline_difficulty({0: 2.0, 1: 2.0, 2: 2.0}, {0: 1.5, 1: 2.0, 2: 3.0}).scores
        for i, want in enumerate([-0.25, 0.0, 0.5]):
            assert abs(decline[i] - want) <= 1e-6

        for raw, want in [({0: 3, 1: 1, 2: 2}, {0: 1.0, 1: 1 / 3, 2: 2 / 3}),
                          ({0: 1.0, 1: 2.0, 2: 2.0, 3: 5.0}, {0: 0.25, 1: 0.75, 2: 0.75, 3: 1.0}),
                          ({i: 4.0 for i in range(5)}, {i: 1.0 for i in range(5)})]:
            got = empirical_cdf(raw)
            assert set(got) == set(want) and all(abs(got[i] - want[i]) <= 1e-6 for i in want)

        corpus = ParallelCorpus.from_pairs([(["x", "y"], ["x", "y"])])
        table = EmbeddingTable({"x": [3.0, 4.0], "y": [0.0, 0.0]})
        assert abs(embedding_norm_difficulty(corpus, table).raw[0] - 5.0) <= 1e-6
