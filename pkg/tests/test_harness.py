from __future__ import annotations

import json
import math

import pytest
import yaml

from curriculum_nmt.difficulty import DifficultyScoreTable, read_score_table, write_score_table
from curriculum_nmt.errors import ConfigError, IncompatibleArtifactError, TraceParseError
from curriculum_nmt.harness import cli, pipeline
from curriculum_nmt.harness import report as rpt
from curriculum_nmt.harness.config import config_from_dict, dump_config, load_config
from curriculum_nmt.scheduler import PhaseTrace, read_manifest, split_corpus, write_manifest
from curriculum_nmt.seq2seq import init_model, load_checkpoint

EIGHT = {0: -90.0, 1: -10.0, 2: -50.0, 3: -5.0, 4: -70.0, 5: -30.0, 6: -20.0, 7: -2.0}


def tiny(tmp_path, **overrides):
    raw = {
        "output_dir": str(tmp_path / "run"),
        "corpus": {"synthetic": {"task": "noisy-cipher", "n": 120, "vocab_size": 12, "min_len": 2,
                                 "max_len": 5, "corrupt_fraction": 0.25, "rho": 0.5, "zipf": 1.0},
                   "dev_fraction": 0.1},
        "model": {"emb_dim": 8, "hidden_dim": 12, "max_decode_len": 10},
        "training": {"max_tokens": 48, "peak_lr": 0.005, "warmup_steps": 20, "vanilla_steps": 60,
                     "eval_interval": 20},
        "schedule": {"mode": "fixed", "K": 4, "T": 20, "warmup_steps_before_check": 10,
                     "check_interval": 5, "subsample_size": 20},
        "report": {"figures": False},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return config_from_dict(raw)


# -- config -------------------------------------------------------------------

def test_default_config_is_the_smoke_setup():
    cfg = config_from_dict({})
    syn = cfg.corpus.synthetic
    assert (syn["task"], syn["n"], syn["vocab_size"], syn["min_len"], syn["max_len"]) == \
        ("noisy-cipher", 2000, 50, 3, 12)
    assert (syn["corrupt_fraction"], syn["rho"]) == (0.2, 0.5)
    assert cfg.training.vanilla_steps == 1000
    assert (cfg.schedule.K, cfg.schedule.T, cfg.schedule.mode) == (4, 500, "fixed")
    assert (cfg.seeds.data, cfg.seeds.vanilla, cfg.seeds.cl) == (1, 2, 3)


@pytest.mark.parametrize("raw", [
    {"typo": 1},
    {"training": {"lr": 0.1}},
    {"schedule": {"mode": "fixed", "kk": 3}},
    {"corpus": {"synthetic": {"task": "copy", "size": 3}}},
    {"criterion": "bleurt"},
    {"schedule": {"consecutive_successes_required": "forever"}},
    {"corpus": {"synthetic": {"task": "copy"}, "files": {"src": "a", "tgt": "b"}}},
    {"corpus": {"files": {"src": "missing.src", "tgt": "missing.tgt"}}},
])
def test_invalid_configs_are_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_infinite_success_requirement_round_trips(tmp_path):
    cfg = config_from_dict({"schedule": {"mode": "dynamic", "consecutive_successes_required": "inf"}})
    assert cfg.schedule.consecutive_successes_required == math.inf
    path = dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(path).schedule.consecutive_successes_required == math.inf


def test_yaml_paths_resolve_against_the_config_file(tmp_path, write_lines):
    write_lines("a.src", ["x y", "z"])
    write_lines("a.tgt", ["1 2", "3"])
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({
        "output_dir": "out", "corpus": {"files": {"src": "a.src", "tgt": "a.tgt"}, "dev_fraction": 0.5}}))
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.out == tmp_path / "out"
    data = pipeline.prepare_data(cfg)
    assert len(data.train) == 1 and len(data.dev) == 1


def test_data_hash_tracks_the_corpus(tmp_path):
    a, b = tiny(tmp_path), tiny(tmp_path, seeds={"data": 9})
    assert a.data_hash() == tiny(tmp_path).data_hash()
    assert a.data_hash() != b.data_hash()


# -- split --------------------------------------------------------------------

def write_scores(path, scores, criterion="recovery", **meta):
    return write_score_table(DifficultyScoreTable(criterion, scores, metadata=meta), path)


def test_split_manifest_matches_the_hand_partition(tmp_path):
    manifest = pipeline.cmd_split(write_scores(tmp_path / "s.tsv", EIGHT, data="d0"), 4)
    doc = json.loads(manifest.read_text())
    assert doc["criterion"] == "recovery" and doc["K"] == 4
    assert doc["subsets"] == [[0, 4], [2, 5], [1, 6], [3, 7]]
    assert doc["data"] == "d0" and len(doc["scores_sha"]) == 16


def test_split_with_one_subset(tmp_path):
    manifest = pipeline.cmd_split(write_scores(tmp_path / "s.tsv", EIGHT), 1)
    assert json.loads(manifest.read_text())["subsets"] == [list(range(8))]


def test_split_is_idempotent(tmp_path):
    scores = tmp_path / "s.tsv"
    first = pipeline.cmd_split(write_scores(scores, EIGHT), 4, tmp_path / "a.json")
    part, _ = read_manifest(first)
    table = read_score_table(scores)
    again = split_corpus(DifficultyScoreTable("recovery", {i: table.scores[i] for i in part.all_ids()}), 4)
    write_manifest(again, tmp_path / "b.json", json.loads(first.read_text()) | {})
    assert read_manifest(tmp_path / "b.json")[0] == part
    assert pipeline.cmd_split(scores, 4, tmp_path / "c.json").read_bytes() == first.read_bytes()


def test_split_reports_the_malformed_line(tmp_path):
    path = tmp_path / "s.tsv"
    path.write_text("#criterion=recovery\tcdf=false\n0\t-1.0\n1\t-2.0\n2\n")
    with pytest.raises(TraceParseError, match=":4:"):
        pipeline.cmd_split(path, 2)


# -- report -------------------------------------------------------------------

def test_partition_table_rendering():
    rows = [rpt.PartitionStats(1, 0, 17.72, 100.00, 35.62), rpt.PartitionStats(2, 0, 9.18, 17.72, 12.77),
            rpt.PartitionStats(3, 0, 5.16, 9.18, 6.97), rpt.PartitionStats(4, 0, 0.00, 5.16, 3.35)]
    assert rpt.format_partition_table(rows).splitlines() == [
        "Subset" + " " * 15 + "Range" + " " * 3 + "Average",
        "D_1" + " " * 9 + "17.72 - 100.00" + " " * 5 + "35.62",
        "D_2" + " " * 11 + "9.18 - 17.72" + " " * 5 + "12.77",
        "D_3" + " " * 12 + "5.16 - 9.18" + " " * 6 + "6.97",
        "D_4" + " " * 12 + "0.00 - 5.16" + " " * 6 + "3.35",
    ]


def test_split_subsets_have_non_increasing_mean_bleu():
    import random
    rng = random.Random(5)
    for _ in range(50):
        scores = {i: -100 * rng.random() for i in range(rng.randint(4, 80))}
        table = DifficultyScoreTable("recovery", scores)
        stats = rpt.partition_stats(table, split_corpus(table, 4))
        means = [s.mean for s in stats]
        assert all(b <= a for a, b in zip(means, means[1:]))
        assert all(s.min <= s.mean <= s.max for s in stats)


@pytest.mark.parametrize("value,below", [(-55.0, 0.0), (-3.0, 1.0), (-100.0, 0.0), (0.0, 1.0)])
def test_uniform_scores_fill_one_bin(value, below):
    rows, frac = rpt.recovery_histogram(DifficultyScoreTable("recovery", {i: value for i in range(9)}))
    assert sum(1 for _, _, c in rows if c) == 1
    assert frac == below


def test_histogram_counts_and_fraction():
    import random
    rng = random.Random(1)
    scores = {i: -round(100 * rng.random(), 1) for i in range(500)}
    scores[0], scores[1] = -100.0, -10.0
    rows, frac = rpt.recovery_histogram(DifficultyScoreTable("recovery", scores), bin_width=10)
    assert len(rows) == 10 and sum(c for _, _, c in rows) == 500
    assert frac == sum(1 for s in scores.values() if -s < 10) / 500
    assert rows[-1][2] == sum(1 for s in scores.values() if -s >= 90)


def test_report_rejects_mismatched_ids(tmp_path):
    scores = write_scores(tmp_path / "s.tsv", EIGHT)
    manifest = write_manifest(split_corpus(DifficultyScoreTable("recovery", {**EIGHT, 8: -1.0}), 2),
                              tmp_path / "m.json")
    with pytest.raises(ValueError, match=r"\[8\]"):
        pipeline.cmd_report(scores, manifest, out_dir=tmp_path / "r", figures=False)


def test_report_writes_csvs_and_figures(tmp_path):
    scores = write_scores(tmp_path / "s.tsv", EIGHT)
    manifest = pipeline.cmd_split(scores, 4)
    a = rpt.write_curve_csv([(0, 0.0), (10, 5.0)], tmp_path / "a.csv")
    b = rpt.write_curve_csv([(0, 0.0), (10, 7.5)], tmp_path / "b.csv")
    paths = pipeline.cmd_report(scores, manifest, {"baseline": a, "cl": b}, tmp_path / "r")
    rows, below = rpt.read_histogram_csv(paths["histogram"])
    assert sum(c for _, _, c in rows) == 8 and below == pytest.approx(2 / 8)
    lines = paths["partition_stats"].read_text().splitlines()
    assert lines[0] == "subset,size,min_bleu,max_bleu,mean_bleu"
    assert lines[1] == "1,2,70.000000,90.000000,80.000000"
    assert paths["learning_curves"].read_text().splitlines()[1:] == [
        "baseline,0,0.000000", "baseline,10,5.000000", "cl,0,0.000000", "cl,10,7.500000"]
    for key in ("histogram_png", "learning_curves_png"):
        assert paths[key].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# -- pipeline -----------------------------------------------------------------

def test_zero_vanilla_steps_saves_the_initial_model(tmp_path):
    cfg = tiny(tmp_path, training={"vanilla_steps": 0})
    data = pipeline.prepare_data(cfg)
    state, _, meta = load_checkpoint(pipeline.cmd_train_vanilla(cfg, data))
    init = init_model(data.model_cfg, cfg.seeds.vanilla)
    assert state.step == 0 and meta["steps"] == 0
    assert all((state.params[k] == init[k]).all() for k in init)


def test_untrained_model_scores_within_range(tmp_path):
    cfg = tiny(tmp_path, training={"vanilla_steps": 0})
    data = pipeline.prepare_data(cfg)
    pipeline.cmd_train_vanilla(cfg, data)
    table = read_score_table(pipeline.cmd_score(cfg, data=data))
    assert sorted(table.scores) == data.train.ids
    assert all(-100.0 <= s <= 0.0 for s in table.scores.values())
    assert table.metadata["data"] == cfg.data_hash() and table.metadata["level"] == "token"


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tiny")
    cfg = tiny(tmp)
    return cfg, pipeline.run_all(cfg)


def test_run_all_writes_consistent_artifacts(tiny_run):
    cfg, summary = tiny_run
    out = cfg.out
    for name in ("config.yaml", "vanilla.ckpt", "vanilla_mid.ckpt", "vanilla_dev.csv", "scores.tsv",
                 "manifest.json", "cl.ckpt", "trace.csv", "trace.meta.json", "cl_dev.csv",
                 "baseline_dev.csv", "summary.json", "report/partition_stats.csv",
                 "report/recovery_histogram.csv", "report/learning_curves.csv"):
        assert (out / name).exists(), name
    assert summary["phases"] == 4 and summary["phase_starts"] == [0, 20, 40, 60]
    trace = PhaseTrace.read(out / "trace.csv")
    assert trace.final_step == 80
    h = cfg.data_hash()
    assert read_score_table(out / "scores.tsv").metadata["data"] == h
    assert read_manifest(out / "manifest.json")[1]["data"] == h
    assert load_checkpoint(out / "cl.ckpt")[2]["data"] == h
    assert json.loads((out / "trace.meta.json").read_text())["data"] == h
    base = rpt.read_curve_csv(out / "baseline_dev.csv")
    assert base[-1][0] == 80


def test_run_all_is_deterministic(tiny_run, tmp_path):
    cfg, _ = tiny_run
    again = tiny(tmp_path)
    pipeline.run_all(again)
    for name in ("scores.tsv", "manifest.json", "trace.csv", "vanilla.ckpt", "cl.ckpt"):
        assert (again.out / name).read_bytes() == (cfg.out / name).read_bytes(), name


def test_train_cl_refuses_a_manifest_from_other_data(tiny_run, tmp_path):
    cfg, _ = tiny_run
    other = tiny(tmp_path, seeds={"data": 5})
    with pytest.raises(IncompatibleArtifactError):
        pipeline.cmd_train_cl(other, cfg.out / "manifest.json", cfg.out / "vanilla.ckpt")


def test_score_refuses_a_foreign_checkpoint(tiny_run, tmp_path):
    cfg, _ = tiny_run
    other = tiny(tmp_path, model={"hidden_dim": 6})
    with pytest.raises(IncompatibleArtifactError):
        pipeline.cmd_score(other, cfg.out / "vanilla.ckpt")


def test_dynamic_run_with_silent_vanilla_advances_at_first_check(tiny_run, tmp_path):
    cfg, _ = tiny_run
    dyn = tiny(tmp_path, schedule={"mode": "dynamic", "T": 40, "consecutive_successes_required": 1},
               training={"vanilla_steps": 60, "eval_interval": 20})
    dyn.output_dir = str(cfg.out)
    dyn.validate()
    _, trace_path = pipeline.cmd_train_cl(dyn, vanilla_decoder=lambda src: [])
    trace = PhaseTrace.read(trace_path)
    checks = trace.of_kind("recovery-check")
    assert all(e.o_v == 0.0 for e in checks)
    w = dyn.schedule.warmup_steps_before_check
    starts = [e.step for e in trace.of_kind("phase-start")]
    assert starts[0] == 0 and len(starts) == 4
    for k, (a, b) in enumerate(zip(starts, starts[1:]), start=1):
        phase_checks = [e for e in checks if e.phase == k]
        wins = [e.step for e in phase_checks if e.o_c > 0.0]
        # ends at the first winning check, or at T when o_c never leaves 0
        assert b == (wins[0] if wins else a + 40)
        assert phase_checks[0].step == a + w


@pytest.mark.parametrize("criterion", ["length", "rarity", "lm", "embed-norm", "loss-decline"])
def test_alternate_criteria_score_and_split(tiny_run, tmp_path, criterion):
    cfg, _ = tiny_run
    alt = tiny(tmp_path, criterion=criterion)
    alt.output_dir = str(cfg.out)
    out = pipeline.cmd_score(alt, out_path=tmp_path / f"{criterion}.tsv")
    table = read_score_table(out)
    assert table.criterion == criterion and len(table) == 108
    if criterion in ("length", "rarity", "embed-norm"):
        assert table.cdf and all(0 < s <= 1 for s in table.scores.values())
    if criterion == "loss-decline":
        assert table.metadata["loss"] == "sequence-sum" and "previous_checkpoint" in table.metadata
    part, _ = read_manifest(pipeline.cmd_split(out, 3))
    assert part.K == 3 and part.all_ids() == list(range(108))


def test_competence_mode_runs_from_a_recovery_table(tiny_run, tmp_path):
    cfg, _ = tiny_run
    comp = tiny(tmp_path, schedule={"mode": "competence", "T": 10, "c0": 0.1, "p": 2.0})
    comp.output_dir = str(tmp_path / "comp")
    comp.out.mkdir()
    for name in ("vanilla.ckpt", "scores.tsv", "manifest.json"):
        (comp.out / name).write_bytes((cfg.out / name).read_bytes())
    _, trace_path = pipeline.cmd_train_cl(comp)
    sizes = [e.train_set_size for e in PhaseTrace.read(trace_path).of_kind("phase-start")]
    assert sizes == sorted(sizes) and sizes[-1] == 108 and sizes[0] < 108


def test_copy_model_recovers_its_training_data(tmp_path):
    cfg = tiny(tmp_path, corpus={"synthetic": {"task": "copy", "n": 300, "vocab_size": 10, "min_len": 2,
                                               "max_len": 5}, "dev_fraction": 0.1},
               model={"emb_dim": 16, "hidden_dim": 32, "max_decode_len": 10},
               training={"vanilla_steps": 600, "eval_interval": 600, "peak_lr": 0.01, "max_tokens": 256,
                         "warmup_steps": 100})
    data = pipeline.prepare_data(cfg)
    pipeline.cmd_train_vanilla(cfg, data)
    table = read_score_table(pipeline.cmd_score(cfg, data=data))
    assert sum(table.scores.values()) / len(table) < -90


# -- CLI ----------------------------------------------------------------------

def test_cli_split_and_report(tmp_path, capsys):
    scores = write_scores(tmp_path / "s.tsv", EIGHT)
    assert cli.main(["split", "--scores", str(scores), "--k", "4", "--out", str(tmp_path)]) == 0
    manifest = capsys.readouterr().out.strip()
    assert json.loads(open(manifest).read())["subsets"][0] == [0, 4]
    assert cli.main(["report", "--scores", str(scores), "--manifest", manifest, "--out", str(tmp_path),
                     "--no-figures"]) == 0
    assert (tmp_path / "report" / "partition_stats.txt").read_text().startswith("Subset")


def test_cli_errors_exit_with_status_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schedule: {K: 4, colour: blue}\n")
    assert cli.main(["run-all", "--config", str(bad)]) == 2
    assert "colour" in capsys.readouterr().err


def test_cli_run_all_with_overrides(tmp_path, capsys):
    cfg = tiny(tmp_path)
    path = dump_config(cfg, tmp_path / "c.yaml")
    assert cli.main(["run-all", "--config", str(path), "--out", str(tmp_path / "cli"), "--k", "2",
                     "--seed-cl", "7"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["phases"] == 2 and summary["phase_starts"] == [0, 20]
    assert (tmp_path / "cli" / "trace.csv").exists()


def test_cli_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    for cmd in ("train-vanilla", "score", "split", "train-cl", "report", "run-all"):
        assert cmd in text
