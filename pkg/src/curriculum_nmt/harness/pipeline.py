"""End-to-end pipeline stages.

Artifacts written under the output directory::

    vanilla.ckpt, vanilla_mid.ckpt, vanilla_dev.csv   cmd_train_vanilla
    scores.tsv                                        cmd_score
    manifest.json                                     cmd_split
    cl.ckpt, trace.csv, trace.meta.json, cl_dev.csv   cmd_train_cl
    baseline_dev.csv                                  cmd_train_baseline
    report/                                           cmd_report
    summary.json                                      run_all

Every artifact records the data hash of the config that produced it, and
downstream stages refuse inputs whose hashes disagree with the current config.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from ..corpus import (ParallelCorpus, Vocabulary, build_vocab, generate_synthetic, load_parallel,
                      train_dev_split)
from ..difficulty import (DifficultyScoreTable, EmbeddingTable, embedding_norm_difficulty,
                          empirical_cdf, feature_difficulty, lm_difficulty, loss_decline_difficulty,
                          read_score_table, recovery_difficulty, train_ngram_lm, write_score_table)
from ..errors import IncompatibleArtifactError
from ..scheduler import (PhaseTrace, read_manifest, run_schedule, split_corpus,
                         write_manifest)
from ..seq2seq import ModelConfig, Trainer, Translator, average_checkpoints, dev_bleu, load_checkpoint, save_checkpoint
from . import report as rpt
from .config import ExperimentConfig, _hash, dump_config, file_sha

log = logging.getLogger(__name__)

Decoder = Callable[[Sequence[str]], Sequence[str]]


@dataclass
class PreparedData:
    train: ParallelCorpus
    dev: ParallelCorpus
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    model_cfg: ModelConfig


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    c = cfg.corpus
    if c.synthetic is not None:
        spec, n = c.synthetic_spec()
        full = generate_synthetic(spec, n, cfg.seeds.data)
    else:
        full = load_parallel(cfg.resolve(c.files["src"]), cfg.resolve(c.files["tgt"]), c.tokenization)
    train, dev = train_dev_split(full, c.dev_fraction, cfg.seeds.data)
    src_vocab = build_vocab(train, "source")
    tgt_vocab = build_vocab(train, "target")
    m = cfg.model
    model_cfg = ModelConfig(len(src_vocab), len(tgt_vocab), emb_dim=m.emb_dim, hidden_dim=m.hidden_dim,
                            dropout=m.dropout, label_smoothing=m.label_smoothing,
                            max_decode_len=m.max_decode_len)
    return PreparedData(train, dev, src_vocab, tgt_vocab, model_cfg)


def _trainer(cfg: ExperimentConfig, data: PreparedData, seed: int) -> Trainer:
    t = cfg.training
    return Trainer.create(data.model_cfg, data.train, data.src_vocab, data.tgt_vocab, seed=seed,
                          peak_lr=t.peak_lr, warmup_steps=t.warmup_steps, max_tokens=t.max_tokens)


def _trainer_from(cfg: ExperimentConfig, data: PreparedData, ckpt) -> tuple[Trainer, dict]:
    state, _, meta = load_checkpoint(ckpt, expected=data.model_cfg)
    return Trainer(data.model_cfg, data.train, data.src_vocab, data.tgt_vocab, state,
                   cfg.training.max_tokens), meta


def _check_meta(meta: Mapping, cfg: ExperimentConfig, what) -> None:
    if meta.get("data") != cfg.data_hash():
        raise IncompatibleArtifactError(
            f"{what} was produced from data {meta.get('data')}, config expects {cfg.data_hash()}")


def train_with_evals(trainer: Trainer, ids: Sequence[int], until: int, eval_interval: int,
                     dev: ParallelCorpus, curve: list[tuple[int, float]],
                     stops: Mapping[int, Callable[[], None]] | None = None) -> None:
    """Train to global step ``until``, evaluating dev BLEU every ``eval_interval``
    steps and at ``until``. ``stops`` maps a step to a hook run when reached."""
    stops = dict(stops or {})
    state = trainer.state
    while True:
        if state.step in stops:
            stops.pop(state.step)()
        if state.step >= until:
            break
        nxt = min(until, (state.step // eval_interval + 1) * eval_interval,
                  *[s for s in stops if s > state.step])
        trainer.train_steps(ids, nxt - state.step)
        if state.step % eval_interval == 0 or state.step == until:
            curve.append((state.step, dev_bleu(trainer.translator(), dev)))
            log.info("step %d  loss %.4f  dev BLEU %.2f", state.step, trainer.last_loss, curve[-1][1])


# -- stages -------------------------------------------------------------------

def cmd_train_vanilla(cfg: ExperimentConfig, data: PreparedData | None = None) -> Path:
    data = data or prepare_data(cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    trainer = _trainer(cfg, data, cfg.seeds.vanilla)
    steps = cfg.training.vanilla_steps
    meta = {"role": "vanilla", "data": cfg.data_hash(), "vanilla": cfg.vanilla_hash(), "steps": steps}
    mid = steps // 2

    def save_mid():
        save_checkpoint(trainer.state, data.model_cfg, out / "vanilla_mid.ckpt", {**meta, "role": "vanilla-mid"})

    curve = [(0, dev_bleu(trainer.translator(), data.dev))]
    t0 = time.perf_counter()
    train_with_evals(trainer, data.train.ids, steps, cfg.training.eval_interval, data.dev, curve,
                     stops={mid: save_mid})
    log.info("vanilla: %d steps in %.1fs", steps, time.perf_counter() - t0)
    rpt.write_curve_csv(curve, out / "vanilla_dev.csv")
    return save_checkpoint(trainer.state, data.model_cfg, out / "vanilla.ckpt",
                           {**meta, "mid_checkpoint": "vanilla_mid.ckpt"})


def cmd_score(cfg: ExperimentConfig, checkpoint=None, data: PreparedData | None = None,
              out_path=None) -> Path:
    data = data or prepare_data(cfg)
    checkpoint = Path(checkpoint or cfg.out / "vanilla.ckpt")
    out_path = Path(out_path or cfg.out / "scores.tsv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    needs_model = cfg.criterion in ("recovery", "embed-norm", "loss-decline")
    meta = {"data": cfg.data_hash(), "level": "token"}
    if needs_model:
        state, _, ck_meta = load_checkpoint(checkpoint, expected=data.model_cfg)
        _check_meta(ck_meta, cfg, checkpoint)
        meta.update(checkpoint=file_sha(checkpoint), vanilla_steps=str(ck_meta.get("steps")))

    crit = cfg.criterion
    if crit == "recovery":
        translator = Translator(state.params, data.src_vocab, data.tgt_vocab, data.model_cfg.max_decode_len)
        table = recovery_difficulty(data.train, translator)
    elif crit in ("length", "rarity"):
        table = feature_difficulty(data.train, crit)
    elif crit == "lm":
        lm = train_ngram_lm([ex.src_tokens for ex in data.train.examples], cfg.lm_order)
        table = lm_difficulty(data.train, lm, "source")
    elif crit == "embed-norm":
        emb = state.params["src_emb"].numpy()
        table = embedding_norm_difficulty(
            data.train, EmbeddingTable({tok: emb[i] for i, tok in enumerate(data.src_vocab.itos)}))
    else:  # loss-decline between the mid-training and final vanilla checkpoints
        mid_path = checkpoint.parent / ck_meta.get("mid_checkpoint", "vanilla_mid.ckpt")
        mid_trainer, mid_meta = _trainer_from(cfg, data, mid_path)
        _check_meta(mid_meta, cfg, mid_path)
        final_trainer = Trainer(data.model_cfg, data.train, data.src_vocab, data.tgt_vocab, state,
                                cfg.training.max_tokens)
        table = loss_decline_difficulty(mid_trainer.example_losses(), final_trainer.example_losses())
        meta["previous_checkpoint"] = file_sha(mid_path)
    table.metadata = {**table.metadata, **meta}
    table.check_covers(data.train)
    return write_score_table(table, out_path)


def cmd_split(scores_path, K: int, out_path=None) -> Path:
    scores_path = Path(scores_path)
    table = read_score_table(scores_path)
    partition = split_corpus(table, K)
    out_path = Path(out_path or scores_path.parent / "manifest.json")
    extra = {"data": table.metadata.get("data"), "scores_sha": file_sha(scores_path),
             "scores_path": scores_path.name}
    return write_manifest(partition, out_path, extra)


class _HarnessCallbacks:
    def __init__(self, trainer: Trainer, vanilla: Decoder, dev: ParallelCorpus):
        self.trainer = trainer
        self.vanilla = vanilla
        self.dev = dev
        self.curve: list[tuple[int, float]] = []
        self.snapshots: list[tuple[float, int, dict]] = []
        self.keep_snapshots = False

    def restart_warmup(self) -> None:
        self.trainer.restart_warmup()

    def train_steps(self, ids, n) -> None:
        self.trainer.train_steps(ids, n)

    def cl_decoder(self):
        return self.trainer.translator()

    def vanilla_decoder(self):
        return self.vanilla

    def summary(self, step: int) -> dict:
        translator = self.trainer.translator()
        bleu = dev_bleu(translator, self.dev)
        self.curve.append((step, bleu))
        if self.keep_snapshots:
            self.snapshots.append((bleu, step, translator.params))
        log.info("CL step %d  loss %.4f  dev BLEU %.2f", step, self.trainer.last_loss or 0.0, bleu)
        return {"lr": self.trainer.state.current_lr(), "dev_bleu": bleu}


def cmd_train_cl(cfg: ExperimentConfig, manifest=None, vanilla_checkpoint=None,
                 data: PreparedData | None = None, vanilla_decoder: Decoder | None = None
                 ) -> tuple[Path, Path]:
    """Train the CL model under the configured schedule.

    ``vanilla_decoder`` replaces the vanilla checkpoint's decoder for the
    dynamic recovery checks (used to stub the vanilla model in tests).
    """
    data = data or prepare_data(cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = Path(manifest or out / "manifest.json")
    vanilla_checkpoint = Path(vanilla_checkpoint or out / "vanilla.ckpt")
    partition, mmeta = read_manifest(manifest)
    if mmeta.get("data") != cfg.data_hash():
        raise IncompatibleArtifactError(f"{manifest} was built for data {mmeta.get('data')}, "
                                        f"config expects {cfg.data_hash()}")
    if partition.all_ids() != data.train.ids:
        raise IncompatibleArtifactError(f"{manifest} does not cover the training corpus exactly")
    sched = dataclasses.replace(cfg.schedule, K=partition.K, log_interval=cfg.training.eval_interval)

    if vanilla_decoder is None:
        vstate, _, vmeta = load_checkpoint(vanilla_checkpoint, expected=data.model_cfg)
        _check_meta(vmeta, cfg, vanilla_checkpoint)
        vanilla_decoder = Translator(vstate.params, data.src_vocab, data.tgt_vocab,
                                     data.model_cfg.max_decode_len)

    scores_01 = None
    if sched.mode == "competence":
        table = read_score_table(manifest.parent / mmeta.get("scores_path", "scores.tsv"))
        scores_01 = table if table.cdf else DifficultyScoreTable(
            table.criterion, empirical_cdf(table.scores), cdf=True, raw=table.scores)

    trainer = _trainer(cfg, data, cfg.seeds.cl)
    callbacks = _HarnessCallbacks(trainer, vanilla_decoder, data.dev)
    callbacks.keep_snapshots = cfg.training.average_top_k > 1
    trace_path = out / "trace.csv"
    t0 = time.perf_counter()
    trace = run_schedule(partition, sched, callbacks, examples=data.train.examples,
                         scores_01=scores_01, seed=cfg.seeds.cl, trace_path=trace_path)
    log.info("CL training: %d steps in %.1fs", trace.final_step, time.perf_counter() - t0)
    rpt.write_curve_csv(callbacks.curve, out / "cl_dev.csv")

    meta = {"role": "cl", "data": cfg.data_hash(), "manifest": file_sha(manifest),
            "schedule": dataclasses.asdict(sched) | {"consecutive_successes_required":
                                                      str(sched.consecutive_successes_required)}}
    if vanilla_checkpoint.exists():
        meta["vanilla_checkpoint"] = file_sha(vanilla_checkpoint)
    ckpt = save_checkpoint(trainer.state, data.model_cfg, out / "cl.ckpt", meta)
    trace_meta = {"config": _hash(cfg.to_dict() | {"schedule": meta["schedule"]}),
                  "data": cfg.data_hash(), "manifest": meta["manifest"],
                  "vanilla_checkpoint": meta.get("vanilla_checkpoint"), "checkpoint": file_sha(ckpt),
                  "final_step": trace.final_step}
    if callbacks.keep_snapshots:
        trace_meta["top_k_average_dev_bleu"] = _top_k_average(cfg, data, callbacks.snapshots)
    (out / "trace.meta.json").write_text(json.dumps(trace_meta, indent=1, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return ckpt, trace_path


def _top_k_average(cfg: ExperimentConfig, data: PreparedData, snapshots) -> float:
    """Dev BLEU of the parameter average of the top-k dev-BLEU snapshots."""
    ranked = sorted(snapshots, key=lambda s: (-s[0], -s[1]))[:cfg.training.average_top_k]
    tmp_dir = cfg.out / "topk"
    tmp_dir.mkdir(exist_ok=True)
    paths = []
    for bleu, step, params in ranked:
        trainer = _trainer(cfg, data, cfg.seeds.cl)
        trainer.state.params = params
        paths.append(save_checkpoint(trainer.state, data.model_cfg, tmp_dir / f"cl_step{step}.ckpt"))
    avg = average_checkpoints(paths)
    return dev_bleu(Translator(avg, data.src_vocab, data.tgt_vocab, data.model_cfg.max_decode_len),
                    data.dev)


def cmd_train_baseline(cfg: ExperimentConfig, steps: int, vanilla_checkpoint=None,
                       data: PreparedData | None = None) -> Path:
    """Dev curve of the conventionally trained model followed to ``steps``.

    This is the vanilla trajectory evaluated at the CL run's step count:
    reused when equal, continued from the vanilla checkpoint when longer,
    and replayed from initialisation when shorter.
    """
    data = data or prepare_data(cfg)
    out = cfg.out
    vanilla_checkpoint = Path(vanilla_checkpoint or out / "vanilla.ckpt")
    vanilla_curve = rpt.read_curve_csv(out / "vanilla_dev.csv")
    vsteps = cfg.training.vanilla_steps
    if steps == vsteps:
        curve = vanilla_curve
    elif steps > vsteps:
        trainer, meta = _trainer_from(cfg, data, vanilla_checkpoint)
        _check_meta(meta, cfg, vanilla_checkpoint)
        curve = list(vanilla_curve)
        train_with_evals(trainer, data.train.ids, steps, cfg.training.eval_interval, data.dev, curve)
    else:
        trainer = _trainer(cfg, data, cfg.seeds.vanilla)
        curve = [vanilla_curve[0]]
        train_with_evals(trainer, data.train.ids, steps, cfg.training.eval_interval, data.dev, curve)
    return rpt.write_curve_csv(curve, out / "baseline_dev.csv")


def cmd_report(scores_path, manifest_path, curves: Mapping[str, Path] | None = None, out_dir=None,
               bin_width: float = 10.0, figures: bool = True, trace_path=None) -> dict[str, Path]:
    scores_path, manifest_path = Path(scores_path), Path(manifest_path)
    out_dir = Path(out_dir or scores_path.parent / "report")
    out_dir.mkdir(parents=True, exist_ok=True)
    table = read_score_table(scores_path)
    partition, _ = read_manifest(manifest_path)
    paths: dict[str, Path] = {}

    stats = rpt.partition_stats(table, partition)
    paths["partition_stats"] = rpt.write_stats_csv(stats, out_dir / "partition_stats.csv", table.criterion)
    (out_dir / "partition_stats.txt").write_text(rpt.format_partition_table(stats) + "\n", encoding="utf-8")

    if table.criterion == "recovery":
        rows, below = rpt.recovery_histogram(table, bin_width)
        paths["histogram"] = rpt.write_histogram_csv(rows, below, out_dir / "recovery_histogram.csv")
        if figures:
            paths["histogram_png"] = rpt.plot_histogram(rows, below, out_dir / "recovery_histogram.png")

    if curves:
        loaded = {name: rpt.read_curve_csv(p) for name, p in curves.items()}
        paths["learning_curves"] = rpt.merge_learning_curves(loaded, out_dir / "learning_curves.csv")
        if figures:
            starts = []
            if trace_path is not None and Path(trace_path).exists():
                starts = [e.step for e in PhaseTrace.read(trace_path).of_kind("phase-start")]
            paths["learning_curves_png"] = rpt.plot_learning_curves(
                loaded, out_dir / "learning_curves.png", starts)
    return paths


def run_all(cfg: ExperimentConfig, vanilla_decoder: Decoder | None = None) -> dict:
    """Vanilla training, scoring, splitting, CL training, baseline and reports."""
    timings = {}
    t0 = time.perf_counter()
    data = prepare_data(cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)

    def timed(name, fn, *a, **kw):
        s = time.perf_counter()
        r = fn(*a, **kw)
        timings[name] = round(time.perf_counter() - s, 2)
        return r

    vanilla = timed("train_vanilla", cmd_train_vanilla, cfg, data)
    scores = timed("score", cmd_score, cfg, vanilla, data)
    manifest = timed("split", cmd_split, scores, cfg.schedule.K)
    _, trace_path = timed("train_cl", cmd_train_cl, cfg, manifest, vanilla, data, vanilla_decoder)
    trace = PhaseTrace.read(trace_path)
    baseline = timed("baseline", cmd_train_baseline, cfg, trace.final_step, vanilla, data)
    curves = {"baseline": baseline, f"cl-{cfg.schedule.mode}": out / "cl_dev.csv"}
    timed("report", cmd_report, scores, manifest, curves, out / "report", cfg.report.bin_width,
          cfg.report.figures, trace_path)
    timings["total"] = round(time.perf_counter() - t0, 2)

    table = read_score_table(scores)
    partition, _ = read_manifest(manifest)
    stats = rpt.partition_stats(table, partition)
    cl_curve = rpt.read_curve_csv(out / "cl_dev.csv")
    base_curve = rpt.read_curve_csv(baseline)
    summary = {
        "criterion": cfg.criterion,
        "mode": cfg.schedule.mode,
        "phases": len(trace.of_kind("phase-start")),
        "phase_starts": [e.step for e in trace.of_kind("phase-start")],
        "cl_steps": trace.final_step,
        "subset_mean": [round(s.mean, 6) for s in stats],
        "cl_final_dev_bleu": round(cl_curve[-1][1], 6),
        "baseline_final_dev_bleu": round(base_curve[-1][1], 6),
        "vanilla_steps": cfg.training.vanilla_steps,
        "timings_s": timings,
    }
    corrupted = data.train.metadata.get("corrupted")
    if corrupted is not None:
        flags = set(corrupted)
        summary["corrupted_fraction"] = [
            round(sum(i in flags for i in s) / len(s), 6) for s in partition.subsets]
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    log.info("run-all finished in %.1fs: CL dev %.2f vs baseline %.2f", timings["total"],
             summary["cl_final_dev_bleu"], summary["baseline_final_dev_bleu"])
    return summary
