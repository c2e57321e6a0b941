"""Experiment configuration: YAML schema, validation and provenance hashes.

Schema (every key optional except where noted; unknown keys are errors)::

    output_dir: runs/smoke
    seeds: {data: 1, vanilla: 2, cl: 3}
    corpus:
      synthetic: {task, n, vocab_size, min_len, max_len, corrupt_fraction, rho, zipf}
      files: {src: path, tgt: path}          # exactly one of synthetic / files
      tokenization: whitespace | character
      dev_fraction: 0.05
    model: {emb_dim, hidden_dim, dropout, label_smoothing, max_decode_len}
    training: {max_tokens, peak_lr, warmup_steps, vanilla_steps, eval_interval, average_top_k}
    criterion: recovery | length | rarity | lm | embed-norm | loss-decline
    lm_order: 2
    schedule: {mode, K, T, regimen, phase_steps, warmup_steps_before_check, check_interval,
               consecutive_successes_required, subsample_size, c0, p, total_steps}
    report: {bin_width, figures}
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..corpus import TOKENIZE_MODES, SyntheticTaskSpec
from ..difficulty import CRITERIA
from ..errors import ConfigError
from ..scheduler import ScheduleConfig


@dataclass
class Seeds:
    data: int = 1
    vanilla: int = 2
    cl: int = 3


@dataclass
class CorpusConfig:
    synthetic: dict[str, Any] | None = None
    files: dict[str, str] | None = None
    tokenization: str = "whitespace"
    dev_fraction: float = 0.05

    def synthetic_spec(self) -> tuple[SyntheticTaskSpec, int]:
        spec = dict(self.synthetic)
        n = spec.pop("n", 2000)
        return SyntheticTaskSpec(**spec), n


@dataclass
class ModelSettings:
    emb_dim: int = 32
    hidden_dim: int = 64
    dropout: float = 0.0
    label_smoothing: float = 0.1
    max_decode_len: int = 40


@dataclass
class TrainingConfig:
    max_tokens: int = 64
    peak_lr: float = 3e-3
    warmup_steps: int = 200
    vanilla_steps: int = 1000
    eval_interval: int = 250
    average_top_k: int = 1


@dataclass
class ReportConfig:
    bin_width: float = 10.0
    figures: bool = True


@dataclass
class ExperimentConfig:
    output_dir: str = "runs/smoke"
    seeds: Seeds = field(default_factory=Seeds)
    corpus: CorpusConfig = field(default_factory=lambda: CorpusConfig(synthetic=dict(DEFAULT_SYNTHETIC)))
    model: ModelSettings = field(default_factory=ModelSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    criterion: str = "recovery"
    lm_order: int = 2
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    # directory the config file was read from; relative corpus paths resolve against it
    base_dir: str = field(default=".", compare=False, repr=False)

    def validate(self) -> None:
        c = self.corpus
        if (c.synthetic is None) == (c.files is None):
            raise ConfigError("corpus needs exactly one of 'synthetic' or 'files'")
        if c.synthetic is not None:
            unknown = set(c.synthetic) - {f.name for f in dataclasses.fields(SyntheticTaskSpec)} - {"n"}
            if unknown:
                raise ConfigError(f"unknown keys in corpus.synthetic: {sorted(unknown)}")
            spec, n = c.synthetic_spec()
            spec.validate()
            if n < 2:
                raise ConfigError("synthetic corpus needs n >= 2")
        else:
            if set(c.files) != {"src", "tgt"}:
                raise ConfigError("corpus.files needs exactly 'src' and 'tgt'")
            for side in ("src", "tgt"):
                if not self.resolve(c.files[side]).is_file():
                    raise ConfigError(f"corpus file not found: {self.resolve(c.files[side])}")
        if c.tokenization not in TOKENIZE_MODES:
            raise ConfigError(f"unknown tokenization {c.tokenization!r}")
        if not 0.0 < c.dev_fraction < 1.0:
            raise ConfigError("dev_fraction must be in (0, 1)")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}; expected one of {CRITERIA}")
        if self.lm_order not in (1, 2, 3):
            raise ConfigError("lm_order must be 1..3")
        t = self.training
        if t.max_tokens < 1 or t.warmup_steps < 1 or t.eval_interval < 1 or t.average_top_k < 1:
            raise ConfigError("training counts must be positive")
        if t.vanilla_steps < 0:
            raise ConfigError("vanilla_steps must be >= 0")
        if t.peak_lr <= 0:
            raise ConfigError("peak_lr must be positive")
        if self.report.bin_width <= 0:
            raise ConfigError("report.bin_width must be positive")
        self.schedule.validate()

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def out(self) -> Path:
        return self.resolve(self.output_dir)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    # provenance hashes: each covers exactly what determines the artifact

    def data_hash(self) -> str:
        c = dataclasses.asdict(self.corpus)
        if self.corpus.files is not None:
            c["files"] = {k: _file_sha(self.resolve(v)) for k, v in self.corpus.files.items()}
        return _hash({"corpus": c, "seed": self.seeds.data})

    def vanilla_hash(self) -> str:
        return _hash({"data": self.data_hash(), "model": dataclasses.asdict(self.model),
                      "training": dataclasses.asdict(self.training), "seed": self.seeds.vanilla})


DEFAULT_SYNTHETIC = {
    "task": "noisy-cipher", "n": 2000, "vocab_size": 50, "min_len": 3, "max_len": 12,
    "corrupt_fraction": 0.2, "rho": 0.5, "zipf": 1.0,
}


def _hash(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _file_sha(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def file_sha(path) -> str:
    return _file_sha(Path(path))


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(raw: dict[str, Any], base_dir=".") -> ExperimentConfig:
    raw = copy.deepcopy(raw or {})
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"base_dir"}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {"base_dir": str(base_dir)}
    sections = {"seeds": Seeds, "corpus": CorpusConfig, "model": ModelSettings,
                "training": TrainingConfig, "schedule": ScheduleConfig, "report": ReportConfig}
    for key, value in raw.items():
        if key in sections:
            kwargs[key] = _build(sections[key], value, key)
        else:
            kwargs[key] = value
    cfg = ExperimentConfig(**kwargs)
    sched = cfg.schedule
    if isinstance(sched.consecutive_successes_required, str):
        if sched.consecutive_successes_required.lower() not in ("inf", "infinity"):
            raise ConfigError("consecutive_successes_required must be an integer or 'inf'")
        sched.consecutive_successes_required = float("inf")
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(raw or {}, base_dir=path.parent)


def dump_config(cfg: ExperimentConfig, path) -> Path:
    d = cfg.to_dict()
    if d["schedule"]["consecutive_successes_required"] == float("inf"):
        d["schedule"]["consecutive_successes_required"] = "inf"
    Path(path).write_text(yaml.safe_dump(d, sort_keys=False), encoding="utf-8")
    return Path(path)
