"""Experiment configuration: an INI file with [model], [train], [task], [schedule].

Every key has a default except ``task.name``. Unknown sections or keys are
rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import InvalidArgument
from .masks import MaskPolicy
from .model import ModelConfig
from .schedule import Pipeline, TrainSchedule, build_schedule
from .tasks import Vocab
from .tensor import OptimizerConfig
from .training import TrainConfig

OUT_DIR_ENV = "MMATTN_OUT_DIR"
REQUIRED = object()


class ConfigError(InvalidArgument):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    items = tuple(int(x) for x in s.replace(",", " ").split())
    if not items:
        raise ValueError("empty list")
    return items


def _str_list(s: str) -> tuple[str, ...]:
    items = tuple(x.strip().upper() for x in s.split(",") if x.strip())
    if not items:
        raise ValueError("empty list")
    return items


# (section, key) -> (parser, default, doc)
KEYS: dict[tuple[str, str], tuple[Callable[[str], Any], Any, str]] = {
    ("model", "d_model"): (int, 64, "residual width"),
    ("model", "n_heads"): (int, 4, "attention heads; must divide d_model"),
    ("model", "n_layers"): (int, 4, "transformer blocks"),
    ("model", "d_ff"): (int, 256, "feed-forward hidden width"),
    ("model", "vocab_size"): (int, 128, "vocabulary; the top 64 ids are image symbols"),
    ("model", "max_len"): (int, 64, "longest sequence (learned positions)"),
    ("model", "seed"): (int, 0, "initialization seed offset; each run adds its train seed"),
    ("model", "precision"): (int, 64, "64 or 32 bit floats"),
    ("train", "optimizer"): (str, "ADAM", "ADAM or SGD"),
    ("train", "lr"): (float, 3e-4, "learning rate"),
    ("train", "beta1"): (float, 0.9, "Adam first-moment decay"),
    ("train", "beta2"): (float, 0.999, "Adam second-moment decay"),
    ("train", "eps"): (float, 1e-8, "Adam denominator epsilon"),
    ("train", "weight_decay"): (float, 0.0, "decoupled weight decay"),
    ("train", "batch_size"): (int, 32, "samples per step"),
    ("train", "seeds"): (_int_list, (0, 1, 2), "run seeds for compare (train uses the first)"),
    ("train", "mma_in_pt"): (_bool, False, "apply the policy mask in PT stages too (leaks)"),
    ("task", "name"): (str, REQUIRED, "blind_readout, plain_recall, or both"),
    ("task", "k_symbols"): (int, 8, "image length / number of candidate answers"),
    ("task", "n_train"): (int, 4096, "training samples"),
    ("task", "n_eval"): (int, 500, "held-out evaluation samples"),
    ("task", "data_seed"): (int, 1234, "dataset seed offset"),
    ("schedule", "pipeline"): (str, "CONVENTIONAL", "CONVENTIONAL or DOT (train subcommand)"),
    ("schedule", "policy"): (str, "CAUSAL", "mask policy for the train subcommand"),
    ("schedule", "pt_steps"): (int, 0, "steps per PT sub-stage (0 skips PT)"),
    ("schedule", "sft_steps"): (int, 2000, "steps per SFT sub-stage"),
    ("schedule", "rows"): (_str_list, ("CAUSAL", "MMA_PAIRWISE", "DOT+CAUSAL"),
                           "compare rows: POLICY or DOT+POLICY"),
}

SECTIONS = ("model", "train", "task", "schedule")
TASK_NAMES = ("blind_readout", "plain_recall", "both")


@dataclass(frozen=True)
class RowSpec:
    """One compare row: a pipeline paired with a mask policy."""

    label: str
    pipeline: Pipeline
    policy: MaskPolicy

    @classmethod
    def parse(cls, text: str) -> "RowSpec":
        label = text.strip().upper()
        pipeline = Pipeline.CONVENTIONAL
        body = label
        if "+" in label:
            head, body = label.split("+", 1)
            pipeline = Pipeline.parse(head)
        return cls(label, pipeline, MaskPolicy.parse(body))


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict[str, Any]

    def __getitem__(self, dotted: str):
        return self.values[dotted]

    def model_config(self, seed: int = 0) -> ModelConfig:
        v = self.values
        return ModelConfig(d_model=v["model.d_model"], n_heads=v["model.n_heads"], n_layers=v["model.n_layers"],
                           d_ff=v["model.d_ff"], vocab_size=v["model.vocab_size"], max_len=v["model.max_len"],
                           seed=v["model.seed"] + seed, precision=v["model.precision"])

    def train_config(self, seed: int = 0) -> TrainConfig:
        v = self.values
        opt = OptimizerConfig(kind=v["train.optimizer"], lr=v["train.lr"], betas=(v["train.beta1"], v["train.beta2"]),
                              eps=v["train.eps"], weight_decay=v["train.weight_decay"])
        return TrainConfig(opt, batch_size=v["train.batch_size"], seed=seed, mma_in_pt=v["train.mma_in_pt"])

    def schedule(self, pipeline: Pipeline | str | None = None) -> TrainSchedule:
        v = self.values
        return build_schedule(pipeline or v["schedule.pipeline"], v["schedule.pt_steps"], v["schedule.sft_steps"])

    @property
    def tasks(self) -> tuple[str, ...]:
        name = self.values["task.name"]
        return ("blind_readout", "plain_recall") if name == "both" else (name,)

    @property
    def rows(self) -> tuple[RowSpec, ...]:
        return tuple(RowSpec.parse(r) for r in self.values["schedule.rows"])


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section; expected one of {list(SECTIONS)}")
        for key in cp[section]:
            if (section, key) not in KEYS:
                raise ConfigError(f"{section}.{key}", "unknown key")
    values = {}
    for (section, key), (parse, default, _) in KEYS.items():
        dotted = f"{section}.{key}"
        if cp.has_option(section, key):
            raw = cp.get(section, key)
            try:
                values[dotted] = parse(raw)
            except ValueError as exc:
                raise ConfigError(dotted, f"cannot parse {raw!r}: {exc}") from None
        elif default is REQUIRED:
            raise ConfigError(dotted, "missing required key")
        else:
            values[dotted] = default
    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if v["task.name"] not in TASK_NAMES:
        raise ConfigError("task.name", f"must be one of {list(TASK_NAMES)}, got {v['task.name']!r}")
    checks = [
        ("model", cfg.model_config), ("train", cfg.train_config), ("schedule", cfg.schedule),
    ]
    for section, build in checks:
        try:
            build()
        except InvalidArgument as exc:
            raise ConfigError(section, str(exc)) from None
    for key in ("schedule.pt_steps", "schedule.sft_steps", "task.n_train", "task.n_eval"):
        if v[key] < 0 or (key.startswith("task") and v[key] < 1):
            raise ConfigError(key, f"out of range: {v[key]}")
    try:
        policy = MaskPolicy.parse(v["schedule.policy"])
        rows = cfg.rows
    except InvalidArgument as exc:
        raise ConfigError("schedule", str(exc)) from None
    pairs = [(r.label, r.pipeline, r.policy) for r in rows] + [("schedule.policy", Pipeline.parse(v["schedule.pipeline"]), policy)]
    for label, pipeline, pol in pairs:
        if pipeline is Pipeline.DOT and pol is MaskPolicy.MMA_PAIRWISE:
            raise ConfigError("schedule", f"{label}: pairwise masks need image-first layouts; use MMA_GENERALIZED with DOT")
    try:
        vocab = Vocab.for_size(v["model.vocab_size"])
    except InvalidArgument as exc:
        raise ConfigError("model.vocab_size", str(exc)) from None
    if not 2 <= v["task.k_symbols"] <= vocab.max_k:
        raise ConfigError("task.k_symbols", f"must lie in [2, {vocab.max_k}] for vocab_size={v['model.vocab_size']}")
    if v["task.k_symbols"] + 2 > v["model.max_len"]:
        raise ConfigError("model.max_len", f"too short for k_symbols={v['task.k_symbols']}")


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), str(path))


def documented_defaults() -> str:
    """The full key table as an INI file with every default filled in."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for (sec, key), (_, default, doc) in KEYS.items():
            if sec != section:
                continue
            if default is REQUIRED:
                lines.append(f"# {doc} (required)")
                lines.append(f"{key} = blind_readout")
                continue
            if isinstance(default, tuple):
                default = ", ".join(str(x) for x in default)
            lines.append(f"# {doc}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)
