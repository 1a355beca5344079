"""Configuration dataclasses and strict document parsing.

One JSON document with sections (world, tasks, model, train, eval) plus a
root seed drives a whole experiment. Unknown keys are rejected and all
problems are reported together, not one at a time.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .vocabulary import LANDMARK_WORDS, OBJECT_WORDS


@dataclass
class WorldConfig:
    num_viewpoints: int = 50
    n_views: int = 36              # total view slots; 3 elevation rings
    d_feat: int = 32
    box: tuple = (20.0, 20.0, 4.0)  # meters
    k_nearest: int = 3
    max_degree: int = 6    # upper bound; effective cap is min(max_degree, ring slots)
    sigma: float = 0.1             # feature noise stddev
    offring_landmark_p: float = 0.5
    max_objects: int = 4
    feature_seed: int = 61455      # shared across worlds so grounding transfers

    @property
    def headings_per_ring(self) -> int:
        return self.n_views // 3

    def validate(self, problems: list):
        if self.num_viewpoints < 2:
            problems.append("world.num_viewpoints must be >= 2")
        if self.n_views < 3 or self.n_views % 3 != 0:
            problems.append("world.n_views must be a positive multiple of 3")
        if self.d_feat < 4:
            problems.append("world.d_feat must be >= 4")
        if len(self.box) != 3 or any(b <= 0 for b in self.box):
            problems.append("world.box must be 3 positive extents")
        if self.k_nearest < 1:
            problems.append("world.k_nearest must be >= 1")
        if self.max_degree < 2:
            problems.append("world.max_degree must be >= 2")
        if self.sigma < 0:
            problems.append("world.sigma must be >= 0")
        if not 0.0 <= self.offring_landmark_p <= 1.0:
            problems.append("world.offring_landmark_p must be in [0, 1]")
        if self.max_objects < 0:
            problems.append("world.max_objects must be >= 0")
        if self.max_objects > len(OBJECT_WORDS):
            problems.append("world.max_objects exceeds object vocabulary")
        if self.n_views % 3 == 0 and self.headings_per_ring > len(LANDMARK_WORDS):
            problems.append("world.n_views ring larger than landmark vocabulary")


@dataclass
class TaskConfig:
    min_path_len: int = 3          # nodes, including start
    max_path_len: int = 6
    max_tries: int = 500
    dialog_p: float = 0.25         # chance a VLN episode gets dialog turns
    max_dialog_turns: int = 3
    qa_num_positions: int = 4
    # History caps per task style (dialog VLN episodes use the longer cap).
    max_steps_vln: int = 15
    max_steps_vln_dialog: int = 30
    max_steps_objloc: int = 20
    max_steps_eqa: int = 15

    def validate(self, problems: list):
        if self.min_path_len < 2:
            problems.append("tasks.min_path_len must be >= 2")
        if self.max_path_len < self.min_path_len:
            problems.append("tasks.max_path_len must be >= min_path_len")
        if self.max_tries < 1:
            problems.append("tasks.max_tries must be >= 1")
        if not 0.0 <= self.dialog_p <= 1.0:
            problems.append("tasks.dialog_p must be in [0, 1]")
        if self.qa_num_positions < 1:
            problems.append("tasks.qa_num_positions must be >= 1")
        for name in ("max_steps_vln", "max_steps_vln_dialog", "max_steps_objloc", "max_steps_eqa"):
            if getattr(self, name) < 1:
                problems.append(f"tasks.{name} must be >= 1")


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ff_ratio: int = 4
    max_len: int = 512
    fuse_layers: int = 2
    tie_output: bool = True
    learned_id_table: bool = False  # dedicated embeddings for marker numerals

    def validate(self, problems: list):
        if self.d_model < 4 or self.d_model % self.n_heads != 0:
            problems.append("model.d_model must be >= 4 and divisible by n_heads")
        if self.n_layers < 0:
            problems.append("model.n_layers must be >= 0")
        if self.n_heads < 1:
            problems.append("model.n_heads must be >= 1")
        if self.ff_ratio < 1:
            problems.append("model.ff_ratio must be >= 1")
        if self.max_len < 8:
            problems.append("model.max_len must be >= 8")
        if self.fuse_layers < 0:
            problems.append("model.fuse_layers must be >= 0")


@dataclass
class TrainConfig:
    pretrain_steps: int = 2000
    finetune_steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    alternation_period: int = 1    # fine-tune teacher/student cadence
    record_every: int = 1
    student_temperature: float = 1.0
    mix_weights: dict = field(default_factory=dict)  # kind -> weight; empty = by size

    def validate(self, problems: list):
        if self.pretrain_steps < 0 or self.finetune_steps < 0:
            problems.append("train.*_steps must be >= 0")
        if self.pretrain_steps + self.finetune_steps == 0:
            problems.append("train.pretrain_steps + finetune_steps must be > 0")
        if self.batch_size < 1:
            problems.append("train.batch_size must be >= 1")
        if self.lr <= 0:
            problems.append("train.lr must be > 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            problems.append("train.beta1/beta2 must be in [0, 1)")
        if self.adam_eps <= 0:
            problems.append("train.adam_eps must be > 0")
        if self.alternation_period < 1:
            problems.append("train.alternation_period must be >= 1")
        if self.record_every < 1:
            problems.append("train.record_every must be >= 1")
        if any(w < 0 for w in self.mix_weights.values()):
            problems.append("train.mix_weights must be >= 0")
        if self.mix_weights and all(w == 0 for w in self.mix_weights.values()):
            problems.append("train.mix_weights must not be all zero")


@dataclass
class EvalConfig:
    success_threshold: float = 3.0  # meters
    action_max_new: int = 4
    summ_max_new: int = 24
    qa_max_new: int = 8
    sample_temperature: float = 0.01
    sampled_kinds: tuple = ("OBJLOC",)  # exploration-heavy nav families

    def validate(self, problems: list):
        if self.success_threshold <= 0:
            problems.append("eval.success_threshold must be > 0")
        for name in ("action_max_new", "summ_max_new", "qa_max_new"):
            if getattr(self, name) < 1:
                problems.append(f"eval.{name} must be >= 1")
        if self.sample_temperature <= 0:
            problems.append("eval.sample_temperature must be > 0")


@dataclass
class DataConfig:
    train_worlds: int = 3
    unseen_worlds: int = 2
    # episode counts per kind, per split
    train_counts: dict = field(default_factory=lambda: {
        "VLN": 400, "OBJLOC": 220, "SUMM": 220, "QA": 400, "EQA": 60})
    val_counts: dict = field(default_factory=lambda: {
        "VLN": 100, "OBJLOC": 60, "SUMM": 60, "QA": 100, "EQA": 100})

    def validate(self, problems: list):
        if self.train_worlds < 1:
            problems.append("data.train_worlds must be >= 1")
        if self.unseen_worlds < 1:
            problems.append("data.unseen_worlds must be >= 1")
        for name, counts in (("train_counts", self.train_counts), ("val_counts", self.val_counts)):
            for kind, n in counts.items():
                if kind not in ("VLN", "OBJLOC", "SUMM", "QA", "EQA"):
                    problems.append(f"data.{name}: unknown kind {kind!r}")
                elif not isinstance(n, int) or n < 0:
                    problems.append(f"data.{name}[{kind}] must be an int >= 0")


@dataclass
class RunConfig:
    seed: int = 7
    world: WorldConfig = field(default_factory=WorldConfig)
    tasks: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        problems: list[str] = []
        for section in (self.world, self.tasks, self.model, self.train, self.eval, self.data):
            section.validate(problems)
        if self.tasks.qa_num_positions > self.world.num_viewpoints:
            problems.append("tasks.qa_num_positions exceeds world.num_viewpoints")
        if problems:
            raise ConfigError(problems)
        return self


_SECTIONS = {
    "world": WorldConfig,
    "tasks": TaskConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "data": DataConfig,
}


def _build_section(cls, doc: dict, prefix: str, problems: list):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            problems.append(f"unknown key: {prefix}.{key}")
            continue
        if known[key].type == "tuple" and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{prefix}: {exc}")
        return cls()


def config_from_dict(doc: dict) -> RunConfig:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config document must be a JSON object"])
    kwargs = {}
    for key, value in doc.items():
        if key == "seed":
            if not isinstance(value, int):
                problems.append("seed must be an integer")
            else:
                kwargs["seed"] = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"section {key} must be an object")
            else:
                kwargs[key] = _build_section(_SECTIONS[key], value, key, problems)
        else:
            problems.append(f"unknown key: {key}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(**kwargs).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    doc = {"seed": cfg.seed}
    for name, section in (("world", cfg.world), ("tasks", cfg.tasks), ("model", cfg.model),
                          ("train", cfg.train), ("eval", cfg.eval), ("data", cfg.data)):
        entry = dataclasses.asdict(section)
        for key, value in entry.items():
            if isinstance(value, tuple):
                entry[key] = list(value)
        doc[name] = entry
    return doc
