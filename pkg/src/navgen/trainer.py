"""Multi-task training: batch mixing, Adam, the two-stage schedule.

Pretraining is teacher-forced only; fine-tuning alternates teacher and
student batches at the configured period. Navigation items expand to one
supervised stream per rollout step; training is bitwise deterministic
given (seed, config, data) within a kernel backend.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .agent import STUDENT, TEACHER, rollout, teacher_action
from .config import EvalConfig, ModelConfig, TrainConfig
from .datagen import Bundle
from .encoder import (STOP_VEC, backward_caches, encode_objects,
                      encode_viewpoints_batch)
from .errors import ConfigError, NumericError
from .model import loss_and_grad, zero_grads
from .rngutil import generator
from .schema import PromptParts, TextEl, assemble
from .tasks import KINDS
from .vocabulary import get_vocab

PRETRAIN = "PRETRAIN"
FINETUNE = "FINETUNE"


@dataclass
class LossRecord:
    step: int
    loss: float
    stage: str
    mode: str


def mixing_weights(bundle: Bundle, override: dict | None = None) -> dict:
    """Dataset-size-proportional weights; EQA defaults to zero (held out as
    a task, evaluated zero-shot). Explicit weights override everything."""
    if override:
        weights = {k: float(override.get(k, 0.0)) for k in KINDS}
    else:
        weights = {k: float(bundle.size(k)) for k in KINDS}
        weights["EQA"] = 0.0
    total = sum(weights.values())
    if total <= 0:
        raise ConfigError(["mixing weights are all zero"])
    return {k: w / total for k, w in weights.items()}


def _plan_nav_steps(world, episode):
    """Teacher walk without any encoding: [(viewpoint, teacher_action)],
    plus the visited list. Mirrors rollout(..., TEACHER) exactly."""
    goals = list(episode.goal_viewpoints)
    current = episode.start
    steps, visited = [], [current]
    for _ in range(episode.max_steps):
        act = teacher_action(world, current, goals)
        steps.append((current, act))
        if act == 0:
            break
        current = next(nbr for cid, nbr, _ in world.candidates(current) if cid == act)
        visited.append(current)
    return steps, visited


class _WorldEncoding:
    """Collects the viewpoints a batch needs in one world, encodes them in
    a single fused pass, and serves observation entries and history rows."""

    def __init__(self, world):
        self.world = world
        self.vids: list[int] = []
        self.index: dict[int, int] = {}
        self.fused = None
        self.cache = None

    def need(self, vid: int):
        if vid not in self.index:
            self.index[vid] = len(self.vids)
            self.vids.append(vid)

    def encode(self, params, cfg: ModelConfig):
        if self.vids:
            self.fused, self.cache = encode_viewpoints_batch(
                self.world, self.vids, params, cfg)

    def candidate_entries(self, vid: int, params):
        c = self.index[vid]
        entries = [(0, params[STOP_VEC], ("param", STOP_VEC))]
        for cid, _, slot in self.world.candidates(vid):
            entries.append((cid, self.fused[c, slot], ("fuse", self.cache, (c, slot))))
        return entries

    def panorama_entries(self, vid: int):
        c = self.index[vid]
        return [(i + 1, self.fused[c, i], ("fuse", self.cache, (c, i)))
                for i in range(self.fused.shape[1])]

    def history_rows(self, path):
        rows = []
        for a, b in zip(path, path[1:]):
            c = self.index[a]
            slot = self.world.viewpoint(a).neighbor_slots[b]
            rows.append(self.fused[c, slot])
        return rows

    def pooled_entry(self, vid: int, oid: int, params):
        c = self.index[vid]
        pooled = self.fused[c].mean(axis=0)
        objects = self.world.viewpoint(vid).objects
        obj_cache = None
        if objects:
            entries, obj_cache = encode_objects(objects, params)
            pooled = pooled + np.sum([vec for _, vec, _ in entries[1:]], axis=0)
        return (oid, pooled, ("poolb", self.cache, c, obj_cache))


def _plan_vids(enc: _WorldEncoding, kind, episode):
    if kind in ("VLN", "OBJLOC", "EQA"):
        _, visited = _plan_nav_steps(enc.world, episode)
        for v in visited:
            enc.need(v)
        if kind == "OBJLOC":
            for v in episode.gt_path:
                enc.need(v)
    if kind == "EQA":
        enc.need(episode.gt_path[-1])
    elif kind == "SUMM":
        for v in episode.gt_path:
            enc.need(v)
    elif kind == "QA":
        for v in episode.goal_viewpoints:
            enc.need(v)


def _batched_streams(enc: _WorldEncoding, kind, episode, params,
                     cfg: ModelConfig, vocab, nav_too: bool):
    """Streams for one planned item, reading vectors from the batch encoding.
    ``nav_too`` includes the teacher-forced navigation step streams."""
    streams = []
    if kind in ("VLN", "OBJLOC", "EQA") and nav_too:
        steps, visited = _plan_nav_steps(enc.world, episode)
        history = []
        for t, (vid, act) in enumerate(steps):
            entries = enc.candidate_entries(vid, params)
            parts = PromptParts(kind="VLN" if kind == "EQA" else kind,
                                task_text=episode.instruction,
                                history=[(v, None) for v in history],
                                observation=entries)
            streams.append(assemble(parts, vocab, target=act))
            if act != 0:
                history.append(entries[act][1])
    if kind == "OBJLOC":
        goal = episode.target_object[0]
        history = enc.history_rows(episode.gt_path)
        entries, _ = encode_objects(enc.world.viewpoint(goal).objects, params)
        parts = PromptParts(kind="OBJLOC", task_text=episode.instruction,
                            history=[(v, None) for v in history],
                            observation=entries)
        streams.append(assemble(parts, vocab, target=episode.target_object[1]))
    elif kind == "EQA":
        obs = [enc.pooled_entry(episode.gt_path[-1], 1, params)]
        parts = PromptParts(kind="QA", task_text=episode.instruction, observation=obs)
        streams.append(assemble(parts, vocab, target=episode.qa_answer))
    elif kind == "SUMM":
        parts = PromptParts(kind="SUMM", task_text=episode.instruction,
                            history=[(v, None) for v in enc.history_rows(episode.gt_path)],
                            observation=enc.panorama_entries(episode.gt_path[-1]))
        streams.append(assemble(parts, vocab, target=episode.references[0]))
    elif kind == "QA":
        obs = [enc.pooled_entry(vid, i + 1, params)
               for i, vid in enumerate(episode.goal_viewpoints)]
        parts = PromptParts(kind="QA", task_text=episode.instruction, observation=obs)
        streams.append(assemble(parts, vocab, target=episode.qa_answer))
    return streams


def make_batch(bundle: Bundle, weights: dict, rng, batch_size: int, params,
               mode: str, cfg: ModelConfig, eval_cfg: EvalConfig):
    """Draw batch_size items by kind weight and expand them to supervised
    streams. Teacher-forced navigation, localization, summarization, and QA
    items share one fused encoder pass per world; student-forced navigation
    rolls out sequentially (its actions depend on the model)."""
    vocab = get_vocab()
    kinds = [k for k in KINDS if weights.get(k, 0.0) > 0.0]
    probs = np.array([weights[k] for k in kinds])
    probs = probs / probs.sum()
    draws = []
    for _ in range(batch_size):
        kind = kinds[int(rng.choice(len(kinds), p=probs))]
        items = bundle.episodes[kind]
        widx, episode = items[int(rng.integers(0, len(items)))]
        draws.append((kind, widx, episode))

    streams = []
    encodings: dict[int, _WorldEncoding] = {}
    planned = []
    for kind, widx, episode in draws:
        nav_too = kind in ("VLN", "OBJLOC", "EQA")
        if nav_too and mode == STUDENT:
            traj = rollout(bundle.worlds[widx], episode, params, STUDENT, cfg,
                           rng=rng, eval_cfg=eval_cfg, record_streams=True)
            streams.extend(traj.streams)
            nav_too = False
            if kind == "VLN":
                continue
        enc = encodings.setdefault(widx, _WorldEncoding(bundle.worlds[widx]))
        _plan_vids(enc, kind, episode)
        planned.append((enc, kind, episode, nav_too))
    for enc in encodings.values():
        enc.encode(params, cfg)
    for enc, kind, episode, nav_too in planned:
        streams.extend(_batched_streams(enc, kind, episode, params, cfg,
                                        vocab, nav_too))
    return streams


def batch_fingerprint(streams) -> str:
    h = hashlib.sha256()
    for s in streams:
        tokens = [e.token for e in s.elements if isinstance(e, TextEl)]
        h.update(np.asarray(tokens, dtype=np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def init_opt_state(params) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()},
            "t": 0}


def adam_step(params, grads, state, cfg: TrainConfig):
    """Bias-corrected Adam over every parameter; updates in place."""
    state["t"] += 1
    t = state["t"]
    for name in sorted(params):
        kernels.adam_update(params[name], grads[name], state["m"][name],
                            state["v"][name], t, cfg.lr, cfg.beta1, cfg.beta2,
                            cfg.adam_eps)
    return params, state


def clip_grads(grads, max_norm: float) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in sorted(grads):
            grads[name] *= scale
    return norm


def _stage_and_mode(step: int, cfg: TrainConfig):
    if step < cfg.pretrain_steps:
        return PRETRAIN, TEACHER
    local = step - cfg.pretrain_steps
    phase = (local // cfg.alternation_period) % 2
    return FINETUNE, TEACHER if phase == 0 else STUDENT


def train_step(bundle, weights, params, opt_state, rng, step, cfg: TrainConfig,
               model_cfg: ModelConfig, eval_cfg: EvalConfig,
               grads: dict | None = None) -> LossRecord:
    stage, mode = _stage_and_mode(step, cfg)
    streams = make_batch(bundle, weights, rng, cfg.batch_size, params, mode,
                         model_cfg, eval_cfg)
    if grads is None:
        grads = zero_grads(params)
    else:
        for arr in grads.values():
            arr.fill(0.0)
    loss, grads, caches = loss_and_grad(params, streams, model_cfg,
                                        grads=grads, track_slots=True)
    backward_caches(caches, params, model_cfg, grads)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", step=step,
                           batch_hash=batch_fingerprint(streams))
    clip_grads(grads, cfg.grad_clip)
    adam_step(params, grads, opt_state, cfg)
    return LossRecord(step, loss, stage, mode)


def train(bundle: Bundle, params, opt_state, cfg: TrainConfig,
          model_cfg: ModelConfig, eval_cfg: EvalConfig, seed: int,
          start_step: int = 0, stop_after: int | None = None,
          rng_state=None, on_record=None):
    """Run from start_step to the configured total (or stop_after); returns
    (params, opt_state, records, rng_state). Resuming with the saved rng
    state reproduces the uninterrupted loss sequence bitwise."""
    weights = mixing_weights(bundle, cfg.mix_weights)
    rng = generator(seed, "train")
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    total = cfg.pretrain_steps + cfg.finetune_steps
    end = total if stop_after is None else min(total, stop_after)
    records = []
    grads = zero_grads(params)
    for step in range(start_step, end):
        rec = train_step(bundle, weights, params, opt_state, rng, step, cfg,
                         model_cfg, eval_cfg, grads=grads)
        if step % cfg.record_every == 0:
            records.append(rec)
            if on_record is not None:
                on_record(rec)
    return params, opt_state, records, rng.bit_generator.state


def records_to_csv(records) -> str:
    lines = ["step,loss,stage,mode"]
    for r in records:
        lines.append(f"{r.step},{r.loss!r},{r.stage},{r.mode}")
    return "\n".join(lines) + "\n"
