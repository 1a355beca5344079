"""Rollout state machine and task-specific inference.

Per step: encode candidates, assemble the schema prompt, pick an action
(teacher, student-sampled, or decoded), move, append the chosen candidate
vector to history. Teacher actions follow the shortest path to the nearest
goal, recomputed every step; student forcing moves on the model's sample
while supervising with the teacher action. EQA composes the navigation and
QA capabilities in two stages with no parameters of its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EvalConfig, ModelConfig
from .encoder import (encode_candidates, encode_objects, encode_panorama,
                      encode_position_summary)
from .errors import SchemaError
from .model import decode
from .schema import PromptParts, TokenStream, assemble
from .vocabulary import get_vocab

TEACHER = "TEACHER"
STUDENT = "STUDENT"
INFER = "INFER"


@dataclass
class AgentState:
    current: int
    step: int = 0
    history: list = field(default_factory=list)   # chosen candidate vectors
    visited: list = field(default_factory=list)
    done: bool = False


@dataclass
class Trajectory:
    episode_id: str
    visited: list
    chosen: list                  # candidate ids, includes the explicit stop
    teacher: list                 # teacher candidate id per decided step
    candidate_sets: list          # valid candidate ids per decided step
    stopped: bool
    history_vectors: list         # history at termination (detached values)
    streams: list = field(default_factory=list)  # supervised streams (train modes)
    answer: str | None = None

    def to_dict(self):
        return {
            "episode_id": self.episode_id,
            "visited": list(self.visited),
            "chosen": list(self.chosen),
            "teacher": list(self.teacher),
            "stopped": self.stopped,
            "answer": self.answer,
        }


def teacher_action(world, current: int, goals) -> int:
    """Candidate id of the next hop on the shortest path to the nearest
    goal; 0 (stop) once a goal is reached."""
    if current in set(goals):
        return 0
    goal, _ = world.nearest_goal(current, goals)
    hop = world.next_hop(current, goal)
    for cid, nbr, _ in world.candidates(current):
        if nbr == hop:
            return cid
    raise SchemaError(f"next hop {hop} is not a candidate at {current}")


def _action_allowed_tokens(vocab, n_candidates: int) -> set:
    allowed = {vocab.open_paren_id, vocab.close_paren_id}
    allowed.update(vocab.numeral_id(i) for i in range(n_candidates + 1))
    return allowed


def parse_action(tokens, vocab) -> int:
    """First numeral in a decoded reply; no numeral parses as stop."""
    for tok in tokens:
        value = vocab.numeral_value(tok)
        if value is not None:
            return value
    return 0


def marker_reply_is_valid(tokens, vocab, max_id: int) -> bool:
    """True when the reply is exactly "( k )" (optionally + EOS) with k in range."""
    body = list(tokens)
    if body and body[-1] == vocab.eos_id:
        body = body[:-1]
    if len(body) != 3 or body[0] != vocab.open_paren_id or body[2] != vocab.close_paren_id:
        return False
    value = vocab.numeral_value(body[1])
    return value is not None and 0 <= value <= max_id


def _nav_parts(episode, history, observation) -> PromptParts:
    kind = "VLN" if episode.kind == "EQA" else episode.kind
    return PromptParts(kind=kind, task_text=episode.instruction,
                       history=[(v, None) for v in history],
                       observation=observation)


def rollout(world, episode, params, mode, cfg: ModelConfig,
            rng=None, eval_cfg: EvalConfig | None = None, policy="model",
            record_streams=None) -> Trajectory:
    """Run one navigation episode. ``policy`` applies to INFER mode only:
    "model" decodes actions, "oracle" follows the teacher, "random" picks
    uniformly among stop and the candidates."""
    if episode.kind not in ("VLN", "OBJLOC", "EQA"):
        raise SchemaError(f"rollout expects a navigation episode, got {episode.kind}")
    eval_cfg = eval_cfg or EvalConfig()
    vocab = get_vocab()
    if record_streams is None:
        record_streams = mode in (TEACHER, STUDENT)
    goals = list(episode.goal_viewpoints)

    state = AgentState(current=episode.start, visited=[episode.start])
    chosen, teacher_ids, candidate_sets, streams = [], [], [], []
    stopped = False
    sampled_family = episode.kind in eval_cfg.sampled_kinds

    needs_model = record_streams or (mode == STUDENT or (mode == INFER and policy == "model"))

    while state.step < episode.max_steps:
        cand_ids = [0] + [cid for cid, _, _ in world.candidates(state.current)]
        entries = None
        if needs_model:
            entries, _ = encode_candidates(world, state.current, params, cfg)
            parts = _nav_parts(episode, state.history, entries)
        t_act = teacher_action(world, state.current, goals)
        if record_streams:
            streams.append(assemble(parts, vocab, target=t_act))

        if mode == TEACHER or (mode == INFER and policy == "oracle"):
            action = t_act
        elif mode == INFER and policy == "random":
            action = int(rng.integers(0, len(cand_ids)))
        else:
            prompt = assemble(parts, vocab)
            allowed = _action_allowed_tokens(vocab, len(entries) - 1)
            if mode == STUDENT:
                decode_mode = ("sample", 1.0)
            elif sampled_family:
                decode_mode = ("sample", eval_cfg.sample_temperature)
            else:
                decode_mode = "greedy"
            reply = decode(params, prompt, decode_mode, cfg, rng=rng,
                           allowed=allowed, max_new=eval_cfg.action_max_new)
            action = parse_action(reply, vocab)

        chosen.append(action)
        teacher_ids.append(t_act)
        candidate_sets.append(cand_ids)
        state.step += 1
        if action == 0:
            stopped = True
            state.done = True
            break
        if entries is not None:
            state.history.append(np.array(entries[action][1]))
        state.current = next(nbr for cid, nbr, _ in world.candidates(state.current) if cid == action)
        state.visited.append(state.current)
    state.done = True

    return Trajectory(
        episode_id=episode.episode_id, visited=state.visited, chosen=chosen,
        teacher=teacher_ids, candidate_sets=candidate_sets, stopped=stopped,
        history_vectors=state.history, streams=streams)


def teacher_history(world, path, params, cfg: ModelConfig):
    """Candidate vectors a teacher picks walking ``path``; detached values."""
    history = []
    for a, b in zip(path, path[1:]):
        entries, _ = encode_candidates(world, a, params, cfg)
        cid = next(c for c, nbr, _ in world.candidates(a) if nbr == b)
        history.append(np.array(entries[cid][1]))
    return history


def objloc_parts(world, episode, viewpoint, history, params, cfg: ModelConfig) -> PromptParts:
    entries, _ = encode_objects(world.viewpoint(viewpoint).objects, params)
    return PromptParts(kind="OBJLOC", task_text=episode.instruction,
                       history=[(v, None) for v in history], observation=entries)


def localize(world, episode, params, trajectory, cfg: ModelConfig,
             eval_cfg: EvalConfig | None = None):
    """Decode the selected object id at the trajectory's final viewpoint.
    Returns (object_id, raw_reply_tokens)."""
    eval_cfg = eval_cfg or EvalConfig()
    vocab = get_vocab()
    final = trajectory.visited[-1]
    history = trajectory.history_vectors
    if len(history) != len(trajectory.visited) - 1:
        # oracle/random rollouts skip encoding; the history vector for a move
        # a->b is a's slot vector toward b either way, so rebuild it.
        history = teacher_history(world, trajectory.visited, params, cfg)
    parts = objloc_parts(world, episode, final, history, params, cfg)
    prompt = assemble(parts, vocab)
    n_objects = len(world.viewpoint(final).objects)
    allowed = _action_allowed_tokens(vocab, n_objects)
    reply = decode(params, prompt, "greedy", cfg, allowed=allowed,
                   max_new=eval_cfg.action_max_new)
    return parse_action(reply, vocab), reply


def qa_parts(world, episode, positions, params, cfg: ModelConfig) -> PromptParts:
    observation = []
    for i, vid in enumerate(positions):
        vec, source = encode_position_summary(world, vid, params, cfg)
        observation.append((i + 1, vec, source))
    return PromptParts(kind="QA", task_text=episode.instruction, observation=observation)


def answer_qa(world, episode, params, positions, cfg: ModelConfig,
              eval_cfg: EvalConfig | None = None) -> str:
    eval_cfg = eval_cfg or EvalConfig()
    vocab = get_vocab()
    prompt = assemble(qa_parts(world, episode, positions, params, cfg), vocab)
    reply = decode(params, prompt, "greedy", cfg, max_new=eval_cfg.qa_max_new)
    return vocab.decode([t for t in reply if t != vocab.eos_id])


def summ_parts(world, episode, params, cfg: ModelConfig) -> PromptParts:
    history = teacher_history(world, episode.gt_path, params, cfg)
    observation, _ = encode_panorama(world, episode.gt_path[-1], params, cfg)
    return PromptParts(kind="SUMM", task_text=episode.instruction,
                       history=[(v, None) for v in history], observation=observation)


def summarize(world, episode, params, cfg: ModelConfig,
              eval_cfg: EvalConfig | None = None) -> str:
    eval_cfg = eval_cfg or EvalConfig()
    vocab = get_vocab()
    prompt = assemble(summ_parts(world, episode, params, cfg), vocab)
    reply = decode(params, prompt, "greedy", cfg, max_new=eval_cfg.summ_max_new)
    return vocab.decode([t for t in reply if t != vocab.eos_id])


def eqa(world, episode, params, cfg: ModelConfig,
        eval_cfg: EvalConfig | None = None, rng=None, nav_policy="model"):
    """Two-stage zero-shot EQA: navigate with the VLN schema, then answer
    with the QA schema at the final position. Pure composition."""
    trajectory = rollout(world, episode, params, INFER, cfg, rng=rng,
                         eval_cfg=eval_cfg, policy=nav_policy)
    answer = answer_qa(world, episode, params, [trajectory.visited[-1]], cfg, eval_cfg)
    trajectory.answer = answer
    return trajectory, answer
