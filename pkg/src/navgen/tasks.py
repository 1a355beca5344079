"""Episode synthesis for the five task families, plus the JSONL exchange format.

All generators are pure given (world, rng, cfg). Instructions come from a
closed template grammar; the summarization family is the exact inverse of
the navigation family on identical paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import TaskConfig
from .errors import (FormatVersionError, GenerationExhausted, MagicError,
                     ParseError)
from .rngutil import generator

EPISODES_FORMAT = "navgen-episodes"
EPISODES_VERSION = 1

KINDS = ("VLN", "OBJLOC", "SUMM", "QA", "EQA")


@dataclass
class Episode:
    episode_id: str
    kind: str
    instruction: str
    start: int
    goal_viewpoints: list = field(default_factory=list)  # QA: observed positions
    target_object: tuple | None = None                   # (viewpoint, object id)
    gt_path: list | None = None
    references: list = field(default_factory=list)
    qa_answer: str | None = None
    max_steps: int = 1


# -- instruction grammar -----------------------------------------------------


def route_landmarks(world, path) -> list[str]:
    """Landmark word of the view slot traversed at each step of the path."""
    words = []
    for a, b in zip(path, path[1:]):
        slot = world.viewpoint(a).neighbor_slots[b]
        lm = world.viewpoint(a).views[slot].landmark
        words.append(world.landmark_vocab[lm])
    return words


def vln_body(world, path) -> str:
    return " ".join(route_landmarks(world, path))


def vln_instruction(world, path, dialog_turns=0) -> str:
    body = vln_body(world, path)
    text = f"follow the landmarks : {body} ."
    if dialog_turns:
        words = route_landmarks(world, path)
        turns = [
            f"question : which way ? answer : head to the {words[min(i, len(words) - 1)]} ."
            for i in range(dialog_turns)
        ]
        text = " ".join(turns) + " " + text
    return text


# -- synthesis ---------------------------------------------------------------


def _draw_path(world, rng, cfg: TaskConfig, goal_ok=None):
    """Sample (start, goal) whose shortest path length (in nodes) fits the
    configured bounds; optional goal predicate."""
    n = len(world)
    for _ in range(cfg.max_tries):
        start = int(rng.integers(0, n))
        goal = int(rng.integers(0, n))
        if goal == start:
            continue
        if goal_ok is not None and not goal_ok(goal):
            continue
        path = world.shortest_path(start, goal)
        if cfg.min_path_len <= len(path) <= cfg.max_path_len:
            return start, goal, path
    raise GenerationExhausted(
        f"no qualifying (start, goal) pair after {cfg.max_tries} draws")


def synth_vln(world, rng, cfg: TaskConfig, eid="vln-0") -> Episode:
    start, goal, path = _draw_path(world, rng, cfg)
    dialog = rng.random() < cfg.dialog_p
    turns = 0
    if dialog:
        turns = int(rng.integers(1, cfg.max_dialog_turns + 1))
    cap = cfg.max_steps_vln_dialog if turns else cfg.max_steps_vln
    return Episode(
        episode_id=eid, kind="VLN",
        instruction=vln_instruction(world, path, turns),
        start=start, goal_viewpoints=[goal], gt_path=path,
        max_steps=cap)


def synth_objloc(world, rng, cfg: TaskConfig, eid="objloc-0") -> Episode:
    start, goal, path = _draw_path(
        world, rng, cfg, goal_ok=lambda g: len(world.viewpoint(g).objects) > 0)
    objects = world.viewpoint(goal).objects
    target = objects[int(rng.integers(0, len(objects)))]
    ring = [lm for lm in world.ring_landmarks(goal) if lm is not None]
    lm_word = world.landmark_vocab[ring[int(rng.integers(0, len(ring)))]]
    obj_word = world.object_vocab[target.category]
    return Episode(
        episode_id=eid, kind="OBJLOC",
        instruction=f"find the {obj_word} near the {lm_word} .",
        start=start, goal_viewpoints=[goal], gt_path=path,
        target_object=(goal, target.id),
        max_steps=cfg.max_steps_objloc)


def synth_summ(world, rng, cfg: TaskConfig, eid="summ-0") -> Episode:
    start, goal, path = _draw_path(world, rng, cfg)
    return Episode(
        episode_id=eid, kind="SUMM",
        instruction="describe your route .",
        start=start, goal_viewpoints=[goal], gt_path=path,
        references=[vln_body(world, path)],
        max_steps=cfg.max_steps_vln)


def _all_landmarks(world, vid) -> set:
    return {s.landmark for s in world.viewpoint(vid).views if s.landmark is not None}


def qa_fact_answer(world, positions, landmark_index, count_question: bool) -> str | None:
    """Ground-truth answer for a QA fact, or None when the reference is
    ambiguous among the observed positions or unanswerable."""
    hosts = [p for p in positions if landmark_index in _all_landmarks(world, p)]
    if len(hosts) != 1:
        return None
    objects = world.viewpoint(hosts[0]).objects
    if count_question:
        return str(len(objects))
    if len(objects) != 1:
        return None
    return world.object_vocab[objects[0].category]


def synth_qa(world, rng, cfg: TaskConfig, eid="qa-0") -> Episode:
    n = len(world)
    for _ in range(cfg.max_tries):
        positions = sorted(int(v) for v in rng.choice(n, cfg.qa_num_positions, replace=False))
        count_question = bool(rng.integers(0, 2))
        # landmarks unique across the observed positions
        pools = [_all_landmarks(world, p) for p in positions]
        facts = []
        for i, p in enumerate(positions):
            others = set().union(*(pools[:i] + pools[i + 1:])) if len(positions) > 1 else set()
            for lm in sorted(pools[i] - others):
                answer = qa_fact_answer(world, positions, lm, count_question)
                if answer is not None:
                    facts.append((lm, answer))
        if not facts:
            continue
        lm, answer = facts[int(rng.integers(0, len(facts)))]
        word = world.landmark_vocab[lm]
        if count_question:
            instruction = f"how many objects are near the {word} ?"
        else:
            instruction = f"what object is near the {word} ?"
        return Episode(
            episode_id=eid, kind="QA", instruction=instruction,
            start=positions[0], goal_viewpoints=list(positions),
            qa_answer=answer, max_steps=1)
    raise GenerationExhausted(f"no unambiguous QA fact after {cfg.max_tries} draws")


def synth_eqa(world, rng, cfg: TaskConfig, eid="eqa-0") -> Episode:
    n = len(world)
    for _ in range(cfg.max_tries):
        start = int(rng.integers(0, n))
        lm = int(rng.integers(0, len(world.landmark_vocab)))
        hosts = [v for v in range(n)
                 if lm in {world.viewpoint(v).views[s].landmark for s in world.ring_slot_indices(v)}]
        if not hosts:
            continue
        dists = world.distances_from(start)
        goal = min(hosts, key=lambda v: (dists[v], v))
        if len(world.viewpoint(goal).objects) != 1:
            continue
        path = world.shortest_path(start, goal)
        if len(path) > cfg.max_path_len:
            continue
        word = world.landmark_vocab[lm]
        answer = world.object_vocab[world.viewpoint(goal).objects[0].category]
        return Episode(
            episode_id=eid, kind="EQA",
            instruction=f"walk to the closest {word} . what object is there ?",
            start=start, goal_viewpoints=[goal], gt_path=path,
            qa_answer=answer, max_steps=cfg.max_steps_eqa)
    raise GenerationExhausted(f"no answerable EQA episode after {cfg.max_tries} draws")


_SYNTH = {
    "VLN": synth_vln,
    "OBJLOC": synth_objloc,
    "SUMM": synth_summ,
    "QA": synth_qa,
    "EQA": synth_eqa,
}


def generate_dataset(world, kind, count, cfg: TaskConfig, seed, prefix="") -> list:
    """count episodes of one kind with independent per-episode rng streams."""
    synth = _SYNTH[kind]
    episodes = []
    for i in range(count):
        rng = generator(seed, f"episode-{prefix}-{kind}", i)
        episodes.append(synth(world, rng, cfg, eid=f"{kind.lower()}-{prefix}{i:05d}"))
    return episodes


# -- validation ---------------------------------------------------------------


def validate_episode(ep: Episode, world=None):
    problems = []
    if ep.kind not in KINDS:
        problems.append(f"unknown kind {ep.kind!r}")
    if ep.max_steps <= 0:
        problems.append("max_steps must be > 0")
    if ep.kind in ("VLN", "OBJLOC", "EQA"):
        if not ep.gt_path:
            problems.append("gt_path required")
        else:
            if ep.gt_path[0] != ep.start:
                problems.append("gt_path must start at start")
            if ep.gt_path[-1] not in ep.goal_viewpoints:
                problems.append("gt_path must end in goal_viewpoints")
    if ep.kind == "OBJLOC":
        if ep.target_object is None:
            problems.append("target_object required")
        elif ep.target_object[0] not in ep.goal_viewpoints:
            problems.append("target_object must sit at a goal viewpoint")
    if ep.kind == "SUMM" and (not ep.gt_path or not ep.references):
        problems.append("SUMM requires gt_path and references")
    if ep.kind in ("QA", "EQA") and ep.qa_answer is None:
        problems.append("qa_answer required")
    if world is not None and ep.gt_path:
        for a, b in zip(ep.gt_path, ep.gt_path[1:]):
            if b not in dict(world.neighbors(a)):
                problems.append(f"gt_path edge {a}->{b} not in world")
        if ep.kind == "OBJLOC" and ep.target_object is not None:
            ids = [o.id for o in world.viewpoint(ep.target_object[0]).objects]
            if ep.target_object[1] not in ids:
                problems.append("target_object id not present at its viewpoint")
    if problems:
        raise ParseError(f"invalid episode {ep.episode_id}: " + "; ".join(problems))
    return ep


# -- JSONL exchange ------------------------------------------------------------

_EPISODE_FIELDS = ("episode_id", "kind", "instruction", "start", "goal_viewpoints",
                   "target_object", "gt_path", "references", "qa_answer", "max_steps")


def episode_to_dict(ep: Episode) -> dict:
    return {
        "episode_id": ep.episode_id,
        "kind": ep.kind,
        "instruction": ep.instruction,
        "start": ep.start,
        "goal_viewpoints": list(ep.goal_viewpoints),
        "target_object": list(ep.target_object) if ep.target_object else None,
        "gt_path": list(ep.gt_path) if ep.gt_path is not None else None,
        "references": list(ep.references),
        "qa_answer": ep.qa_answer,
        "max_steps": ep.max_steps,
    }


def episode_from_dict(doc: dict, strict=True, line=None) -> Episode:
    unknown = [k for k in doc if k not in _EPISODE_FIELDS]
    if unknown and strict:
        raise ParseError(f"unknown episode fields: {sorted(unknown)}", line=line)
    missing = [k for k in _EPISODE_FIELDS if k not in doc]
    if missing:
        raise ParseError(f"missing episode fields: {missing}", line=line)
    return Episode(
        episode_id=doc["episode_id"],
        kind=doc["kind"],
        instruction=doc["instruction"],
        start=doc["start"],
        goal_viewpoints=list(doc["goal_viewpoints"]),
        target_object=tuple(doc["target_object"]) if doc["target_object"] else None,
        gt_path=list(doc["gt_path"]) if doc["gt_path"] is not None else None,
        references=list(doc["references"]),
        qa_answer=doc["qa_answer"],
        max_steps=doc["max_steps"],
    )


def write_jsonl(path, episodes, world_ref=""):
    header = {"format": EPISODES_FORMAT, "version": EPISODES_VERSION, "world_ref": world_ref}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for ep in episodes:
            fh.write(json.dumps(episode_to_dict(ep)) + "\n")


def read_header(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc}", line=1) from exc
    if header.get("format") != EPISODES_FORMAT:
        raise MagicError(EPISODES_FORMAT, header.get("format"))
    if header.get("version") != EPISODES_VERSION:
        raise FormatVersionError(EPISODES_VERSION, header.get("version"))
    return header


def read_jsonl(path, strict=True) -> list:
    read_header(path)
    episodes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if lineno == 1:
                continue
            if not raw.strip():
                continue
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed episode record: {exc}", line=lineno) from exc
            episodes.append(episode_from_dict(doc, strict=strict, line=lineno))
    return episodes


def dataset_hash(path) -> str:
    import hashlib
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
