"""Dataset layout on disk and in memory.

A split directory holds its world files, a worlds manifest, and one
episode JSONL per task kind whose header references the manifest hash.
Episode ids carry a world prefix ("w00-...") tying each episode to its
world. The train/val-seen splits share worlds (fresh episodes); val-unseen
uses held-out worlds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .errors import DataError
from .rngutil import subseed
from .tasks import KINDS, generate_dataset, read_header, read_jsonl, write_jsonl
from .world import World, generate_world, load_world, save_world

SPLITS = ("train", "val_seen", "val_unseen")
WORLDS_MANIFEST = "worlds.json"


@dataclass
class Bundle:
    """One split in memory: worlds plus (world_index, episode) pairs per kind."""
    worlds: list
    episodes: dict = field(default_factory=dict)  # kind -> list[(world_idx, Episode)]

    def kinds(self):
        return [k for k in KINDS if self.episodes.get(k)]

    def size(self, kind):
        return len(self.episodes.get(kind, []))


def world_seeds(cfg: RunConfig, split: str):
    """World seeds per split; val_seen reuses the training worlds."""
    base = "train" if split in ("train", "val_seen") else "unseen"
    count = cfg.data.train_worlds if base == "train" else cfg.data.unseen_worlds
    root = subseed(cfg.seed, f"worlds-{base}").generate_state(count)
    return [int(s) for s in root]


def split_counts(cfg: RunConfig, split: str) -> dict:
    return dict(cfg.data.train_counts if split == "train" else cfg.data.val_counts)


def generate_split(cfg: RunConfig, split: str) -> Bundle:
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    worlds = [generate_world(s, cfg.world) for s in world_seeds(cfg, split)]
    counts = split_counts(cfg, split)
    episodes = {}
    for kind in KINDS:
        total = counts.get(kind, 0)
        per_world = [total // len(worlds)] * len(worlds)
        for i in range(total % len(worlds)):
            per_world[i] += 1
        items = []
        for widx, (world, n) in enumerate(zip(worlds, per_world)):
            eps = generate_dataset(world, kind, n, cfg.tasks, cfg.seed,
                                   prefix=f"{split}-w{widx:02d}-")
            for ep in eps:
                ep.episode_id = f"w{widx:02d}-{ep.episode_id}"
                items.append((widx, ep))
        episodes[kind] = items
    return Bundle(worlds, episodes)


def write_split(bundle: Bundle, out_dir) -> dict:
    """Write worlds, manifest, and per-kind episode files; returns counts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world_files = []
    for i, world in enumerate(bundle.worlds):
        name = f"world_{i:02d}.json"
        save_world(out_dir / name, world)
        digest = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
        world_files.append({"file": name, "sha256": digest})
    manifest = {"format": "navgen-worlds", "version": 1, "worlds": world_files}
    (out_dir / WORLDS_MANIFEST).write_text(json.dumps(manifest), encoding="utf-8")
    manifest_hash = hashlib.sha256((out_dir / WORLDS_MANIFEST).read_bytes()).hexdigest()

    counts = {}
    for kind in KINDS:
        items = bundle.episodes.get(kind, [])
        write_jsonl(out_dir / f"episodes_{kind.lower()}.jsonl",
                    [ep for _, ep in items], world_ref=manifest_hash)
        counts[kind] = len(items)
    return counts


def load_split(split_dir) -> Bundle:
    split_dir = Path(split_dir)
    manifest_path = split_dir / WORLDS_MANIFEST
    if not manifest_path.exists():
        raise DataError(f"missing worlds manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest_hash = hashlib.sha256(manifest_path.read_bytes()).hexdigest()
    worlds = []
    for entry in manifest["worlds"]:
        path = split_dir / entry["file"]
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != entry["sha256"]:
            raise DataError(f"world file hash mismatch: {path}")
        worlds.append(load_world(path))
    episodes = {}
    for kind in KINDS:
        path = split_dir / f"episodes_{kind.lower()}.jsonl"
        if not path.exists():
            continue
        header = read_header(path)
        if header.get("world_ref") not in ("", manifest_hash):
            raise DataError(f"episodes file {path} references a different worlds manifest")
        items = []
        for ep in read_jsonl(path):
            if not ep.episode_id.startswith("w") or "-" not in ep.episode_id:
                raise DataError(f"episode id {ep.episode_id!r} lacks a world prefix")
            widx = int(ep.episode_id[1:ep.episode_id.index("-")])
            if widx >= len(worlds):
                raise DataError(f"episode {ep.episode_id!r} references world {widx}")
            items.append((widx, ep))
        episodes[kind] = items
    return Bundle(worlds, episodes)


def generate_all(cfg: RunConfig, out_dir) -> dict:
    """gen-data entry point: all three splits; returns counts per split."""
    out_dir = Path(out_dir)
    table = {}
    for split in SPLITS:
        bundle = generate_split(cfg, split)
        table[split] = write_split(bundle, out_dir / split)
    return table
