"""Procedural graph worlds: generation, shortest paths, candidate queries.

A world is a connected geometric graph of viewpoints. Each viewpoint
carries a fixed panorama of view slots (3 elevation rings) whose features
embed landmark words, plus a small set of localizable objects. Worlds are
immutable after generation; Dijkstra results are cached per source.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import WorldConfig
from .errors import ConfigError, MagicError, FormatVersionError, ParseError, WorldLookupError
from .rngutil import generator
from .vocabulary import LANDMARK_WORDS, OBJECT_WORDS

WORLD_FORMAT = "navgen-world"
WORLD_VERSION = 1

ELEVATIONS = (-np.pi / 6, 0.0, np.pi / 6)


@dataclass
class ViewSlot:
    heading: float
    elevation: float
    landmark: int | None          # index into landmark_vocab
    feature: np.ndarray           # d_feat


@dataclass
class SceneObject:
    id: int                       # local, 1-based
    category: int                 # index into object_vocab
    feature: np.ndarray


@dataclass
class Viewpoint:
    id: int
    position: np.ndarray          # (3,) meters
    views: list                   # list[ViewSlot], ring-major, heading ascending
    objects: list                 # list[SceneObject]
    neighbor_slots: dict = field(default_factory=dict)  # neighbor id -> slot index


class World:
    def __init__(self, viewpoints, edges, landmark_vocab, object_vocab, seed, cfg: WorldConfig):
        self.viewpoints = viewpoints
        self.edges = edges            # sorted list of (a, b, length), a < b
        self.landmark_vocab = landmark_vocab
        self.object_vocab = object_vocab
        self.seed = seed
        self.cfg = cfg
        self._nbrs = {vp.id: [] for vp in viewpoints}
        for a, b, w in edges:
            self._nbrs[a].append((b, w))
            self._nbrs[b].append((a, w))
        for nbrs in self._nbrs.values():
            nbrs.sort()
        self._dijkstra_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- basic queries ----------------------------------------------------

    def __len__(self):
        return len(self.viewpoints)

    def viewpoint(self, vid: int) -> Viewpoint:
        if not 0 <= vid < len(self.viewpoints):
            raise WorldLookupError(f"unknown viewpoint id: {vid}")
        return self.viewpoints[vid]

    def neighbors(self, vid: int):
        self.viewpoint(vid)
        return self._nbrs[vid]

    def edge_length(self, a: int, b: int) -> float:
        for nbr, w in self.neighbors(a):
            if nbr == b:
                return w
        raise WorldLookupError(f"no edge between {a} and {b}")

    def ring_slot_indices(self, vid: int):
        h = self.cfg.headings_per_ring
        return range(h, 2 * h)

    def ring_landmarks(self, vid: int):
        vp = self.viewpoint(vid)
        return [vp.views[s].landmark for s in self.ring_slot_indices(vid)]

    # -- shortest paths ----------------------------------------------------

    def _dijkstra_from(self, src: int):
        """dist to src and next-hop-toward-src for every node; cached.

        Equal-cost ties keep the smaller next-hop id, so reconstructed
        paths prefer smaller next-viewpoint ids.
        """
        cached = self._dijkstra_cache.get(src)
        if cached is not None:
            return cached
        n = len(self.viewpoints)
        dist = np.full(n, np.inf)
        nexthop = np.full(n, -1, dtype=np.int64)
        dist[src] = 0.0
        nexthop[src] = src
        heap = [(0.0, src)]
        done = np.zeros(n, dtype=bool)
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for x, w in self._nbrs[u]:
                cand = d + w
                if cand < dist[x]:
                    dist[x] = cand
                    nexthop[x] = u
                    heapq.heappush(heap, (cand, x))
                elif cand == dist[x] and u < nexthop[x]:
                    nexthop[x] = u
        self._dijkstra_cache[src] = (dist, nexthop)
        return dist, nexthop

    def geodesic(self, a: int, b: int) -> float:
        self.viewpoint(a)
        self.viewpoint(b)
        dist, _ = self._dijkstra_from(b)
        return float(dist[a])

    def distances_from(self, src: int) -> np.ndarray:
        """Geodesic distance from src to every viewpoint. Distances along a
        shortest path accumulate edge-by-edge from src, so summing the edges
        of that path in walk order reproduces them bitwise."""
        self.viewpoint(src)
        dist, _ = self._dijkstra_from(src)
        return dist

    def shortest_path(self, a: int, b: int) -> list[int]:
        self.viewpoint(a)
        self.viewpoint(b)
        dist, nexthop = self._dijkstra_from(b)
        if not np.isfinite(dist[a]):
            raise WorldLookupError(f"no path between {a} and {b}")
        path = [a]
        x = a
        while x != b:
            x = int(nexthop[x])
            path.append(x)
        return path

    def next_hop(self, a: int, b: int) -> int:
        """First move of shortest_path(a, b); a itself when already there."""
        if a == b:
            return a
        return self.shortest_path(a, b)[1]

    def nearest_goal(self, v: int, goals) -> tuple[int, float]:
        """Closest goal by geodesic; ties take the smaller goal id."""
        best = None
        for g in sorted(goals):
            d = self.geodesic(v, g)
            if best is None or d < best[1]:
                best = (g, d)
        if best is None:
            raise WorldLookupError("empty goal set")
        return best

    def candidates(self, v: int):
        """Movement options at v: (candidate_id, neighbor_id, slot_index),
        ids 1..deg in increasing heading order of the assigned slot.
        The implicit stop option (id 0) is not included."""
        vp = self.viewpoint(v)
        entries = sorted(
            ((vp.views[slot].heading, slot, nbr) for nbr, slot in vp.neighbor_slots.items()),
        )
        return [(i + 1, nbr, slot) for i, (_, slot, nbr) in enumerate(entries)]


# -- feature embeddings ----------------------------------------------------


def feature_embeddings(cfg: WorldConfig):
    """Global landmark/object feature matrices, shared by every world so
    grounding learned on one world transfers to unseen ones."""
    rng = generator(cfg.feature_seed, "features")
    scale = 1.0 / np.sqrt(cfg.d_feat)
    lm = rng.normal(0.0, scale, (len(LANDMARK_WORDS), cfg.d_feat))
    obj = rng.normal(0.0, scale, (len(OBJECT_WORDS), cfg.d_feat))
    return lm, obj


# -- generation --------------------------------------------------------------


def _dedupe_positions(positions: np.ndarray) -> np.ndarray:
    """Perturb exact duplicates by 1e-6 m steps along x until distinct."""
    seen = set()
    for i in range(positions.shape[0]):
        while positions[i].tobytes() in seen:
            positions[i, 0] += 1e-6
        seen.add(positions[i].tobytes())
    return positions


def _build_edges(positions: np.ndarray, k: int, cap: int):
    """Connected degree-capped edge set: greedy nearest-neighbor tree first
    (guarantees connectivity), then k-nearest extras where capacity allows."""
    n = positions.shape[0]
    deg = np.zeros(n, dtype=np.int64)
    edges = set()

    def dist(i, j):
        return float(np.linalg.norm(positions[i] - positions[j]))

    for i in range(1, n):
        best = None
        for j in range(i):
            if deg[j] >= cap:
                continue
            d = dist(i, j)
            if best is None or d < best[0]:
                best = (d, j)
        assert best is not None  # cap >= 2 guarantees spare capacity
        j = best[1]
        edges.add((j, i))
        deg[i] += 1
        deg[j] += 1

    for i in range(n):
        order = sorted((dist(i, j), j) for j in range(n) if j != i)[:k]
        for _, j in order:
            a, b = min(i, j), max(i, j)
            if (a, b) in edges or deg[i] >= cap or deg[j] >= cap:
                continue
            edges.add((a, b))
            deg[i] += 1
            deg[j] += 1

    out = []
    for a, b in sorted(edges):
        out.append((a, b, dist(a, b)))
    return out


def _assign_slots(vp_pos, nbr_ids, nbr_pos, headings_per_ring, ring_offset):
    """Map each neighbor to a ring slot by nearest heading; occupied slots
    fall through to the next free one in increasing-heading order."""
    h = headings_per_ring
    bearings = []
    for nid, npos in zip(nbr_ids, nbr_pos):
        bearing = float(np.arctan2(npos[1] - vp_pos[1], npos[0] - vp_pos[0])) % (2 * np.pi)
        bearings.append((bearing, nid))
    bearings.sort()
    taken = [False] * h
    assignment = {}
    for bearing, nid in bearings:
        slot = int(np.round(bearing / (2 * np.pi / h))) % h
        while taken[slot]:
            slot = (slot + 1) % h
        taken[slot] = True
        assignment[nid] = ring_offset + slot
    return assignment


def generate_world(seed: int, cfg: WorldConfig) -> World:
    problems: list[str] = []
    cfg.validate(problems)
    if problems:
        raise ConfigError(problems)

    rng = generator(seed, "world")
    n = cfg.num_viewpoints
    h = cfg.headings_per_ring
    cap = min(cfg.max_degree, h)

    box = np.asarray(cfg.box, dtype=np.float64)
    positions = _dedupe_positions(rng.uniform(0.0, 1.0, (n, 3)) * box)
    edges = _build_edges(positions, cfg.k_nearest, cap)

    lm_embed, obj_embed = feature_embeddings(cfg)
    heading_grid = [2 * np.pi * m / h for m in range(h)]

    viewpoints = []
    for vid in range(n):
        ring_lms = rng.choice(len(LANDMARK_WORDS), size=h, replace=False)
        views = []
        for ring, elevation in enumerate(ELEVATIONS):
            for m in range(h):
                if elevation == 0.0:
                    lm = int(ring_lms[m])
                elif rng.random() < cfg.offring_landmark_p:
                    lm = int(rng.integers(0, len(LANDMARK_WORDS)))
                else:
                    lm = None
                noise = rng.normal(0.0, cfg.sigma, cfg.d_feat)
                feat = noise if lm is None else lm_embed[lm] + noise
                views.append(ViewSlot(heading_grid[m], elevation, lm, feat))
        n_obj = int(rng.integers(0, cfg.max_objects + 1))
        cats = rng.choice(len(OBJECT_WORDS), size=n_obj, replace=False)
        objects = [
            SceneObject(i + 1, int(cat), obj_embed[int(cat)] + rng.normal(0.0, cfg.sigma, cfg.d_feat))
            for i, cat in enumerate(cats)
        ]
        viewpoints.append(Viewpoint(vid, positions[vid], views, objects))

    nbrs = {vid: [] for vid in range(n)}
    for a, b, _ in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    for vid in range(n):
        ids = sorted(nbrs[vid])
        viewpoints[vid].neighbor_slots = _assign_slots(
            positions[vid], ids, [positions[j] for j in ids], h, ring_offset=h)

    return World(viewpoints, edges, list(LANDMARK_WORDS), list(OBJECT_WORDS), seed, cfg)


# -- serialization -----------------------------------------------------------


def world_to_dict(world: World) -> dict:
    cfg = world.cfg
    return {
        "format": WORLD_FORMAT,
        "version": WORLD_VERSION,
        "seed": world.seed,
        "config": {
            "num_viewpoints": cfg.num_viewpoints,
            "n_views": cfg.n_views,
            "d_feat": cfg.d_feat,
            "box": list(cfg.box),
            "k_nearest": cfg.k_nearest,
            "max_degree": cfg.max_degree,
            "sigma": cfg.sigma,
            "offring_landmark_p": cfg.offring_landmark_p,
            "max_objects": cfg.max_objects,
            "feature_seed": cfg.feature_seed,
        },
        "landmark_vocab": list(world.landmark_vocab),
        "object_vocab": list(world.object_vocab),
        "nodes": [
            {
                "id": vp.id,
                "position": [float(x) for x in vp.position],
                "slots": [
                    {
                        "heading": float(s.heading),
                        "elevation": float(s.elevation),
                        "landmark": s.landmark,
                        "feature": [float(x) for x in s.feature],
                    }
                    for s in vp.views
                ],
                "neighbor_slots": {str(k): v for k, v in sorted(vp.neighbor_slots.items())},
            }
            for vp in world.viewpoints
        ],
        "edges": [[a, b, w] for a, b, w in world.edges],
        "objects": [
            {
                "viewpoint": vp.id,
                "id": obj.id,
                "category": obj.category,
                "feature": [float(x) for x in obj.feature],
            }
            for vp in world.viewpoints
            for obj in vp.objects
        ],
    }


def world_from_dict(doc: dict) -> World:
    if doc.get("format") != WORLD_FORMAT:
        raise MagicError(WORLD_FORMAT, doc.get("format"))
    if doc.get("version") != WORLD_VERSION:
        raise FormatVersionError(WORLD_VERSION, doc.get("version"))
    ccfg = dict(doc["config"])
    ccfg["box"] = tuple(ccfg["box"])
    cfg = WorldConfig(**ccfg)
    objects_by_vp: dict[int, list] = {}
    for rec in doc["objects"]:
        objects_by_vp.setdefault(rec["viewpoint"], []).append(
            SceneObject(rec["id"], rec["category"], np.asarray(rec["feature"], dtype=np.float64)))
    viewpoints = []
    for node in doc["nodes"]:
        views = [
            ViewSlot(s["heading"], s["elevation"], s["landmark"],
                     np.asarray(s["feature"], dtype=np.float64))
            for s in node["slots"]
        ]
        vp = Viewpoint(node["id"], np.asarray(node["position"], dtype=np.float64),
                       views, objects_by_vp.get(node["id"], []))
        vp.neighbor_slots = {int(k): v for k, v in node["neighbor_slots"].items()}
        viewpoints.append(vp)
    edges = [(a, b, w) for a, b, w in doc["edges"]]
    return World(viewpoints, edges, list(doc["landmark_vocab"]),
                 list(doc["object_vocab"]), doc["seed"], cfg)


def save_world(path, world: World):
    Path(path).write_text(json.dumps(world_to_dict(world)), encoding="utf-8")


def load_world(path) -> World:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"world file is not valid JSON: {exc}") from exc
    return world_from_dict(doc)
