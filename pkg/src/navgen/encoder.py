"""Scene representations: per-view projection with angle/position encodings
and multi-view fusion, plus candidate/object/pooled-position encodings.

All forward passes run on the reference numpy kernels so the vectors that
reach prompt streams (and the golden dumps hashing them) are independent
of the selected kernel backend. Caches returned by the forward functions
accumulate output gradients; ``backward_caches`` folds them into parameter
gradients.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .errors import ShapeError
from .transformer import REFERENCE, init_stack_params, stack_bwd, stack_fwd

ANGLE_FREQS = (1.0, 2.0, 4.0, 8.0)
N_ANGLE_FEATS = 4 * len(ANGLE_FREQS)  # sin/cos of heading and elevation per frequency

STOP_VEC = "enc.stop_vec"
NOOBJ_VEC = "enc.notexist_vec"


def init_encoder_params(rng, cfg: ModelConfig, d_feat: int) -> dict:
    std = 0.02
    d = cfg.d_model
    params = {
        "enc.view_proj.W": rng.normal(0.0, std, (d_feat, d)),
        "enc.view_proj.b": np.zeros(d),
        "enc.angle.W": rng.normal(0.0, std, (N_ANGLE_FEATS, d)),
        "enc.pos.W": rng.normal(0.0, std, (3, d)),
        "enc.obj_proj.W": rng.normal(0.0, std, (d_feat, d)),
        "enc.obj_proj.b": np.zeros(d),
        STOP_VEC: rng.normal(0.0, std, d),
        NOOBJ_VEC: rng.normal(0.0, std, d),
    }
    init_stack_params(rng, d, cfg.ff_ratio * d, "enc.fuse", cfg.fuse_layers, params)
    return params


def angle_features(headings, elevations) -> np.ndarray:
    """Sinusoidal features of (heading, elevation) at fixed frequencies; (S, 16)."""
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    elevations = np.atleast_1d(np.asarray(elevations, dtype=np.float64))
    feats = []
    for f in ANGLE_FREQS:
        feats += [np.sin(f * headings), np.cos(f * headings),
                  np.sin(f * elevations), np.cos(f * elevations)]
    return np.stack(feats, axis=-1)


def embed_view(feature, heading, elevation, position, params) -> np.ndarray:
    """Single view slot to d_model: linear feature projection + sinusoidal
    angle encoding + linear position encoding."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape[0] != params["enc.view_proj.W"].shape[0]:
        raise ShapeError(
            f"feature dim {feature.shape[0]} != {params['enc.view_proj.W'].shape[0]}")
    position = np.asarray(position, dtype=np.float64)
    if position.shape != (3,):
        raise ShapeError(f"position must be a 3-vector, got {position.shape}")
    out = (feature @ params["enc.view_proj.W"] + params["enc.view_proj.b"]
           + angle_features(heading, elevation)[0] @ params["enc.angle.W"]
           + position @ params["enc.pos.W"])
    return out


class FuseCache:
    """One fusion application; accumulates d(output rows) until backward."""

    def __init__(self, feats, angles, position, stack_cache, n_slots, d_model):
        self.feats = feats            # (S, d_feat)
        self.angles = angles          # (S, 16)
        self.position = position      # (3,)
        self.stack_cache = stack_cache
        self.grad_out = np.zeros((n_slots, d_model))


class BatchFuseCache:
    """Fusion applied to C viewpoints at once; rows indexed by (c, slot)."""

    def __init__(self, feats, angles, positions, stack_cache, d_model):
        self.feats = feats            # (C, S, d_feat)
        self.angles = angles          # (C, S, 16)
        self.positions = positions    # (C, 3)
        self.stack_cache = stack_cache
        self.grad_out = np.zeros(feats.shape[:2] + (d_model,))


class ObjCache:
    """One object-projection application; accumulates d(projected rows)."""

    def __init__(self, feats, d_model):
        self.feats = feats            # (m, d_feat)
        self.grad_out = np.zeros((feats.shape[0], d_model))


def embed_views_batch(feats, headings, elevations, position, params):
    angles = angle_features(headings, elevations)
    x = (feats @ params["enc.view_proj.W"] + params["enc.view_proj.b"]
         + angles @ params["enc.angle.W"]
         + np.asarray(position, dtype=np.float64) @ params["enc.pos.W"])
    return x, angles


def fuse_views(x, params, cfg: ModelConfig):
    """Bidirectional pre-norm self-attention over the view slots; (S, d)."""
    if x.ndim != 2 or x.shape[1] != cfg.d_model:
        raise ShapeError(f"fuse_views expects (n_views, {cfg.d_model}), got {x.shape}")
    lens = np.array([x.shape[0]], dtype=np.int64)
    y, stack_cache = stack_fwd(x[None, :, :], lens, params, "enc.fuse",
                               cfg.fuse_layers, cfg.n_heads, False, REFERENCE)
    return y[0], stack_cache


def encode_viewpoint(world, vid, params, cfg: ModelConfig):
    """Fused scene representations for every view slot of a viewpoint."""
    vp = world.viewpoint(vid)
    feats = np.stack([s.feature for s in vp.views])
    headings = np.array([s.heading for s in vp.views])
    elevations = np.array([s.elevation for s in vp.views])
    x, angles = embed_views_batch(feats, headings, elevations, vp.position, params)
    fused, stack_cache = fuse_views(x, params, cfg)
    cache = FuseCache(feats, angles, vp.position, stack_cache, len(vp.views), cfg.d_model)
    return fused, cache


def encode_viewpoints_batch(world, vids, params, cfg: ModelConfig):
    """Fuse many viewpoints of one world in a single stacked pass. Returns
    (fused (C, S, d), BatchFuseCache); row (c, slot) belongs to vids[c].
    The trainer uses this to amortize per-viewpoint encoder calls."""
    vps = [world.viewpoint(v) for v in vids]
    feats = np.stack([[s.feature for s in vp.views] for vp in vps])
    headings = np.array([[s.heading for s in vp.views] for vp in vps])
    elevations = np.array([[s.elevation for s in vp.views] for vp in vps])
    positions = np.stack([vp.position for vp in vps])
    angles = angle_features(headings.reshape(-1), elevations.reshape(-1)).reshape(
        feats.shape[0], feats.shape[1], N_ANGLE_FEATS)
    x = (feats @ params["enc.view_proj.W"] + params["enc.view_proj.b"]
         + angles @ params["enc.angle.W"]
         + (positions @ params["enc.pos.W"])[:, None, :])
    lens = np.full(len(vps), feats.shape[1], dtype=np.int64)
    fused, stack_cache = stack_fwd(x, lens, params, "enc.fuse",
                                   cfg.fuse_layers, cfg.n_heads, False, REFERENCE)
    return fused, BatchFuseCache(feats, angles, positions, stack_cache, cfg.d_model)


def encode_candidates(world, vid, params, cfg: ModelConfig):
    """Movement options as (id, vector, source): the learned stop vector at
    id 0, then each neighbor's fused slot vector in candidate order."""
    fused, cache = encode_viewpoint(world, vid, params, cfg)
    entries = [(0, params[STOP_VEC], ("param", STOP_VEC))]
    for cid, nbr, slot in world.candidates(vid):
        entries.append((cid, fused[slot], ("fuse", cache, slot)))
    return entries, cache


def encode_objects(objects, params):
    """Object projections as (id, vector, source); id 0 is the learned
    not-exist vector."""
    entries = [(0, params[NOOBJ_VEC], ("param", NOOBJ_VEC))]
    if not objects:
        return entries, None
    feats = np.stack([o.feature for o in objects])
    proj = feats @ params["enc.obj_proj.W"] + params["enc.obj_proj.b"]
    cache = ObjCache(feats, proj.shape[1])
    for row, obj in enumerate(objects):
        entries.append((obj.id, proj[row], ("obj", cache, row)))
    return entries, cache


def encode_panorama(world, vid, params, cfg: ModelConfig):
    """All fused view vectors of a viewpoint, ids 1..n_views in slot order."""
    fused, cache = encode_viewpoint(world, vid, params, cfg)
    entries = [(i + 1, fused[i], ("fuse", cache, i)) for i in range(fused.shape[0])]
    return entries, cache


def encode_position_summary(world, vid, params, cfg: ModelConfig):
    """Pooled vector for one observed position: mean of the fused view
    vectors plus the sum of projected object features (sum keeps object
    count linearly readable)."""
    fused, fuse_cache = encode_viewpoint(world, vid, params, cfg)
    pooled = fused.mean(axis=0)
    objects = world.viewpoint(vid).objects
    obj_cache = None
    if objects:
        entries, obj_cache = encode_objects(objects, params)
        pooled = pooled + np.sum([vec for _, vec, _ in entries[1:]], axis=0)
    return pooled, ("pool", fuse_cache, obj_cache)


def accumulate_slot_grad(source, dvec, grads):
    """Route a slot gradient to its producing cache or parameter."""
    if source is None:
        return
    tag = source[0]
    if tag == "param":
        grads[source[1]] += dvec
    elif tag in ("fuse", "obj"):
        source[1].grad_out[source[2]] += dvec
    elif tag == "pool":
        _, fuse_cache, obj_cache = source
        fuse_cache.grad_out += dvec / fuse_cache.grad_out.shape[0]
        if obj_cache is not None:
            obj_cache.grad_out += dvec
    elif tag == "poolb":
        _, cache, c, obj_cache = source
        cache.grad_out[c] += dvec / cache.grad_out.shape[1]
        if obj_cache is not None:
            obj_cache.grad_out += dvec
    else:
        raise ShapeError(f"unknown slot source {tag!r}")


def backward_caches(caches, params, cfg: ModelConfig, grads):
    """Fold accumulated per-cache output gradients into parameter gradients."""
    for cache in caches:
        if isinstance(cache, ObjCache):
            grads["enc.obj_proj.W"] += cache.feats.T @ cache.grad_out
            grads["enc.obj_proj.b"] += cache.grad_out.sum(axis=0)
            continue
        if isinstance(cache, BatchFuseCache):
            dx = stack_bwd(cache.grad_out, cache.stack_cache, params, "enc.fuse",
                           cfg.fuse_layers, cfg.n_heads, False, grads, REFERENCE)
            grads["enc.view_proj.W"] += np.einsum("csf,csd->fd", cache.feats, dx)
            grads["enc.view_proj.b"] += dx.sum(axis=(0, 1))
            grads["enc.angle.W"] += np.einsum("csa,csd->ad", cache.angles, dx)
            grads["enc.pos.W"] += cache.positions.T @ dx.sum(axis=1)
            continue
        dx = stack_bwd(cache.grad_out[None, :, :], cache.stack_cache, params, "enc.fuse",
                       cfg.fuse_layers, cfg.n_heads, False, grads, REFERENCE)[0]
        grads["enc.view_proj.W"] += cache.feats.T @ dx
        grads["enc.view_proj.b"] += dx.sum(axis=0)
        grads["enc.angle.W"] += cache.angles.T @ dx
        grads["enc.pos.W"] += np.outer(cache.position, dx.sum(axis=0))
