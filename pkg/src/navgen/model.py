"""Decoder-only autoregressive model over mixed token/embedding streams.

Text elements go through the embedding table (numeral tokens inside id
markers optionally through a dedicated table); slot elements enter the
residual stream directly. Training uses the batched path with manual
backprop; single-stream forward/loss/grad are the reference contract and
treat the stream as data.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .encoder import accumulate_slot_grad, init_encoder_params
from .errors import DecodeError, ShapeError
from .rngutil import generator
from .schema import SlotEl, TextEl, TokenStream
from .transformer import ACTIVE, init_stack_params, stack_bwd, stack_fwd
from .vocabulary import MAX_NUMERAL


def init_params(seed: int, cfg: ModelConfig, d_feat: int, vocab_size: int) -> dict:
    rng = generator(seed, "init")
    std = 0.02
    params = {
        "dec.tok_emb": rng.normal(0.0, std, (vocab_size, cfg.d_model)),
        "dec.pos_emb": rng.normal(0.0, std, (cfg.max_len, cfg.d_model)),
    }
    init_stack_params(rng, cfg.d_model, cfg.ff_ratio * cfg.d_model, "dec.layer",
                      cfg.n_layers, params)
    if not cfg.tie_output:
        params["dec.head.W"] = rng.normal(0.0, std, (cfg.d_model, vocab_size))
    if cfg.learned_id_table:
        params["dec.id_emb"] = rng.normal(0.0, std, (MAX_NUMERAL + 1, cfg.d_model))
    params.update(init_encoder_params(rng, cfg, d_feat))
    return params


def param_count(params: dict) -> int:
    return int(sum(v.size for _, v in sorted(params.items())))


def head_matrix(params, cfg: ModelConfig):
    """(d_model, V) output projection; the embedding transpose when tied."""
    if cfg.tie_output:
        return params["dec.tok_emb"].T
    return params["dec.head.W"]


def _embed_batch(params, streams, cfg: ModelConfig, numeral_values):
    """Input matrix (B, Lmax, d) plus bookkeeping for backward."""
    B = len(streams)
    lens = np.array([len(s) for s in streams], dtype=np.int64)
    Lmax = int(lens.max())
    if Lmax > cfg.max_len:
        raise ShapeError(f"stream length {Lmax} exceeds max_len {cfg.max_len}")
    d = cfg.d_model
    V = params["dec.tok_emb"].shape[0]
    X = np.zeros((B, Lmax, d))
    tok_index = []   # (b, pos, token) for embedding scatter
    id_index = []    # (b, pos, numeral) when the dedicated table is active
    slot_index = []  # (b, pos, source)
    for b, stream in enumerate(streams):
        for pos, el in enumerate(stream.elements):
            if isinstance(el, TextEl):
                if not 0 <= el.token < V:
                    raise ShapeError(f"token id {el.token} outside vocabulary size {V}")
                if cfg.learned_id_table and el.marker:
                    value = numeral_values[el.token]
                    X[b, pos] = params["dec.id_emb"][value]
                    id_index.append((b, pos, value))
                else:
                    X[b, pos] = params["dec.tok_emb"][el.token]
                    tok_index.append((b, pos, el.token))
            else:
                vec = np.asarray(el.vector, dtype=np.float64)
                if vec.shape != (d,):
                    raise ShapeError(f"slot vector shape {vec.shape} != ({d},)")
                X[b, pos] = vec
                slot_index.append((b, pos, el.source))
        X[b, :lens[b]] += params["dec.pos_emb"][:lens[b]]
    return X, lens, tok_index, id_index, slot_index


class _NumeralMap:
    """token id -> numeral value lookup built once per vocabulary."""

    def __init__(self, vocab):
        self._map = {}
        for tid in range(len(vocab)):
            value = vocab.numeral_value(tid)
            if value is not None:
                self._map[tid] = value

    def __getitem__(self, tid):
        return self._map[tid]


_NUMERALS = None


def numeral_values():
    global _NUMERALS
    if _NUMERALS is None:
        from .vocabulary import get_vocab
        _NUMERALS = _NumeralMap(get_vocab())
    return _NUMERALS


def forward_batch(params, streams, cfg: ModelConfig):
    """Final hidden states for a batch of streams; returns (y, lens, cache)."""
    X, lens, tok_index, id_index, slot_index = _embed_batch(
        params, streams, cfg, numeral_values())
    y, stack_cache = stack_fwd(X, lens, params, "dec.layer", cfg.n_layers,
                               cfg.n_heads, True, ACTIVE)
    cache = (lens, tok_index, id_index, slot_index, stack_cache, y)
    return y, lens, cache


def forward(params, stream: TokenStream, cfg: ModelConfig) -> np.ndarray:
    """Logits at every position; position p sees elements 0..p only."""
    stream.validate(d_model=cfg.d_model)
    y, lens, _ = forward_batch(params, [stream], cfg)
    return y[0, :lens[0]] @ head_matrix(params, cfg)


def _gather_target_rows(streams, lens):
    """(b, prefix position, target token) triples for every supervised token."""
    rows = []
    for b, stream in enumerate(streams):
        if stream.target_span is None:
            continue
        s, e = stream.target_span
        for p in range(s, e):
            rows.append((b, p - 1, stream.token_at(p)))
    return rows


def loss_batch(params, streams, cfg: ModelConfig, return_parts=False):
    """Mean over streams of each stream's mean target cross entropy."""
    from . import kernels
    y, lens, _ = forward_batch(params, streams, cfg)
    rows = _gather_target_rows(streams, lens)
    if not rows:
        return (0.0, []) if return_parts else 0.0
    bs = np.array([r[0] for r in rows])
    ps = np.array([r[1] for r in rows])
    ts = np.array([r[2] for r in rows])
    logits = y[bs, ps] @ head_matrix(params, cfg)
    losses, _ = kernels.softmax_xent_fwd(logits, ts)
    per_stream = []
    for b, stream in enumerate(streams):
        sel = losses[bs == b]
        if sel.size:
            per_stream.append(float(sel.mean()))
    total = float(np.mean(per_stream))
    return (total, per_stream) if return_parts else total


def loss(params, stream: TokenStream, cfg: ModelConfig) -> float:
    stream.validate(d_model=cfg.d_model)
    return loss_batch(params, [stream], cfg)


def zero_grads(params) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


_CHUNK_TOKEN_BUDGET = 2048  # padded tokens per decoder sub-batch


def loss_and_grad(params, streams, cfg: ModelConfig, grads=None, track_slots=False):
    """Batched loss + gradients. With ``track_slots`` the gradient of each
    slot vector is routed to its encoder cache/parameter source; otherwise
    slots are data. Returns (loss, grads, touched_caches).

    Streams are processed in length-sorted sub-batches so padding does not
    dominate; the result is the mean over supervised streams of each
    stream's mean target cross entropy either way.
    """
    if grads is None:
        grads = zero_grads(params)
    supervised = sum(1 for s in streams if s.target_span is not None)
    if supervised == 0:
        return 0.0, grads, []
    order = sorted(range(len(streams)), key=lambda i: (len(streams[i]), i))
    chunks, current, width = [], [], 0
    for i in order:
        w = len(streams[i])
        if current and (len(current) + 1) * max(width, w) > _CHUNK_TOKEN_BUDGET:
            chunks.append(current)
            current, width = [], 0
        current.append(i)
        width = max(width, w)
    if current:
        chunks.append(current)
    total = 0.0
    touched = []
    for chunk in chunks:
        part, _, part_touched = _chunk_loss_and_grad(
            params, [streams[i] for i in chunk], cfg, grads, track_slots, supervised)
        total += part
        touched.extend(part_touched)
    return total, grads, touched


def _chunk_loss_and_grad(params, streams, cfg: ModelConfig, grads,
                         track_slots, supervised):
    from . import kernels
    y, lens, cache = forward_batch(params, streams, cfg)
    lens, tok_index, id_index, slot_index, stack_cache, _ = cache

    rows = _gather_target_rows(streams, lens)
    if not rows:
        return 0.0, grads, []
    bs = np.array([r[0] for r in rows])
    ps = np.array([r[1] for r in rows])
    ts = np.array([r[2] for r in rows])
    yrows = y[bs, ps]
    H = head_matrix(params, cfg)
    logits = yrows @ H
    losses, probs = kernels.softmax_xent_fwd(logits, ts)

    # each supervised stream contributes its token mean / supervised-count
    counts = np.bincount(bs, minlength=len(streams)).astype(np.float64)
    dloss = 1.0 / (counts[bs] * supervised)
    total = float(np.sum(losses * dloss))

    dlogits = kernels.softmax_xent_bwd(probs, ts, dloss)
    dyrows = dlogits @ H.T
    dH = yrows.T @ dlogits
    if cfg.tie_output:
        grads["dec.tok_emb"] += dH.T
    else:
        grads["dec.head.W"] += dH

    dY = np.zeros_like(y)
    np.add.at(dY, (bs, ps), dyrows)
    dX = stack_bwd(dY, stack_cache, params, "dec.layer", cfg.n_layers,
                   cfg.n_heads, True, grads, ACTIVE)

    # positional embeddings over valid rows
    Lmax = dX.shape[1]
    valid = (np.arange(Lmax)[None, :] < lens[:, None]).astype(np.float64)
    grads["dec.pos_emb"][:Lmax] += np.einsum("bld,bl->ld", dX, valid)

    if tok_index:
        tb = np.array([t[0] for t in tok_index])
        tp = np.array([t[1] for t in tok_index])
        tt = np.array([t[2] for t in tok_index])
        np.add.at(grads["dec.tok_emb"], tt, dX[tb, tp])
    if id_index:
        ib = np.array([t[0] for t in id_index])
        ip = np.array([t[1] for t in id_index])
        iv = np.array([t[2] for t in id_index])
        np.add.at(grads["dec.id_emb"], iv, dX[ib, ip])

    touched = []
    if track_slots:
        seen = set()
        for b, pos, source in slot_index:
            accumulate_slot_grad(source, dX[b, pos], grads)
            if source and source[0] in ("fuse", "obj"):
                if id(source[1]) not in seen:
                    seen.add(id(source[1]))
                    touched.append(source[1])
            elif source and source[0] == "pool":
                for c in source[1:]:
                    if c is not None and id(c) not in seen:
                        seen.add(id(c))
                        touched.append(c)
    return total, grads, touched


def grad(params, stream: TokenStream, cfg: ModelConfig) -> dict:
    """Gradient of loss w.r.t. every parameter; the stream is data, so
    parameters feeding only slot vectors get zero gradient here."""
    stream.validate(d_model=cfg.d_model)
    _, grads, _ = loss_and_grad(params, [stream], cfg, track_slots=False)
    return grads


def last_logits(params, elements, cfg: ModelConfig) -> np.ndarray:
    """Logits for the next element after ``elements``."""
    stream = TokenStream(list(elements))
    y, lens, _ = forward_batch(params, [stream], cfg)
    return y[0, lens[0] - 1] @ head_matrix(params, cfg)


def decode(params, prompt: TokenStream, mode, cfg: ModelConfig, rng=None,
           allowed=None, max_new: int = 8, eos_id: int | None = None) -> list[int]:
    """Autoregressive decoding from a prompt stream.

    mode: "greedy" or ("sample", temperature). ``allowed`` masks logits
    outside allowed+EOS to -inf before selection. Returns emitted token ids
    including the terminating EOS when produced.
    """
    if max_new < 1:
        raise DecodeError(f"max_new must be >= 1, got {max_new}")
    if eos_id is None:
        from .vocabulary import get_vocab
        eos_id = get_vocab().eos_id
    if allowed is not None:
        allowed = set(int(a) for a in allowed)
        if not allowed:
            raise DecodeError("allowed token set is empty")
        allowed.add(eos_id)
    sample_t = None
    if mode != "greedy":
        kind, sample_t = mode
        if kind != "sample" or sample_t <= 0:
            raise DecodeError(f"unknown decode mode {mode!r}")
        if rng is None:
            raise DecodeError("sampling requires an rng")

    elements = list(prompt.elements)
    out = []
    V = params["dec.tok_emb"].shape[0]
    mask = None
    if allowed is not None:
        mask = np.full(V, -np.inf)
        mask[sorted(allowed)] = 0.0
    for _ in range(max_new):
        logits = last_logits(params, elements, cfg)
        if mask is not None:
            logits = logits + mask
        if sample_t is None:
            token = int(np.argmax(logits))
        else:
            finite = np.flatnonzero(np.isfinite(logits))
            z = (logits[finite] - logits[finite].max()) / sample_t
            p = np.exp(z)
            p /= p.sum()
            pick = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
            token = int(finite[min(pick, finite.size - 1)])
        out.append(token)
        if token == eos_id:
            break
        elements.append(TextEl(token))
    return out
