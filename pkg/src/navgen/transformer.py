"""Pre-norm transformer blocks with manual backward passes.

Shared by the multi-view fusion encoder (bidirectional, reference kernels)
and the autoregressive decoder (causal, active backend); the caller passes
the kernel namespace. Shapes are (B, L, d) with per-item valid lengths.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import kernels

REFERENCE = SimpleNamespace(
    attention_fwd=kernels.attention_fwd_np,
    attention_bwd=kernels.attention_bwd_np,
    layernorm_fwd=kernels.layernorm_fwd_np,
    layernorm_bwd=kernels.layernorm_bwd_np,
)

ACTIVE = SimpleNamespace(
    attention_fwd=kernels.attention_fwd,
    attention_bwd=kernels.attention_bwd,
    layernorm_fwd=kernels.layernorm_fwd,
    layernorm_bwd=kernels.layernorm_bwd,
)


def linear_fwd(x, W, b):
    return x @ W + b


def linear_bwd(dy, x, W):
    din, dout = W.shape
    x2 = x.reshape(-1, din)
    dy2 = dy.reshape(-1, dout)
    dW = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ W.T).reshape(x.shape)
    return dx, dW, db


def block_fwd(x, lens, params, prefix, n_heads, causal, kern):
    p = params
    h, ln1c = kern.layernorm_fwd(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    q = linear_fwd(h, p[f"{prefix}.attn.Wq"], p[f"{prefix}.attn.bq"])
    k = linear_fwd(h, p[f"{prefix}.attn.Wk"], p[f"{prefix}.attn.bk"])
    v = linear_fwd(h, p[f"{prefix}.attn.Wv"], p[f"{prefix}.attn.bv"])
    attn, probs = kern.attention_fwd(q, k, v, lens, causal, n_heads)
    proj = linear_fwd(attn, p[f"{prefix}.attn.Wo"], p[f"{prefix}.attn.bo"])
    x1 = x + proj
    h2, ln2c = kern.layernorm_fwd(x1, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    a1 = linear_fwd(h2, p[f"{prefix}.ff.W1"], p[f"{prefix}.ff.b1"])
    r = np.maximum(a1, 0.0)
    f = linear_fwd(r, p[f"{prefix}.ff.W2"], p[f"{prefix}.ff.b2"])
    y = x1 + f
    cache = (x, lens, h, ln1c, q, k, v, probs, attn, x1, ln2c, h2, a1, r)
    return y, cache


def block_bwd(dy, cache, params, prefix, n_heads, causal, grads, kern):
    p = params
    x, lens, h, ln1c, q, k, v, probs, attn, x1, ln2c, h2, a1, r = cache

    dr, dW2, db2 = linear_bwd(dy, r, p[f"{prefix}.ff.W2"])
    grads[f"{prefix}.ff.W2"] += dW2
    grads[f"{prefix}.ff.b2"] += db2
    da1 = dr * (a1 > 0.0)
    dh2, dW1, db1 = linear_bwd(da1, h2, p[f"{prefix}.ff.W1"])
    grads[f"{prefix}.ff.W1"] += dW1
    grads[f"{prefix}.ff.b1"] += db1
    dx1, dg2, db2n = kern.layernorm_bwd(dh2, ln2c, p[f"{prefix}.ln2.g"])
    grads[f"{prefix}.ln2.g"] += dg2
    grads[f"{prefix}.ln2.b"] += db2n
    dx1 = dx1 + dy

    dattn, dWo, dbo = linear_bwd(dx1, attn, p[f"{prefix}.attn.Wo"])
    grads[f"{prefix}.attn.Wo"] += dWo
    grads[f"{prefix}.attn.bo"] += dbo
    dq, dk, dv = kern.attention_bwd(dattn, q, k, v, probs, lens, causal, n_heads)
    dh = None
    for dz, name in ((dq, "Wq"), (dk, "Wk"), (dv, "Wv")):
        dpart, dW, db = linear_bwd(dz, h, p[f"{prefix}.attn.{name}"])
        grads[f"{prefix}.attn.{name}"] += dW
        grads[f"{prefix}.attn.b{name[-1].lower()}"] += db
        dh = dpart if dh is None else dh + dpart
    dx, dg1, db1n = kern.layernorm_bwd(dh, ln1c, p[f"{prefix}.ln1.g"])
    grads[f"{prefix}.ln1.g"] += dg1
    grads[f"{prefix}.ln1.b"] += db1n
    return dx + dx1


def stack_fwd(x, lens, params, prefix, n_layers, n_heads, causal, kern):
    """n_layers pre-norm blocks followed by a final layernorm."""
    caches = []
    for layer in range(n_layers):
        x, cache = block_fwd(x, lens, params, f"{prefix}{layer}", n_heads, causal, kern)
        caches.append(cache)
    y, lnfc = kern.layernorm_fwd(x, params[f"{prefix}lnf.g"], params[f"{prefix}lnf.b"])
    return y, (caches, lnfc)


def stack_bwd(dy, stack_cache, params, prefix, n_layers, n_heads, causal, grads, kern):
    caches, lnfc = stack_cache
    dx, dg, db = kern.layernorm_bwd(dy, lnfc, params[f"{prefix}lnf.g"])
    grads[f"{prefix}lnf.g"] += dg
    grads[f"{prefix}lnf.b"] += db
    for layer in range(n_layers - 1, -1, -1):
        dx = block_bwd(dx, caches[layer], params, f"{prefix}{layer}", n_heads, causal, grads, kern)
    return dx


def init_block_params(rng, d_model, ff_dim, prefix, params):
    std = 0.02
    params[f"{prefix}.ln1.g"] = np.ones(d_model)
    params[f"{prefix}.ln1.b"] = np.zeros(d_model)
    for name in ("Wq", "Wk", "Wv", "Wo"):
        params[f"{prefix}.attn.{name}"] = rng.normal(0.0, std, (d_model, d_model))
        params[f"{prefix}.attn.b{name[-1].lower()}"] = np.zeros(d_model)
    params[f"{prefix}.ln2.g"] = np.ones(d_model)
    params[f"{prefix}.ln2.b"] = np.zeros(d_model)
    params[f"{prefix}.ff.W1"] = rng.normal(0.0, std, (d_model, ff_dim))
    params[f"{prefix}.ff.b1"] = np.zeros(ff_dim)
    params[f"{prefix}.ff.W2"] = rng.normal(0.0, std, (ff_dim, d_model))
    params[f"{prefix}.ff.b2"] = np.zeros(d_model)


def init_stack_params(rng, d_model, ff_dim, prefix, n_layers, params):
    for layer in range(n_layers):
        init_block_params(rng, d_model, ff_dim, f"{prefix}{layer}", params)
    params[f"{prefix}lnf.g"] = np.ones(d_model)
    params[f"{prefix}lnf.b"] = np.zeros(d_model)
