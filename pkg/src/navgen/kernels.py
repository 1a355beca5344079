"""Hot numeric kernels with two interchangeable implementations.

Every kernel exists twice: a vectorized pure-numpy reference (suffix
``_np``) and a numba ``@njit`` twin (suffix ``_nb``). The active set is
chosen once at import from the ``NAVGEN_BACKEND`` environment variable
("numba" or "numpy"; default numba when importable). Results agree to
float64 rounding, not bitwise; runs are bitwise reproducible within one
backend. The scene encoder pins the numpy reference so golden stream
dumps do not depend on the backend.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

LN_EPS = 1e-5

# -- numpy reference ---------------------------------------------------------


def _row_softmax_masked(scores, mask):
    scores = np.where(mask, scores, -np.inf)
    rowmax = np.max(scores, axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(scores - rowmax)
    e = np.where(mask, e, 0.0)
    z = np.sum(e, axis=-1, keepdims=True)
    z = np.where(z > 0.0, z, 1.0)
    return e / z


def _split_heads(x, n_heads):
    B, L, d = x.shape
    return np.ascontiguousarray(x.reshape(B, L, n_heads, d // n_heads).transpose(0, 2, 1, 3))


def _merge_heads(x):
    B, H, L, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(B, L, H * dh)


def attention_fwd_np(q, k, v, lens, causal, n_heads):
    """Multi-head scaled dot-product attention over padded batches.

    q, k, v: (B, L, d) with d = n_heads * dh; lens: (B,) valid lengths.
    Returns (out (B, L, d), probs (B, H, L, L)).
    """
    qh, kh, vh = (_split_heads(x, n_heads) for x in (q, k, v))
    B, H, L, dh = qh.shape
    scale = 1.0 / np.sqrt(dh)
    scores = np.matmul(qh, np.swapaxes(kh, -1, -2)) * scale
    j = np.arange(L)
    mask = (j[None, :] < lens[:, None])[:, None, None, :]  # key validity
    mask = np.broadcast_to(mask, scores.shape)
    if causal:
        tri = j[None, :] <= j[:, None]
        mask = mask & tri[None, None, :, :]
    probs = _row_softmax_masked(scores, mask)
    out = np.matmul(probs, vh)
    return _merge_heads(out), probs


def attention_bwd_np(dout, q, k, v, probs, lens, causal, n_heads):
    qh, kh, vh = (_split_heads(x, n_heads) for x in (q, k, v))
    douth = _split_heads(dout, n_heads)
    dh = qh.shape[-1]
    scale = 1.0 / np.sqrt(dh)
    dv = np.matmul(np.swapaxes(probs, -1, -2), douth)
    dp = np.matmul(douth, np.swapaxes(vh, -1, -2))
    ds = probs * (dp - np.sum(dp * probs, axis=-1, keepdims=True))
    ds *= scale
    dq = np.matmul(ds, kh)
    dk = np.matmul(np.swapaxes(ds, -1, -2), qh)
    return _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)


def layernorm_fwd_np(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def layernorm_bwd_np(dy, cache, g):
    xhat, rstd = cache
    dxhat = dy * g
    lead = tuple(range(dy.ndim - 1))
    dg = np.sum(dy * xhat, axis=lead)
    db = np.sum(dy, axis=lead)
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd
    return dx, dg, db


def softmax_xent_fwd_np(logits, targets):
    """Per-row cross entropy with max-subtracted log-softmax.

    logits: (T, V); targets: (T,). Returns (losses (T,), probs (T, V)).
    """
    m = np.max(logits, axis=-1, keepdims=True)
    z = logits - m
    lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    logp = z - lse
    losses = -logp[np.arange(logits.shape[0]), targets]
    return losses, np.exp(logp)


def softmax_xent_bwd_np(probs, targets, dloss):
    dlogits = probs * dloss[:, None]
    dlogits[np.arange(probs.shape[0]), targets] -= dloss
    return dlogits


def adam_update_np(p, g, m, v, t, lr, b1, b2, eps):
    """In-place Adam with bias correction on flat float64 arrays."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


# -- numba twins ---------------------------------------------------------------

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _attn_fwd_kernel(q, k, v, lens, causal, n_heads, out, probs):
    B, L, d = q.shape
    dh = d // n_heads
    for b in range(B):
        n = lens[b]
        for h in range(n_heads):
            lo = h * dh
            qm = np.ascontiguousarray(q[b, :n, lo:lo + dh])
            km = np.ascontiguousarray(k[b, :n, lo:lo + dh])
            s = np.dot(qm, km.T) / np.sqrt(dh)
            for i in range(n):
                hi = i + 1 if causal else n
                mx = -np.inf
                for j in range(hi):
                    if s[i, j] > mx:
                        mx = s[i, j]
                z = 0.0
                for j in range(hi):
                    e = np.exp(s[i, j] - mx)
                    probs[b, h, i, j] = e
                    z += e
                inv = 1.0 / z
                for j in range(hi):
                    probs[b, h, i, j] *= inv
            pm = np.ascontiguousarray(probs[b, h, :n, :n])
            vm = np.ascontiguousarray(v[b, :n, lo:lo + dh])
            out[b, :n, lo:lo + dh] = np.dot(pm, vm)


def attention_fwd_nb(q, k, v, lens, causal, n_heads):
    out = np.zeros_like(q)
    probs = np.zeros((q.shape[0], n_heads, q.shape[1], q.shape[1]))
    _attn_fwd_kernel(q, k, v, lens, causal, n_heads, out, probs)
    return out, probs


@njit(cache=True)
def _attn_bwd_kernel(dout, q, k, v, probs, lens, n_heads, dq, dk, dv):
    B, L, d = q.shape
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)
    for b in range(B):
        n = lens[b]
        for h in range(n_heads):
            lo = h * dh
            pm = np.ascontiguousarray(probs[b, h, :n, :n])
            dom = np.ascontiguousarray(dout[b, :n, lo:lo + dh])
            vm = np.ascontiguousarray(v[b, :n, lo:lo + dh])
            dv[b, :n, lo:lo + dh] = np.dot(pm.T, dom)
            dp = np.dot(dom, vm.T)
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += dp[i, j] * pm[i, j]
                for j in range(n):
                    dp[i, j] = pm[i, j] * (dp[i, j] - acc) * scale
            qm = np.ascontiguousarray(q[b, :n, lo:lo + dh])
            km = np.ascontiguousarray(k[b, :n, lo:lo + dh])
            dq[b, :n, lo:lo + dh] = np.dot(dp, km)
            dk[b, :n, lo:lo + dh] = np.dot(dp.T, qm)


def attention_bwd_nb(dout, q, k, v, probs, lens, causal, n_heads):
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    _attn_bwd_kernel(dout, q, k, v, probs, lens, n_heads, dq, dk, dv)
    return dq, dk, dv


@njit(cache=True)
def _layernorm_fwd_kernel(x, g, b, y, xhat, rstd):
    N, d = x.shape
    for i in range(N):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + LN_EPS)
        rstd[i] = r
        for j in range(d):
            xh = (x[i, j] - mu) * r
            xhat[i, j] = xh
            y[i, j] = xh * g[j] + b[j]


def layernorm_fwd_nb(x, g, b):
    shape = x.shape
    flat = np.ascontiguousarray(x.reshape(-1, shape[-1]))
    y = np.empty_like(flat)
    xhat = np.empty_like(flat)
    rstd = np.empty(flat.shape[0])
    _layernorm_fwd_kernel(flat, g, b, y, xhat, rstd)
    return y.reshape(shape), (xhat.reshape(shape), rstd.reshape(shape[:-1] + (1,)))


@njit(cache=True)
def _layernorm_bwd_kernel(dy, xhat, rstd, g, dx, dg, db):
    N, d = dy.shape
    for i in range(N):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * g[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
            dg[j] += dy[i, j] * xhat[i, j]
            db[j] += dy[i, j]
        m1 /= d
        m2 /= d
        r = rstd[i]
        for j in range(d):
            dxh = dy[i, j] * g[j]
            dx[i, j] = (dxh - m1 - xhat[i, j] * m2) * r


def layernorm_bwd_nb(dy, cache, g):
    xhat, rstd = cache
    shape = dy.shape
    flat_dy = np.ascontiguousarray(dy.reshape(-1, shape[-1]))
    flat_xhat = np.ascontiguousarray(xhat.reshape(-1, shape[-1]))
    flat_rstd = np.ascontiguousarray(rstd.reshape(-1))
    dx = np.empty_like(flat_dy)
    dg = np.zeros_like(g)
    db = np.zeros_like(g)
    _layernorm_bwd_kernel(flat_dy, flat_xhat, flat_rstd, g, dx, dg, db)
    return dx.reshape(shape), dg, db


@njit(cache=True)
def _softmax_xent_fwd_kernel(logits, targets, losses, probs):
    T, V = logits.shape
    for i in range(T):
        mx = logits[i, 0]
        for j in range(1, V):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        for j in range(V):
            e = np.exp(logits[i, j] - mx)
            probs[i, j] = e
            z += e
        inv = 1.0 / z
        for j in range(V):
            probs[i, j] *= inv
        losses[i] = np.log(z) - (logits[i, targets[i]] - mx)


def softmax_xent_fwd_nb(logits, targets):
    losses = np.empty(logits.shape[0])
    probs = np.empty_like(logits)
    _softmax_xent_fwd_kernel(logits, np.asarray(targets, dtype=np.int64), losses, probs)
    return losses, probs


@njit(cache=True)
def _softmax_xent_bwd_kernel(probs, targets, dloss, dlogits):
    T, V = probs.shape
    for i in range(T):
        s = dloss[i]
        for j in range(V):
            dlogits[i, j] = probs[i, j] * s
        dlogits[i, targets[i]] -= s


def softmax_xent_bwd_nb(probs, targets, dloss):
    dlogits = np.empty_like(probs)
    _softmax_xent_bwd_kernel(probs, np.asarray(targets, dtype=np.int64),
                             np.asarray(dloss, dtype=np.float64), dlogits)
    return dlogits


@njit(cache=True)
def _adam_kernel(p, g, m, v, t, lr, b1, b2, eps):
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(p.shape[0]):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_update_nb(p, g, m, v, t, lr, b1, b2, eps):
    _adam_kernel(p.reshape(-1), np.ascontiguousarray(g.reshape(-1)),
                 m.reshape(-1), v.reshape(-1), t, lr, b1, b2, eps)


# -- backend selection ----------------------------------------------------------


def _select_backend() -> str:
    requested = os.environ.get("NAVGEN_BACKEND", "").strip().lower()
    if requested not in ("", "numpy", "numba"):
        raise ConfigError([f"NAVGEN_BACKEND must be 'numpy' or 'numba', got {requested!r}"])
    if requested == "numba" and not HAVE_NUMBA:
        raise ConfigError(["NAVGEN_BACKEND=numba but numba is not importable"])
    if requested:
        return requested
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _select_backend()

if BACKEND == "numba":
    attention_fwd = attention_fwd_nb
    attention_bwd = attention_bwd_nb
    layernorm_fwd = layernorm_fwd_nb
    layernorm_bwd = layernorm_bwd_nb
    softmax_xent_fwd = softmax_xent_fwd_nb
    softmax_xent_bwd = softmax_xent_bwd_nb
    adam_update = adam_update_nb
else:
    attention_fwd = attention_fwd_np
    attention_bwd = attention_bwd_np
    layernorm_fwd = layernorm_fwd_np
    layernorm_bwd = layernorm_bwd_np
    softmax_xent_fwd = softmax_xent_fwd_np
    softmax_xent_bwd = softmax_xent_bwd_np
    adam_update = adam_update_np
