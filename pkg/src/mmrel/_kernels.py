"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``MMREL_DISABLE_NUMBA`` is not
set to a truthy value.  Both paths compute the same quantities; tests compare
them elementwise.

Attention tensors are laid out ``(batch, heads, tokens, head_dim)``.  The key
mask is ``(batch, tokens)`` with True for real tokens; padded keys receive zero
attention.  Every row must have at least one valid key.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("MMREL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = numba is not None and not _DISABLED


# ---------------------------------------------------------------- numpy path


def _np_cosine_matrix(a, b):
    an = np.linalg.norm(a, axis=1)
    bn = np.linalg.norm(b, axis=1)
    return (a @ b.T) / np.outer(an, bn)


def _np_attention_forward(q, k, v, key_mask):
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = np.einsum("bhid,bhjd->bhij", q, k) * scale
    scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    out = np.einsum("bhij,bhjd->bhid", probs, v)
    return out, probs


def _np_attention_backward(dout, q, k, v, probs):
    scale = 1.0 / np.sqrt(q.shape[-1])
    dv = np.einsum("bhij,bhid->bhjd", probs, dout)
    dprobs = np.einsum("bhid,bhjd->bhij", dout, v)
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dq = np.einsum("bhij,bhjd->bhid", dscores, k) * scale
    dk = np.einsum("bhij,bhid->bhjd", dscores, q) * scale
    return dq, dk, dv


# ---------------------------------------------------------------- numba path

if numba is not None:

    @numba.njit(cache=True)
    def _nb_cosine_matrix(a, b):
        m, d = a.shape
        n = b.shape[0]
        an = np.empty(m)
        bn = np.empty(n)
        for i in range(m):
            an[i] = np.sqrt(np.dot(a[i], a[i]))
        for j in range(n):
            bn[j] = np.sqrt(np.dot(b[j], b[j]))
        out = np.dot(a, np.ascontiguousarray(b.T))
        for i in range(m):
            for j in range(n):
                out[i, j] /= an[i] * bn[j]
        return out

    @numba.njit(cache=True)
    def _nb_attention_forward(q, k, v, key_mask):
        nb, nh, nt, dh = q.shape
        scale = 1.0 / np.sqrt(dh)
        out = np.zeros((nb, nh, nt, dh))
        probs = np.zeros((nb, nh, nt, nt))
        for b in range(nb):
            for h in range(nh):
                for i in range(nt):
                    mx = -np.inf
                    for j in range(nt):
                        if key_mask[b, j]:
                            s = 0.0
                            for t in range(dh):
                                s += q[b, h, i, t] * k[b, h, j, t]
                            s *= scale
                            probs[b, h, i, j] = s
                            if s > mx:
                                mx = s
                    z = 0.0
                    for j in range(nt):
                        if key_mask[b, j]:
                            e = np.exp(probs[b, h, i, j] - mx)
                            probs[b, h, i, j] = e
                            z += e
                        else:
                            probs[b, h, i, j] = 0.0
                    for j in range(nt):
                        p = probs[b, h, i, j] / z
                        probs[b, h, i, j] = p
                        if p != 0.0:
                            for t in range(dh):
                                out[b, h, i, t] += p * v[b, h, j, t]
        return out, probs

    @numba.njit(cache=True)
    def _nb_attention_backward(dout, q, k, v, probs):
        nb, nh, nt, dh = q.shape
        scale = 1.0 / np.sqrt(dh)
        dq = np.zeros_like(q)
        dk = np.zeros_like(k)
        dv = np.zeros_like(v)
        dp = np.empty(nt)
        for b in range(nb):
            for h in range(nh):
                for i in range(nt):
                    acc = 0.0
                    for j in range(nt):
                        s = 0.0
                        for t in range(dh):
                            s += dout[b, h, i, t] * v[b, h, j, t]
                        dp[j] = s
                        acc += s * probs[b, h, i, j]
                    for j in range(nt):
                        p = probs[b, h, i, j]
                        if p == 0.0:
                            continue
                        ds = p * (dp[j] - acc) * scale
                        for t in range(dh):
                            dv[b, h, j, t] += p * dout[b, h, i, t]
                            dq[b, h, i, t] += ds * k[b, h, j, t]
                            dk[b, h, j, t] += ds * q[b, h, i, t]
        return dq, dk, dv


class _Impl:
    def __init__(self, name, cosine_matrix, attention_forward, attention_backward):
        self.name = name
        self.cosine_matrix = cosine_matrix
        self.attention_forward = attention_forward
        self.attention_backward = attention_backward


numpy_impl = _Impl("numpy", _np_cosine_matrix, _np_attention_forward, _np_attention_backward)
numba_impl = (_Impl("numba", _nb_cosine_matrix, _nb_attention_forward, _nb_attention_backward)
              if numba is not None else None)

active = numba_impl if USE_NUMBA else numpy_impl


def cosine_matrix(a, b):
    """Pairwise cosine between rows of ``a`` (m, d) and ``b`` (n, d)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return active.cosine_matrix(a, b)


def attention_forward(q, k, v, key_mask):
    """Masked scaled dot-product attention; returns ``(out, probs)``."""
    return active.attention_forward(
        np.ascontiguousarray(q, dtype=np.float64), np.ascontiguousarray(k, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64), np.ascontiguousarray(key_mask, dtype=np.bool_))


def attention_backward(dout, q, k, v, probs):
    """Gradients of :func:`attention_forward` w.r.t. ``q``, ``k``, ``v``."""
    c = np.ascontiguousarray
    return active.attention_backward(c(dout, dtype=np.float64), c(q), c(k), c(v), c(probs))
