"""Fused kernels for local neighbourhood attention.

Both are exact compositions of the elementwise ops in ``tensor``; fusing them
keeps far fewer (queries x neighbours x channels) arrays alive on the tape.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _make, as_tensor


def neighbor_pairs(query, keys, index: np.ndarray, rel: np.ndarray, w_rel) -> Tensor:
    """``query[i] + keys[index[i, j]] + rel[i, j] @ w_rel`` as an (Nq, k, c) tensor.

    ``index`` and ``rel`` are constants.
    """
    query, keys, w_rel = as_tensor(query), as_tensor(keys), as_tensor(w_rel)
    index = np.asarray(index)
    rel = np.asarray(rel, dtype=np.float64)
    nq, k = index.shape
    c = query.shape[-1]
    if query.shape != (nq, c) or keys.ndim != 2 or keys.shape[1] != c:
        raise ValueError(f"neighbor_pairs: query {query.shape} / keys {keys.shape} / index {index.shape} disagree")
    if rel.shape[:2] != (nq, k) or w_rel.shape != (rel.shape[2], c):
        raise ValueError(f"neighbor_pairs: rel {rel.shape} and w_rel {w_rel.shape} disagree")
    rel2 = rel.reshape(nq * k, -1)
    out = (rel2 @ w_rel.data).reshape(nq, k, c)
    out += np.take(keys.data, index, axis=0)
    out += query.data[:, None, :]
    nk = keys.shape[0]

    def bw(g):
        gq = g.sum(axis=1) if query.requires_grad else None
        gk = None
        if keys.requires_grad:
            gk = np.zeros((nk, c))
            np.add.at(gk, index.reshape(-1), g.reshape(nq * k, c))
        gw = rel2.T @ g.reshape(nq * k, c) if w_rel.requires_grad else None
        return gq, gk, gw

    return _make(out, (query, keys, w_rel), bw, "neighbor_pairs")


def _per_head(x: np.ndarray, w: np.ndarray, heads: int, embed: int, transpose_w: bool = False) -> np.ndarray:
    out = np.empty_like(x)
    for h in range(heads):
        s = slice(h * embed, (h + 1) * embed)
        out[:, s] = x[:, s] @ (w[h].T if transpose_w else w[h])
    return out


def additive_attention(logits_in, values, w0, b0, w1, heads: int, embed: int,
                       return_weights: bool = False):
    """Per-head vector attention pooled over the neighbour axis.

    ``logits_in`` and ``values`` are (Nq, k, H*e). For head ``h`` the weights are
    ``softmax_k(W1_h relu(W0_h tanh(x_h) + b0_h))`` and the output is the
    weighted sum of ``values_h``. Weights have shape (H, e, e), the bias (H, 1, e).
    A bias after ``W1`` would cancel in the softmax, so there is none.
    Returns (Nq, H*e), plus the raw weight array when ``return_weights``.
    """
    x, v, w0, b0, w1 = (as_tensor(t) for t in (logits_in, values, w0, b0, w1))
    if x.ndim != 3 or x.shape != v.shape or x.shape[2] != heads * embed:
        raise ValueError(f"additive_attention: inputs {x.shape} / {v.shape} do not match {heads}x{embed}")
    for wt in (w0, w1):
        if wt.shape != (heads, embed, embed):
            raise ValueError(f"additive_attention: weight shape {wt.shape} != {(heads, embed, embed)}")
    for bt in (b0,):
        if bt.shape != (heads, 1, embed):
            raise ValueError(f"additive_attention: bias shape {bt.shape} != {(heads, 1, embed)}")
    nq, k, c = x.shape
    n = nq * k
    t = np.tanh(x.data).reshape(n, c)
    z1 = _per_head(t, w0.data, heads, embed)
    z1 += b0.data.reshape(1, c)
    a1 = np.maximum(z1, 0.0)
    del z1
    s = _per_head(a1, w1.data, heads, embed).reshape(nq, k, c)
    s -= s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    vd = v.data
    out = np.einsum("ikc,ikc->ic", s, vd)

    def bw(g):
        gv = s * g[:, None, :] if v.requires_grad else None
        gs = vd * g[:, None, :]
        gs -= np.einsum("ikc,ikc->ic", gs, s)[:, None, :]
        gs *= s
        gz2 = gs.reshape(n, c)
        gw1 = np.stack([a1[:, h * embed:(h + 1) * embed].T @ gz2[:, h * embed:(h + 1) * embed]
                        for h in range(heads)])
        gz1 = _per_head(gz2, w1.data, heads, embed, transpose_w=True)
        gz1 *= a1 > 0
        gw0 = np.stack([t[:, h * embed:(h + 1) * embed].T @ gz1[:, h * embed:(h + 1) * embed]
                        for h in range(heads)])
        gb0 = gz1.sum(axis=0).reshape(heads, 1, embed)
        gx = None
        if x.requires_grad:
            gx = _per_head(gz1, w0.data, heads, embed, transpose_w=True)
            gx *= 1.0 - t * t
            gx = gx.reshape(nq, k, c)
        return gx, gv, gw0, gb0, gw1

    res = _make(out, (x, v, w0, b0, w1), bw, "additive_attention")
    return (res, s) if return_weights else res
