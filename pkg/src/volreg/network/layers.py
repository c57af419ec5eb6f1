"""Building blocks: linear/MLP, edge convolution and relative point attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, additive_attention, concat, gather, matmul, max_, neighbor_pairs, relu, reshape
from ..geometry.features import positional_encoding
from ..geometry.sampling import knn
from .params import Params


def dense(x, w) -> Tensor:
    """``x @ w`` with the leading axes of ``x`` flattened into one GEMM."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 2:
        return matmul(x, w)
    lead = x.shape[:-1]
    return reshape(matmul(reshape(x, (-1, x.shape[-1])), w), lead + (w.shape[-1],))


def linear(p: Params, name: str, x) -> Tensor:
    return dense(x, p[f"{name}.W"]) + p[f"{name}.b"]


def mlp(p: Params, name: str, x) -> Tensor:
    """Two-layer perceptron with a ReLU in between."""
    return linear(p, f"{name}.1", relu(linear(p, f"{name}.0", x)))


def declare_mlp(p: Params, name: str, n_in: int, n_hidden: int, n_out: int, out_gain: float = 1.0) -> None:
    p.linear(f"{name}.0", n_in, n_hidden, gain=2.0)
    p.linear(f"{name}.1", n_hidden, n_out, gain=out_gain)


# edge convolution ---------------------------------------------------------

def declare_edge_conv(p: Params, name: str, width_in: int, width_out: int) -> None:
    declare_mlp(p, name, 2 * width_in, width_out, width_out)


def edge_conv(p: Params, name: str, features, centers: np.ndarray, neighbors: np.ndarray) -> Tensor:
    """max_j ReLU(MLP(F_j - F_i, F_i)) for each center row ``i``.

    ``centers`` (M,) indexes the center points in ``features``; ``neighbors``
    (M, k) indexes their neighbours in the same array.
    """
    features = features if isinstance(features, Tensor) else Tensor(features)
    width = p[f"{name}.0.W"].shape[0] // 2
    if features.shape[-1] != width:
        raise ValueError(f"edge_conv {name}: expected width {width}, got {features.shape[-1]}")
    neighbors = np.asarray(neighbors)
    k = neighbors.shape[1]
    fj = gather(features, neighbors, axis=0)  # (M, k, w)
    fi = gather(features, np.repeat(np.asarray(centers)[:, None], k, axis=1), axis=0)
    h = relu(mlp(p, name, concat([fj - fi, fi], axis=-1)))
    return max_(h, axis=1)


# relative point attention -------------------------------------------------

@dataclass
class Neighborhood:
    """Constant geometry of one attention site: kNN indices and relative encodings."""

    index: np.ndarray  # (Nq, k) into the key cloud
    query_enc: np.ndarray  # (Nq, E)
    rel_enc: np.ndarray  # (Nq, k, E)

    @classmethod
    def build(cls, query_pts, key_pts, k: int, frequencies) -> "Neighborhood":
        query_pts = np.asarray(query_pts, dtype=np.float64)
        key_pts = np.asarray(key_pts, dtype=np.float64)
        if k > len(key_pts):
            raise ValueError(f"k={k} exceeds the {len(key_pts)} key points")
        idx = knn(query_pts, key_pts, k)
        rel = positional_encoding(query_pts[:, None, :] - key_pts[idx], frequencies)
        return cls(idx, positional_encoding(query_pts, frequencies), rel)


def declare_attention(p: Params, name: str, enc_width: int, q_width: int, k_width: int, out_width: int,
                      heads: int, embed: int) -> None:
    c = heads * embed
    for proj, fw in (("q", q_width), ("k", k_width), ("v", k_width)):
        # three summed input terms share the unit variance budget
        p.add(f"{name}.{proj}.Wenc", (enc_width, c), gain=1 / 3)
        p.add(f"{name}.{proj}.Wrel", (enc_width, c), gain=1 / 3)
        p.add(f"{name}.{proj}.Wf", (fw, c), gain=1 / 3)
        p.add(f"{name}.{proj}.b", (c,), zero=True)
    p.add(f"{name}.att.0.W", (heads, embed, embed), fan_in=embed, gain=2.0)
    p.add(f"{name}.att.0.b", (heads, 1, embed), zero=True)
    p.add(f"{name}.att.1.W", (heads, embed, embed), fan_in=embed)
    declare_mlp(p, f"{name}.out", c, out_width, out_width)


def _attention_inputs(p: Params, name: str, q_feats, k_feats, nb: Neighborhood):
    """Pre-activation ``Q + K`` and the values ``V``, both (Nq, k, H*e).

    Q and K only enter through ``tanh(Q + K)``, so their weights are summed
    before touching the large per-neighbour arrays; the result is identical.
    """
    enc = Tensor(nb.query_enc)
    w = lambda proj, part: p[f"{name}.{proj}.{part}"]  # noqa: E731
    q_part = (matmul(enc, w("q", "Wenc") + w("k", "Wenc")) + matmul(q_feats, w("q", "Wf"))
              + w("q", "b") + w("k", "b"))
    qk = neighbor_pairs(q_part, matmul(k_feats, w("k", "Wf")), nb.index, nb.rel_enc,
                        w("q", "Wrel") + w("k", "Wrel"))
    v_part = matmul(enc, w("v", "Wenc")) + w("v", "b")
    val = neighbor_pairs(v_part, matmul(k_feats, w("v", "Wf")), nb.index, nb.rel_enc, w("v", "Wrel"))
    return qk, val


def _core(p: Params, name: str, qk, val, heads: int, embed: int, return_weights: bool = False):
    return additive_attention(qk, val, p[f"{name}.att.0.W"], p[f"{name}.att.0.b"], p[f"{name}.att.1.W"], heads,
                              embed, return_weights=return_weights)


def attention_weights(p: Params, name: str, q_feats, k_feats, nb: Neighborhood, heads: int,
                      embed: int) -> np.ndarray:
    """Softmax weights (Nq, k, H*e) of one attention site, for inspection."""
    qk, val = _attention_inputs(p, name, q_feats, k_feats, nb)
    return _core(p, name, qk, val, heads, embed, return_weights=True)[1]


def relative_point_attention(p: Params, name: str, q_feats, k_feats, nb: Neighborhood, heads: int,
                             embed: int) -> Tensor:
    """Local additive multi-head attention of query points over their k nearest keys."""
    qk, val = _attention_inputs(p, name, q_feats, k_feats, nb)
    return mlp(p, f"{name}.out", _core(p, name, qk, val, heads, embed))


# decoder blocks -----------------------------------------------------------

def declare_daca(p: Params, name: str, enc_width: int, width: int, heads: int, embed: int,
                 head_gain: float = 1e-4) -> None:
    declare_attention(p, f"{name}.s2v", enc_width, width, width, width, heads, embed)
    declare_attention(p, f"{name}.v2s", enc_width, width, width, width, heads, embed)
    declare_mlp(p, f"{name}.head", width, width, 3, out_gain=head_gain)


def deformation_aware_cross_attention(p: Params, name: str, vol_feats, surf_feats, nb_sv: Neighborhood,
                                      nb_vs: Neighborhood, heads: int, embed: int):
    """Surface attends to volume, then volume attends to the updated surface.

    ``nb_sv`` has surface queries over volume keys and ``nb_vs`` the reverse.
    Attention outputs are added to the incoming features. Returns the updated
    volume and surface features and the per-point displacement ``(N, 3)``.
    """
    surf = surf_feats + relative_point_attention(p, f"{name}.s2v", surf_feats, vol_feats, nb_sv, heads, embed)
    vol = vol_feats + relative_point_attention(p, f"{name}.v2s", vol_feats, surf, nb_vs, heads, embed)
    phi = mlp(p, f"{name}.head", relu(vol))
    return vol, surf, phi


def declare_upsample(p: Params, name: str, enc_width: int, skip_width: int, coarse_width: int, width: int,
                     heads: int, embed: int) -> None:
    declare_attention(p, f"{name}.att", enc_width, skip_width, coarse_width, width, heads, embed)
    declare_mlp(p, f"{name}.mix", width + skip_width, width, width)


def upsampling_cross_attention(p: Params, name: str, fine_skip, coarse_feats, nb: Neighborhood, heads: int,
                               embed: int) -> Tensor:
    """Fine points (carrying encoder skip features) query the decoded coarse level."""
    fine_skip = fine_skip if isinstance(fine_skip, Tensor) else Tensor(fine_skip)
    a = relative_point_attention(p, f"{name}.att", fine_skip, coarse_feats, nb, heads, embed)
    return mlp(p, f"{name}.mix", concat([a, fine_skip], axis=-1))
