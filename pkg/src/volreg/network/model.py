"""Encoder-decoder that maps a volume cloud and a partial surface to displacements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, no_grad
from ..geometry.sampling import centroid_farthest_index, farthest_point_sample, knn
from ..geometry.types import FEATURE_CHANNELS, FeaturedInput
from .config import NetworkConfig
from .layers import (Neighborhood, declare_daca, declare_edge_conv, declare_upsample,
                     deformation_aware_cross_attention, edge_conv, upsampling_cross_attention)
from .params import Params

STREAMS = ("vol", "surf")


class ModelInputError(ValueError):
    pass


@dataclass
class StreamPlan:
    """Per-cloud level hierarchy. Level 0 holds every valid input row."""

    rows: np.ndarray  # valid input rows, level 0 order
    inputs: np.ndarray  # (n_valid, input_width) level-0 features
    points: list  # per level (N_l, 3)
    select: list  # select[l] indexes level l-1 points, l >= 1
    edges: list  # edges[l] (N_l, k) neighbours among level l-1 points
    to_rows: list  # to_rows[l] indexes level-0 rows


@dataclass
class Plan:
    """Everything about one sample that does not depend on the parameters."""

    vol: StreamPlan
    surf: StreamPlan
    surf_to_vol: list  # per level: surface queries over volume keys
    vol_to_surf: list
    up: dict  # stream -> per level l < L: level-l queries over level l+1 keys
    n_rows: int

    def level_sizes(self) -> list[int]:
        return [len(p) for p in self.vol.points]


def _level_hierarchy(inp: FeaturedInput, cfg: NetworkConfig) -> StreamPlan:
    rows = np.flatnonzero(inp.valid_mask)
    if len(rows) == 0:
        raise ModelInputError("input has no valid points")
    feats = np.asarray(inp.features, dtype=np.float64)[rows]
    if feats.shape[1] != len(FEATURE_CHANNELS):
        raise ModelInputError(f"expected {len(FEATURE_CHANNELS)} feature channels, got {feats.shape[1]}")
    if cfg.encode_positions:
        enc = np.asarray(inp.pos_encoding, dtype=np.float64)[rows]
        if enc.shape[1] != cfg.encoding_width:
            raise ModelInputError(f"positional encoding width {enc.shape[1]} != configured {cfg.encoding_width}")
        feats = np.concatenate([feats, enc], axis=1)
    pts = [np.asarray(inp.positions, dtype=np.float64)[rows]]
    select, edges, to_rows = [None], [None], [np.arange(len(rows))]
    for target in cfg.level_points:
        prev = pts[-1]
        count = min(target, len(prev))
        sel = farthest_point_sample(prev, count, start=centroid_farthest_index(prev))
        select.append(sel)
        edges.append(knn(prev[sel], prev, min(cfg.k, len(prev))))
        pts.append(prev[sel])
        to_rows.append(to_rows[-1][sel])
    return StreamPlan(rows, feats, pts, select, edges, to_rows)


def build_plan(preop: FeaturedInput, intraop: FeaturedInput, cfg: NetworkConfig) -> Plan:
    vol, surf = _level_hierarchy(preop, cfg), _level_hierarchy(intraop, cfg)
    f = cfg.frequencies
    sv, vs = [], []
    for pv, ps in zip(vol.points, surf.points):
        sv.append(Neighborhood.build(ps, pv, min(cfg.k, len(pv)), f))
        vs.append(Neighborhood.build(pv, ps, min(cfg.k, len(ps)), f))
    up = {}
    for name, sp in zip(STREAMS, (vol, surf)):
        up[name] = [Neighborhood.build(sp.points[lv], sp.points[lv + 1], min(cfg.k, len(sp.points[lv + 1])), f)
                    for lv in range(cfg.n_levels)]
    return Plan(vol, surf, sv, vs, up, len(preop.positions))


class VolRegNet:
    """Parameters plus the forward pass.

    ``forward`` returns ``n_levels + 1`` displacement tensors: index 0 is the
    full-resolution field over the valid preoperative points, index ``l >= 1``
    the field on the level-``l`` downsampled volume points (shallow to deep).
    """

    def __init__(self, config: NetworkConfig, params: Params | None = None):
        self.config = config
        self.params = params if params is not None else self.declare(config)

    @staticmethod
    def declare(cfg: NetworkConfig) -> Params:
        p = Params(cfg.init_seed)
        e, h, emb = cfg.encoding_width, cfg.heads, cfg.embed
        for s in STREAMS:
            for lv in range(1, cfg.n_levels + 1):
                declare_edge_conv(p, f"enc.{s}.{lv}", cfg.encoder_width(lv - 1), cfg.encoder_width(lv))
        for lv in range(cfg.n_levels + 1):
            declare_daca(p, f"dec.{lv}", e, cfg.decoder_width(lv), h, emb, cfg.head_gain)
        for s in STREAMS:
            for lv in range(cfg.n_levels):
                declare_upsample(p, f"up.{s}.{lv}", e, cfg.encoder_width(lv), cfg.decoder_width(lv + 1),
                                 cfg.decoder_width(lv), h, emb)
        return p

    def plan(self, preop: FeaturedInput, intraop: FeaturedInput) -> Plan:
        return build_plan(preop, intraop, self.config)

    def encode(self, plan: Plan) -> dict:
        p = self.params
        out = {}
        for s, sp in zip(STREAMS, (plan.vol, plan.surf)):
            feats = [Tensor(sp.inputs)]
            for lv in range(1, self.config.n_levels + 1):
                feats.append(edge_conv(p, f"enc.{s}.{lv}", feats[-1], sp.select[lv], sp.edges[lv]))
            out[s] = feats
        return out

    def forward(self, plan: Plan) -> list[Tensor]:
        cfg, p = self.config, self.params
        h, emb, depth = cfg.heads, cfg.embed, cfg.n_levels
        enc = self.encode(plan)
        phis = [None] * (depth + 1)
        vol, surf, phis[depth] = deformation_aware_cross_attention(
            p, f"dec.{depth}", enc["vol"][depth], enc["surf"][depth], plan.surf_to_vol[depth],
            plan.vol_to_surf[depth], h, emb)
        for lv in range(depth - 1, -1, -1):
            vol = upsampling_cross_attention(p, f"up.vol.{lv}", enc["vol"][lv], vol, plan.up["vol"][lv], h, emb)
            surf = upsampling_cross_attention(p, f"up.surf.{lv}", enc["surf"][lv], surf, plan.up["surf"][lv], h, emb)
            vol, surf, phis[lv] = deformation_aware_cross_attention(
                p, f"dec.{lv}", vol, surf, plan.surf_to_vol[lv], plan.vol_to_surf[lv], h, emb)
        return phis

    def predict(self, preop: FeaturedInput, intraop: FeaturedInput) -> np.ndarray:
        """Full-resolution displacement aligned with the preoperative rows; zero on padding."""
        plan = self.plan(preop, intraop)
        with no_grad():
            phi = self.forward(plan)[0].data
        out = np.zeros((plan.n_rows, 3))
        out[plan.vol.rows] = phi
        return out
