"""The four feature-fusion blocks, applied in a fixed order:

1. boundary -> lane, driven by the boundary/lane matching;
2. lane -> actor, 3. boundary -> actor, 4. actor -> actor, each via distance
   attention: context nodes within a metric radius of the query send messages
   built from relative position and feature.

Only relative positions enter, so every block is translation invariant.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from ._layers import const, init_layer_norm, init_linear, layer_norm, linear
from .errors import ContractError, ShapeError


def init_boundary_lane_fusion(store, cfg, rng):
    d = cfg.d
    init_linear(store, "fuse.b2l.mlp1", 2 * d, d, rng)
    init_linear(store, "fuse.b2l.mlp2", d, d, rng)
    init_layer_norm(store, "fuse.b2l.ln", d)


def init_distance_attention(store, name, cfg, rng):
    d = cfg.d
    init_linear(store, f"{name}.rel", 2, d, rng, bias=False)
    init_linear(store, f"{name}.ctx", 2 * d, d, rng, bias=False)
    init_linear(store, f"{name}.query", d, d, rng, bias=False)
    init_linear(store, f"{name}.out", d, d, rng, bias=False)
    init_layer_norm(store, f"{name}.ln", d)


def init_fusion(store, cfg, rng):
    init_boundary_lane_fusion(store, cfg, rng)
    for name in ("fuse.l2a", "fuse.b2a", "fuse.a2a"):
        init_distance_attention(store, name, cfg, rng)


def matching_from_boundaries(matched, n_lane_nodes):
    """Invert per-boundary-node lane indices into lane node -> boundary nodes.

    `matched` is the [B] array from encode_boundaries (-1 = unmatched).
    """
    lists = [[] for _ in range(n_lane_nodes)]
    for b_idx, l_idx in enumerate(np.asarray(matched, dtype=np.int64)):
        if 0 <= l_idx < n_lane_nodes:
            lists[int(l_idx)].append(b_idx)
    return lists


def fuse_boundary_to_lane(lane_f, boundary_f, matching, store):
    """Mean matched boundary features into each lane node.

    matching: per lane node, a list of boundary node indices (may be empty;
    an unmatched node sees a zero context vector). Output keeps lane shape.
    """
    n = lane_f.shape[0]
    if len(matching) != n:
        raise ShapeError(f"matching length {len(matching)} != lane nodes {n}")
    pairs_lane, pairs_bnd = [], []
    for i, bs in enumerate(matching):
        for b in bs:
            pairs_lane.append(i)
            pairs_bnd.append(b)

    d = lane_f.shape[1]
    if pairs_lane and boundary_f.shape[0]:
        gathered = dc.gather(boundary_f, np.asarray(pairs_bnd), axis=0)
        sums = dc.scatter_add(gathered, np.asarray(pairs_lane), n, axis=0)
        counts = np.bincount(np.asarray(pairs_lane), minlength=n).astype(np.float64)
        inv = np.where(counts > 0, 1.0 / np.where(counts > 0, counts, 1.0), 0.0)
        ctx = dc.mul(sums, const(store, np.repeat(inv[:, None], d, axis=1)))
    else:
        ctx = const(store, np.zeros((n, d)))

    h = dc.concat([lane_f, ctx], axis=1)
    h = dc.relu(linear(store, "fuse.b2l.mlp1", h))
    h = linear(store, "fuse.b2l.mlp2", h)
    return layer_norm(store, "fuse.b2l.ln", dc.add(lane_f, h))


def distance_attention(query_f, query_pos, ctx_f, ctx_pos, store, name, tau,
                       exclude_self=False, query_frame=None, ctx_frame=None):
    """Radius-gated attention.

    For query i, neighbors are contexts strictly closer than tau. Messages
    are W_ctx (rel-pos encoding ++ context feature); each is offset by the
    projected query, relu'd and summed; the sum is projected and added back
    to the query under a layer norm. Queries with no neighbors pass through
    as layer_norm(query).
    """
    if query_frame is not None and ctx_frame is not None and query_frame != ctx_frame:
        raise ContractError(f"frame mismatch: query {query_frame!r} vs ctx {ctx_frame!r}")
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    q_pos = np.asarray(query_pos, dtype=np.float64)
    c_pos = np.asarray(ctx_pos, dtype=np.float64)
    nq, nc = q_pos.shape[0], c_pos.shape[0]

    diff = q_pos[:, None, :] - c_pos[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])  # [Q, C]
    mask = dist < tau
    if exclude_self:
        if nq != nc:
            raise ContractError("exclude_self requires aligned query/context sets")
        mask &= ~np.eye(nq, dtype=bool)
    qi, cj = np.nonzero(mask)  # row-major, deterministic

    if qi.size == 0:
        return layer_norm(store, f"{name}.ln", query_f)

    rel = (c_pos[cj] - q_pos[qi])
    rel_enc = linear(store, f"{name}.rel", const(store, rel))
    msgs = linear(store, f"{name}.ctx",
                  dc.concat([rel_enc, dc.gather(ctx_f, cj, axis=0)], axis=1))
    q_proj = dc.gather(linear(store, f"{name}.query", query_f), qi, axis=0)
    agg = dc.scatter_add(dc.relu(dc.add(msgs, q_proj)), qi, nq, axis=0)
    out = dc.add(query_f, linear(store, f"{name}.out", agg))
    return layer_norm(store, f"{name}.ln", out)


def fuse_scene(actor_f, actor_pos, lane_f, lane_pos, boundary_f, boundary_pos,
               matching, store, cfg, frame=None):
    """Run the four blocks in order; returns updated actor features [A, D]."""
    lane_f = fuse_boundary_to_lane(lane_f, boundary_f, matching, store)
    actor_f = distance_attention(actor_f, actor_pos, lane_f, lane_pos, store,
                                 "fuse.l2a", cfg.tau_lane,
                                 query_frame=frame, ctx_frame=frame)
    actor_f = distance_attention(actor_f, actor_pos, boundary_f, boundary_pos, store,
                                 "fuse.b2a", cfg.tau_boundary,
                                 query_frame=frame, ctx_frame=frame)
    actor_f = distance_attention(actor_f, actor_pos, actor_f, actor_pos, store,
                                 "fuse.a2a", cfg.tau_actor, exclude_self=True,
                                 query_frame=frame, ctx_frame=frame)
    return actor_f
