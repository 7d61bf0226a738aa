"""Embedding extraction for the three input streams.

Actors: each history channel group (coordinates, heading as cos/sin,
velocity) runs through its own residual conv block; the three outputs are
added, downsampled twice, merged back to full temporal resolution by a small
feature pyramid, and max-pooled over observed steps.

Lane nodes: geometry MLP followed by L gated graph convolution layers, where
each adjacency category contributes a per-node sigmoid-gated neighbor sum.

Boundary nodes: geometry + marking one-hot through an MLP.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from ._layers import const, conv, init_conv, init_layer_norm, init_linear, layer_norm, linear
from .errors import ContractError
from .scene import ADJ_CATEGORIES, MARKINGS

_BRANCHES = ("coord", "heading", "vel")
_NEG_BIG = -1e9


def init_actor_encoder(store, cfg, rng):
    d = cfg.d
    for br in _BRANCHES:
        _init_res_block(store, f"actor.{br}", 2, d, rng)
    _init_res_block(store, "actor.down1", d, d, rng)
    _init_res_block(store, "actor.down2", d, d, rng)
    for scale in range(3):
        init_conv(store, f"actor.lat{scale}", d, d, 1, rng)
    init_conv(store, "actor.merge", d, d, 3, rng)


def _init_res_block(store, name, c_in, c_out, rng):
    init_conv(store, f"{name}.conv1", c_in, c_out, 3, rng)
    init_layer_norm(store, f"{name}.ln1", c_out)
    init_conv(store, f"{name}.conv2", c_out, c_out, 3, rng)
    init_layer_norm(store, f"{name}.ln2", c_out)
    init_conv(store, f"{name}.skip", c_in, c_out, 1, rng, bias=False)


def _res_block(store, name, x, stride=1):
    h = conv(store, f"{name}.conv1", x, stride=stride, padding=1)
    h = dc.relu(layer_norm(store, f"{name}.ln1", h, axis=1))
    h = conv(store, f"{name}.conv2", h, stride=1, padding=1)
    h = layer_norm(store, f"{name}.ln2", h, axis=1)
    skip = conv(store, f"{name}.skip", x, stride=stride, padding=0)
    return dc.relu(dc.add(h, skip))


def _upsample(x, length):
    src = x.shape[2]
    idx = (np.arange(length) * src) // length
    return dc.gather(x, idx, axis=2)


def encode_actors(scene, store, cfg):
    """All actors of a normalized scene -> (features [A, D], positions [A, 2]).

    Unobserved steps are zero-filled on input and excluded from the final
    temporal max-pool. Positions are each actor's last observed point.
    """
    h = scene.horizon[0]
    if h < 4:
        raise ContractError(f"actor encoder needs H >= 4, got {h}")
    actors = scene.actors
    if not actors:
        raise ContractError("scene has no actors")

    a = len(actors)
    obs = np.stack([act.observed for act in actors])  # [A, H]
    for act in actors:
        if not act.observed.any():
            raise ContractError(f"actor {act.id} has no observed steps")

    s = cfg.input_scale
    coord = np.stack([act.positions.T for act in actors]) * s          # [A, 2, H]
    heading = np.stack([np.vstack([np.cos(act.headings), np.sin(act.headings)])
                        for act in actors])
    vel = np.stack([act.velocities.T for act in actors]) * s
    keep = obs[:, None, :]
    streams = {"coord": coord * keep, "heading": heading * keep, "vel": vel * keep}

    f0 = None
    for br in _BRANCHES:
        out = _res_block(store, f"actor.{br}", const(store, streams[br]))
        f0 = out if f0 is None else dc.add(f0, out)
    f1 = _res_block(store, "actor.down1", f0, stride=2)
    f2 = _res_block(store, "actor.down2", f1, stride=2)

    u2 = conv(store, "actor.lat2", f2)
    u1 = dc.add(conv(store, "actor.lat1", f1), _upsample(u2, f1.shape[2]))
    u0 = dc.add(conv(store, "actor.lat0", f0), _upsample(u1, h))
    merged = dc.relu(conv(store, "actor.merge", u0, padding=1))  # [A, D, H]

    # mask the unobserved tail out of the max
    neg = np.where(obs, 0.0, _NEG_BIG)[:, None, :] * np.ones((1, cfg.d, 1))
    pooled = dc.max(dc.add(merged, const(store, neg)), axis=2)  # [A, D]

    positions = np.stack([act.positions[act.last_observed_index()] for act in actors])
    return pooled, positions


# ---------------------------------------------------------------------------
# lanes


def init_lane_encoder(store, cfg, rng):
    d = cfg.d
    init_linear(store, "lane.in1", 5, d, rng)
    init_layer_norm(store, "lane.ln1", d)
    init_linear(store, "lane.in2", d, d, rng)
    init_layer_norm(store, "lane.ln2", d)
    for layer in range(cfg.l_graph):
        p = f"lane.gc{layer}"
        init_linear(store, f"{p}.self", d, d, rng, bias=False)
        for cat in ADJ_CATEGORIES:
            init_linear(store, f"{p}.{cat}.w", d, d, rng, bias=False)
            init_linear(store, f"{p}.{cat}.gate", d, 1, rng)
        init_layer_norm(store, f"{p}.ln", d)


def gated_lane_graph_conv(x, graph, store, prefix):
    """One layer: Y_i = X_i W0 + sum_c g_ic * sum_{j in N_c(i)} X_j W_c,
    g_ic = sigmoid(X_i U_c + b_c); returns layer_norm(relu(Y)) + X."""
    n = x.shape[0]
    ones_row = const(store, np.ones((1, x.shape[1])))
    y = linear(store, f"{prefix}.self", x)
    for cat in ADJ_CATEGORIES:
        edges = graph.adjacency[cat]
        if edges.shape[0] == 0:
            continue
        src, dst = edges[:, 0], edges[:, 1]
        msgs = linear(store, f"{prefix}.{cat}.w", dc.gather(x, dst, axis=0))
        agg = dc.scatter_add(msgs, src, n, axis=0)
        gate = dc.sigmoid(linear(store, f"{prefix}.{cat}.gate", x))  # [N, 1]
        y = dc.add(y, dc.mul(dc.matmul(gate, ones_row), agg))
    return dc.add(layer_norm(store, f"{prefix}.ln", dc.relu(y)), x)


def encode_lane_nodes(graph, store, cfg):
    """Lane graph -> per-node features [N, D]."""
    if graph.n_nodes == 0:
        raise ContractError("cannot encode an empty lane graph")
    s = cfg.input_scale
    feats = np.concatenate([graph.centers * s, graph.directions,
                            graph.lengths[:, None] * s], axis=1)
    x = dc.relu(layer_norm(store, "lane.ln1", linear(store, "lane.in1", const(store, feats))))
    x = dc.relu(layer_norm(store, "lane.ln2", linear(store, "lane.in2", x)))
    for layer in range(cfg.l_graph):
        x = gated_lane_graph_conv(x, graph, store, f"lane.gc{layer}")
    return x


# ---------------------------------------------------------------------------
# boundaries


def init_boundary_encoder(store, cfg, rng):
    d = cfg.d
    n_in = 4 + len(MARKINGS)
    init_linear(store, "bound.in1", n_in, d, rng)
    init_layer_norm(store, "bound.ln1", d)
    init_linear(store, "bound.in2", d, d, rng)
    init_layer_norm(store, "bound.ln2", d)


def boundary_nodes(boundaries):
    """Flatten resampled boundary nodes across polylines.

    Returns (centers [B,2], directions [B,2], marking one-hot [B,4],
    matched lane-node index [B], -1 where unmatched).
    """
    centers, directions, marks, matched = [], [], [], []
    for b in boundaries:
        m = b.node_centers.shape[0]
        if m == 0:
            continue
        centers.append(b.node_centers)
        directions.append(b.node_directions)
        one_hot = np.zeros((m, len(MARKINGS)))
        one_hot[:, MARKINGS.index(b.marking)] = 1.0
        marks.append(one_hot)
        if len(b.matched_lane_nodes) == m:
            matched.append(np.asarray(b.matched_lane_nodes, dtype=np.int64))
        else:
            matched.append(np.full(m, -1, dtype=np.int64))
    if not centers:
        z2 = np.zeros((0, 2))
        return z2, z2.copy(), np.zeros((0, len(MARKINGS))), np.zeros(0, dtype=np.int64)
    return (np.concatenate(centers), np.concatenate(directions),
            np.concatenate(marks), np.concatenate(matched))


def encode_boundaries(boundaries, store, cfg):
    """Boundary polylines -> (features [B, D], positions [B, 2], matched [B]).

    An empty boundary set yields a (0, D) feature matrix; downstream fusion
    treats that as "no context".
    """
    centers, directions, marks, matched = boundary_nodes(boundaries)
    feats = np.concatenate([centers * cfg.input_scale, directions, marks], axis=1)
    x = dc.relu(layer_norm(store, "bound.ln1", linear(store, "bound.in1", const(store, feats))))
    x = dc.relu(layer_norm(store, "bound.ln2", linear(store, "bound.in2", x)))
    return x, centers, matched


def init_encoders(store, cfg, rng):
    init_actor_encoder(store, cfg, rng)
    init_lane_encoder(store, cfg, rng)
    init_boundary_encoder(store, cfg, rng)
