"""Vectorized scene model: actor tracks, lane graphs, boundary polylines.

A scene carries raw polylines (what gets serialized) plus derived structure:
the resampled lane-node graph with typed adjacency and, per boundary, the
resampled boundary nodes matched to lane nodes. Derivation is deterministic,
so a save/load round trip reproduces the derived parts too.

All geometry is float64. Scenes are treated as immutable after construction;
`normalize` returns a new scene.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, ParseError

ACTOR_KINDS = ("vehicle", "pedestrian", "cyclist", "other")
MARKINGS = ("solid", "dashed", "double", "none")
SIDES = ("left", "right")
ADJ_CATEGORIES = ("predecessor", "successor", "left", "right")

WORLD_FRAME = "world"


def wrap_angle(theta):
    """Map an angle to (-pi, pi]. Idempotent, including at the boundary."""
    r = math.remainder(float(theta), math.tau)
    if r <= -math.pi:
        r += math.tau
    return r


def wrap_angles(arr):
    return np.array([wrap_angle(t) for t in np.asarray(arr, dtype=np.float64).ravel()],
                    dtype=np.float64).reshape(np.asarray(arr).shape)


@dataclass
class ActorTrack:
    """One agent: H observed states and, when labeled, T future positions."""

    id: str
    kind: str
    positions: np.ndarray      # [H, 2]
    headings: np.ndarray       # [H], radians in (-pi, pi]
    velocities: np.ndarray     # [H, 2]
    observed: np.ndarray       # [H] bool
    future: np.ndarray | None  # [T, 2] or None
    focal: bool = False

    def last_observed_index(self):
        idx = np.flatnonzero(self.observed)
        if idx.size == 0:
            raise ContractError(f"actor {self.id} has no observed steps")
        return int(idx[-1])


@dataclass
class Lane:
    id: str
    centerline: np.ndarray  # [P, 2]


@dataclass
class LaneNode:
    center: np.ndarray
    direction: np.ndarray
    length: float
    parent_lane: str


@dataclass
class LaneGraph:
    """Resampled lane nodes plus typed directed adjacency.

    Adjacency arrays have shape [E, 2] of (src, dst) node indices, sorted.
    left(i, j) holds exactly when right(j, i) does.
    """

    centers: np.ndarray       # [N, 2]
    directions: np.ndarray    # [N, 2], unit rows
    lengths: np.ndarray       # [N]
    parent_lane: list[str]
    adjacency: dict[str, np.ndarray]
    lane_ranges: dict[str, tuple[int, int]]

    @property
    def n_nodes(self):
        return self.centers.shape[0]

    def node(self, i):
        return LaneNode(self.centers[i].copy(), self.directions[i].copy(),
                        float(self.lengths[i]), self.parent_lane[i])


@dataclass
class BoundaryPolyline:
    """A lane boundary with its marking, plus derived resampled nodes."""

    points: np.ndarray  # [P, 2]
    marking: str
    side: str
    lane_id: str
    # derived at scene build time:
    node_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    node_directions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    matched_lane_nodes: list[int] = field(default_factory=list)


@dataclass
class Scene:
    horizon: tuple[int, int]  # (H, T)
    actors: list[ActorTrack]
    lanes: list[Lane]
    boundaries: list[BoundaryPolyline]
    lane_graph: LaneGraph
    frame: str = WORLD_FRAME
    # x_world = world_rot @ x_frame + world_trans
    world_rot: np.ndarray = field(default_factory=lambda: np.eye(2))
    world_trans: np.ndarray = field(default_factory=lambda: np.zeros(2))
    n_skipped_lanes: int = 0
    scene_id: str = "scene"

    def actor(self, actor_id):
        for a in self.actors:
            if a.id == actor_id:
                return a
        raise ContractError(f"no actor with id {actor_id!r}")

    def focal_actors(self):
        return [a for a in self.actors if a.focal]


@dataclass
class SceneGenConfig:
    n_lanes: int = 2
    lane_width: float = 3.5
    lane_length: float = 100.0
    curvature_range: tuple[float, float] = (0.0, 0.0)  # 1/m
    n_actors: int = 3
    h: int = 10
    t: int = 15
    noise_sigma: float = 0.0
    speed_range: tuple[float, float] = (5.0, 12.0)
    lane_change_prob: float = 0.3
    dt: float = 0.1
    sample_step: float = 1.0  # polyline sampling, meters
    segment_len: float = 2.0  # lane node granularity, meters

    def validate(self):
        if self.h < 2:
            raise ConfigError(f"h must be >= 2, got {self.h}")
        if self.t < 1:
            raise ConfigError(f"t must be >= 1, got {self.t}")
        if self.n_lanes < 1:
            raise ConfigError(f"n_lanes must be >= 1, got {self.n_lanes}")
        if self.n_actors < 1:
            raise ConfigError(f"n_actors must be >= 1, got {self.n_actors}")
        if self.lane_width <= 0 or self.lane_length <= 0:
            raise ConfigError("lane_width and lane_length must be positive")
        if self.curvature_range[0] > self.curvature_range[1]:
            raise ConfigError(f"bad curvature_range {self.curvature_range}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.dt <= 0 or self.sample_step <= 0 or self.segment_len <= 0:
            raise ConfigError("dt, sample_step and segment_len must be positive")


# ---------------------------------------------------------------------------
# resampling and graph construction


def resample_polyline(points, segment_len):
    """Split a polyline into n equal-arclength segments, n = round(len/seg).

    Returns (centers [n,2], directions [n,2] unit chords, lengths [n]).
    Degenerate polylines (zero total length) come back empty.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    deltas = np.diff(pts, axis=0)
    seg = np.hypot(deltas[:, 0], deltas[:, 1])
    total = float(seg.sum())
    if total <= 1e-9:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    n = max(1, int(round(total / segment_len)))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    edges = np.linspace(0.0, total, n + 1)
    ex = np.interp(edges, cum, pts[:, 0])
    ey = np.interp(edges, cum, pts[:, 1])
    starts = np.stack([ex[:-1], ey[:-1]], axis=1)
    ends = np.stack([ex[1:], ey[1:]], axis=1)
    centers = 0.5 * (starts + ends)
    chords = ends - starts
    norms = np.hypot(chords[:, 0], chords[:, 1])
    # a segment can have zero chord on a hairpin; fall back to +x
    safe = np.where(norms > 1e-12, norms, 1.0)
    directions = chords / safe[:, None]
    directions[norms <= 1e-12] = (1.0, 0.0)
    lengths = np.full(n, total / n)
    return centers, directions, lengths


def build_lane_nodes(lanes, segment_len=2.0, lane_width=3.5):
    """Resample centerlines into a LaneGraph with typed adjacency.

    Successor edges chain consecutive nodes of one lane; predecessors mirror
    them. Left/right edges join each node to the nearest node of a laterally
    adjacent lane: centers closer than 1.2 * lane_width and nearly parallel
    (|d_i . d_j| > 0.8). Returns (graph, skipped) where skipped counts
    degenerate centerlines that produced no nodes.
    """
    if segment_len <= 0:
        raise ConfigError(f"segment_len must be positive, got {segment_len}")
    centers, directions, lengths, parents = [], [], [], []
    lane_ranges = {}
    skipped = 0
    succ = []
    for lane in lanes:
        c, d, ln = resample_polyline(lane.centerline, segment_len)
        if c.shape[0] == 0:
            skipped += 1
            continue
        start = len(parents)
        lane_ranges[lane.id] = (start, start + c.shape[0])
        centers.append(c)
        directions.append(d)
        lengths.append(ln)
        parents.extend([lane.id] * c.shape[0])
        succ.extend((i, i + 1) for i in range(start, start + c.shape[0] - 1))

    if parents:
        centers = np.concatenate(centers, axis=0)
        directions = np.concatenate(directions, axis=0)
        lengths = np.concatenate(lengths, axis=0)
    else:
        centers = np.zeros((0, 2))
        directions = np.zeros((0, 2))
        lengths = np.zeros(0)

    left, right = set(), set()
    ids = list(lane_ranges)
    thresh = 1.2 * lane_width
    for ai in range(len(ids)):
        for bi in range(ai + 1, len(ids)):
            for src_id, dst_id in ((ids[ai], ids[bi]), (ids[bi], ids[ai])):
                s0, s1 = lane_ranges[src_id]
                d0, d1 = lane_ranges[dst_id]
                for i in range(s0, s1):
                    diff = centers[d0:d1] - centers[i]
                    dist = np.hypot(diff[:, 0], diff[:, 1])
                    j = d0 + int(np.argmin(dist))
                    if dist[j - d0] >= thresh:
                        continue
                    if abs(float(directions[i] @ directions[j])) <= 0.8:
                        continue
                    dx, dy = centers[j] - centers[i]
                    cross = directions[i, 0] * dy - directions[i, 1] * dx
                    if abs(cross) < 1e-9:
                        continue
                    if cross > 0:
                        left.add((i, j))
                        right.add((j, i))
                    else:
                        right.add((i, j))
                        left.add((j, i))

    def _edges(pairs):
        arr = np.array(sorted(pairs), dtype=np.int64)
        return arr.reshape(-1, 2)

    adjacency = {
        "predecessor": _edges([(j, i) for i, j in succ]),
        "successor": _edges(succ),
        "left": _edges(left),
        "right": _edges(right),
    }
    graph = LaneGraph(centers, directions, lengths, parents, adjacency, lane_ranges)
    return graph, skipped


def _match_boundaries(boundaries, graph, segment_len):
    """Resample each boundary and match its nodes to the parent lane's nodes."""
    for b in boundaries:
        c, d, _ = resample_polyline(b.points, segment_len)
        b.node_centers = c
        b.node_directions = d
        rng = graph.lane_ranges.get(b.lane_id)
        if rng is None or c.shape[0] == 0:
            b.matched_lane_nodes = []
            continue
        lo, hi = rng
        matched = []
        for m in range(c.shape[0]):
            diff = graph.centers[lo:hi] - c[m]
            matched.append(lo + int(np.argmin(np.hypot(diff[:, 0], diff[:, 1]))))
        b.matched_lane_nodes = matched


def make_scene(horizon, actors, lanes, boundaries, segment_len=2.0, lane_width=3.5,
               frame=WORLD_FRAME, scene_id="scene"):
    """Assemble a Scene: build the lane graph, match boundaries, validate."""
    h, t = horizon
    if not any(a.focal for a in actors):
        raise ContractError("scene has no focal actor")
    for a in actors:
        if a.positions.shape != (h, 2):
            raise ContractError(f"actor {a.id}: history length != H={h}")
        if a.future is not None and a.future.shape != (t, 2):
            raise ContractError(f"actor {a.id}: future length != T={t}")
        if not a.observed.any():
            raise ContractError(f"actor {a.id}: no observed steps")
    graph, skipped = build_lane_nodes(lanes, segment_len, lane_width)
    _match_boundaries(boundaries, graph, segment_len)
    return Scene(horizon=(h, t), actors=actors, lanes=lanes, boundaries=boundaries,
                 lane_graph=graph, frame=frame, n_skipped_lanes=skipped, scene_id=scene_id)


# ---------------------------------------------------------------------------
# synthetic generation


def _arc_point(s, kappa):
    if abs(kappa) < 1e-12:
        return s, 0.0, 0.0  # x, y, tangent angle
    th = kappa * s
    return math.sin(th) / kappa, (1.0 - math.cos(th)) / kappa, th


def _lane_point(s, lateral, kappa):
    x, y, th = _arc_point(s, kappa)
    # unit normal (left of travel): (-sin th, cos th)
    return x - lateral * math.sin(th), y + lateral * math.cos(th), th


def _smoothstep(u):
    u = min(1.0, max(0.0, u))
    return u * u * (3.0 - 2.0 * u)


def generate_synthetic(config: SceneGenConfig, seed, scene_id=None):
    """A deterministic toy scene: parallel (possibly curved) lanes with
    boundary lines, and actors driving along them.

    Actor 0 is focal. With two or more lanes an actor may blend laterally
    into a neighbor lane over the prediction window. Position noise, when
    enabled, perturbs observed history only; ground-truth futures stay on
    the maneuver path.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    kappa = float(rng.uniform(*config.curvature_range))
    w = config.lane_width

    def lane_lateral(idx):
        return (idx - (config.n_lanes - 1) / 2.0) * w

    n_pts = int(config.lane_length / config.sample_step) + 1
    svals = np.arange(n_pts) * config.sample_step
    lanes = []
    boundaries = []
    for li in range(config.n_lanes):
        lat = lane_lateral(li)
        pts = np.array([_lane_point(s, lat, kappa)[:2] for s in svals])
        lane_id = f"lane{li}"
        lanes.append(Lane(lane_id, pts))
        for side, off in (("left", lat + w / 2.0), ("right", lat - w / 2.0)):
            interior = (side == "left" and li + 1 < config.n_lanes) or \
                       (side == "right" and li > 0)
            bpts = np.array([_lane_point(s, off, kappa)[:2] for s in svals])
            boundaries.append(BoundaryPolyline(
                points=bpts, marking="dashed" if interior else "solid",
                side=side, lane_id=lane_id))

    n_steps = config.h + config.t
    actors = []
    for ai in range(config.n_actors):
        lane_idx = int(rng.integers(config.n_lanes))
        s0 = float(rng.uniform(0.05, 0.35)) * config.lane_length
        v = float(rng.uniform(*config.speed_range))
        # keep the whole trajectory on the map
        v = min(v, (config.lane_length - s0) / (n_steps * config.dt))

        lat_from = lane_lateral(lane_idx)
        lat_to = lat_from
        change_at = n_steps  # never
        if config.n_lanes > 1 and rng.random() < config.lane_change_prob:
            target = lane_idx + (1 if lane_idx + 1 < config.n_lanes else -1)
            if 0 < lane_idx and rng.random() < 0.5:
                target = lane_idx - 1
            lat_to = lane_lateral(target)
            change_at = int(rng.integers(max(1, config.h - 2), config.h + config.t // 2))
        window = 20

        xs = np.empty((n_steps, 2))
        ths = np.empty(n_steps)
        for i in range(n_steps):
            s = s0 + v * config.dt * i
            blend = _smoothstep((i - change_at) / window) if i >= change_at else 0.0
            lat = lat_from + (lat_to - lat_from) * blend
            x, y, th = _lane_point(s, lat, kappa)
            xs[i] = (x, y)
            ths[i] = wrap_angle(th)

        hist = xs[:config.h].copy()
        if config.noise_sigma > 0:
            hist = hist + rng.normal(0.0, config.noise_sigma, hist.shape)
        vel = np.stack([v * np.cos(ths[:config.h]), v * np.sin(ths[:config.h])], axis=1)
        actors.append(ActorTrack(
            id=f"a{ai}",
            kind="vehicle" if ai == 0 else str(rng.choice(ACTOR_KINDS, p=[0.7, 0.1, 0.1, 0.1])),
            positions=hist,
            headings=ths[:config.h].copy(),
            velocities=vel,
            observed=np.ones(config.h, dtype=bool),
            future=xs[config.h:].copy(),
            focal=(ai == 0),
        ))

    sid = scene_id if scene_id is not None else f"syn-{seed}"
    return make_scene((config.h, config.t), actors, lanes, boundaries,
                      segment_len=config.segment_len, lane_width=w, scene_id=sid)


# ---------------------------------------------------------------------------
# normalization


def normalize(scene: Scene, actor_id: str) -> Scene:
    """Rigid transform into the agent frame of `actor_id`: its last observed
    position moves to the origin, its heading there to +x. A pure isometry;
    applying it twice equals applying it once."""
    actor = scene.actor(actor_id)
    if not actor.observed[-1]:
        raise ContractError(f"actor {actor_id} unobserved at last history step")
    origin = actor.positions[-1].astype(np.float64)
    psi = float(actor.headings[-1])
    c, s = math.cos(psi), math.sin(psi)
    rot = np.array([[c, s], [-s, c]])  # world -> agent

    def tp(pts):  # transform points
        return (np.asarray(pts) - origin) @ rot.T

    def tv(vecs):  # rotate vectors
        return np.asarray(vecs) @ rot.T

    actors = [replace(
        a,
        positions=tp(a.positions),
        headings=wrap_angles(a.headings - psi),
        velocities=tv(a.velocities),
        observed=a.observed.copy(),
        future=None if a.future is None else tp(a.future),
    ) for a in scene.actors]

    lanes = [Lane(l.id, tp(l.centerline)) for l in scene.lanes]
    boundaries = [replace(
        b, points=tp(b.points), node_centers=tp(b.node_centers),
        node_directions=tv(b.node_directions),
        matched_lane_nodes=list(b.matched_lane_nodes),
    ) for b in scene.boundaries]
    g = scene.lane_graph
    graph = LaneGraph(tp(g.centers), tv(g.directions), g.lengths.copy(),
                      list(g.parent_lane),
                      {k: v.copy() for k, v in g.adjacency.items()},
                      dict(g.lane_ranges))

    # compose so x_world still recoverable: x_w = R_old (rot^T x_new + origin) + t_old
    world_rot = scene.world_rot @ rot.T
    world_trans = scene.world_rot @ origin + scene.world_trans
    return Scene(horizon=scene.horizon, actors=actors, lanes=lanes,
                 boundaries=boundaries, lane_graph=graph,
                 frame=f"agent:{actor_id}", world_rot=world_rot,
                 world_trans=world_trans, n_skipped_lanes=scene.n_skipped_lanes,
                 scene_id=scene.scene_id)


def to_world(scene: Scene, points):
    """Map agent-frame points back to the world frame."""
    return np.asarray(points) @ scene.world_rot.T + scene.world_trans


# ---------------------------------------------------------------------------
# serialization


def _require(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{path}{key}" if path.endswith(".") or not path else key)
    return obj[key]


def _num_array(val, path, shape_hint=None):
    try:
        arr = np.asarray(val, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(path, f"{path}: not numeric") from e
    if shape_hint is not None and (arr.ndim != len(shape_hint) or any(
            s is not None and arr.shape[i] != s for i, s in enumerate(shape_hint))):
        raise ParseError(path, f"{path}: bad shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ParseError(path, f"{path}: non-finite value")
    return arr


def load_scene(data, segment_len=2.0, lane_width=3.5, scene_id="scene"):
    """Parse scene JSON (bytes or str). Violations raise ParseError naming
    the offending field. Scene identity is not part of the file format;
    callers pass one (the CLI uses the file's stem)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as e:
        raise ParseError("document", f"not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ParseError("document", "top level must be an object")

    hz = _require(obj, "horizon", "")
    h = _require(hz, "H", "horizon.")
    t = _require(hz, "T", "horizon.")
    if (isinstance(h, bool) or isinstance(t, bool) or not isinstance(h, int)
            or not isinstance(t, int) or h < 2 or t < 1):
        raise ParseError("horizon", f"bad horizon H={h!r} T={t!r}")

    raw_actors = _require(obj, "actors", "")
    if not isinstance(raw_actors, list) or not raw_actors:
        raise ParseError("actors", "actors must be a nonempty list")
    actors = []
    for i, ra in enumerate(raw_actors):
        p = f"actors[{i}]."
        aid = _require(ra, "id", p)
        kind = _require(ra, "kind", p)
        if kind not in ACTOR_KINDS:
            raise ParseError(p + "kind", f"unknown actor kind {kind!r}")
        hist = _num_array(_require(ra, "history", p), p + "history", (h, 5))
        observed = _require(ra, "observed", p)
        if (not isinstance(observed, list) or len(observed) != h
                or not all(isinstance(b, bool) for b in observed)):
            raise ParseError(p + "observed", f"{p}observed must be {h} booleans")
        obs = np.array(observed, dtype=bool)
        if not obs.any():
            raise ParseError(p + "observed", f"{p}observed has no true entry")
        fut = _require(ra, "future", p)
        future = None if fut is None else _num_array(fut, p + "future", (t, 2))
        focal = _require(ra, "focal", p)
        if not isinstance(focal, bool):
            raise ParseError(p + "focal")
        actors.append(ActorTrack(
            id=str(aid), kind=kind, positions=hist[:, 0:2].copy(),
            headings=wrap_angles(hist[:, 2]), velocities=hist[:, 3:5].copy(),
            observed=obs, future=future, focal=focal))

    raw_lanes = _require(obj, "lanes", "")
    if not isinstance(raw_lanes, list):
        raise ParseError("lanes")
    lanes = []
    lane_ids = set()
    for i, rl in enumerate(raw_lanes):
        p = f"lanes[{i}]."
        lid = str(_require(rl, "id", p))
        pts = _num_array(_require(rl, "centerline", p), p + "centerline", (None, 2))
        if pts.shape[0] < 2:
            raise ParseError(p + "centerline", f"{p}centerline needs >= 2 points")
        lanes.append(Lane(lid, pts))
        lane_ids.add(lid)

    raw_bounds = _require(obj, "boundaries", "")
    if not isinstance(raw_bounds, list):
        raise ParseError("boundaries")
    boundaries = []
    for i, rb in enumerate(raw_bounds):
        p = f"boundaries[{i}]."
        pts = _num_array(_require(rb, "points", p), p + "points", (None, 2))
        if pts.shape[0] < 2:
            raise ParseError(p + "points", f"{p}points needs >= 2 points")
        marking = _require(rb, "marking", p)
        if marking not in MARKINGS:
            raise ParseError(p + "marking", f"unknown marking {marking!r}")
        side = _require(rb, "side", p)
        if side not in SIDES:
            raise ParseError(p + "side", f"unknown side {side!r}")
        lid = str(_require(rb, "lane_id", p))
        if lid not in lane_ids:
            raise ParseError(p + "lane_id", f"{p}lane_id {lid!r} not among lanes")
        boundaries.append(BoundaryPolyline(points=pts, marking=marking, side=side,
                                           lane_id=lid))

    if not any(a.focal for a in actors):
        raise ParseError("actors", "no focal actor")
    return make_scene((h, t), actors, lanes, boundaries, segment_len=segment_len,
                      lane_width=lane_width, scene_id=str(scene_id))


def save_scene(scene: Scene) -> bytes:
    """Serialize to UTF-8 JSON with round-trip float precision."""
    obj = {
        "horizon": {"H": scene.horizon[0], "T": scene.horizon[1]},
        "actors": [{
            "id": a.id,
            "kind": a.kind,
            "history": np.concatenate(
                [a.positions, a.headings[:, None], a.velocities], axis=1).tolist(),
            "observed": [bool(b) for b in a.observed],
            "future": None if a.future is None else a.future.tolist(),
            "focal": bool(a.focal),
        } for a in scene.actors],
        "lanes": [{"id": l.id, "centerline": l.centerline.tolist()} for l in scene.lanes],
        "boundaries": [{
            "points": b.points.tolist(),
            "marking": b.marking,
            "side": b.side,
            "lane_id": b.lane_id,
        } for b in scene.boundaries],
    }
    return json.dumps(obj).encode("utf-8")


def actor_rng_seed(scene_id, actor_id, seed):
    """Stable per-actor stream id: crc32 of the pair, xor the run seed."""
    tag = zlib.crc32(f"{scene_id}/{actor_id}".encode("utf-8"))
    return (int(seed) ^ tag) & 0xFFFFFFFF
