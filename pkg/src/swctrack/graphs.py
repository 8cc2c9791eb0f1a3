"""Per-frame spatial graphs and the cross-frame temporal graph.

Vertices of the spatial graph are composite features; edges connect
mutually-near features and carry a turn-on probability derived from
appearance/motion histogram similarity.  Vertices of the temporal graph
are per-frame targets (connected clusters of spatial vertices); its edges
are gated cross-frame correspondence candidates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrackerConfig
from .features import CompositeFeature

COLOR_BINS = 32   # Luv pooled as 2 x 4 x 4
GRADIENT_BINS = 48
FLOW_BINS = 9     # zero-motion bin + 8 direction octants

_L_EDGES = np.array([50.0])
_UV_EDGES = np.array([-50.0, 0.0, 50.0])


class MeasurementError(ValueError):
    """Raised when an observation record is missing a channel."""


@dataclass(frozen=True)
class FeatureMeasurements:
    """Raw per-feature measurements: Luv color samples, gradient angles,
    flow vectors, and an externally supplied foreground-fit score."""

    color: np.ndarray      # (n, 3) Luv triples
    gradient: np.ndarray   # (n,) angles in radians
    flow: np.ndarray       # (n, 2) per-sample motion vectors
    foreground_fit: float = 0.0


@dataclass(frozen=True)
class FeatureHistogram:
    """Smoothed, unit-normalized appearance/motion histogram.

    Sub-histograms keep their own normalization; ``concat`` is the
    89-entry concatenation used by the edge probability.
    """

    color: np.ndarray
    gradient: np.ndarray
    flow: np.ndarray
    concat: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.color.shape != (COLOR_BINS,):
            raise ValueError(f"color histogram must have {COLOR_BINS} bins")
        if self.gradient.shape != (GRADIENT_BINS,):
            raise ValueError(f"gradient histogram must have {GRADIENT_BINS} bins")
        if self.flow.shape != (FLOW_BINS,):
            raise ValueError(f"flow histogram must have {FLOW_BINS} bins")
        cat = np.concatenate([self.color, self.gradient, self.flow])
        cat.flags.writeable = False
        object.__setattr__(self, "concat", cat)


def _smooth(counts: np.ndarray, floor: float) -> np.ndarray:
    total = counts.sum()
    h = counts / total if total > 0 else np.full_like(counts, 1.0 / len(counts))
    h = h + floor
    h = h / h.sum()
    h.flags.writeable = False
    return h


def _color_bins(samples: np.ndarray) -> np.ndarray:
    l_idx = np.searchsorted(_L_EDGES, samples[:, 0], side="right")
    u_idx = np.searchsorted(_UV_EDGES, samples[:, 1], side="right")
    v_idx = np.searchsorted(_UV_EDGES, samples[:, 2], side="right")
    idx = l_idx * 16 + u_idx * 4 + v_idx
    return np.bincount(idx, minlength=COLOR_BINS).astype(np.float64)


def _gradient_bins(angles: np.ndarray) -> np.ndarray:
    wrapped = np.mod(angles, 2.0 * np.pi)
    idx = np.minimum((wrapped / (2.0 * np.pi / GRADIENT_BINS)).astype(int), GRADIENT_BINS - 1)
    return np.bincount(idx, minlength=GRADIENT_BINS).astype(np.float64)


def _flow_bins(vectors: np.ndarray, still_threshold: float) -> np.ndarray:
    mag = np.hypot(vectors[:, 0], vectors[:, 1])
    moving = mag >= still_threshold
    counts = np.zeros(FLOW_BINS, dtype=np.float64)
    counts[0] = np.count_nonzero(~moving)
    if np.any(moving):
        ang = np.mod(np.arctan2(vectors[moving, 1], vectors[moving, 0]), 2.0 * np.pi)
        idx = 1 + np.minimum((ang / (np.pi / 4.0)).astype(int), 7)
        counts += np.bincount(idx, minlength=FLOW_BINS).astype(np.float64)
    return counts


def build_histogram(
    feature: CompositeFeature,
    measurements: FeatureMeasurements,
    config: TrackerConfig = TrackerConfig(),
) -> FeatureHistogram:
    """Pool raw measurements into the smoothed 32/48/9-bin histogram."""
    for channel in ("color", "gradient", "flow"):
        arr = getattr(measurements, channel, None)
        if arr is None or np.size(arr) == 0:
            raise MeasurementError(f"feature {feature.id}: missing measurement channel '{channel}'")
    color = np.asarray(measurements.color, dtype=np.float64).reshape(-1, 3)
    gradient = np.asarray(measurements.gradient, dtype=np.float64).reshape(-1)
    flow = np.asarray(measurements.flow, dtype=np.float64).reshape(-1, 2)
    floor = config.histogram_floor
    return FeatureHistogram(
        color=_smooth(_color_bins(color), floor),
        gradient=_smooth(_gradient_bins(gradient), floor),
        flow=_smooth(_flow_bins(flow, config.flow_still_threshold), floor),
    )


def raw_color_histogram(samples: np.ndarray) -> np.ndarray:
    """Unsmoothed normalized color histogram (exposed for calibration tests)."""
    counts = _color_bins(np.asarray(samples, dtype=np.float64).reshape(-1, 3))
    return counts / counts.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Kullback-Leibler divergence ``sum p_i log(p_i / q_i)``.

    Requires equal lengths and strictly positive entries (guaranteed by
    the smoothing floor upstream).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"histogram length mismatch: {p.shape} vs {q.shape}")
    return float(np.sum(p * np.log(p / q)))


def edge_probability(
    a: FeatureHistogram,
    b: FeatureHistogram,
    temperature: float = 1.0,
    clamp: float = 1e-6,
) -> float:
    """Edge turn-on probability from the symmetrized KL divergence.

    ``exp(-(KL(a||b) + KL(b||a)) / T)`` clamped into the open unit
    interval so Bernoulli sampling and proposal ratios stay regular.
    Symmetric in its arguments.
    """
    pa, pb = a.concat, b.concat
    sym = float(np.sum((pa - pb) * np.log(pa / pb)))
    q = math.exp(-sym / temperature)
    return min(max(q, clamp), 1.0 - clamp)


@dataclass(frozen=True)
class SpatialVertex:
    """A spatial graph vertex: one composite feature plus its histogram.

    Partition labels are owned by the solution object, not the graph, so
    a built graph stays immutable and shareable.
    """

    feature: CompositeFeature
    histogram: FeatureHistogram
    foreground_fit: float = 0.0


@dataclass
class SpatialGraph:
    """Per-frame feature graph with precomputed edge probabilities."""

    frame: int
    vertices: list[SpatialVertex]
    edges: list[tuple[int, int, float]]                 # (i, j, q_e) with i < j
    adjacency: list[list[tuple[int, float]]] = field(default=None)
    aabbs: np.ndarray = field(default=None, repr=False)  # (n, 4) feature extents

    def __post_init__(self):
        if self.adjacency is None:
            adj: list[list[tuple[int, float]]] = [[] for _ in self.vertices]
            for i, j, q in self.edges:
                adj[i].append((j, q))
                adj[j].append((i, q))
            self.adjacency = adj
        if self.aabbs is None:
            self.aabbs = np.array(
                [v.feature.region.bounding_box() for v in self.vertices],
                dtype=np.float64).reshape(-1, 4)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def positions(self) -> np.ndarray:
        return np.array([v.feature.region.center for v in self.vertices]).reshape(-1, 2)


def build_spatial_graph(
    frame: int,
    features: list[CompositeFeature],
    measurements: list[FeatureMeasurements],
    config: TrackerConfig = TrackerConfig(),
) -> SpatialGraph:
    """Construct the frame's graph: vertices in canonical id order, edges
    between mutual k-nearest neighbors within the radius cap.

    The canonical sort makes the output independent of input ordering.
    """
    if len(features) != len(measurements):
        raise ValueError("features and measurements must align")
    order = sorted(range(len(features)), key=lambda k: str(features[k].id))
    vertices = []
    for k in order:
        hist = build_histogram(features[k], measurements[k], config)
        vertices.append(SpatialVertex(
            feature=features[k], histogram=hist,
            foreground_fit=float(measurements[k].foreground_fit),
        ))
    edges: list[tuple[int, int, float]] = []
    n = len(vertices)
    if n >= 2:
        pos = np.array([v.feature.region.center for v in vertices])
        major = [2.0 * max(v.feature.region.semi_axes) for v in vertices]
        r_max = config.spatial_radius_factor * float(np.mean(major))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        k = config.spatial_neighbors
        neighbor_sets = []
        for i in range(n):
            ranked = sorted((dist[i, j], j) for j in range(n) if j != i)
            neighbor_sets.append({j for _, j in ranked[:k]})
        for i in range(n):
            for j in range(i + 1, n):
                if j in neighbor_sets[i] and i in neighbor_sets[j] and dist[i, j] <= r_max:
                    q = edge_probability(
                        vertices[i].histogram, vertices[j].histogram,
                        config.edge_temperature, config.qe_clamp,
                    )
                    edges.append((i, j, q))
    return SpatialGraph(frame=frame, vertices=vertices, edges=edges)


@dataclass(frozen=True)
class Target:
    """A per-frame target: bounding box over a connected set of vertices."""

    frame: int
    label: int
    members: tuple[int, ...]          # vertex indices within the frame graph
    box: np.ndarray                   # (cx, cy, w, h)

    def __post_init__(self):
        box = np.asarray(self.box, dtype=np.float64)
        if box.shape != (4,) or box[2] <= 0 or box[3] <= 0:
            raise ValueError(f"target box must be (cx, cy, w, h) with positive extent, got {box}")
        box.flags.writeable = False
        object.__setattr__(self, "box", box)
        if not self.members:
            raise ValueError("target must have at least one member vertex")
        object.__setattr__(self, "members", tuple(sorted(self.members)))

    @property
    def diagonal(self) -> float:
        return float(math.hypot(self.box[2], self.box[3]))


def target_box(graph: SpatialGraph, members) -> np.ndarray:
    """Bounding box (cx, cy, w, h) of the member features' region extents."""
    arr = graph.aabbs[list(members)]
    x0, y0 = arr[:, 0].min(), arr[:, 1].min()
    x1, y1 = arr[:, 2].max(), arr[:, 3].max()
    return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, max(x1 - x0, 1e-6), max(y1 - y0, 1e-6)])


def target_histogram(graph: SpatialGraph, members) -> FeatureHistogram:
    """Target-level appearance: mean of member histograms, renormalized."""
    color = np.mean([graph.vertices[m].histogram.color for m in members], axis=0)
    gradient = np.mean([graph.vertices[m].histogram.gradient for m in members], axis=0)
    flow = np.mean([graph.vertices[m].histogram.flow for m in members], axis=0)
    return FeatureHistogram(
        color=color / color.sum(), gradient=gradient / gradient.sum(), flow=flow / flow.sum(),
    )


def boxes_gated(box_a: np.ndarray, box_b: np.ndarray, gate_factor: float) -> bool:
    """Candidate-correspondence gate: boxes overlap, or centers are within
    ``gate_factor`` times the larger box diagonal."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    overlap_x = abs(ax - bx) <= (aw + bw) / 2.0
    overlap_y = abs(ay - by) <= (ah + bh) / 2.0
    if overlap_x and overlap_y:
        return True
    d_gate = gate_factor * max(math.hypot(aw, ah), math.hypot(bw, bh))
    return math.hypot(ax - bx, ay - by) <= d_gate


@dataclass
class TemporalGraph:
    """Targets per frame, gated candidate edges, and trajectory labels.

    ``edges[t]`` holds (index at t, index at t+1, q_e) candidates between
    frames t and t+1.  ``labels[t][k]`` is the trajectory id of target k
    at frame t (0 marks a false-alarm target).
    """

    targets: list[list[Target]]
    edges: list[list[tuple[int, int, float]]]
    labels: list[list[int]]

    @property
    def n_frames(self) -> int:
        return len(self.targets)


def build_temporal_graph(
    graphs: list[SpatialGraph],
    labels_per_frame: list[np.ndarray],
    config: TrackerConfig = TrackerConfig(),
) -> TemporalGraph:
    """Build targets from per-frame partition labels, gate candidate
    correspondences between consecutive frames, and chain targets greedily
    (highest q_e first, one-to-one) into initial trajectories."""
    targets: list[list[Target]] = []
    hists: list[list[FeatureHistogram]] = []
    for graph, labels in zip(graphs, labels_per_frame):
        frame_targets = []
        frame_hists = []
        for lab in sorted(set(int(x) for x in labels) - {0}):
            members = tuple(int(i) for i in np.flatnonzero(labels == lab))
            frame_targets.append(Target(
                frame=graph.frame, label=lab, members=members,
                box=target_box(graph, members),
            ))
            frame_hists.append(target_histogram(graph, members))
        targets.append(frame_targets)
        hists.append(frame_hists)

    edges: list[list[tuple[int, int, float]]] = []
    for t in range(len(targets) - 1):
        frame_edges = []
        for i, ta in enumerate(targets[t]):
            for j, tb in enumerate(targets[t + 1]):
                if boxes_gated(ta.box, tb.box, config.gate_factor):
                    q = edge_probability(
                        hists[t][i], hists[t + 1][j],
                        config.edge_temperature, config.qe_clamp,
                    )
                    frame_edges.append((i, j, q))
        edges.append(frame_edges)

    # greedy chaining: strongest candidate first, each endpoint used once
    labels_out: list[list[int]] = [[0] * len(frame) for frame in targets]
    next_id = 1
    for k in range(len(targets[0]) if targets else 0):
        labels_out[0][k] = next_id
        next_id += 1
    for t in range(len(targets) - 1):
        taken_from = set()
        taken_to = set()
        for i, j, q in sorted(edges[t], key=lambda e: (-e[2], e[0], e[1])):
            if i in taken_from or j in taken_to:
                continue
            taken_from.add(i)
            taken_to.add(j)
            labels_out[t + 1][j] = labels_out[t][i]
        if t + 1 < len(targets):
            for j in range(len(targets[t + 1])):
                if labels_out[t + 1][j] == 0:
                    labels_out[t + 1][j] = next_id
                    next_id += 1
    return TemporalGraph(targets=targets, edges=edges, labels=labels_out)
