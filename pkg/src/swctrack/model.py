"""Solution representation, scene priors, likelihood, and posterior energy.

The solution couples a per-frame partition of composite features into
targets (label 0 = false alarm) with trajectory ids linking targets
across frames.  Trajectory id 0 marks a target as an unexplained
false-alarm region; positive ids form "cables": contiguous per-frame
target chains with a birth and a death frame.

Energies are negative log probabilities, so lower is better everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrackerConfig
from .features import composite_energy
from .graphs import (
    FeatureHistogram,
    SpatialGraph,
    Target,
    edge_probability,
    target_box,
    target_histogram,
)

DENSITY_GRID = 16
SHAPE_SAMPLES = 32


class SceneModelError(ValueError):
    """Raised for invalid scene geometry or queries off the ground plane."""


def normalize_density(grid: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """Floor-smooth and renormalize a spatial density grid to sum 1."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or np.any(g < 0):
        raise SceneModelError("density grid must be a 2D non-negative array")
    total = g.sum()
    g = g / total if total > 0 else np.full_like(g, 1.0 / g.size)
    g = g + floor
    g = g / g.sum()
    g.flags.writeable = False
    return g


@dataclass
class SceneModel:
    """Camera geometry, path statistics, and prior switches for one scene.

    The horizon is the line a*x + b*y + c = 0; the vertical vanishing
    point may be None, meaning verticals in the image stay vertical.
    Birth/death densities are normalized grids over the image; None means
    uniform.  Setting a ``*_uniform`` flag disables that prior entirely.
    """

    image_size: tuple[int, int] = (352, 288)
    horizon: tuple[float, float, float] = (0.0, 1.0, -40.0)
    vertical_vanishing: np.ndarray | None = None
    camera_height: float = 4.5
    target_height: float = 1.6
    size_sigma: float = math.log(1.3)
    aspect_ratio: float = 0.4
    path_model: list[np.ndarray] = field(default_factory=list)
    birth_density: np.ndarray | None = None
    death_density: np.ndarray | None = None
    epsilon: float = 0.135
    partition_uniform: bool = False
    matching_uniform: bool = False

    def __post_init__(self):
        if not 0 < self.target_height < self.camera_height:
            raise SceneModelError(
                f"need 0 < target height < camera height, got "
                f"{self.target_height} vs {self.camera_height}")
        if self.size_sigma <= 0 or self.epsilon < 0:
            raise SceneModelError("size_sigma must be > 0 and epsilon >= 0")
        if abs(self.horizon[1]) < 1e-12:
            raise SceneModelError("vertical horizon lines are not supported")
        if self.vertical_vanishing is not None:
            self.vertical_vanishing = np.asarray(self.vertical_vanishing, dtype=np.float64)
        self.path_model = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in self.path_model]
        if self.birth_density is not None:
            self.birth_density = normalize_density(self.birth_density)
        if self.death_density is not None:
            self.death_density = normalize_density(self.death_density)

    def horizon_y(self, x: float) -> float:
        a, b, c = self.horizon
        return -(a * x + c) / b

    def height_ratio(self) -> float:
        """The invariant ratio target_height / (camera_height - target_height)."""
        return self.target_height / (self.camera_height - self.target_height)

    def _density_term(self, grid: np.ndarray | None, point: np.ndarray) -> float:
        # energy relative to a uniform density: uniform grids cost exactly 0
        if grid is None:
            return 0.0
        w, h = self.image_size
        gy, gx = grid.shape
        cx = min(max(int(point[0] / w * gx), 0), gx - 1)
        cy = min(max(int(point[1] / h * gy), 0), gy - 1)
        return -math.log(grid[cy, cx] * grid.size)

    def birth_term(self, point: np.ndarray) -> float:
        return self._density_term(self.birth_density, point)

    def death_term(self, point: np.ndarray) -> float:
        return self._density_term(self.death_density, point)


def predict_size(scene: SceneModel, x: float, y: float) -> tuple[float, float]:
    """Expected (height, width) in pixels of a target standing at ground
    point (x, y).

    Intersects the vertical through the foot point with the horizon and
    solves the cross-ratio relation ``(BC/BA) / (DC/DA) = h_p/(h_c-h_p)``
    for the image height BC (B the head, C the foot, A on the horizon,
    D the vertical vanishing point).  Width follows the aspect ratio.
    """
    ratio = scene.height_ratio()
    if scene.vertical_vanishing is None:
        y_a = scene.horizon_y(x)
        if y <= y_a:
            raise SceneModelError("no ground-plane solution: point not below the horizon")
        rho = ratio
        span = y - y_a
    else:
        d = scene.vertical_vanishing
        c = np.array([x, y], dtype=np.float64)
        # intersection of line C-D with the horizon line
        ha, hb, hc = scene.horizon
        direction = d - c
        denom = ha * direction[0] + hb * direction[1]
        if abs(denom) < 1e-12:
            raise SceneModelError("no ground-plane solution: vertical is parallel to the horizon")
        s = -(ha * c[0] + hb * c[1] + hc) / denom
        a_pt = c + s * direction
        if y <= a_pt[1]:
            raise SceneModelError("no ground-plane solution: point not below the horizon")
        dc = float(np.linalg.norm(d - c))
        da = float(np.linalg.norm(d - a_pt))
        if da < 1e-12:
            raise SceneModelError("degenerate geometry: vanishing point on the horizon")
        rho = ratio * dc / da
        span = float(np.linalg.norm(c - a_pt))
    height = rho * span / (1.0 + rho)
    if height <= 0 or not math.isfinite(height):
        raise SceneModelError("no ground-plane solution: non-positive predicted size")
    return height, scene.aspect_ratio * height


def size_prior_energy(box: np.ndarray, scene: SceneModel, config: TrackerConfig) -> float:
    """Log-normal size penalty of a box against the location-size prediction.

    The prediction is evaluated at the box foot (bottom-center).  Boxes
    whose foot has no ground-plane solution get a flat miss cost instead
    of an error so sampling stays total.
    """
    cx, cy, w, h = float(box[0]), float(box[1]), float(box[2]), float(box[3])
    try:
        exp_h, exp_w = predict_size(scene, cx, cy + h / 2.0)
    except SceneModelError:
        return config.horizon_miss_cost
    two_var = 2.0 * scene.size_sigma ** 2
    return (math.log(h / exp_h) ** 2 + math.log(w / exp_w) ** 2) / two_var


def resample_polyline(points: np.ndarray, samples: int = SHAPE_SAMPLES) -> np.ndarray:
    """Resample a polyline to ``samples`` points uniformly by arc length."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("polyline needs at least 2 points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] <= 0:
        raise ValueError("degenerate polyline: zero arc length")
    targets = np.linspace(0.0, arc[-1], samples)
    out = np.empty((samples, 2))
    out[:, 0] = np.interp(targets, arc, pts[:, 0])
    out[:, 1] = np.interp(targets, arc, pts[:, 1])
    return out


def trajectory_shape_distance(poly_a: np.ndarray, poly_b: np.ndarray) -> float:
    """Similarity-invariant shape distance between two trajectories in [0, 1].

    Both curves are resampled by arc length, translated to their centroid,
    scaled to unit RMS radius, and aligned by the optimal rotation; the
    residual RMS distance d is mapped to d / (1 + d).
    """
    a = resample_polyline(poly_a)
    b = resample_polyline(poly_b)
    a -= a.mean(axis=0)
    b -= b.mean(axis=0)
    na = math.sqrt(float(np.sum(a * a)) / len(a))
    nb = math.sqrt(float(np.sum(b * b)) / len(b))
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("degenerate polyline: all points identical")
    a /= na
    b /= nb
    # optimal rotation of b onto a (no reflection)
    m00 = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
    m10 = float(np.sum(a[:, 1] * b[:, 0] - a[:, 0] * b[:, 1]))
    theta = math.atan2(m10, m00)
    c, s = math.cos(theta), math.sin(theta)
    rx = c * b[:, 0] - s * b[:, 1]
    ry = s * b[:, 0] + c * b[:, 1]
    d = math.sqrt(float(np.mean((a[:, 0] - rx) ** 2 + (a[:, 1] - ry) ** 2)))
    return d / (1.0 + d)


@dataclass(frozen=True)
class Cable:
    """One recovered trajectory: birth/death frames plus a target per frame."""

    id: int
    birth: int
    death: int
    targets: tuple[Target, ...]

    def __post_init__(self):
        if self.id < 1:
            raise ValueError("cable ids start at 1 (0 is the false-alarm pool)")
        if self.birth > self.death or len(self.targets) != self.death - self.birth + 1:
            raise ValueError("cable must hold one target per frame from birth to death")

    @property
    def length(self) -> int:
        return self.death - self.birth + 1

    def polyline(self) -> np.ndarray:
        return np.array([t.box[:2] for t in self.targets])


class SolutionError(ValueError):
    """Raised when a solution mutation would violate an invariant."""


class Solution:
    """Joint partition-and-matching state over a window of frames.

    labels[t]   int array, one spatial label per vertex (0 = false alarm)
    boxes[t]    dict label -> (cx, cy, w, h) for every target in frame t
    traj[t]     dict label -> trajectory id (0 = false-alarm target), or
                None while the temporal layer is not yet built for frame t
    """

    def __init__(self, labels, boxes, traj, next_traj_id: int = 1):
        self.labels: list[np.ndarray] = [np.asarray(l, dtype=np.int64) for l in labels]
        self.boxes: list[dict[int, np.ndarray]] = [dict(b) for b in boxes]
        self.traj: list[dict[int, int] | None] = [None if t is None else dict(t) for t in traj]
        self.next_label: list[int] = [max(b.keys(), default=0) + 1 for b in self.boxes]
        self.next_traj_id = next_traj_id
        self.traj_index: dict[int, dict[int, int]] = {}
        self.fa_count: list[int] = [0] * len(self.labels)
        for t, tmap in enumerate(self.traj):
            if tmap:
                for lab, tid in tmap.items():
                    if tid > 0:
                        self.traj_index.setdefault(tid, {})[t] = lab
                        self.next_traj_id = max(self.next_traj_id, tid + 1)
                    else:
                        self.fa_count[t] += 1
        self._members: list[dict[int, tuple[int, ...]]] = []
        for arr in self.labels:
            frame_members: dict[int, list[int]] = {}
            for i, lab in enumerate(arr):
                frame_members.setdefault(int(lab), []).append(i)
            self._members.append({lab: tuple(v) for lab, v in frame_members.items()})
        self._frame_version: list[int] = [0] * len(self.labels)
        self._canon_cache: list[tuple[int, tuple, dict] | None] = [None] * len(self.labels)

    # ------------------------------------------------------------------ basics

    @classmethod
    def empty(cls, graphs: list[SpatialGraph], temporal: bool = True) -> "Solution":
        n = len(graphs)
        labels = [np.zeros(g.n_vertices, dtype=np.int64) for g in graphs]
        traj = [dict() if temporal else None for _ in range(n)]
        return cls(labels, [dict() for _ in range(n)], traj)

    @property
    def n_frames(self) -> int:
        return len(self.labels)

    def K(self, t: int) -> int:
        return len(self.boxes[t])

    def target_labels(self, t: int):
        return self.boxes[t].keys()

    def members(self, t: int, label: int) -> tuple[int, ...]:
        return self._members[t].get(label, ())

    def traj_id(self, t: int, label: int) -> int | None:
        tmap = self.traj[t]
        return None if tmap is None else tmap.get(label, 0)

    def cable_span(self, tid: int) -> tuple[int, int]:
        frames = self.traj_index[tid]
        return min(frames), max(frames)

    def clone(self) -> "Solution":
        return Solution(
            [l.copy() for l in self.labels],
            [{k: v.copy() for k, v in b.items()} for b in self.boxes],
            [None if t is None else dict(t) for t in self.traj],
            self.next_traj_id,
        )

    # ------------------------------------------------------------------ moves

    def apply_spatial(self, t: int, cc, new_label: int, graph: SpatialGraph) -> dict:
        """Relabel the vertex set ``cc`` in frame t.  ``new_label`` may be 0,
        an existing label, or ``next_label[t]`` for a fresh target.

        Returns an undo record.  The caller is responsible for validity
        (connectivity, dissolution rules); this only performs bookkeeping.
        """
        cc = np.asarray(cc, dtype=np.int64)
        old_label = int(self.labels[t][cc[0]])
        new_label = int(new_label)
        tmap = self.traj[t]
        frame_members = self._members[t]
        old_members = frame_members.get(old_label, ())
        if len(old_members) == len(cc) and old_label != 0 \
                and tmap is not None and tmap.get(old_label, 0) > 0:
            raise SolutionError(
                f"frame {t}: cannot dissolve target {old_label} while it "
                f"belongs to trajectory {tmap[old_label]}")
        undo = {
            "t": t, "cc": cc, "old_label": old_label, "new_label": new_label,
            "old_boxes": {}, "old_traj": {}, "created": False, "dissolved": False,
            "old_next_label": self.next_label[t],
            "old_members": {old_label: old_members,
                            new_label: frame_members.get(new_label, ())},
        }
        self.labels[t][cc] = new_label
        cc_set = set(int(v) for v in cc)
        remaining = tuple(v for v in old_members if v not in cc_set)
        joined = tuple(sorted(set(undo["old_members"][new_label]) | cc_set))
        if remaining:
            frame_members[old_label] = remaining
        else:
            frame_members.pop(old_label, None)
        frame_members[new_label] = joined
        self._frame_version[t] += 1
        if old_label != 0:
            undo["old_boxes"][old_label] = self.boxes[t][old_label]
            if remaining:
                self.boxes[t][old_label] = target_box(graph, remaining)
            else:
                undo["dissolved"] = True
                del self.boxes[t][old_label]
                if tmap is not None:
                    undo["old_traj"][old_label] = tmap.pop(old_label)
                    self.fa_count[t] -= 1
        if new_label != 0:
            if new_label in self.boxes[t]:
                undo["old_boxes"][new_label] = self.boxes[t][new_label]
            else:
                undo["created"] = True
                self.next_label[t] = max(self.next_label[t], new_label + 1)
                if tmap is not None:
                    tmap[new_label] = 0
                    self.fa_count[t] += 1
            self.boxes[t][new_label] = target_box(graph, joined)
        return undo

    def revert_spatial(self, undo: dict) -> None:
        t = undo["t"]
        self.labels[t][undo["cc"]] = undo["old_label"]
        new_label = undo["new_label"]
        old_label = undo["old_label"]
        tmap = self.traj[t]
        frame_members = self._members[t]
        for lab in (old_label, new_label):
            prior = undo["old_members"][lab]
            if prior:
                frame_members[lab] = prior
            else:
                frame_members.pop(lab, None)
        self._frame_version[t] += 1
        if new_label != 0:
            if undo["created"]:
                del self.boxes[t][new_label]
                if tmap is not None:
                    del tmap[new_label]
                    self.fa_count[t] -= 1
            else:
                self.boxes[t][new_label] = undo["old_boxes"][new_label]
        if old_label != 0:
            self.boxes[t][old_label] = undo["old_boxes"][old_label]
            if undo["dissolved"] and tmap is not None:
                tmap[old_label] = undo["old_traj"][old_label]
                self.fa_count[t] += 1
        self.next_label[t] = undo["old_next_label"]

    def _reassign(self, changes: list[tuple[int, int, int]]) -> None:
        # two phases so swaps (exchanging ids within one frame) cannot
        # clobber the trajectory index mid-update
        for t, lab, _ in changes:
            old_id = self.traj[t][lab]
            if old_id > 0:
                frames = self.traj_index[old_id]
                del frames[t]
                if not frames:
                    del self.traj_index[old_id]
            else:
                self.fa_count[t] -= 1
        for t, lab, new_id in changes:
            self.traj[t][lab] = new_id
            if new_id > 0:
                self.traj_index.setdefault(new_id, {})[t] = lab
                self.next_traj_id = max(self.next_traj_id, new_id + 1)
            else:
                self.fa_count[t] += 1

    def apply_temporal(self, assignments: list[tuple[int, int, int]]) -> dict:
        """Assign trajectory ids: each entry is (frame, label, new_id)."""
        undo = {"assignments": []}
        for t, lab, _ in assignments:
            tmap = self.traj[t]
            if tmap is None or lab not in tmap:
                raise SolutionError(f"no target (frame {t}, label {lab}) to reassign")
            undo["assignments"].append((t, lab, tmap[lab]))
        self._reassign(assignments)
        return undo

    def revert_temporal(self, undo: dict) -> None:
        self._reassign(undo["assignments"])

    # ------------------------------------------------------------------ views

    def matchings(self) -> list[dict[int, int]]:
        """Per frame-pair correspondence maps label@t -> label@t+1."""
        out = []
        for t in range(self.n_frames - 1):
            phi: dict[int, int] = {}
            ta, tb = self.traj[t], self.traj[t + 1]
            if ta and tb:
                by_id = {tid: lab for lab, tid in tb.items() if tid > 0}
                for lab, tid in ta.items():
                    if tid > 0 and tid in by_id:
                        phi[lab] = by_id[tid]
            out.append(phi)
        return out

    def to_cables(self, graphs: list[SpatialGraph]) -> list[Cable]:
        cables = []
        for tid in sorted(self.traj_index):
            frames = self.traj_index[tid]
            birth, death = min(frames), max(frames)
            if set(frames) != set(range(birth, death + 1)):
                raise SolutionError(f"trajectory {tid} is not frame-contiguous")
            targets = []
            for t in range(birth, death + 1):
                lab = frames[t]
                targets.append(Target(
                    frame=t, label=lab, members=self.members(t, lab),
                    box=self.boxes[t][lab],
                ))
            cables.append(Cable(id=tid, birth=birth, death=death, targets=tuple(targets)))
        return cables

    def false_alarm_targets(self) -> list[tuple[int, int]]:
        """(frame, label) of every target currently marked as false alarm."""
        out = []
        for t, tmap in enumerate(self.traj):
            if tmap:
                out.extend((t, lab) for lab, tid in tmap.items() if tid == 0)
        return out

    @classmethod
    def from_cables(
        cls,
        cables: list[Cable],
        false_alarms: list[tuple[int, int, tuple[int, ...], np.ndarray]],
        n_frames: int,
        n_vertices: list[int],
    ) -> "Solution":
        """Rebuild a solution from cables plus false-alarm targets.

        ``false_alarms`` entries are (frame, label, members, box); vertices
        in no target at all become spatial false alarms (label 0).
        """
        labels = [np.zeros(n, dtype=np.int64) for n in n_vertices]
        boxes: list[dict[int, np.ndarray]] = [dict() for _ in range(n_frames)]
        traj: list[dict[int, int]] = [dict() for _ in range(n_frames)]
        for cable in cables:
            for tgt in cable.targets:
                labels[tgt.frame][list(tgt.members)] = tgt.label
                boxes[tgt.frame][tgt.label] = np.asarray(tgt.box, dtype=np.float64)
                traj[tgt.frame][tgt.label] = cable.id
        for t, lab, members, box in false_alarms:
            labels[t][list(members)] = lab
            boxes[t][lab] = np.asarray(box, dtype=np.float64)
            traj[t][lab] = 0
        return cls(labels, boxes, traj)

    def _canon_frame(self, t: int) -> tuple[tuple, dict]:
        cached = self._canon_cache[t]
        if cached is not None and cached[0] == self._frame_version[t]:
            return cached[1], cached[2]
        mapping: dict[int, int] = {}
        part = []
        for lab in self.labels[t]:
            lab = int(lab)
            if lab == 0:
                part.append(0)
            else:
                if lab not in mapping:
                    mapping[lab] = len(mapping) + 1
                part.append(mapping[lab])
        result = (tuple(part), mapping)
        self._canon_cache[t] = (self._frame_version[t], result[0], mapping)
        return result

    def canonical_key(self):
        """Hashable label-pattern key: partitions with canonical target
        numbering, cross-frame links, and false-alarm marks."""
        frames_part = []
        canon_maps = []
        for t in range(self.n_frames):
            part, mapping = self._canon_frame(t)
            frames_part.append(part)
            canon_maps.append(mapping)
        links = []
        fa_marks = []
        for t, tmap in enumerate(self.traj):
            if tmap is None:
                continue
            for lab, tid in tmap.items():
                if tid == 0:
                    fa_marks.append((t, canon_maps[t][lab]))
        for tid, frames in self.traj_index.items():
            ordered = sorted(frames)
            for a, b in zip(ordered, ordered[1:]):
                links.append((a, canon_maps[a][frames[a]], canon_maps[b][frames[b]]))
        return (tuple(frames_part), tuple(sorted(links)), tuple(sorted(fa_marks)))

    def validate(self, graphs: list[SpatialGraph]) -> None:
        """Check every structural invariant; raises SolutionError on failure."""
        for t, graph in enumerate(graphs):
            labs = set(int(x) for x in self.labels[t]) - {0}
            if labs != set(self.boxes[t].keys()):
                raise SolutionError(f"frame {t}: labels {labs} vs boxes {set(self.boxes[t])}")
            tmap = self.traj[t]
            if tmap is not None and set(tmap.keys()) != labs:
                raise SolutionError(f"frame {t}: trajectory map out of sync")
            for lab in labs:
                members = self.members(t, lab)
                expected = target_box(graph, members)
                if not np.allclose(expected, self.boxes[t][lab]):
                    raise SolutionError(f"frame {t} target {lab}: stale box")
                if not _connected(graph, members):
                    raise SolutionError(f"frame {t} target {lab}: members not connected")
            if tmap is not None:
                seen = [tid for tid in tmap.values() if tid > 0]
                if len(seen) != len(set(seen)):
                    raise SolutionError(f"frame {t}: duplicate trajectory id")
        for tid, frames in self.traj_index.items():
            birth, death = min(frames), max(frames)
            if set(frames) != set(range(birth, death + 1)):
                raise SolutionError(f"trajectory {tid} not contiguous")
            for t, lab in frames.items():
                if self.traj[t].get(lab) != tid:
                    raise SolutionError(f"trajectory index out of sync at ({t}, {lab})")


def _connected(graph: SpatialGraph, members) -> bool:
    members = set(members)
    if not members:
        return False
    start = next(iter(members))
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for u, _ in graph.adjacency[v]:
            if u in members and u not in seen:
                seen.add(u)
                stack.append(u)
    return seen == members


class WindowData:
    """Immutable per-window observation bundle with lazy match-cost caches.

    Owns the spatial graphs of the window plus memo tables for pairwise
    composite-feature energies, per-target histograms, and target-to-
    target match costs.  One instance belongs to one sampling context.
    """

    def __init__(self, graphs: list[SpatialGraph], config: TrackerConfig = TrackerConfig()):
        self.graphs = graphs
        self.config = config
        self.frames = [g.frame for g in graphs]
        self.fg = [np.array([v.foreground_fit for v in g.vertices], dtype=np.float64)
                   for g in graphs]
        self.fg_totals = [float(f.sum()) for f in self.fg]
        self._pair_memo: list[dict[tuple[int, int], float]] = [dict() for _ in graphs[:-1]]
        self._match_memo: dict = {}
        self._thist_memo: dict = {}
        self._qe_memo: dict = {}
        self._fg_memo: dict = {}

    def fg_sum(self, t: int, members: tuple[int, ...]) -> float:
        key = (t, members)
        val = self._fg_memo.get(key)
        if val is None:
            val = float(self.fg[t][list(members)].sum())
            self._fg_memo[key] = val
        return val

    @property
    def n_frames(self) -> int:
        return len(self.graphs)

    def pair_energy(self, t: int, i: int, j: int) -> float:
        """Composite energy between feature i of frame t and j of frame t+1."""
        memo = self._pair_memo[t]
        key = (i, j)
        val = memo.get(key)
        if val is None:
            cfg = self.config
            val = composite_energy(
                self.graphs[t].vertices[i].feature,
                self.graphs[t + 1].vertices[j].feature,
                weight=cfg.geometry_weight, threshold=cfg.match_threshold,
                sigmoid=cfg.order_sigmoid, sigmoid_slope=cfg.order_sigmoid_slope,
                sigmoid_offset=cfg.order_sigmoid_offset,
            ).total
            memo[key] = val
        return val

    def match_cost(self, t: int, members_a: tuple[int, ...], members_b: tuple[int, ...]) -> float:
        """Greedy best-pairs matching cost between two member sets, divided
        by the first set's size (the appearance-consistency term)."""
        key = (t, members_a, members_b)
        val = self._match_memo.get(key)
        if val is None:
            pairs = sorted(
                (self.pair_energy(t, i, j), i, j)
                for i in members_a for j in members_b
            )
            used_a: set[int] = set()
            used_b: set[int] = set()
            total = 0.0
            want = min(len(members_a), len(members_b))
            for e, i, j in pairs:
                if i in used_a or j in used_b:
                    continue
                used_a.add(i)
                used_b.add(j)
                total += e
                if len(used_a) == want:
                    break
            val = total / len(members_a)
            self._match_memo[key] = val
        return val

    def target_hist(self, t: int, members: tuple[int, ...]) -> FeatureHistogram:
        key = (t, members)
        val = self._thist_memo.get(key)
        if val is None:
            val = target_histogram(self.graphs[t], members)
            self._thist_memo[key] = val
        return val

    def temporal_qe(self, t_a: int, members_a: tuple[int, ...],
                    t_b: int, members_b: tuple[int, ...]) -> float:
        key = (t_a, members_a, t_b, members_b)
        val = self._qe_memo.get(key)
        if val is None:
            val = edge_probability(
                self.target_hist(t_a, members_a), self.target_hist(t_b, members_b),
                self.config.edge_temperature, self.config.qe_clamp,
            )
            self._qe_memo[key] = val
        return val


# ---------------------------------------------------------------------- energies


def _unexplained_vertex_mask(solution: Solution, t: int) -> np.ndarray:
    """Vertices charged as false alarms: spatial label 0, plus members of
    targets whose trajectory id is 0 (regions kept out of every cable)."""
    labels = solution.labels[t]
    mask = labels == 0
    tmap = solution.traj[t]
    if tmap:
        for lab, tid in tmap.items():
            if tid == 0:
                mask |= labels == lab
    return mask


def partition_prior_energy(
    solution: Solution,
    scene: SceneModel,
    config: TrackerConfig = TrackerConfig(),
) -> float:
    """Location-size prior over claimed targets plus the constant
    per-vertex false-alarm cost for unexplained foreground."""
    if scene.partition_uniform:
        return 0.0
    total = 0.0
    for t in range(solution.n_frames):
        total += config.false_alarm_cost * float(np.count_nonzero(_unexplained_vertex_mask(solution, t)))
        tmap = solution.traj[t]
        for lab, box in solution.boxes[t].items():
            if tmap is None or tmap.get(lab, 0) > 0:
                total += size_prior_energy(box, scene, config)
    return total


def cable_prior_term(
    polyline: np.ndarray,
    birth: int,
    death: int,
    n_frames: int,
    scene: SceneModel,
) -> float:
    """Birth/death density cost plus shape distance to the path model for
    one cable.  Cables touching a window edge skip the corresponding
    density term (a truncated trajectory is not a true birth or death);
    the shape term needs at least 3 frames and a non-empty path model."""
    if scene.matching_uniform:
        return 0.0
    total = 0.0
    if birth > 0:
        total += scene.birth_term(polyline[0])
    if death < n_frames - 1:
        total += scene.death_term(polyline[-1])
    if death - birth + 1 >= 3 and scene.path_model:
        best = min(trajectory_shape_distance(polyline, ref) for ref in scene.path_model)
        total += best - scene.epsilon
    return total


def matching_prior_energy(
    cables: list[Cable],
    scene: SceneModel,
    n_frames: int,
) -> float:
    """Sum of per-cable birth/death/shape prior terms."""
    return sum(
        cable_prior_term(c.polyline(), c.birth, c.death, n_frames, scene)
        for c in cables
    )


def likelihood_energy(
    solution: Solution,
    window: WindowData,
    config: TrackerConfig = TrackerConfig(),
) -> float:
    """Foreground-fit cost of unexplained vertices plus the appearance
    consistency cost along every cable."""
    total = 0.0
    for t in range(solution.n_frames):
        mask = _unexplained_vertex_mask(solution, t)
        if mask.any():
            total += float(window.fg[t][mask].sum())
    for tid, frames in solution.traj_index.items():
        ordered = sorted(frames)
        for t in ordered[:-1]:
            members_a = solution.members(t, frames[t])
            members_b = solution.members(t + 1, frames[t + 1])
            total += window.match_cost(t, members_a, members_b)
    return total


def posterior_energy(
    solution: Solution,
    window: WindowData,
    scene: SceneModel,
    config: TrackerConfig = TrackerConfig(),
) -> float:
    """Total negative log posterior: partition prior + matching prior +
    likelihood."""
    cables = solution.to_cables(window.graphs)
    return (
        partition_prior_energy(solution, scene, config)
        + matching_prior_energy(cables, scene, solution.n_frames)
        + likelihood_energy(solution, window, config)
    )


class EnergyState:
    """Decomposed posterior energy with delta updates and undo.

    Keeps one term per frame (false-alarm + size prior + foreground fit)
    and one term per cable (birth/death/shape prior + appearance
    consistency).  Moves recompute only the touched terms; with
    ``config.debug_energy_checks`` every delta is verified against a full
    recomputation.
    """

    def __init__(self, window: WindowData, solution: Solution,
                 scene: SceneModel, config: TrackerConfig = TrackerConfig()):
        self.window = window
        self.solution = solution
        self.scene = scene
        self.config = config
        self._size_memo: dict = {}
        self.frame_terms = np.array([self._frame_term(t) for t in range(solution.n_frames)])
        self.cable_terms = {tid: self._cable_term(tid) for tid in solution.traj_index}
        self.total = float(self.frame_terms.sum()) + sum(self.cable_terms.values())

    # term evaluation ----------------------------------------------------

    def _size_term(self, t: int, members: tuple[int, ...], box: np.ndarray) -> float:
        key = (t, members)
        val = self._size_memo.get(key)
        if val is None:
            val = size_prior_energy(box, self.scene, self.config)
            self._size_memo[key] = val
        return val

    def _frame_term(self, t: int) -> float:
        sol, scene, config = self.solution, self.scene, self.config
        window = self.window
        fg_unexplained = window.fg_totals[t]
        n_unexplained = window.graphs[t].n_vertices
        size_total = 0.0
        tmap = sol.traj[t]
        for lab, box in sol.boxes[t].items():
            if tmap is None or tmap.get(lab, 0) > 0:
                members = sol.members(t, lab)
                fg_unexplained -= window.fg_sum(t, members)
                n_unexplained -= len(members)
                if not scene.partition_uniform:
                    size_total += self._size_term(t, members, box)
        term = fg_unexplained
        if not scene.partition_uniform:
            term += config.false_alarm_cost * n_unexplained + size_total
        return term

    def _cable_term(self, tid: int) -> float:
        sol = self.solution
        frames = sol.traj_index[tid]
        ordered = sorted(frames)
        birth, death = ordered[0], ordered[-1]
        polyline = np.array([sol.boxes[t][frames[t]][:2] for t in ordered])
        term = cable_prior_term(polyline, birth, death, sol.n_frames, self.scene)
        for t in ordered[:-1]:
            term += self.window.match_cost(
                t, sol.members(t, frames[t]), sol.members(t + 1, frames[t + 1]))
        return term

    def full_energy(self) -> float:
        """Independent full recomputation (the debug reference path)."""
        return posterior_energy(self.solution, self.window, self.scene, self.config)

    # move application ---------------------------------------------------

    def _affected_tids_spatial(self, t: int, labels: tuple[int, ...]):
        tids = set()
        tmap = self.solution.traj[t]
        if tmap:
            for lab in labels:
                tid = tmap.get(lab, 0)
                if tid > 0:
                    tids.add(tid)
        return tids

    def apply_spatial(self, t: int, cc, new_label: int) -> tuple[float, dict]:
        sol = self.solution
        old_label = int(sol.labels[t][cc[0]])
        tids = self._affected_tids_spatial(t, (old_label, new_label))
        sol_undo = sol.apply_spatial(t, cc, new_label, self.window.graphs[t])
        undo = {
            "kind": "spatial", "sol": sol_undo, "total": self.total,
            "frames": {t: self.frame_terms[t]},
            "cables": {tid: self.cable_terms.get(tid) for tid in tids},
        }
        self.frame_terms[t] = self._frame_term(t)
        for tid in tids:
            self.cable_terms[tid] = self._cable_term(tid)
        new_total = float(self.frame_terms.sum()) + sum(self.cable_terms.values())
        delta = new_total - undo["total"]
        self.total = new_total
        self._debug_check()
        return delta, undo

    def apply_temporal(self, assignments: list[tuple[int, int, int]]) -> tuple[float, dict]:
        sol = self.solution
        tids = set()
        frames = set()
        for t, lab, new_id in assignments:
            frames.add(t)
            old_id = sol.traj[t].get(lab, 0)
            if old_id > 0:
                tids.add(old_id)
            if new_id > 0:
                tids.add(new_id)
        sol_undo = sol.apply_temporal(assignments)
        undo = {
            "kind": "temporal", "sol": sol_undo, "total": self.total,
            "frames": {t: self.frame_terms[t] for t in frames},
            "cables": {tid: self.cable_terms.get(tid) for tid in tids},
        }
        for t in frames:
            self.frame_terms[t] = self._frame_term(t)
        for tid in tids:
            if tid in sol.traj_index:
                self.cable_terms[tid] = self._cable_term(tid)
            else:
                self.cable_terms.pop(tid, None)
        new_total = float(self.frame_terms.sum()) + sum(self.cable_terms.values())
        delta = new_total - undo["total"]
        self.total = new_total
        self._debug_check()
        return delta, undo

    def revert(self, undo: dict) -> None:
        if undo["kind"] == "spatial":
            self.solution.revert_spatial(undo["sol"])
        else:
            self.solution.revert_temporal(undo["sol"])
        for t, val in undo["frames"].items():
            self.frame_terms[t] = val
        for tid, val in undo["cables"].items():
            if val is None:
                self.cable_terms.pop(tid, None)
            else:
                self.cable_terms[tid] = val
        self.total = undo["total"]

    def _debug_check(self) -> None:
        if self.config.debug_energy_checks:
            reference = self.full_energy()
            if abs(reference - self.total) > 1e-9 * max(1.0, abs(reference)):
                raise AssertionError(
                    f"energy ledger drifted: delta path {self.total} vs full {reference}")
