"""Composite image features and their pairwise matching energy.

A composite feature bundles one elliptical region with the keypoints that
lie inside it.  Two composite features are compared by a descriptor
distance term plus a geometric term that checks whether matched keypoints
keep their relative order around the region center.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DESCRIPTOR_BINS = 72
MAX_POINTS = 64
DEFAULT_MATCH_THRESHOLD = 0.5
DEFAULT_GEOMETRY_WEIGHT = 0.25


class FeatureError(ValueError):
    """Raised when a feature violates its construction invariants."""


def _check_descriptor(desc: np.ndarray, what: str) -> np.ndarray:
    desc = np.asarray(desc, dtype=np.float64)
    if desc.shape != (DESCRIPTOR_BINS,):
        raise FeatureError(f"{what}: descriptor must have {DESCRIPTOR_BINS} bins, got {desc.shape}")
    if np.any(desc < 0):
        raise FeatureError(f"{what}: descriptor entries must be non-negative")
    total = float(desc.sum())
    if total <= 0.0:
        raise FeatureError(f"{what}: all-zero descriptor rejected")
    if abs(total - 1.0) > 1e-9:
        raise FeatureError(f"{what}: descriptor must sum to 1 (got {total!r})")
    desc.flags.writeable = False
    return desc


@dataclass(frozen=True)
class PointFeature:
    """A keypoint: image position plus a 72-bin orientation descriptor."""

    position: np.ndarray
    descriptor: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (2,):
            raise FeatureError(f"point position must be 2D, got {pos.shape}")
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "descriptor", _check_descriptor(self.descriptor, "point"))


@dataclass(frozen=True)
class RegionFeature:
    """An elliptical region: center, semi-axes, orientation, descriptor."""

    center: np.ndarray
    semi_axes: tuple[float, float]
    orientation: float
    descriptor: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        if center.shape != (2,):
            raise FeatureError(f"region center must be 2D, got {center.shape}")
        center.flags.writeable = False
        a, b = float(self.semi_axes[0]), float(self.semi_axes[1])
        if a <= 0 or b <= 0:
            raise FeatureError(f"region semi-axes must be positive, got ({a}, {b})")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "semi_axes", (a, b))
        object.__setattr__(self, "orientation", float(self.orientation))
        object.__setattr__(self, "descriptor", _check_descriptor(self.descriptor, "region"))

    def contains(self, point: np.ndarray, tol: float = 1e-6) -> bool:
        """True if ``point`` lies inside the ellipse (with small tolerance)."""
        d = np.asarray(point, dtype=np.float64) - self.center
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        u = c * d[0] + s * d[1]
        v = -s * d[0] + c * d[1]
        a, b = self.semi_axes
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0 + tol

    def bounding_box(self) -> tuple[float, float, float, float]:
        """Axis-aligned (xmin, ymin, xmax, ymax) of the ellipse."""
        a, b = self.semi_axes
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        hw = math.hypot(a * c, b * s)
        hh = math.hypot(a * s, b * c)
        cx, cy = self.center
        return (cx - hw, cy - hh, cx + hw, cy + hh)


@dataclass(frozen=True)
class CompositeFeature:
    """One region bundled with the keypoints inside it.

    Invariants: at least one point (regions without keypoints are dropped
    upstream), at most ``MAX_POINTS``, and every point inside the region
    ellipse.
    """

    id: int
    region: RegionFeature
    points: tuple[PointFeature, ...]

    def __post_init__(self):
        points = tuple(self.points)
        if not 1 <= len(points) <= MAX_POINTS:
            raise FeatureError(f"feature {self.id}: needs 1..{MAX_POINTS} points, got {len(points)}")
        for k, p in enumerate(points):
            if not self.region.contains(p.position, tol=1e-6):
                raise FeatureError(f"feature {self.id}: point {k} lies outside the region ellipse")
        object.__setattr__(self, "points", points)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def point_descriptors(self) -> np.ndarray:
        """Stacked (n_points, 72) descriptor matrix."""
        return np.stack([p.descriptor for p in self.points])


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching two composite features.

    ``pairs`` maps point indices of the first argument onto point indices
    of the second; it is a partial injection (no index reused on either
    side).  ``total = e_i + weight * (1 - e_g)`` so that lower is better
    for both terms.
    """

    pairs: tuple[tuple[int, int], ...]
    e_i: float
    e_g: float
    total: float


def independence_energy(a: CompositeFeature, b: CompositeFeature) -> float:
    """Squared Euclidean distance between the two region descriptors."""
    d = a.region.descriptor - b.region.descriptor
    return float(d @ d)


def greedy_point_match(
    a: CompositeFeature,
    b: CompositeFeature,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> list[tuple[int, int]]:
    """Match keypoints of ``a`` onto keypoints of ``b`` greedily.

    Each point of ``a`` is taken in index order and paired with the
    nearest still-unused point of ``b``, provided the squared descriptor
    distance does not exceed ``threshold``.  The result is a partial
    injection; an empty list is a legal outcome.
    """
    da = a.point_descriptors()
    db = b.point_descriptors()
    # squared distances via |x|^2 + |y|^2 - 2 x.y
    sq = (
        np.sum(da * da, axis=1)[:, None]
        + np.sum(db * db, axis=1)[None, :]
        - 2.0 * (da @ db.T)
    )
    np.maximum(sq, 0.0, out=sq)
    used = np.zeros(len(b.points), dtype=bool)
    pairs: list[tuple[int, int]] = []
    for i in range(len(a.points)):
        best_j = -1
        best_d = math.inf
        for j in range(len(b.points)):
            # strict < keeps the lowest index on exact ties
            if not used[j] and sq[i, j] < best_d:
                best_j = j
                best_d = sq[i, j]
        if best_j >= 0 and best_d <= threshold:
            used[best_j] = True
            pairs.append((i, best_j))
    return pairs


def relative_order(f: CompositeFeature) -> np.ndarray:
    """1-based rank of each point by distance from the region center.

    Ties are broken by point index, so the ranks are always a permutation
    of 1..n.
    """
    center = f.region.center
    dists = [float(np.hypot(*(p.position - center))) for p in f.points]
    order = sorted(range(len(dists)), key=lambda i: (dists[i], i))
    ranks = np.empty(len(dists), dtype=np.int64)
    for rank, idx in enumerate(order, start=1):
        ranks[idx] = rank
    return ranks


def configuration_consistency(
    a: CompositeFeature,
    b: CompositeFeature,
    pairs: list[tuple[int, int]] | tuple[tuple[int, int], ...],
    *,
    sigmoid: bool = False,
    sigmoid_slope: float = 1.0,
    sigmoid_offset: float = 0.0,
) -> float:
    """Fraction of matched point pairs that keep their relative order.

    With no matched pairs the consistency is defined as 0 (the worst
    case): descriptor dissimilarity is already charged by the
    independence term, and 0/0 must not silently count as agreement.

    The optional sigmoid flag replaces the exact-agreement indicator with
    ``1 / (1 + exp(slope * |rank_a - rank_b| - offset))`` for a softer
    penalty.
    """
    if not pairs:
        return 0.0
    ra = relative_order(a)
    rb = relative_order(b)
    score = 0.0
    for i, j in pairs:
        diff = abs(int(ra[i]) - int(rb[j]))
        if sigmoid:
            score += 1.0 / (1.0 + math.exp(sigmoid_slope * diff - sigmoid_offset))
        else:
            score += 1.0 if diff == 0 else 0.0
    return score / len(pairs)


def composite_energy(
    a: CompositeFeature,
    b: CompositeFeature,
    weight: float = DEFAULT_GEOMETRY_WEIGHT,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    *,
    sigmoid: bool = False,
    sigmoid_slope: float = 1.0,
    sigmoid_offset: float = 0.0,
) -> MatchResult:
    """Combined matching energy of two composite features.

    ``total = E_ind + weight * (1 - E_geo)``: the descriptor term is a
    distance (lower = more similar) while the order-consistency term is a
    similarity in [0, 1], so it enters as ``1 - E_geo`` to make the whole
    energy a cost.  Greedy matching always runs from the feature with the
    lexicographically smaller id so the result is symmetric.
    """
    if weight < 0:
        raise FeatureError(f"geometry weight must be >= 0, got {weight}")
    flip = str(a.id) > str(b.id)
    first, second = (b, a) if flip else (a, b)
    raw_pairs = greedy_point_match(first, second, threshold)
    e_i = independence_energy(a, b)
    e_g = configuration_consistency(
        first, second, raw_pairs,
        sigmoid=sigmoid, sigmoid_slope=sigmoid_slope, sigmoid_offset=sigmoid_offset,
    )
    if flip:
        pairs = tuple(sorted((i, j) for (j, i) in raw_pairs))
    else:
        pairs = tuple(raw_pairs)
    total = e_i + weight * (1.0 - e_g)
    return MatchResult(pairs=pairs, e_i=e_i, e_g=e_g, total=total)
