"""Algorithm-level knobs shared across graph construction, energies, and sampling."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace


@dataclass(frozen=True)
class TrackerConfig:
    """Tunable constants of the tracker.

    Scene-specific knowledge (camera geometry, path model, densities)
    lives in ``SceneModel``; everything algorithmic is here.
    """

    # composite feature matching
    geometry_weight: float = 0.25       # weight of the order-consistency term
    match_threshold: float = 0.5        # squared descriptor distance gate for point pairs
    order_sigmoid: bool = False
    order_sigmoid_slope: float = 1.0
    order_sigmoid_offset: float = 0.0

    # appearance histograms and edge probabilities
    histogram_floor: float = 1e-4       # additive smoothing before renormalization
    edge_temperature: float = 1.0       # temperature of the edge turn-on probability
    qe_clamp: float = 1e-6              # q_e kept inside [clamp, 1-clamp]
    flow_still_threshold: float = 0.5   # |flow| below this lands in the zero-motion bin

    # spatial graph adjacency (mutual k-nearest neighbors under a radius cap)
    spatial_neighbors: int = 4
    spatial_radius_factor: float = 3.0  # cap = factor * mean region major axis

    # temporal candidate gating
    gate_factor: float = 2.0            # centers within factor * max box diagonal

    # energy model
    false_alarm_cost: float = 0.5       # per-vertex cost of unexplained foreground
    horizon_miss_cost: float = 50.0     # size-prior charge when a box has no ground-plane solution

    # development aid: after every delta update, recompute the full energy and compare
    debug_energy_checks: bool = False

    def replace(self, **kw) -> "TrackerConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tracker config keys: {sorted(unknown)}")
        return cls(**d)
