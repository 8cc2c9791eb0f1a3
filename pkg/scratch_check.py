"""Scratch validation: tiny instance, ledger vs full energy, chain vs enumeration."""
import itertools
import math

import numpy as np

from swctrack.config import TrackerConfig
from swctrack.features import CompositeFeature, PointFeature, RegionFeature
from swctrack.graphs import FeatureMeasurements, build_spatial_graph
from swctrack.model import (EnergyState, SceneModel, Solution, WindowData,
                            posterior_energy)
from swctrack.sampler import RngState, SamplerState, spatial_step, temporal_step

rng = np.random.default_rng(7)


def random_descriptor():
    d = rng.random(72)
    d /= d.sum()
    return d


def make_feature(fid, x, y):
    region = RegionFeature(center=(x, y), semi_axes=(8, 12), orientation=0.0,
                           descriptor=random_descriptor())
    pts = tuple(
        PointFeature(position=(x + dx, y + dy), descriptor=random_descriptor())
        for dx, dy in [(1, 2), (-2, 1), (0, -3)]
    )
    return CompositeFeature(id=fid, region=region, points=pts)


def make_measurements():
    color = rng.uniform([0, -100, -100], [100, 100, 100], size=(40, 3))
    grad = rng.uniform(0, 2 * np.pi, size=40)
    flow = rng.normal(0, 1.0, size=(30, 2))
    return FeatureMeasurements(color=color, gradient=grad, flow=flow, foreground_fit=1.0)


config = TrackerConfig(debug_energy_checks=True)
scene = SceneModel(image_size=(352, 288), horizon=(0.0, 1.0, -40.0),
                   camera_height=4.5, target_height=1.6)

# 2 frames x 3 vertices
graphs = []
for t in range(2):
    feats = [make_feature(i, 100 + 30 * i, 150 + 5 * i) for i in range(3)]
    meas = [make_measurements() for _ in range(3)]
    graphs.append(build_spatial_graph(t, feats, meas, config))

window = WindowData(graphs, config)
sol = Solution.empty(graphs)
sol.validate(graphs)
state = SamplerState(window, sol, scene, config)
print("initial energy:", state.energy.total, "full:", state.energy.full_energy())

srng = RngState(123)
for i in range(3000):
    if srng.random() < 0.5:
        spatial_step(state, srng.integers(2), srng)
    else:
        temporal_step(state, 0, 1, srng)
sol.validate(graphs)
print("after 3000 proposals:", state.energy.total, "full:", state.energy.full_energy())
acc = sum(1 for r in state.records if r.accepted)
inv = sum(1 for r in state.records if not r.valid)
print(f"accepted {acc}, invalid {inv}, of {len(state.records)}")
kinds = {}
for r in state.records:
    kinds[r.kind] = kinds.get(r.kind, 0) + 1
print("kinds:", kinds)
print("OK")
