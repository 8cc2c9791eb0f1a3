"""Scratch: exhaustive posterior vs chain occupancy on a tiny instance."""
import itertools
import math
from collections import Counter

import numpy as np

from swctrack.config import TrackerConfig
from swctrack.features import CompositeFeature, PointFeature, RegionFeature
from swctrack.graphs import FeatureMeasurements, build_spatial_graph, target_box
from swctrack.model import SceneModel, Solution, WindowData, posterior_energy
from swctrack.sampler import RngState, SamplerState, spatial_step, temporal_step

rng = np.random.default_rng(11)


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


def connected(graph, members):
    members = set(members)
    start = next(iter(members))
    seen, stack = {start}, [start]
    while stack:
        v = stack.pop()
        for u, _ in graph.adjacency[v]:
            if u in members and u not in seen:
                seen.add(u)
                stack.append(u)
    return seen == members


def frame_partitions(graph):
    """All canonical labelings with connected targets."""
    n = graph.n_vertices
    out = {}
    for labs in itertools.product(range(n + 1), repeat=n):
        canon = {}
        arr = []
        for l in labs:
            if l == 0:
                arr.append(0)
            else:
                canon.setdefault(l, len(canon) + 1)
                arr.append(canon[l])
        key = tuple(arr)
        if key in out:
            continue
        ok = True
        for lab in set(arr) - {0}:
            members = [i for i, l in enumerate(arr) if l == lab]
            if not connected(graph, members):
                ok = False
                break
        if ok:
            out[key] = np.array(arr, dtype=np.int64)
    return list(out.values())


def partial_injections(k0, k1):
    """All one-to-one partial maps {1..k0} -> {1..k1}."""
    out = []
    items0 = list(range(1, k0 + 1))
    for r in range(0, min(k0, k1) + 1):
        for sub in itertools.combinations(items0, r):
            for perm in itertools.permutations(range(1, k1 + 1), r):
                out.append(dict(zip(sub, perm)))
    return out


def build_solution(graphs, parts, links, fa_assign):
    labels = [p.copy() for p in parts]
    boxes = []
    traj = []
    for t, part in enumerate(parts):
        b = {}
        for lab in sorted(set(int(x) for x in part) - {0}):
            members = tuple(int(i) for i in np.flatnonzero(part == lab))
            b[lab] = target_box(graphs[t], members)
        boxes.append(b)
        traj.append({lab: 0 for lab in b})
    tid = 1
    for la, lb in links.items():
        traj[0][la] = tid
        traj[1][lb] = tid
        tid += 1
    for (t, lab), is_cable in fa_assign:
        if is_cable:
            traj[t][lab] = tid
            tid += 1
    return Solution(labels, boxes, traj)


config = TrackerConfig()
scene = SceneModel(image_size=(352, 288), horizon=(0.0, 1.0, -40.0),
                   camera_height=4.5, target_height=1.6)

graphs = []
for t in range(2):
    feats = [make_feature(i, 100 + 28 * i, 150 + 4 * i) for i in range(3)]
    meas = [make_measurements() for _ in range(3)]
    graphs.append(build_spatial_graph(t, feats, meas, config))
window = WindowData(graphs, config)

# ---- exhaustive enumeration
energies = {}
parts0 = frame_partitions(graphs[0])
parts1 = frame_partitions(graphs[1])
count = 0
for p0 in parts0:
    k0 = int(p0.max())
    for p1 in parts1:
        k1 = int(p1.max())
        for links in partial_injections(k0, k1):
            unlinked = [(0, lab) for lab in range(1, k0 + 1) if lab not in links]
            unlinked += [(1, lab) for lab in range(1, k1 + 1) if lab not in links.values()]
            for marks in itertools.product([False, True], repeat=len(unlinked)):
                sol = build_solution(graphs, [p0, p1], links, list(zip(unlinked, marks)))
                key = sol.canonical_key()
                e = posterior_energy(sol, window, scene, config)
                if key in energies:
                    assert abs(energies[key] - e) < 1e-9, "duplicate key, different energy"
                energies[key] = e
                count += 1
print(f"states enumerated: {count}, distinct: {len(energies)}")
emin = min(energies.values())
z = sum(math.exp(-(e - emin)) for e in energies.values())
exact = {k: math.exp(-(e - emin)) / z for k, e in energies.items()}

# ---- chain occupancy
sol = Solution.empty(graphs)
state = SamplerState(window, sol, scene, config)
srng = RngState(202)
steps = 200_000
burn = steps // 10
counts = Counter()
for i in range(steps):
    if srng.random() < 0.5:
        spatial_step(state, srng.integers(2), srng)
    else:
        temporal_step(state, 0, 1, srng)
    if i >= burn:
        counts[state.solution.canonical_key()] += 1
total = sum(counts.values())
unknown = sum(c for k, c in counts.items() if k not in exact)
print("visited states:", len(counts), "unknown-key mass:", unknown / total)
tv = 0.5 * sum(abs(exact.get(k, 0.0) - counts.get(k, 0) / total)
               for k in set(exact) | set(counts))
print(f"TV distance: {tv:.4f}")
best_chain = min(
    (k for k in counts), key=lambda k: energies.get(k, float("inf")))
map_key = min(energies, key=energies.get)
print("chain found MAP:", best_chain == map_key or energies.get(best_chain, 1) <= energies[map_key] + 1e-12)
print("MAP energy:", energies[map_key])
