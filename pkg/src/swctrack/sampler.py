"""Cluster sampling over the joint partition/matching space.

Spatial moves relabel connected clusters of same-label vertices grown by
Bernoulli edge flips; temporal moves rewire trajectory ids of contiguous
sub-cables through four reversible jump kinds (birth, merge, death,
swap).  Every proposal is scored by a Metropolis-Hastings test against
the posterior energy, with proposal ratios written as products of
(1 - q_e) over the cut edges plus the selection probabilities derived in
the comments below.  A single-site Gibbs sampler is provided as the
convergence baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TrackerConfig
from .graphs import SpatialGraph, boxes_gated
from .model import EnergyState, SceneModel, Solution, WindowData

LOG_ZERO = -1e30  # stand-in for log(0) in impossible reverse proposals


class RngState:
    """Counted, replayable random stream.

    Wraps a PCG64 generator keyed by (seed, substream key); the draw
    counter makes replay divergences easy to spot in tests.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key)))
        self.counter = 0

    def substream(self, *key: int) -> "RngState":
        return RngState(self.seed, self.key + tuple(int(k) for k in key))

    def random(self) -> float:
        self.counter += 1
        return float(self._gen.random())

    def integers(self, n: int) -> int:
        self.counter += 1
        return int(self._gen.integers(n))

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.counter += 1
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.counter += 1
        return self._gen.uniform(low, high, size)

    def poisson(self, lam: float) -> int:
        self.counter += 1
        return int(self._gen.poisson(lam))

    def shuffle(self, arr) -> None:
        self.counter += 1
        self._gen.shuffle(arr)


@dataclass(frozen=True)
class ConnectedCluster:
    """Spatial cluster: same-label vertices joined by turned-on edges."""

    vertices: tuple[int, ...]
    label: int


@dataclass(frozen=True)
class SubCable:
    """Temporal cluster: a contiguous (frame, label) run within one class."""

    tid: int                                # trajectory id; 0 = background pool
    entries: tuple[tuple[int, int], ...]    # ascending frames

    @property
    def span(self) -> tuple[int, int]:
        return self.entries[0][0], self.entries[-1][0]


@dataclass(frozen=True)
class ProposalRecord:
    """One proposal: what was tried, the energies, and the decision."""

    step: int
    kind: str
    frame: int
    old_energy: float
    new_energy: float
    log_ratio: float
    accepted: bool
    valid: bool
    energy: float          # chain energy after the decision
    detail: tuple = ()


class SamplerState:
    """Mutable sampling context owning one window's solution and ledger."""

    def __init__(self, window: WindowData, solution: Solution,
                 scene: SceneModel, config: TrackerConfig = TrackerConfig()):
        self.window = window
        self.solution = solution
        self.scene = scene
        self.config = config
        self.energy = EnergyState(window, solution, scene, config)
        self.records: list[ProposalRecord] = []
        self.step = 0

    def record(self, kind: str, frame: int, old_e: float, new_e: float,
               log_ratio: float, accepted: bool, valid: bool = True,
               detail: tuple = ()) -> None:
        self.records.append(ProposalRecord(
            step=self.step, kind=kind, frame=frame, old_energy=old_e,
            new_energy=new_e, log_ratio=log_ratio, accepted=accepted,
            valid=valid, energy=self.energy.total, detail=detail,
        ))
        self.step += 1


def mh_accept(old_energy: float, new_energy: float,
              log_proposal_ratio: float, rng: RngState) -> bool:
    """Metropolis-Hastings test: accept with probability
    min(1, exp(log_proposal_ratio + old_energy - new_energy))."""
    log_alpha = log_proposal_ratio + old_energy - new_energy
    if log_alpha >= 0.0:
        return True
    if log_alpha <= LOG_ZERO:
        return False
    return rng.random() < math.exp(log_alpha)


# ------------------------------------------------------------------- spatial


def sample_cc_spatial(graph: SpatialGraph, labels: np.ndarray, rng: RngState) -> ConnectedCluster:
    """Grow a connected cluster from a uniformly chosen vertex.

    Same-label edges turn on with probability q_e (each edge flipped at
    most once); cross-label edges are off deterministically.  The value
    is the component of the chosen vertex, so the selection probability
    of a cluster is |CC|/n times the product of its internal/cut factors,
    which cancels correctly in the proposal ratio.
    """
    v0 = rng.integers(graph.n_vertices)
    lab = int(labels[v0])
    seen = {v0}
    stack = [v0]
    flips: dict[tuple[int, int], bool] = {}
    while stack:
        v = stack.pop()
        for u, q in graph.adjacency[v]:
            if int(labels[u]) != lab:
                continue
            key = (v, u) if v < u else (u, v)
            on = flips.get(key)
            if on is None:
                on = rng.random() < q
                flips[key] = on
            if on and u not in seen:
                seen.add(u)
                stack.append(u)
    return ConnectedCluster(vertices=tuple(sorted(seen)), label=lab)


def cut_log_weight(graph: SpatialGraph, labels: np.ndarray,
                   cc: set[int], class_label: int) -> float:
    """log prod (1 - q_e) over edges between the cluster and outside
    vertices carrying ``class_label`` (the cluster's class in one state)."""
    total = 0.0
    for v in cc:
        for u, q in graph.adjacency[v]:
            if u not in cc and int(labels[u]) == class_label:
                total += math.log1p(-q)
    return total


def propose_spatial_label(existing_labels, current_label: int,
                          fresh_label: int, rng: RngState) -> int:
    """Uniform draw over {false alarm} + {other targets} + {fresh target},
    excluding the cluster's current label.  The option count is always
    K_t + 1, which the proposal ratio relies on."""
    options = []
    if current_label != 0:
        options.append(0)
    options.extend(lab for lab in sorted(existing_labels) if lab != current_label)
    options.append(fresh_label)
    return options[rng.integers(len(options))]


def spatial_proposal_log_ratio(graph: SpatialGraph, labels: np.ndarray,
                               cc: set[int], old_label: int, new_label: int,
                               k_old: int, k_new: int) -> float:
    """log of q(CC|B) q(L back) / (q(CC|A) q(L forward)).

    Cut products use only the cluster's outside edges (internal factors
    and the |CC|/n selection term are identical in both states and
    cancel); the label term is (K_A + 1)/(K_B + 1) from the uniform
    label rule.  Outside labels are the same in both states, so both cut
    sets are computable from the current label array.
    """
    cut_a = cut_log_weight(graph, labels, cc, old_label)
    cut_b = cut_log_weight(graph, labels, cc, new_label)
    return (cut_b - cut_a) + math.log(k_old + 1) - math.log(k_new + 1)


def _connected_subset(graph: SpatialGraph, members: set[int]) -> bool:
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
    return len(seen) == len(members)


def _touches(graph: SpatialGraph, part_a: set[int], part_b: set[int]) -> bool:
    for v in part_a:
        for u, _ in graph.adjacency[v]:
            if u in part_b:
                return True
    return False


def _spatial_move_valid(solution: Solution, graph: SpatialGraph, t: int,
                        cc: set[int], old_label: int, new_label: int) -> bool:
    """Structural validity: targets stay connected; a target may only
    dissolve while it is unlinked (trajectory id 0 or no temporal layer)."""
    if old_label != 0:
        remaining = set(solution.members(t, old_label)) - cc
        if remaining:
            if not _connected_subset(graph, remaining):
                return False
        else:
            tid = solution.traj_id(t, old_label)
            if tid is not None and tid > 0:
                return False
    if new_label != 0 and new_label in solution.boxes[t]:
        if not _touches(graph, cc, set(solution.members(t, new_label))):
            return False
    return True


def spatial_step(state: SamplerState, t: int, rng: RngState) -> None:
    """One cluster proposal on frame t: grow a CC, draw a label, test."""
    graph = state.window.graphs[t]
    if graph.n_vertices == 0:
        state.record("spatial", t, state.energy.total, state.energy.total, 0.0,
                     accepted=False, valid=False, detail=("empty",))
        return
    solution = state.solution
    labels = solution.labels[t]
    cc = sample_cc_spatial(graph, labels, rng)
    fresh = solution.next_label[t]
    new_label = propose_spatial_label(solution.boxes[t].keys(), cc.label, fresh, rng)
    cc_set = set(cc.vertices)
    old_e = state.energy.total
    detail = (t, cc.vertices, cc.label, new_label)
    if not _spatial_move_valid(solution, graph, t, cc_set, cc.label, new_label):
        state.record("spatial", t, old_e, old_e, 0.0, accepted=False,
                     valid=False, detail=detail)
        return
    k_old = solution.K(t)
    k_new = k_old
    if new_label != 0 and new_label not in solution.boxes[t]:
        k_new += 1
    if cc.label != 0 and len(cc_set) == len(solution.members(t, cc.label)):
        k_new -= 1
    log_ratio = spatial_proposal_log_ratio(
        graph, labels, cc_set, cc.label, new_label, k_old, k_new)
    delta, undo = state.energy.apply_spatial(t, np.array(cc.vertices, dtype=np.int64), new_label)
    accepted = mh_accept(0.0, delta, log_ratio, rng)
    if not accepted:
        state.energy.revert(undo)
    state.record("spatial", t, old_e, old_e + delta, log_ratio, accepted, detail=detail)


def spatial_sweep(state: SamplerState, t: int, iterations: int, rng: RngState) -> None:
    for _ in range(iterations):
        spatial_step(state, t, rng)


# ------------------------------------------------------------------ temporal
#
# Proposal probability bookkeeping.  A temporal proposal is generated as
#
#   Q(move) = P(select class) * P(grow CC | class) * P(kind | CC)
#             * P(counterpart | kind)           (merge and swap only)
#
# with  P(select class) = 1 / #classes-with-targets-in-range
#       P(grow CC)      = (|CC| / #class-members-in-range)
#                         * prod(on q_e over internal consecutive edges)
#                         * prod((1 - q_e) over adjacent in-range edges)
#       P(kind)         = 1 / #valid-kinds(CC)
#       P(counterpart)  = 1 / #candidates
#
# The reverse move for each kind (computed in the *new* state) is:
#   birth of a background chain       <-> death of the whole new cable
#   birth splitting a prefix/suffix   <-> merge of the new cable back
#   death of a whole cable            <-> birth of the same chain from C0
#   death of a prefix/suffix          <-> merge of the chain into the rest
#   merge of a background chain       <-> death of that run off the target
#   merge of a prefix/suffix          <-> merge of the run back into the rest
#   merge of a whole cable            <-> birth splitting the run off
#   swap                              <-> the same swap again
# A swap transition can be generated from either participating cable, so
# both its forward and reverse probabilities sum the two paths.  When a
# reverse path is geometrically impossible (an ungated junction), the
# proposal ratio is -inf and the move auto-rejects, which preserves
# detailed balance at the price of a wasted proposal.


def _c0_members(solution: Solution, lo: int, hi: int) -> list[tuple[int, int]]:
    out = []
    for t in range(lo, hi + 1):
        tmap = solution.traj[t]
        if tmap:
            out.extend((t, lab) for lab, tid in sorted(tmap.items()) if tid == 0)
    return out


def _classes_in_range(solution: Solution, lo: int, hi: int) -> list[int]:
    """Selectable classes: cable ids intersecting the range, then 0 for
    the background pool when it is non-empty."""
    tids = sorted(
        tid for tid, frames in solution.traj_index.items()
        if min(frames) <= hi and max(frames) >= lo
    )
    if _c0_members(solution, lo, hi):
        tids.append(0)
    return tids


def _run_qe(state: SamplerState, t: int, lab_a: int, lab_b: int) -> float:
    sol = state.solution
    return state.window.temporal_qe(
        t, sol.members(t, lab_a), t + 1, sol.members(t + 1, lab_b))


def _gated(state: SamplerState, t_a: int, lab_a: int, t_b: int, lab_b: int) -> bool:
    sol = state.solution
    return boxes_gated(sol.boxes[t_a][lab_a], sol.boxes[t_b][lab_b],
                       state.config.gate_factor)


def _sample_cable_run(state: SamplerState, tid: int, lo: int, hi: int,
                      rng: RngState) -> SubCable:
    frames = state.solution.traj_index[tid]
    birth, death = min(frames), max(frames)
    r0, r1 = max(birth, lo), min(death, hi)
    m = r0 + rng.integers(r1 - r0 + 1)
    a = m
    while a > r0 and rng.random() < _run_qe(state, a - 1, frames[a - 1], frames[a]):
        a -= 1
    b = m
    while b < r1 and rng.random() < _run_qe(state, b, frames[b], frames[b + 1]):
        b += 1
    return SubCable(tid=tid, entries=tuple((t, frames[t]) for t in range(a, b + 1)))


def _sample_c0_chain(state: SamplerState, lo: int, hi: int,
                     rng: RngState) -> SubCable | None:
    """Component of a random background target in the gated background
    graph.  Returns None when the component is not a one-per-frame chain
    (such draws are counted as invalid proposals)."""
    members = _c0_members(state.solution, lo, hi)
    u = members[rng.integers(len(members))]
    by_frame: dict[int, list[tuple[int, int]]] = {}
    for entry in members:
        by_frame.setdefault(entry[0], []).append(entry)
    seen = {u}
    stack = [u]
    flips: dict[tuple, bool] = {}
    while stack:
        t, lab = stack.pop()
        for t2 in (t - 1, t + 1):
            for other in by_frame.get(t2, ()):
                if not _gated(state, t, lab, other[0], other[1]):
                    continue
                key = ((t, lab), other) if t < t2 else (other, (t, lab))
                on = flips.get(key)
                if on is None:
                    (ta, la), (_, lb) = key
                    on = rng.random() < _run_qe(state, ta, la, lb)
                    flips[key] = on
                if on and other not in seen:
                    seen.add(other)
                    stack.append(other)
    entries = sorted(seen)
    frames_seen = [e[0] for e in entries]
    if len(set(frames_seen)) != len(frames_seen):
        return None
    return SubCable(tid=0, entries=tuple(entries))


def _log_p_cable_run(state: SamplerState, tid: int, a: int, b: int,
                     lo: int, hi: int) -> float:
    frames = state.solution.traj_index[tid]
    birth, death = min(frames), max(frames)
    r0, r1 = max(birth, lo), min(death, hi)
    lp = math.log((b - a + 1) / (r1 - r0 + 1))
    for t in range(a, b):
        lp += math.log(_run_qe(state, t, frames[t], frames[t + 1]))
    if a > r0:
        lp += math.log1p(-_run_qe(state, a - 1, frames[a - 1], frames[a]))
    if b < r1:
        lp += math.log1p(-_run_qe(state, b, frames[b], frames[b + 1]))
    return lp


def _log_p_c0_chain(state: SamplerState, entries: tuple[tuple[int, int], ...],
                    lo: int, hi: int) -> float | None:
    """Probability of growing exactly this chain from the background pool;
    None when an internal junction is not gated (unreachable)."""
    members = _c0_members(state.solution, lo, hi)
    chain = set(entries)
    lp = math.log(len(entries) / len(members))
    for (t1, l1), (t2, l2) in zip(entries, entries[1:]):
        if not _gated(state, t1, l1, t2, l2):
            return None
        lp += math.log(_run_qe(state, t1, l1, l2))
    for t, lab in entries:
        for other in members:
            if other in chain or abs(other[0] - t) != 1:
                continue
            if _gated(state, t, lab, other[0], other[1]):
                lo_t = min(t, other[0])
                if lo_t == t:
                    q = _run_qe(state, t, lab, other[1])
                else:
                    q = _run_qe(state, other[0], other[1], lab)
                lp += math.log1p(-q)
    return lp


def _merge_candidates(state: SamplerState, cc: SubCable) -> list[int]:
    """Cables directly abutting the run with a gated junction."""
    sol = state.solution
    a, b = cc.span
    head_t, head_lab = cc.entries[0]
    tail_t, tail_lab = cc.entries[-1]
    cands = []
    for tid, frames in sol.traj_index.items():
        if tid == cc.tid:
            continue
        b2, d2 = min(frames), max(frames)
        if d2 == a - 1 and _gated(state, d2, frames[d2], head_t, head_lab):
            cands.append(tid)
        elif b2 == b + 1 and _gated(state, tail_t, tail_lab, b2, frames[b2]):
            cands.append(tid)
    return sorted(cands)


def _swap_candidates(state: SamplerState, cc: SubCable) -> list[int]:
    """Other cables whose span covers the run's span."""
    sol = state.solution
    a, b = cc.span
    return sorted(
        tid for tid, frames in sol.traj_index.items()
        if tid != cc.tid and min(frames) <= a and max(frames) >= b
    )


def _valid_kinds(state: SamplerState, cc: SubCable) -> list[tuple[str, list[int] | None]]:
    """Jump kinds available to this cluster, in fixed order, with their
    counterpart candidate lists."""
    kinds: list[tuple[str, list[int] | None]] = []
    if cc.tid == 0:
        kinds.append(("birth", None))
        cands = _merge_candidates(state, cc)
        if cands:
            kinds.append(("merge", cands))
        return kinds
    birth_f, death_f = state.solution.cable_span(cc.tid)
    a, b = cc.span
    is_prefix = a == birth_f
    is_suffix = b == death_f
    if (is_prefix or is_suffix) and not (is_prefix and is_suffix):
        kinds.append(("birth", None))
    if is_prefix or is_suffix:
        cands = _merge_candidates(state, cc)
        if cands:
            kinds.append(("merge", cands))
        kinds.append(("death", None))
    swaps = _swap_candidates(state, cc)
    if swaps:
        kinds.append(("swap", swaps))
    return kinds


def temporal_jump(solution: Solution, cc: SubCable, kind: str,
                  counterpart: int | None = None,
                  new_id: int | None = None) -> list[tuple[int, int, int]]:
    """Assignment list realizing one jump; pure (no mutation)."""
    if kind == "birth":
        tid = solution.next_traj_id if new_id is None else new_id
        return [(t, lab, tid) for t, lab in cc.entries]
    if kind == "death":
        return [(t, lab, 0) for t, lab in cc.entries]
    if kind == "merge":
        return [(t, lab, counterpart) for t, lab in cc.entries]
    if kind == "swap":
        a, b = cc.span
        frames2 = solution.traj_index[counterpart]
        moves = [(t, lab, counterpart) for t, lab in cc.entries]
        moves.extend((t, frames2[t], cc.tid) for t in range(a, b + 1))
        return moves
    raise ValueError(f"unknown temporal jump kind {kind!r}")


def _forward_log_q(state: SamplerState, cc: SubCable, kinds, kind_idx: int,
                   cand_idx: int | None, n_classes: int, lo: int, hi: int) -> float:
    kind, cands = kinds[kind_idx]
    if cc.tid == 0:
        lp_cc = _log_p_c0_chain(state, cc.entries, lo, hi)
    else:
        a, b = cc.span
        lp_cc = _log_p_cable_run(state, cc.tid, a, b, lo, hi)
    if lp_cc is None:
        return LOG_ZERO
    lq = -math.log(n_classes) + lp_cc - math.log(len(kinds))
    if cands is not None:
        lq -= math.log(len(cands))
    if kind == "swap":
        # the same transition is also generated from the counterpart cable
        other = cands[cand_idx]
        a, b = cc.span
        frames2 = state.solution.traj_index[other]
        cc2 = SubCable(tid=other, entries=tuple((t, frames2[t]) for t in range(a, b + 1)))
        kinds2 = _valid_kinds(state, cc2)
        lq2 = None
        for k2, (name2, cands2) in enumerate(kinds2):
            if name2 == "swap" and cc.tid in cands2:
                lq2 = (-math.log(n_classes) + _log_p_cable_run(state, other, a, b, lo, hi)
                       - math.log(len(kinds2)) - math.log(len(cands2)))
                break
        if lq2 is not None:
            lq = np.logaddexp(lq, lq2)
    return float(lq)


def _reverse_log_q(state: SamplerState, cc: SubCable, kind: str,
                   counterpart: int | None, new_tid: int | None,
                   remainder_tid: int | None, lo: int, hi: int) -> float:
    """Probability of proposing the exact inverse move, evaluated in the
    post-move state (the solution has already been mutated)."""
    sol = state.solution
    n_classes = len(_classes_in_range(sol, lo, hi))
    a, b = cc.span

    def kind_factor(rev_cc: SubCable, rev_kind: str, rev_counterpart: int | None) -> float | None:
        kinds = _valid_kinds(state, rev_cc)
        for name, cands in kinds:
            if name != rev_kind:
                continue
            lq = -math.log(len(kinds))
            if rev_kind in ("merge", "swap"):
                if rev_counterpart not in cands:
                    return None
                lq -= math.log(len(cands))
            return lq
        return None

    if kind == "birth":
        rev_cc = SubCable(tid=new_tid, entries=cc.entries)
        lp = _log_p_cable_run(state, new_tid, a, b, lo, hi)
        if cc.tid == 0:
            kf = kind_factor(rev_cc, "death", None)
        else:
            kf = kind_factor(rev_cc, "merge", remainder_tid)
        if kf is None:
            return LOG_ZERO
        return -math.log(n_classes) + lp + kf

    if kind == "death":
        rev_cc = SubCable(tid=0, entries=cc.entries)
        lp = _log_p_c0_chain(state, cc.entries, lo, hi)
        if lp is None:
            return LOG_ZERO
        if remainder_tid is None:
            kf = kind_factor(rev_cc, "birth", None)
        else:
            kf = kind_factor(rev_cc, "merge", remainder_tid)
        if kf is None:
            return LOG_ZERO
        return -math.log(n_classes) + lp + kf

    if kind == "merge":
        rev_cc = SubCable(tid=counterpart, entries=cc.entries)
        lp = _log_p_cable_run(state, counterpart, a, b, lo, hi)
        if cc.tid == 0:
            kf = kind_factor(rev_cc, "death", None)
        elif remainder_tid is not None:
            kf = kind_factor(rev_cc, "merge", remainder_tid)
        else:
            kf = kind_factor(rev_cc, "birth", None)
        if kf is None:
            return LOG_ZERO
        return -math.log(n_classes) + lp + kf

    if kind == "swap":
        # reverse = the same swap; sum both generation paths in the new state
        frames_a = sol.traj_index[cc.tid]
        frames_b = sol.traj_index[counterpart]
        rev1 = SubCable(tid=cc.tid, entries=tuple((t, frames_a[t]) for t in range(a, b + 1)))
        rev2 = SubCable(tid=counterpart, entries=tuple((t, frames_b[t]) for t in range(a, b + 1)))
        total = None
        for rev_cc, other in ((rev1, counterpart), (rev2, cc.tid)):
            kf = kind_factor(rev_cc, "swap", other)
            if kf is None:
                continue
            lq = (-math.log(n_classes)
                  + _log_p_cable_run(state, rev_cc.tid, a, b, lo, hi) + kf)
            total = lq if total is None else float(np.logaddexp(total, lq))
        return LOG_ZERO if total is None else total

    raise ValueError(f"unknown temporal jump kind {kind!r}")


def sample_cc_temporal(state: SamplerState, lo: int, hi: int,
                       rng: RngState) -> SubCable | None:
    """Select a class uniformly and grow a sub-cable inside the range."""
    classes = _classes_in_range(state.solution, lo, hi)
    if not classes:
        return None
    cls = classes[rng.integers(len(classes))]
    if cls == 0:
        return _sample_c0_chain(state, lo, hi, rng)
    return _sample_cable_run(state, cls, lo, hi, rng)


def temporal_step(state: SamplerState, lo: int, hi: int, rng: RngState) -> None:
    """One temporal proposal restricted to frames [lo, hi]."""
    sol = state.solution
    old_e = state.energy.total
    classes = _classes_in_range(sol, lo, hi)
    if not classes:
        state.record("temporal", lo, old_e, old_e, 0.0, accepted=False,
                     valid=False, detail=("no-classes",))
        return
    n_classes = len(classes)
    cls = classes[rng.integers(n_classes)]
    cc = (_sample_c0_chain(state, lo, hi, rng) if cls == 0
          else _sample_cable_run(state, cls, lo, hi, rng))
    if cc is None:
        state.record("temporal", lo, old_e, old_e, 0.0, accepted=False,
                     valid=False, detail=("branching-chain",))
        return
    kinds = _valid_kinds(state, cc)
    if not kinds:
        state.record("temporal", lo, old_e, old_e, 0.0, accepted=False,
                     valid=False, detail=("no-kinds", cc.entries))
        return
    kind_idx = rng.integers(len(kinds))
    kind, cands = kinds[kind_idx]
    cand_idx = None
    counterpart = None
    if cands is not None:
        cand_idx = rng.integers(len(cands))
        counterpart = cands[cand_idx]

    # remainder of the cluster's own cable (None when the run is the whole cable)
    remainder_tid = None
    new_tid = None
    if cc.tid != 0:
        birth_f, death_f = sol.cable_span(cc.tid)
        a, b = cc.span
        if (a, b) != (birth_f, death_f):
            remainder_tid = cc.tid
    if kind == "birth":
        new_tid = sol.next_traj_id

    log_q_fwd = _forward_log_q(state, cc, kinds, kind_idx, cand_idx, n_classes, lo, hi)
    assignments = temporal_jump(sol, cc, kind, counterpart, new_tid)
    delta, undo = state.energy.apply_temporal(assignments)
    log_q_rev = _reverse_log_q(state, cc, kind, counterpart, new_tid, remainder_tid, lo, hi)
    log_ratio = log_q_rev - log_q_fwd
    accepted = mh_accept(0.0, delta, log_ratio, rng)
    if not accepted:
        state.energy.revert(undo)
    state.record(kind, cc.span[0], old_e, old_e + delta, log_ratio, accepted,
                 detail=(cc.entries, counterpart))


def temporal_sweep(state: SamplerState, lo: int, hi: int,
                   iterations: int, rng: RngState) -> None:
    for _ in range(iterations):
        temporal_step(state, lo, hi, rng)


# --------------------------------------------------------------------- gibbs


def _softmax_draw(options: list, deltas: list[float], rng: RngState) -> int:
    lo = min(deltas)
    weights = [math.exp(-(d - lo)) for d in deltas]
    total = sum(weights)
    u = rng.random() * total
    acc = 0.0
    for idx, w in enumerate(weights):
        acc += w
        if u <= acc:
            return idx
    return len(options) - 1


def gibbs_spatial_step(state: SamplerState, t: int, rng: RngState) -> None:
    """Single-vertex relabel from its full conditional distribution."""
    graph = state.window.graphs[t]
    old_e = state.energy.total
    if graph.n_vertices == 0:
        state.record("gibbs-spatial", t, old_e, old_e, 0.0, accepted=False, valid=False)
        return
    solution = state.solution
    v = rng.integers(graph.n_vertices)
    current = int(solution.labels[t][v])
    fresh = solution.next_label[t]
    options = [current]
    for lab in [0] + sorted(solution.boxes[t].keys()) + [fresh]:
        if lab == current or lab in options:
            continue
        if _spatial_move_valid(solution, graph, t, {v}, current, lab):
            options.append(lab)
    deltas = [0.0]
    cc = np.array([v], dtype=np.int64)
    for lab in options[1:]:
        delta, undo = state.energy.apply_spatial(t, cc, lab)
        state.energy.revert(undo)
        deltas.append(delta)
    pick = _softmax_draw(options, deltas, rng)
    accepted = pick != 0
    if accepted:
        state.energy.apply_spatial(t, cc, options[pick])
    state.record("gibbs-spatial", t, old_e, old_e + deltas[pick], 0.0,
                 accepted=accepted, detail=(t, v, current, options[pick]))


def _gibbs_temporal_options(state: SamplerState, t: int, lab: int) -> list[int]:
    """Trajectory ids reachable for a single target: keep, detach to the
    background pool, start a fresh singleton, or join an abutting cable.
    Targets interior to a cable cannot move alone."""
    sol = state.solution
    tid = sol.traj[t].get(lab, 0)
    options = [tid]
    if tid > 0:
        birth_f, death_f = sol.cable_span(tid)
        if t != birth_f and t != death_f:
            return options
    options.append(0)
    options.append(sol.next_traj_id)
    for tid2, frames in sol.traj_index.items():
        if tid2 == tid:
            continue
        b2, d2 = min(frames), max(frames)
        if d2 == t - 1 and _gated(state, d2, frames[d2], t, lab):
            options.append(tid2)
        elif b2 == t + 1 and _gated(state, t, lab, b2, frames[b2]):
            options.append(tid2)
    seen = set()
    out = []
    for o in options:
        if o not in seen:
            seen.add(o)
            out.append(o)
    return out


def gibbs_temporal_step(state: SamplerState, lo: int, hi: int, rng: RngState) -> None:
    """Single-target trajectory resample from its valid-option conditional."""
    sol = state.solution
    old_e = state.energy.total
    targets = []
    for t in range(lo, hi + 1):
        tmap = sol.traj[t]
        if tmap:
            targets.extend((t, lab) for lab in sorted(tmap.keys()))
    if not targets:
        state.record("gibbs-temporal", lo, old_e, old_e, 0.0, accepted=False, valid=False)
        return
    t, lab = targets[rng.integers(len(targets))]
    options = _gibbs_temporal_options(state, t, lab)
    deltas = [0.0]
    for tid2 in options[1:]:
        delta, undo = state.energy.apply_temporal([(t, lab, tid2)])
        state.energy.revert(undo)
        deltas.append(delta)
    pick = _softmax_draw(options, deltas, rng)
    accepted = pick != 0
    if accepted:
        state.energy.apply_temporal([(t, lab, options[pick])])
    state.record("gibbs-temporal", t, old_e, old_e + deltas[pick], 0.0,
                 accepted=accepted, detail=(t, lab, options[0], options[pick]))


def gibbs_sweep(state: SamplerState, t: int, iterations: int, rng: RngState) -> None:
    """Single-site baseline sweep over one frame's vertices."""
    for _ in range(iterations):
        gibbs_spatial_step(state, t, rng)


def gibbs_temporal_sweep(state: SamplerState, lo: int, hi: int,
                         iterations: int, rng: RngState) -> None:
    for _ in range(iterations):
        gibbs_temporal_step(state, lo, hi, rng)
