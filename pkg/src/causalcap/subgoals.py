"""Subgoal selection, the observed subgoal transition graph and region maps."""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capacity import CapacityMap
from .errors import EmptySubgoals, MalformedLine, NoCandidates, Unreachable, UnknownState
from .sampler import TrajectorySet

GOAL = -1  # virtual node standing for the episode's final goal
NONE = -2  # "no subgoal achieved" marker in achievement arrays
THRESHOLD = math.log(2.5)


@dataclass(frozen=True)
class Subgoal:
    id: int
    anchor: tuple
    capacity: float
    radius: float = 0.7
    key: tuple = ()


@dataclass
class SubgoalSet:
    subgoals: list

    def __len__(self) -> int:
        return len(self.subgoals)

    def __iter__(self):
        return iter(self.subgoals)

    def __getitem__(self, sid: int) -> Subgoal:
        return self.subgoals[sid]

    @property
    def anchors(self) -> np.ndarray:
        return np.array([g.anchor for g in self.subgoals], dtype=np.float64).reshape(-1, 2)

    @property
    def radius(self) -> float:
        return self.subgoals[0].radius if self.subgoals else 0.7

    def achieved(self, states) -> np.ndarray:
        """Nearest subgoal within its radius for every state, else ``NONE``."""
        pts = np.asarray(states, dtype=np.float64).reshape(-1, 2)
        if not self.subgoals:
            return np.full(len(pts), NONE, dtype=np.int64)
        diff = pts[:, None, :] - self.anchors[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        best = np.argmin(d, axis=1)
        radii = np.array([g.radius for g in self.subgoals])
        hit = d[np.arange(len(pts)), best] < radii[best]
        return np.where(hit, best, NONE).astype(np.int64)


def select_subgoals(cmap: CapacityMap, threshold: float = THRESHOLD, suppression_radius: float = 1.0,
                    radius: float = 0.7, confident_only: bool = True) -> SubgoalSet:
    """Greedy non-maximum suppression over states at or above ``threshold``.

    Candidates are visited by decreasing capacity (ties by key); each emitted
    subgoal suppresses every candidate within ``suppression_radius``. Ids are
    assigned in key order so they do not depend on estimator noise.
    """
    if len(cmap) == 0:
        raise NoCandidates("capacity map is empty")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    cands = [(k, e) for k, e in cmap.entries.items()
             if e.capacity >= threshold and (e.confident or not confident_only)]
    if not cands:
        best = max(e.capacity for e in cmap.entries.values())
        raise NoCandidates(f"no state reaches {threshold:.4f} nats (max {best:.4f})")
    cands.sort(key=lambda ke: (-ke[1].capacity, ke[0]))
    pos = np.array([e.position for _, e in cands], dtype=np.float64)
    alive = np.ones(len(cands), dtype=bool)
    chosen = []
    for i in range(len(cands)):
        if not alive[i]:
            continue
        chosen.append(i)
        d = np.sqrt(((pos - pos[i]) ** 2).sum(axis=1))
        alive &= d > suppression_radius
    chosen.sort(key=lambda i: cands[i][0])
    return SubgoalSet([
        Subgoal(n, tuple(float(v) for v in cands[i][1].position), float(cands[i][1].capacity), radius, cands[i][0])
        for n, i in enumerate(chosen)
    ])


def assign_nearest(state, subgoals: SubgoalSet) -> int:
    """Straight-line nearest anchor (wall-blind); ties go to the lowest id."""
    if len(subgoals) == 0:
        raise EmptySubgoals("no subgoals")
    d = np.sqrt(((subgoals.anchors - np.asarray(state, dtype=np.float64)) ** 2).sum(axis=1))
    return int(np.argmin(d))


def assign_nearest_many(states, subgoals: SubgoalSet) -> np.ndarray:
    if len(subgoals) == 0:
        raise EmptySubgoals("no subgoals")
    pts = np.asarray(states, dtype=np.float64).reshape(-1, 2)
    diff = pts[:, None, :] - subgoals.anchors[None, :, :]
    return np.argmin((diff * diff).sum(axis=2), axis=1).astype(np.int64)


@dataclass
class SubgoalGraph:
    subgoals: SubgoalSet
    edges: dict                 # (i, j) -> count, self-edges included
    regions: dict               # state key -> owning subgoal id
    kind: str = "discrete"
    bin_width: float = 0.7
    fallback_keys: set = field(default_factory=set)

    def key_of(self, state) -> tuple:
        if self.kind == "discrete":
            return int(round(state[0])), int(round(state[1]))
        return math.floor(state[0] / self.bin_width), math.floor(state[1] / self.bin_width)

    def region_of(self, state) -> int:
        key = self.key_of(state)
        if key not in self.regions:
            raise UnknownState(key)
        return self.regions[key]

    def successors(self, i: int) -> list[int]:
        return sorted(j for (a, j) in self.edges if a == i and j != i)

    def adjacency(self) -> dict:
        adj = defaultdict(set)
        for i, j in self.edges:
            if i != j:
                adj[i].add(j)
        return adj

    def hops_to(self, target: int) -> dict:
        """Edge-count distance from every subgoal to ``target``."""
        rev = defaultdict(list)
        for i, j in self.edges:
            if i != j:
                rev[j].append(i)
        dist = {target: 0}
        queue = deque([target])
        while queue:
            u = queue.popleft()
            for v in sorted(rev[u]):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist


def _event_steps(ach: np.ndarray) -> np.ndarray:
    """Steps at which a subgoal is entered (achievement events)."""
    prev = np.concatenate([[NONE], ach[:-1]])
    return np.flatnonzero((ach != NONE) & (ach != prev))


def build_subgoal_graph(trajs: TrajectorySet, subgoals: SubgoalSet, env, tau_nei: float | None = None) -> SubgoalGraph:
    """Scan every episode for achievement events and label regions.

    A state's region vote goes to the subgoal it currently achieves, else to
    the next subgoal achieved later in the same episode. Keys without votes
    fall back to the nearest anchor by maze-graph distance.
    """
    if len(subgoals) == 0:
        raise EmptySubgoals("no subgoals")
    if tau_nei is not None:
        subgoals = SubgoalSet([Subgoal(g.id, g.anchor, g.capacity, tau_nei, g.key) for g in subgoals])
    edges: dict = defaultdict(int)
    votes: dict = defaultdict(lambda: np.zeros(len(subgoals), dtype=np.int64))
    positions: dict = {}
    for seq in trajs.state_sequences():
        ach = subgoals.achieved(seq)
        ev = _event_steps(ach)
        for a, b in zip(ev[:-1], ev[1:]):
            edges[(int(ach[a]), int(ach[b]))] += 1
        # label of each step: current achievement, else the next event's subgoal
        nxt = np.full(len(seq), NONE, dtype=np.int64)
        if len(ev):
            pos = np.searchsorted(ev, np.arange(len(seq)))
            ok = pos < len(ev)
            nxt[ok] = ach[ev[pos[ok]]]
        label = np.where(ach != NONE, ach, nxt)
        keys = env.keys(seq)
        for k, lab, p in zip(map(tuple, keys.tolist()), label.tolist(), seq.tolist()):
            positions.setdefault(k, p)
            if lab != NONE:
                votes[k][lab] += 1
    regions = {k: int(np.argmax(v)) for k, v in votes.items()}
    if env.kind == "discrete":
        positions.update({c: c for c in env.maze.free_cells})
    missing = sorted(k for k in positions if k not in regions)
    if missing:
        maze = env.maze
        dists = np.stack([maze.bfs([env.cell_of(g.anchor)]) for g in subgoals])
        dists = np.where(dists < 0, np.iinfo(np.int64).max, dists)
        for k in missing:
            r, c = env.cell_of(positions[k])
            regions[k] = int(np.argmin(dists[:, r, c]))
    return SubgoalGraph(subgoals, dict(sorted(edges.items())), dict(sorted(regions.items())), env.kind,
                        float(getattr(env, "bin_width", 0.7)), set(missing))


def plan_next_subgoal(graph: SubgoalGraph, current: int, goal_region: int) -> int:
    """First hop of a shortest unit-cost path from ``current`` to ``goal_region``.

    Returns ``GOAL`` when the goal already lies in the current region.
    """
    if current == goal_region:
        return GOAL
    adj = graph.adjacency()
    parent = {current: None}
    queue = deque([current])
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if v in parent:
                continue
            parent[v] = u
            if v == goal_region:
                while parent[v] != current:
                    v = parent[v]
                return v
            queue.append(v)
    raise Unreachable(f"region {goal_region} unreachable from {current}")


def write_subgoals(path, graph: SubgoalGraph) -> None:
    lines = [f"# causalcap-subgoals v1 kind={graph.kind} bin_width={graph.bin_width!r} "
             f"radius={graph.subgoals.radius!r}"]
    for g in graph.subgoals:
        lines.append(f"subgoal {g.id} {g.anchor[0]!r} {g.anchor[1]!r} {g.capacity!r}")
    for (i, j), c in graph.edges.items():
        lines.append(f"edge {i} {j} {c}")
    for k, rid in graph.regions.items():
        lines.append(f"region {k[0]} {k[1]} {rid}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_subgoals(path) -> SubgoalGraph:
    header = {"kind": "discrete", "bin_width": "0.7", "radius": "0.7"}
    subs, edges, regions = [], {}, {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0].startswith("#"):
                header.update(t.split("=", 1) for t in parts if "=" in t)
                continue
            try:
                tag = parts[0]
                if tag == "subgoal" and len(parts) == 5:
                    subs.append((int(parts[1]), (float(parts[2]), float(parts[3])), float(parts[4])))
                elif tag == "edge" and len(parts) == 4:
                    edges[(int(parts[1]), int(parts[2]))] = int(parts[3])
                elif tag == "region" and len(parts) == 4:
                    regions[(int(parts[1]), int(parts[2]))] = int(parts[3])
                else:
                    raise ValueError(f"unexpected record {parts[0]!r} with {len(parts)} fields")
            except ValueError as exc:
                raise MalformedLine(line_no, str(exc)) from None
    radius = float(header["radius"])
    kind = header["kind"]
    sset = []
    for sid, anchor, cap in sorted(subs):
        key = tuple(int(round(v)) for v in anchor) if kind == "discrete" else ()
        sset.append(Subgoal(sid, anchor, cap, radius, key))
    return SubgoalGraph(SubgoalSet(sset), edges, regions, kind, float(header["bin_width"]))
