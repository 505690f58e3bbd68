"""Region-wise potential fields and potential-based reward shaping.

Potentials decrease toward the goal. Each subgoal region gets a local
breadth-first distance to its planned exit, scaled to [0, 1], plus an
integer offset equal to the region's hop count to the goal region. The
shaping term is ``kappa * (phi(s) - gamma * phi(s'))`` with terminal states
at potential zero, which is the policy-invariant form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .capacity import CapacityEntry, CapacityMap
from .errors import UnknownState, UnreachableGoal
from .mdpcore import Maze, Transition
from .subgoals import GOAL, SubgoalGraph, plan_next_subgoal


@dataclass
class PotentialField:
    cells: list                 # free cells, row-major; index = state index
    phi: np.ndarray             # potential per cell
    regions: np.ndarray         # owning subgoal per cell
    offsets: dict               # region -> hop count to the goal region
    exits: dict                 # region -> planned exit subgoal or GOAL
    scales: dict                # region -> max local distance used for scaling
    goal: tuple
    unreachable: set = field(default_factory=set)
    cell_size: float | None = None  # None: states are cells

    def __post_init__(self):
        self.index = {c: i for i, c in enumerate(self.cells)}

    def cell_of(self, state) -> tuple:
        if self.cell_size is None:
            return int(state[0]), int(state[1])
        return math.floor(state[1] / self.cell_size), math.floor(state[0] / self.cell_size)

    def value(self, state) -> float:
        cell = self.cell_of(state)
        if cell not in self.index:
            raise UnknownState(cell)
        return float(self.phi[self.index[cell]])

    def region(self, state) -> int:
        cell = self.cell_of(state)
        if cell not in self.index:
            raise UnknownState(cell)
        return int(self.regions[self.index[cell]])


def cell_regions(maze: Maze, graph: SubgoalGraph, cell_size: float | None = None) -> np.ndarray:
    """Region of every free cell; cells the map does not cover use graph-distance fallback."""
    cells = maze.free_cells
    out = np.full(len(cells), -1, dtype=np.int64)
    for i, (r, c) in enumerate(cells):
        if graph.kind == "discrete":
            key = (r, c)
        else:
            h = cell_size or 1.0
            key = graph.key_of(((c + 0.5) * h, (r + 0.5) * h))
        out[i] = graph.regions.get(key, -1)
    missing = np.flatnonzero(out < 0)
    if len(missing):
        h = cell_size or 1.0
        anchor_cells = []
        for g in graph.subgoals:
            a = g.anchor
            anchor_cells.append((int(round(a[0])), int(round(a[1]))) if graph.kind == "discrete"
                                else (math.floor(a[1] / h), math.floor(a[0] / h)))
        dists = np.stack([maze.bfs([ac]) for ac in anchor_cells]).astype(np.float64)
        dists[dists < 0] = np.inf
        for i in missing:
            r, c = cells[i]
            out[i] = int(np.argmin(dists[:, r, c]))
    return out


def _anchor_cell(graph: SubgoalGraph, sid: int, cell_size: float | None) -> tuple:
    a = graph.subgoals[sid].anchor
    if graph.kind == "discrete":
        return int(round(a[0])), int(round(a[1]))
    h = cell_size or 1.0
    return math.floor(a[1] / h), math.floor(a[0] / h)


def build_potentials(maze: Maze, graph: SubgoalGraph, final_goal, cell_size: float | None = None,
                     regions: np.ndarray | None = None) -> PotentialField:
    """Concatenated potential toward ``final_goal`` (a cell).

    Regions with no path to the goal region in the subgoal graph are listed
    in ``unreachable`` and head straight for the goal above every reachable
    offset.
    """
    goal = (int(final_goal[0]), int(final_goal[1]))
    if not maze.is_free(goal):
        raise UnreachableGoal(f"goal {goal} is not a free cell")
    cells = maze.free_cells
    index = maze.cell_index
    reg = cell_regions(maze, graph, cell_size) if regions is None else np.asarray(regions, dtype=np.int64)
    goal_dist = maze.bfs([goal])
    if any(goal_dist[c] < 0 for c in cells):
        raise UnreachableGoal(f"goal {goal} is not reachable from every free cell")
    goal_region = int(reg[index[goal]])
    hops = graph.hops_to(goal_region)
    present = sorted(set(reg.tolist()))
    unreachable = {r for r in present if r not in hops}
    top = max(hops.values(), default=0) + 1
    phi = np.zeros(len(cells))
    offsets, exits, scales = {}, {}, {}
    bfs_cache: dict = {}
    for r in present:
        if r in unreachable:
            exit_, target, offsets[r] = GOAL, goal, top
        else:
            exit_ = plan_next_subgoal(graph, r, goal_region)
            target = goal if exit_ == GOAL else _anchor_cell(graph, exit_, cell_size)
            offsets[r] = hops[r]
        exits[r] = exit_
        if target not in bfs_cache:
            bfs_cache[target] = maze.bfs([target])
        dist = bfs_cache[target]
        members = np.flatnonzero(reg == r)
        d = np.array([dist[cells[i]] for i in members], dtype=np.float64)
        scale = float(d.max()) if len(d) else 0.0
        scales[r] = scale
        phi[members] = offsets[r] + (d / scale if scale > 0 else 0.0)
    return PotentialField(list(cells), phi, reg, offsets, exits, scales, goal, unreachable, cell_size)


def single_region_potentials(maze: Maze, final_goal, cell_size: float | None = None) -> PotentialField:
    """One region covering the maze: normalized BFS distance to the goal."""
    goal = (int(final_goal[0]), int(final_goal[1]))
    dist = maze.bfs([goal])
    cells = maze.free_cells
    d = np.array([dist[c] for c in cells], dtype=np.float64)
    if (d < 0).any():
        raise UnreachableGoal(f"goal {goal} is not reachable from every free cell")
    scale = float(d.max()) or 1.0
    return PotentialField(list(cells), d / scale, np.zeros(len(cells), np.int64), {0: 0}, {0: GOAL},
                          {0: scale}, goal, set(), cell_size)


def euclidean_potentials(maze: Maze, final_goal, cell_size: float | None = None) -> PotentialField:
    """Wall-blind potential: straight-line distance to the goal, scaled to [0, 1]."""
    goal = (int(final_goal[0]), int(final_goal[1]))
    cells = maze.free_cells
    d = np.array([math.hypot(r - goal[0], c - goal[1]) for r, c in cells])
    scale = float(d.max()) or 1.0
    return PotentialField(list(cells), d / scale, np.zeros(len(cells), np.int64), {0: 0}, {0: GOAL},
                          {0: scale}, goal, set(), cell_size)


def shaping_term(phi_s: float, phi_next: float, gamma: float, kappa: float = 1.0, done: bool = False) -> float:
    return kappa * (phi_s - gamma * (0.0 if done else phi_next))


def shaped_reward(field: PotentialField, tr: Transition, gamma: float, predicted: int, planned: int,
                  kappa: float = 1.0) -> float:
    """Environment reward plus the gated shaping term."""
    if predicted != planned:
        return float(tr.reward)
    return float(tr.reward) + shaping_term(field.value(tr.state), field.value(tr.next_state), gamma, kappa, tr.done)


def greedy_descent(maze: Maze, phi: PotentialField, start, max_steps: int = 10_000) -> tuple[list, bool]:
    """Follow the lowest-potential neighbor while it strictly decreases."""
    cur = (int(start[0]), int(start[1]))
    path = [cur]
    for _ in range(max_steps):
        if cur == phi.goal:
            return path, True
        here = phi.phi[phi.index[cur]]
        best = min(maze.neighbors(cur), key=lambda c: (phi.phi[phi.index[c]], c), default=None)
        if best is None or phi.phi[phi.index[best]] >= here:
            return path, False
        cur = best
        path.append(cur)
    return path, cur == phi.goal


def monotonicity_violations(maze: Maze, field: PotentialField, graph: SubgoalGraph) -> list:
    """Region cells whose shortest-path successor toward the exit does not lower the potential."""
    bad = []
    for r, exit_ in field.exits.items():
        target = field.goal if exit_ == GOAL else _anchor_cell(graph, exit_, field.cell_size)
        dist = maze.bfs([target])
        for i in np.flatnonzero(field.regions == r):
            cell = field.cells[i]
            for nb in maze.neighbors(cell):
                j = field.index[nb]
                if dist[nb] == dist[cell] - 1 and field.regions[j] == r and not field.phi[j] < field.phi[i]:
                    bad.append((cell, nb))
    return bad


@dataclass
class InvarianceReport:
    checked: int
    mismatches: list
    max_offset_error: float  # max |Q_shaped - Q - phi(s)| over nonterminal states

    @property
    def ok(self) -> bool:
        return not self.mismatches


def goal_reward(mdp, goal: int) -> tuple[np.ndarray, np.ndarray]:
    """Sparse reward tensor (1 on entering ``goal``) and terminal mask."""
    reward = np.zeros(mdp.transition.shape)
    reward[:, :, goal] = 1.0
    terminal = np.zeros(mdp.n_states, dtype=bool)
    terminal[goal] = True
    return reward, terminal


def potential_reward(phi: np.ndarray, terminal: np.ndarray, gamma: float, n_actions: int,
                     kappa: float = 1.0, zero_terminal: bool = True) -> np.ndarray:
    """Shaping tensor F[s, a, s'] = kappa * (phi(s) - gamma * phi(s')).

    With ``zero_terminal`` terminal states count as potential 0; otherwise
    their own potential is used.
    """
    phi_next = np.where(terminal, 0.0, phi) if zero_terminal else phi
    f = kappa * (phi[:, None] - gamma * phi_next[None, :])
    return np.repeat(f[:, None, :], n_actions, axis=1)


def greedy_sets(q: np.ndarray, tol: float) -> list:
    best = q.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row >= b - tol).tolist()) for row, b in zip(q, best[:, 0])]


def verify_invariance(mdp, field, gamma: float = 0.99, tol: float = 1e-9, goal: int | None = None,
                      bonus: np.ndarray | None = None, kappa: float = 1.0,
                      zero_terminal: bool = True) -> InvarianceReport:
    """Compare greedy-action sets with and without (ungated) shaping.

    ``field`` is a PotentialField or a per-state potential array. ``bonus``
    adds an arbitrary reward tensor on top, which serves as a negative
    control when it is not of potential form. ``max_offset_error`` checks
    the exact relation Q_shaped = Q + kappa * phi(s), which holds only with
    ``zero_terminal``.
    """
    from .rl import value_iteration

    phi = np.asarray(field.phi if isinstance(field, PotentialField) else field, dtype=np.float64)
    if goal is None:
        if not isinstance(field, PotentialField) or mdp.state_coords is None:
            raise ValueError("goal state index required")
        goal = mdp.state_index[field.goal]
    reward, terminal = goal_reward(mdp, goal)
    shaped = reward + potential_reward(phi, terminal, gamma, mdp.n_actions, kappa, zero_terminal)
    if bonus is not None:
        shaped = shaped + bonus
    vi_tol = 1e-13
    _, q0 = value_iteration(mdp, reward, gamma, vi_tol, terminal=terminal)
    _, q1 = value_iteration(mdp, shaped, gamma, vi_tol, terminal=terminal)
    live = np.flatnonzero(~terminal)
    g0, g1 = greedy_sets(q0, tol), greedy_sets(q1, tol)
    mismatches = [int(s) for s in live if g0[s] != g1[s]]
    err = float(np.abs(q1[live] - q0[live] - kappa * phi[live, None]).max()) if len(live) else 0.0
    return InvarianceReport(len(live), mismatches, err)


def potential_map(field: PotentialField) -> CapacityMap:
    """Potential field in CapacityMap form, for export and rendering."""
    entries = {}
    for cell, v in zip(field.cells, field.phi.tolist()):
        pos = (float(cell[0]), float(cell[1]))
        entries[tuple(cell)] = CapacityEntry(float(v), 1, 1, True, pos)
    return CapacityMap(entries, "potential")


def non_potential_bonus(mdp, goal: int, gamma: float, margin: float = 0.1) -> np.ndarray:
    """Reward tensor that is not of potential form and flips one greedy choice.

    The first live state with a non-greedy action gets that action's gap to
    the optimum plus ``margin`` as a bonus on every outcome.
    """
    from .rl import value_iteration

    reward, terminal = goal_reward(mdp, goal)
    _, q = value_iteration(mdp, reward, gamma, 1e-13, terminal=terminal)
    bonus = np.zeros(mdp.transition.shape)
    for s in np.flatnonzero(~terminal):
        gap = q[s].max() - q[s]
        worse = np.flatnonzero(gap > 1e-6)
        if len(worse):
            a = int(worse[0])
            bonus[s, a, :] = gap[a] + margin
            return bonus
    raise ValueError("every action is greedy everywhere; no choice to flip")
