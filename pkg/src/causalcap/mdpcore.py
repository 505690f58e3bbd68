"""Maze environments and exact tabular MDPs.

Discrete states are ``(row, col)`` cells. Continuous states are ``(x, y)``
points in maze units where cell ``(r, c)`` covers
``[c*h, (c+1)*h) x [r*h, (r+1)*h)`` for cell size ``h``, so ``x`` runs along
columns and ``y`` along rows. The default ``h = 0.8`` keeps a cell's
half-diagonal below the 0.7 same-state radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    BadDims,
    InvalidState,
    NoFreeCell,
    OpenBoundary,
    RaggedGrid,
    UnknownChar,
)

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("up", "down", "left", "right")
DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))

STEP_MAX = 0.3
CELL_SIZE = 0.8
# distance kept from walls after a collision, so points stay strictly inside free space
MARGIN = 1e-6


@dataclass(frozen=True, eq=False)
class Maze:
    walls: np.ndarray  # (height, width) bool, True = Wall
    start: tuple[int, int] | None = None
    goal: tuple[int, int] | None = None

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @cached_property
    def free_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(~self.walls)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    @cached_property
    def cell_index(self) -> dict[tuple[int, int], int]:
        return {cell: i for i, cell in enumerate(self.free_cells)}

    @cached_property
    def walls_u8(self) -> np.ndarray:
        return np.ascontiguousarray(self.walls, dtype=np.uint8)

    def is_free(self, cell) -> bool:
        r, c = int(cell[0]), int(cell[1])
        if r < 0 or c < 0 or r >= self.height or c >= self.width:
            return False
        return not self.walls[r, c]

    def neighbors(self, cell) -> list[tuple[int, int]]:
        r, c = cell
        return [(r + dr, c + dc) for dr, dc in DELTAS if self.is_free((r + dr, c + dc))]

    def degree(self, cell) -> int:
        return len(self.neighbors(cell))

    def move(self, cell, a: int) -> tuple[int, int]:
        dr, dc = DELTAS[a]
        target = (cell[0] + dr, cell[1] + dc)
        return target if self.is_free(target) else (int(cell[0]), int(cell[1]))

    def point_is_free(self, x: float, y: float) -> bool:
        return self.is_free((math.floor(y), math.floor(x)))

    def bfs(self, sources, allowed=None) -> np.ndarray:
        """Hop distances from ``sources``; -1 where unreachable.

        ``allowed`` optionally restricts the search to a boolean cell mask.
        """
        dist = np.full(self.walls.shape, -1, dtype=np.int64)
        frontier = []
        for cell in sources:
            if self.is_free(cell) and (allowed is None or allowed[cell]):
                dist[cell] = 0
                frontier.append(tuple(cell))
        d = 0
        while frontier:
            d += 1
            nxt = []
            for cell in frontier:
                for nb in self.neighbors(cell):
                    if dist[nb] < 0 and (allowed is None or allowed[nb]):
                        dist[nb] = d
                        nxt.append(nb)
            frontier = nxt
        return dist

    def __eq__(self, other):
        if not isinstance(other, Maze):
            return NotImplemented
        return (np.array_equal(self.walls, other.walls)
                and self.start == other.start and self.goal == other.goal)

    __hash__ = None


def parse_maze(text: str) -> Maze:
    """Parse an ASCII maze: ``#`` wall, ``.`` free, ``S`` start, ``G`` goal."""
    lines = [ln.rstrip("\r") for ln in text.strip("\n").split("\n")]
    if not lines or not lines[0]:
        raise NoFreeCell("empty maze text")
    width = len(lines[0])
    for i, ln in enumerate(lines):
        if len(ln) != width:
            raise RaggedGrid(f"row {i} has length {len(ln)}, expected {width}")
    height = len(lines)
    if width < 3 or height < 3:
        raise RaggedGrid(f"maze must be at least 3x3, got {height}x{width}")
    walls = np.zeros((height, width), dtype=bool)
    start = goal = None
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch == "#":
                walls[r, c] = True
            elif ch == "S":
                start = (r, c)
            elif ch == "G":
                goal = (r, c)
            elif ch != ".":
                raise UnknownChar(f"unknown character {ch!r} at row {r}, col {c}")
    if walls.all():
        raise NoFreeCell("maze has no free cell")
    border = np.concatenate([walls[0], walls[-1], walls[:, 0], walls[:, -1]])
    if not border.all():
        raise OpenBoundary("boundary cells must all be walls")
    return Maze(walls=walls, start=start, goal=goal)


def format_maze(maze: Maze) -> str:
    rows = []
    for r in range(maze.height):
        chars = []
        for c in range(maze.width):
            if maze.walls[r, c]:
                chars.append("#")
            elif (r, c) == maze.start:
                chars.append("S")
            elif (r, c) == maze.goal:
                chars.append("G")
            else:
                chars.append(".")
        rows.append("".join(chars))
    return "\n".join(rows) + "\n"


def load_maze(path) -> Maze:
    return parse_maze(Path(path).read_text())


@dataclass(frozen=True)
class Transition:
    state: tuple
    action: object
    next_state: tuple
    reward: float = 0.0
    done: bool = False
    episode: int = 0
    t: int = 0


def _check_cell(maze, s):
    if not maze.is_free(s):
        raise InvalidState(f"{tuple(s)!r} is not a free cell")


def step_discrete(maze: Maze, s, a: int, noise: float = 0.0, rng=None, goal=None,
                  episode: int = 0, t: int = 0) -> Transition:
    """One gridworld step with optional slip noise.

    With probability ``1 - noise`` the intended move is taken, otherwise one
    of the three other directions uniformly. Blocked moves stay in place.
    """
    _check_cell(maze, s)
    if not 0.0 <= noise <= 0.5:
        raise ValueError(f"noise must be in [0, 0.5], got {noise}")
    s = (int(s[0]), int(s[1]))
    direction = int(a)
    if noise > 0.0:
        if rng is None:
            raise ValueError("a random generator is required when noise > 0")
        if rng.random() < noise:
            others = [b for b in range(4) if b != direction]
            direction = others[int(rng.integers(3))]
    nxt = maze.move(s, direction)
    goal = maze.goal if goal is None else tuple(goal)
    done = goal is not None and nxt == goal
    return Transition(s, int(a), nxt, 1.0 if done else 0.0, done, episode, t)


def clip_action(a, step_max: float = STEP_MAX) -> tuple[float, float]:
    dx, dy = float(a[0]), float(a[1])
    norm = math.hypot(dx, dy)
    if norm > step_max:
        dx *= step_max / norm
        dy *= step_max / norm
    return dx, dy


def step_continuous(maze: Maze, s, a, rng=None, goal=None, step_max: float = STEP_MAX,
                    goal_radius: float = 0.7, episode: int = 0, t: int = 0,
                    cell_size: float = CELL_SIZE) -> Transition:
    """Point-mass step: ``s + a`` with slide-along-wall collision handling.

    ``rng`` is accepted for interface symmetry; the dynamics are deterministic.
    """
    x, y = float(s[0]), float(s[1])
    if not maze.point_is_free(x / cell_size, y / cell_size):
        raise InvalidState(f"point {(x, y)!r} is not inside free space")
    dx, dy = clip_action(a, step_max)
    gx, gy = kernels.slide_step(maze.walls_u8, x / cell_size, y / cell_size,
                                dx / cell_size, dy / cell_size, MARGIN)
    nx, ny = gx * cell_size, gy * cell_size
    done = False
    if goal is not None:
        done = math.hypot(nx - goal[0], ny - goal[1]) < goal_radius
    return Transition((x, y), (dx, dy), (nx, ny), 1.0 if done else 0.0, done, episode, t)


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray  # (n_states, n_actions, n_states)
    state_coords: list | None = None

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise BadDims(f"transition must be (n, A, n), got {p.shape}")
        if (p < 0).any():
            raise ValueError("transition probabilities must be nonnegative")
        if np.abs(p.sum(axis=2) - 1.0).max() > 1e-9:
            raise ValueError("every (s, a) row must sum to 1")
        object.__setattr__(self, "transition", p)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def marginal(self, s: int) -> np.ndarray:
        """Next-state distribution under the uniform random policy."""
        return self.transition[s].mean(axis=0)

    @cached_property
    def state_index(self) -> dict:
        if self.state_coords is None:
            return {}
        return {tuple(c): i for i, c in enumerate(self.state_coords)}

    @cached_property
    def sparse_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded ``(next_state, cumulative_prob)`` tables, shape (n, A, K)."""
        p = self.transition
        n, n_act, _ = p.shape
        support = [[np.flatnonzero(p[s, a] > 0) for a in range(n_act)] for s in range(n)]
        k = max(len(x) for row in support for x in row)
        nxt = np.zeros((n, n_act, k), dtype=np.int64)
        cum = np.ones((n, n_act, k), dtype=np.float64)
        for s in range(n):
            for a in range(n_act):
                idx = support[s][a]
                c = np.cumsum(p[s, a, idx])
                c[-1] = 1.0
                nxt[s, a, : len(idx)] = idx
                nxt[s, a, len(idx):] = idx[-1]
                cum[s, a, : len(idx)] = c
        return nxt, cum


def build_tabular(maze: Maze, noise: float = 0.0) -> TabularMDP:
    """Exact transition tensor of ``step_discrete`` over the free cells."""
    cells = maze.free_cells
    index = maze.cell_index
    n = len(cells)
    p = np.zeros((n, 4, n))
    for s, cell in enumerate(cells):
        targets = [index[maze.move(cell, b)] for b in range(4)]
        for a in range(4):
            p[s, a, targets[a]] += 1.0 - noise
            for b in range(4):
                if b != a:
                    p[s, a, targets[b]] += noise / 3.0
    return TabularMDP(p, list(cells))


def random_tabular(n_states: int, n_actions: int, branching: int, seed: int) -> TabularMDP:
    """Seeded random MDP whose rows have at most ``branching`` nonzeros."""
    if n_states < 2 or n_actions < 2 or branching < 1:
        raise BadDims(f"need n_states>=2, n_actions>=2, branching>=1; got "
                      f"{n_states}, {n_actions}, {branching}")
    rng = np.random.default_rng(seed)
    k = min(branching, n_states)
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            width = int(rng.integers(1, k + 1))
            idx = rng.choice(n_states, size=width, replace=False)
            w = rng.random(width) + 1e-3
            p[s, a, idx] = w / w.sum()
    return TabularMDP(p)


class GridEnv:
    """Discrete maze environment used by the samplers and the RL harness."""

    kind = "discrete"
    n_actions = 4

    def __init__(self, maze: Maze, noise: float = 0.0):
        self.maze = maze
        self.noise = float(noise)
        self.mdp = build_tabular(maze, noise)
        self.tag = f"grid{maze.height}x{maze.width}-noise{self.noise:g}"

    def random_start(self, rng) -> tuple[int, int]:
        return self.maze.free_cells[int(rng.integers(len(self.maze.free_cells)))]

    def rollout(self, start, horizon: int, rng):
        """Uniform random-policy rollout; returns (states (h+1, 2), actions (h, 2))."""
        nxt, cum = self.mdp.sparse_tables
        u = rng.random((horizon, 2))
        s0 = self.maze.cell_index[(int(start[0]), int(start[1]))]
        acts, idx = kernels.tabular_rollout(nxt, cum, s0, u)
        cells = np.asarray(self.maze.free_cells, dtype=np.int64)
        actions = np.zeros((horizon, 2), dtype=np.int64)
        actions[:, 0] = acts
        return cells[idx], actions

    def key(self, state) -> tuple[int, int]:
        return int(state[0]), int(state[1])

    def keys(self, states) -> np.ndarray:
        return np.asarray(states, dtype=np.int64)

    def cell_of(self, state) -> tuple[int, int]:
        return int(state[0]), int(state[1])

    def position(self, state) -> np.ndarray:
        return np.asarray(state, dtype=np.float64)

    def cell_position(self, cell) -> np.ndarray:
        return np.asarray(cell, dtype=np.float64)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(2), np.array([self.maze.height - 1.0, self.maze.width - 1.0])


@dataclass
class PointEnv:
    """Continuous point-mass maze; keys are bins of width ``bin_width``.

    Collision handling runs in grid units (one cell per unit) and states are
    scaled by ``cell_size`` on the way out.
    """

    maze: Maze
    step_max: float = STEP_MAX
    bin_width: float = 0.7
    cell_size: float = CELL_SIZE
    kind: str = field(default="continuous", init=False)

    @property
    def tag(self) -> str:
        return f"point{self.maze.height}x{self.maze.width}-step{self.step_max:g}-cell{self.cell_size:g}"

    def random_start(self, rng) -> tuple[float, float]:
        r, c = self.maze.free_cells[int(rng.integers(len(self.maze.free_cells)))]
        u = rng.random(2)
        span = 1.0 - 2 * MARGIN
        h = self.cell_size
        return (c + MARGIN + u[0] * span) * h, (r + MARGIN + u[1] * span) * h

    def sample_displacements(self, horizon: int, rng) -> np.ndarray:
        u = rng.random((horizon, 2))
        radius = self.step_max * np.sqrt(u[:, 0])
        angle = 2.0 * np.pi * u[:, 1]
        return np.ascontiguousarray(np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1))

    def rollout(self, start, horizon: int, rng):
        disp = self.sample_displacements(horizon, rng)
        h = self.cell_size
        grid = kernels.point_rollout(self.maze.walls_u8, float(start[0]) / h, float(start[1]) / h,
                                     np.ascontiguousarray(disp / h), MARGIN)
        return grid * h, disp

    def step(self, s, a, goal=None, goal_radius: float = 0.7, episode: int = 0, t: int = 0) -> Transition:
        return step_continuous(self.maze, s, a, goal=goal, step_max=self.step_max, goal_radius=goal_radius,
                               episode=episode, t=t, cell_size=self.cell_size)

    def is_free(self, state) -> bool:
        return self.maze.point_is_free(state[0] / self.cell_size, state[1] / self.cell_size)

    def key(self, state) -> tuple[int, int]:
        return (math.floor(state[0] / self.bin_width), math.floor(state[1] / self.bin_width))

    def keys(self, states) -> np.ndarray:
        return np.floor(np.asarray(states, dtype=np.float64) / self.bin_width).astype(np.int64)

    def cell_of(self, state) -> tuple[int, int]:
        return math.floor(state[1] / self.cell_size), math.floor(state[0] / self.cell_size)

    def position(self, state) -> np.ndarray:
        return np.asarray(state, dtype=np.float64)

    def cell_position(self, cell) -> np.ndarray:
        return np.array([cell[1] + 0.5, cell[0] + 0.5]) * self.cell_size

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(2), np.array([float(self.maze.width), float(self.maze.height)]) * self.cell_size
