"""Bundled maze fixtures.

``demo``       11x11 tree maze with four three-way junctions.
``large``      21x21 tree maze with eight junctions, the large-maze analog.
``tjunction``  a single T-junction with three arms, for clustering checks.
``uobstacle``  a U-shaped wall between start and goal that traps a
               straight-line potential.
"""

from importlib import resources

import numpy as np

from .mdpcore import Maze, parse_maze

NAMES = ("demo", "large", "tjunction", "uobstacle")


def maze_text(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown bundled maze {name!r}; choose from {NAMES}")
    return resources.files("causalcap").joinpath("data", f"{name}.txt").read_text()


def load_builtin(name: str) -> Maze:
    return parse_maze(maze_text(name))


def random_maze(rows: int, cols: int, seed: int, loop_prob: float = 0.0) -> Maze:
    """Depth-first perfect maze on a ``rows`` x ``cols`` room lattice.

    The ASCII grid is ``(2 rows + 1) x (2 cols + 1)``. With ``loop_prob`` > 0
    each remaining interior wall between two rooms is knocked out with that
    probability, adding cycles. Every free cell stays connected.
    """
    if rows < 1 or cols < 1:
        raise ValueError("maze needs at least one room")
    rng = np.random.default_rng(seed)
    h, w = 2 * rows + 1, 2 * cols + 1
    grid = np.ones((h, w), dtype=bool)
    seen = np.zeros((rows, cols), dtype=bool)
    stack = [(0, 0)]
    seen[0, 0] = True
    grid[1, 1] = False
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
                if 0 <= r + dr < rows and 0 <= c + dc < cols and not seen[r + dr, c + dc]]
        if not nbrs:
            stack.pop()
            continue
        nr, nc = nbrs[int(rng.integers(len(nbrs)))]
        seen[nr, nc] = True
        grid[2 * nr + 1, 2 * nc + 1] = False
        grid[r + nr + 1, c + nc + 1] = False
        stack.append((nr, nc))
    if loop_prob > 0:
        for r in range(1, h - 1):
            for c in range(1, w - 1):
                between = (r % 2 == 1) != (c % 2 == 1)
                if grid[r, c] and between and rng.random() < loop_prob:
                    grid[r, c] = False
    return Maze(grid)
