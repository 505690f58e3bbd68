import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalcap.errors import BadDims, InvalidState, NoFreeCell, OpenBoundary, RaggedGrid, UnknownChar
from causalcap.mazes import NAMES, load_builtin, random_maze
from causalcap.mdpcore import (GridEnv, Maze, PointEnv, build_tabular, format_maze, load_maze, parse_maze,
                               random_tabular, step_continuous, step_discrete)

UP, DOWN, LEFT, RIGHT = range(4)


def test_corridor_parse():
    m = parse_maze("#####\n#...#\n#####")
    assert m.free_cells == [(1, 1), (1, 2), (1, 3)]
    assert m.neighbors((1, 2)) == [(1, 1), (1, 3)]


def test_single_cell_has_no_neighbors():
    m = parse_maze("###\n#.#\n###")
    assert m.free_cells == [(1, 1)]
    assert m.neighbors((1, 1)) == []


def test_demo_junctions_by_enumeration():
    m = load_builtin("demo")
    # independent count over the raw character grid
    rows = [r for r in m.walls]
    junctions = set()
    for r in range(1, m.height - 1):
        for c in range(1, m.width - 1):
            if rows[r][c]:
                continue
            free = sum(not rows[r + dr][c + dc] for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)))
            if free >= 3:
                junctions.add((r, c))
    assert {c for c in m.free_cells if m.degree(c) >= 3} == junctions
    assert len(junctions) == 4


@pytest.mark.parametrize("text,err", [
    ("####\n#..#\n###", RaggedGrid),
    ("#####\n#.x.#\n#####", UnknownChar),
    ("###\n###\n###", NoFreeCell),
    ("#####\n....#\n#####", OpenBoundary),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_maze(text)


@pytest.mark.parametrize("name", NAMES)
def test_format_roundtrip_builtin(name, tmp_path):
    m = load_builtin(name)
    p = tmp_path / "m.txt"
    p.write_text(format_maze(m))
    assert load_maze(p) == m


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000), st.floats(0, 0.5))
def test_random_maze_roundtrip_and_connected(rows, cols, seed, loops):
    m = random_maze(rows, cols, seed, loops)
    assert parse_maze(format_maze(m)) == m
    dist = m.bfs([m.free_cells[0]])
    assert all(dist[c] >= 0 for c in m.free_cells)


def test_step_blocked_by_wall():
    m = parse_maze("#####\n#...#\n#####")
    tr = step_discrete(m, (1, 2), UP)
    assert tr.next_state == (1, 2)


def test_step_right_from_junction():
    m = load_builtin("demo")
    j = next(c for c in m.free_cells if m.degree(c) >= 3 and m.is_free((c[0], c[1] + 1)))
    assert step_discrete(m, j, RIGHT).next_state == (j[0], j[1] + 1)


def test_step_invalid_state():
    m = load_builtin("demo")
    with pytest.raises(InvalidState):
        step_discrete(m, (0, 0), UP)


def test_noise_direction_frequencies():
    m = parse_maze("#####\n#...#\n#...#\n#...#\n#####")
    rng = np.random.default_rng(0)
    n = 100_000
    counts = {}
    for _ in range(n):
        nxt = step_discrete(m, (2, 2), UP, noise=0.2, rng=rng).next_state
        counts[nxt] = counts.get(nxt, 0) + 1
    freq = {k: v / n for k, v in counts.items()}
    assert abs(freq[(1, 2)] - 0.8) < 0.01
    for cell in ((3, 2), (2, 1), (2, 3)):
        assert abs(freq[cell] - 0.2 / 3) < 0.01


def test_goal_sets_done_and_reward():
    m = parse_maze("#####\n#S.G#\n#####")
    tr = step_discrete(m, (1, 2), RIGHT)
    assert tr.done and tr.reward == 1.0


def test_continuous_open_move():
    m = parse_maze("#######\n#.....#\n#.....#\n#.....#\n#######")
    tr = step_continuous(m, (3.0, 2.0), (0.25, 0.0), cell_size=1.0, step_max=0.3)
    assert tr.next_state == pytest.approx((3.25, 2.0), abs=1e-12)


def test_continuous_clamp_into_wall():
    m = parse_maze("#######\n#.....#\n#.....#\n#.....#\n#######")
    # right wall begins at x = 6; start 0.1 units away
    tr = step_continuous(m, (5.9, 2.5), (0.3, 0.0), cell_size=1.0)
    assert tr.next_state[0] == pytest.approx(6.0, abs=1e-5)
    assert tr.next_state[0] < 6.0
    assert tr.next_state[1] == 2.5


def test_continuous_diagonal_slides_along_wall():
    m = parse_maze("#######\n#.....#\n#.....#\n#.....#\n#######")
    # top wall occupies y < 1; move up-right from 0.1 below it
    tr = step_continuous(m, (3.0, 1.1), (0.2, -0.2), cell_size=1.0)
    x, y = tr.next_state
    assert m.point_is_free(x, y)
    assert x == pytest.approx(3.2, abs=1e-9)  # tangential component kept
    assert y == pytest.approx(1.0, abs=1e-5)  # normal component stopped at the wall


def test_continuous_action_clipped():
    m = parse_maze("#######\n#.....#\n#.....#\n#.....#\n#######")
    tr = step_continuous(m, (3.0, 2.0), (3.0, 4.0), cell_size=1.0, step_max=0.3)
    assert math.hypot(tr.next_state[0] - 3.0, tr.next_state[1] - 2.0) == pytest.approx(0.3)


@given(st.integers(0, 10_000))
def test_point_rollout_never_enters_walls(seed):
    m = random_maze(3, 3, seed, 0.3)
    env = PointEnv(m)
    rng = np.random.default_rng(seed)
    states, _ = env.rollout(env.random_start(rng), 300, rng)
    assert all(env.is_free(s) for s in states)


def test_corridor_tabular_rows():
    mdp = build_tabular(parse_maze("#####\n#...#\n#####"))
    assert mdp.n_states == 3
    p = mdp.transition[1]
    assert p[LEFT, 0] == 1.0 and p[RIGHT, 2] == 1.0
    assert p[UP, 1] == 1.0 and p[DOWN, 1] == 1.0


@pytest.mark.parametrize("noise", [0.0, 0.2])
@pytest.mark.parametrize("name", NAMES)
def test_rows_sum_to_one(name, noise):
    p = build_tabular(load_builtin(name), noise).transition
    np.testing.assert_allclose(p.sum(axis=2), 1.0, atol=1e-12)


def test_noisy_junction_row():
    m = load_builtin("demo")
    mdp = build_tabular(m, 0.2)
    j = next(c for c in m.free_cells if m.degree(c) == 3)
    idx = m.cell_index
    row = mdp.transition[idx[j], UP]
    expect = np.zeros(mdp.n_states)
    for b in range(4):
        expect[idx[m.move(j, b)]] += 0.8 if b == UP else 0.2 / 3
    np.testing.assert_allclose(row, expect, atol=1e-12)


def test_random_tabular_branching_one_is_deterministic():
    p = random_tabular(4, 2, 1, seed=7).transition
    assert ((p == 1.0).sum(axis=2) == 1).all()


def test_random_tabular_seeded():
    a = random_tabular(10, 3, 3, seed=5).transition
    b = random_tabular(10, 3, 3, seed=5).transition
    np.testing.assert_array_equal(a, b)


def test_random_tabular_rows_sum():
    p = random_tabular(50, 4, 3, seed=1).transition
    assert np.abs(p.sum(axis=2) - 1).max() < 1e-12
    assert ((p > 0).sum(axis=2) <= 3).all()


def test_random_tabular_bad_dims():
    with pytest.raises(BadDims):
        random_tabular(1, 2, 1, 0)


def test_grid_env_rollout_follows_tensor():
    env = GridEnv(load_builtin("demo"), noise=0.1)
    states, actions = env.rollout(env.maze.free_cells[0], 200, np.random.default_rng(3))
    idx = env.maze.cell_index
    p = env.mdp.transition
    for t in range(200):
        assert p[idx[tuple(states[t])], actions[t, 0], idx[tuple(states[t + 1])]] > 0


def test_maze_equality():
    assert load_builtin("demo") == load_builtin("demo")
    assert load_builtin("demo") != load_builtin("large")
    assert isinstance(load_builtin("demo"), Maze)
