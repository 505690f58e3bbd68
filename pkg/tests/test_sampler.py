import numpy as np
import pytest

from causalcap.errors import EmptyCounts, MalformedLine
from causalcap.mazes import load_builtin
from causalcap.mdpcore import GridEnv, PointEnv, parse_maze
from causalcap.sampler import (TrajectorySet, explore, frontier_candidates, frontier_resample, log_io,
                               read_trajectories, rollout_random, visit_counts, write_trajectories)

CORRIDOR = parse_maze("#####\n#...#\n#####")


def test_corridor_episode_is_chained():
    tr = rollout_random(GridEnv(CORRIDOR), 1, 10, seed=0)
    assert len(tr) == 10
    assert tr.check_chaining()
    np.testing.assert_array_equal(tr.t, np.arange(10))


def test_uniform_action_frequencies():
    tr = rollout_random(GridEnv(load_builtin("demo")), 10, 10_000, seed=1)
    freq = np.bincount(tr.actions[:, 0], minlength=4) / len(tr)
    assert np.abs(freq - 0.25).max() < 0.01


def test_demo_coverage():
    env = GridEnv(load_builtin("demo"))
    tr = rollout_random(env, 500, 600, seed=0)
    assert set(visit_counts(tr, env).counts) == set(env.maze.free_cells)


@pytest.mark.parametrize("env", [GridEnv(load_builtin("demo"), 0.1), PointEnv(load_builtin("tjunction"))],
                         ids=["grid", "point"])
def test_worker_count_does_not_change_output(env):
    a = rollout_random(env, 12, 50, seed=4, workers=1)
    b = rollout_random(env, 12, 50, seed=4, workers=3)
    assert a.equals(b)
    assert not a.equals(rollout_random(env, 12, 50, seed=5))


def test_point_rollouts_chain():
    tr = rollout_random(PointEnv(load_builtin("demo")), 5, 100, seed=2)
    assert tr.check_chaining()
    assert tr.kind == "continuous"


def test_frontier_prefers_low_counts():
    env = GridEnv(load_builtin("demo"))
    start = (1, 1)
    tr = rollout_random(env, 5, 30, seed=0, start=start)
    counts = visit_counts(tr, env)
    cands = frontier_candidates(counts, 0.1)
    lowest = min(counts.counts.values())
    assert all(counts.counts[k] <= sorted(counts.counts.values())[len(cands) - 1] for k in cands)
    assert any(counts.counts[k] == lowest for k in cands)
    assert start not in cands


def test_frontier_equal_counts_selects_all():
    from causalcap.sampler import VisitCounts

    counts = VisitCounts({(1, 1): 3, (1, 2): 3, (1, 3): 3}, {k: k for k in [(1, 1), (1, 2), (1, 3)]})
    assert frontier_candidates(counts, 0.1) == [(1, 1), (1, 2), (1, 3)]
    starts = frontier_resample(GridEnv(CORRIDOR), counts, 300, 1, seed=0)
    firsts = np.bincount(starts.states[:, 1], minlength=4)[1:]
    assert firsts.min() > 70


def test_frontier_empty_counts():
    from causalcap.sampler import VisitCounts

    with pytest.raises(EmptyCounts):
        frontier_candidates(VisitCounts({}, {}))


def test_frontier_round_closes_long_corridor():
    maze = parse_maze("#" * 22 + "\n#" + "." * 20 + "#\n" + "#" * 22)
    env = GridEnv(maze)
    plain = rollout_random(env, 2, 60, seed=0, start=(1, 1))
    assert len(visit_counts(plain, env)) < len(maze.free_cells)
    full = explore(env, 2, 60, seed=0, frontier_rounds=1, frontier_episodes=60, start=(1, 1))
    assert len(visit_counts(full, env)) == len(maze.free_cells)
    assert full.metadata["policy"] == "random+frontier"


def test_empty_roundtrip(tmp_path):
    p = tmp_path / "t.txt"
    write_trajectories(p, TrajectorySet.empty("discrete"))
    text = p.read_text()
    assert all(line.startswith("#") for line in text.splitlines())
    assert len(read_trajectories(p)) == 0


@pytest.mark.parametrize("env", [GridEnv(CORRIDOR), PointEnv(load_builtin("demo"))], ids=["grid", "point"])
def test_roundtrip_bit_exact(env, tmp_path):
    tr = rollout_random(env, 1, 3, seed=9)
    p = tmp_path / "t.txt"
    log_io(p, tr, "write")
    data = [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]
    assert len(data) == 3
    back = log_io(p)
    assert back.equals(tr)
    assert back.metadata["seed"] == "9"


def test_truncated_line_reports_line_number(tmp_path):
    tr = rollout_random(GridEnv(CORRIDOR), 1, 3, seed=0)
    p = tmp_path / "t.txt"
    write_trajectories(p, tr)
    lines = p.read_text().splitlines()
    lines[-1] = " ".join(lines[-1].split()[:6])
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedLine) as exc:
        read_trajectories(p)
    assert exc.value.line_no == len(lines)


def test_log_io_bad_mode(tmp_path):
    with pytest.raises(ValueError):
        log_io(tmp_path / "x", mode="append")
