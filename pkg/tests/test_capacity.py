import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.cluster import AgglomerativeClustering

from causalcap.capacity import (CountTable, PartitionConfig, agglomerative_cluster, capacity_clustered,
                                capacity_map, capacity_mc, check_propositions, count_transitions, entropy,
                                exact_capacity, exact_transfer_entropy, partition_states, read_capacity_map,
                                sample_random_policy, write_capacity_map)
from causalcap.errors import EmptyData, EmptyInput, IndexOutOfRange, InsufficientSamples, MalformedLine
from causalcap.mazes import load_builtin
from causalcap.mdpcore import GridEnv, TabularMDP, random_tabular
from causalcap.sampler import TrajectorySet, rollout_random


def one_step_set(pairs):
    """Single-step episodes from ``(state, next_state)`` pairs."""
    n = len(pairs)
    s = np.array([p[0] for p in pairs], dtype=np.int64)
    s2 = np.array([p[1] for p in pairs], dtype=np.int64)
    return TrajectorySet("discrete", np.arange(n), np.zeros(n, np.int64), s, np.zeros((n, 2), np.int64), s2,
                         np.zeros(n), np.zeros(n, bool))


def exhaustive(maze):
    return one_step_set([(c, maze.move(c, a)) for c in maze.free_cells for a in range(4)])


def ring_points(rng, angles_and_sizes, radius=0.85, spread=0.03):
    pts = []
    for ang, k in angles_and_sizes:
        centre = radius * np.array([math.cos(ang), math.sin(ang)])
        pts.append(centre + rng.uniform(-spread, spread, size=(k, 2)))
    return np.concatenate(pts)


def test_single_transition_counts():
    ct = count_transitions(one_step_set([((1, 1), (1, 2))]))
    assert ct.totals[(1, 1)] == 1
    assert ct.next_counts[(1, 1)] == {(1, 2): 1}


def test_junction_ratio():
    pairs = [((5, 5), (4, 5))] * 5 + [((5, 5), (5, 6))] * 5 + [((5, 5), (6, 5))] * 5
    dist = count_transitions(one_step_set(pairs)).distribution((5, 5))
    assert dist == pytest.approx({(4, 5): 1 / 3, (5, 6): 1 / 3, (6, 5): 1 / 3})


def test_counts_need_data():
    with pytest.raises(EmptyData):
        count_transitions(TrajectorySet.empty("discrete"))


def test_mc_marginal_matches_tensor():
    mdp = random_tabular(10, 4, 4, seed=3)
    ct = count_transitions(sample_random_policy(mdp, 100_000, seed=1))
    for s in range(mdp.n_states):
        for (k, _), v in ct.next_counts[(s, 0)].items():
            assert abs(v / 100_000 - mdp.marginal(s)[k]) < 0.02


@pytest.mark.parametrize("counts,min_samples,want", [
    ({(0, 1): 20}, 20, 0.0),
    ({(0, 1): 5, (0, 2): 5, (0, 3): 5}, 15, math.log(3)),
    ({(0, 1): 2, (0, 2): 1, (0, 3): 1}, 4, 1.5 * math.log(2)),
])
def test_capacity_mc_examples(counts, min_samples, want):
    ct = CountTable({(0, 0): sum(counts.values())}, {(0, 0): counts})
    assert capacity_mc(ct, (0, 0), min_samples) == pytest.approx(want, abs=1e-12)


def test_capacity_mc_insufficient():
    ct = CountTable({(0, 0): 3}, {(0, 0): {(0, 1): 3}})
    with pytest.raises(InsufficientSamples):
        capacity_mc(ct, (0, 0), 20)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=12))
def test_entropy_bounds(counts):
    h = entropy(counts)
    assert -1e-12 <= h <= math.log(len(counts)) + 1e-12


@pytest.mark.parametrize("d,band", [(0.5, "nei"), (0.85, "adj"), (1.2, "out"), (0.7, "adj"), (1.0, "out")])
def test_partition_bands(d, band):
    part = partition_states(np.array([[d, 0.0]]), np.zeros(2), PartitionConfig(0.7, 1.0))
    assert [len(part.nei), len(part.adj), len(part.out)] == [band == b for b in ("nei", "adj", "out")]


def test_partition_manhattan():
    part = partition_states(np.array([[0.5, 0.4]]), np.zeros(2), PartitionConfig(0.7, 1.0, "manhattan"))
    assert len(part.adj) == 1


def test_partition_config_rejects_bad_taus():
    with pytest.raises(ValueError):
        PartitionConfig(1.0, 0.7)


def test_three_separated_groups(rng):
    pts = np.concatenate([c + rng.uniform(-0.05, 0.05, (5, 2)) for c in ([0, 0], [2, 0], [1, math.sqrt(3)])])
    assert agglomerative_cluster(pts, link_threshold=1.0).n_clusters == 3


def test_tight_group_is_one_cluster(rng):
    pts = rng.uniform(0, 0.07, (20, 2))
    assert agglomerative_cluster(pts, link_threshold=1.0).n_clusters == 1


def test_cluster_empty_input():
    with pytest.raises(EmptyInput):
        agglomerative_cluster(np.zeros((0, 2)))


def _partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, set()).add(i)
    return {frozenset(g) for g in groups.values()}


@given(st.integers(2, 60), st.floats(0.2, 2.5), st.integers(0, 2**31 - 1),
       st.sampled_from(["euclidean", "manhattan"]))
def test_average_linkage_matches_sklearn(n, thr, seed, metric):
    pts = np.random.default_rng(seed).uniform(0, 4, size=(n, 2))
    ours = agglomerative_cluster(pts, metric, thr).labels
    ref = AgglomerativeClustering(n_clusters=None, distance_threshold=thr, linkage="average",
                                  metric="cityblock" if metric == "manhattan" else "euclidean").fit(pts)
    assert _partition(ours) == _partition(ref.labels_)


def test_t_junction_arms_give_three_clusters(rng):
    # arms left, right and down of an anchor at the origin
    arms = [math.pi, 0.0, math.pi / 2]
    pts = np.concatenate([ring_points(rng, [(a, 30)], radius=rng.uniform(0.72, 0.98), spread=0.0)
                          + rng.uniform(-0.1, 0.1, (30, 2)) * np.abs([math.sin(a), math.cos(a)])
                          for a in arms])
    cfg = PartitionConfig(0.7, 1.0)
    part = partition_states(pts, np.zeros(2), cfg)
    res = agglomerative_cluster(pts[part.adj], link_threshold=cfg.link)
    assert res.n_clusters == 3
    arm_of = np.repeat(np.arange(3), 30)[part.adj]
    for members in res.clusters:
        assert len(set(arm_of[members])) == 1


@pytest.mark.parametrize("sizes,want", [((4, 4, 4), math.log(3)), ((6, 3, 3), 1.5 * math.log(2)), ((12,), 0.0)])
def test_capacity_clustered_examples(rng, sizes, want):
    angles = [0.0, 2 * math.pi / 3, 4 * math.pi / 3]
    pts = ring_points(rng, list(zip(angles, sizes)))
    got = capacity_clustered(pts, np.zeros(2), PartitionConfig(0.7, 1.0), min_samples=12)
    assert got == pytest.approx(want, abs=1e-12)


def test_capacity_clustered_insufficient(rng):
    pts = ring_points(rng, [(0.0, 3)])
    with pytest.raises(InsufficientSamples):
        capacity_clustered(pts, np.zeros(2), PartitionConfig(), min_samples=20)


def test_demo_capacity_by_degree():
    maze = load_builtin("demo")
    cmap = capacity_map(exhaustive(maze), min_samples=1)
    want = {1: 0.0, 2: math.log(2), 3: math.log(3)}
    for cell in maze.free_cells:
        assert cmap.capacity(cell) == pytest.approx(want[maze.degree(cell)], abs=1e-12)


def test_threshold_separates_junctions():
    maze = load_builtin("demo")
    cmap = capacity_map(exhaustive(maze), min_samples=1)
    above = {k for k in cmap.keys() if cmap.capacity(k) > math.log(2.5)}
    assert above == {c for c in maze.free_cells if maze.degree(c) == 3}


def test_sampled_demo_capacity_close_to_degree():
    env = GridEnv(load_builtin("demo"))
    cmap = capacity_map(rollout_random(env, 200, 600, seed=0))
    for cell in env.maze.free_cells:
        assert abs(cmap.capacity(cell) - math.log(env.maze.degree(cell))) < 0.05
        assert cmap[cell].confident


def test_permutation_invariance(rng):
    tr = rollout_random(GridEnv(load_builtin("demo"), 0.1), 20, 100, seed=2)
    assert capacity_map(tr).equals(capacity_map(tr.permuted(rng)))


def test_clustered_permutation_invariance(rng):
    from causalcap.mdpcore import PointEnv

    env = PointEnv(load_builtin("tjunction"))
    tr = rollout_random(env, 20, 200, seed=1)
    a = capacity_map(tr, estimator="clustered", env=env, max_points=None)
    b = capacity_map(tr.permuted(rng), estimator="clustered", env=env, max_points=None)
    assert a.keys() == b.keys()
    for k in a.keys():
        assert a.capacity(k) == pytest.approx(b.capacity(k), abs=1e-12)


@pytest.mark.parametrize("kind", ["mc", "clustered"])
def test_capacity_map_roundtrip(tmp_path, kind):
    from causalcap.mdpcore import PointEnv

    if kind == "mc":
        cmap = capacity_map(rollout_random(GridEnv(load_builtin("demo")), 10, 100, seed=0))
    else:
        env = PointEnv(load_builtin("tjunction"))
        cmap = capacity_map(rollout_random(env, 10, 200, seed=0), estimator="clustered", env=env)
    p = tmp_path / "cap.txt"
    write_capacity_map(p, cmap)
    assert read_capacity_map(p).equals(cmap)


def test_capacity_map_malformed(tmp_path):
    p = tmp_path / "cap.txt"
    p.write_text("# causalcap-capacity v1 estimator=mc\n1,1 0.5 2 30\n")
    with pytest.raises(MalformedLine):
        read_capacity_map(p)


def test_transfer_entropy_distinct_outcomes():
    p = np.zeros((5, 4, 5))
    for a in range(4):
        p[0, a, a + 1] = 1.0
    for s in range(1, 5):
        p[s, :, s] = 1.0
    mdp = TabularMDP(p)
    assert exact_capacity(mdp, 0) == pytest.approx(math.log(4))
    for a in range(4):
        assert exact_transfer_entropy(mdp, 0, a) == pytest.approx(math.log(4))
    assert exact_transfer_entropy(mdp, 1, 0) == 0.0


def test_transfer_entropy_index_errors():
    mdp = random_tabular(3, 2, 2, 0)
    with pytest.raises(IndexOutOfRange):
        exact_transfer_entropy(mdp, 3, 0)
    with pytest.raises(IndexOutOfRange):
        exact_transfer_entropy(mdp, 0, 2)


@given(st.integers(2, 20), st.integers(2, 5), st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_bounds_hold_on_random_mdps(n, a, k, seed):
    rep = check_propositions(random_tabular(n, a, k, seed), tol=1e-9)
    assert rep.ok, rep.violations


def test_deterministic_mdp_upper_bound_tight():
    rep = check_propositions(random_tabular(8, 3, 1, seed=4))
    assert rep.ok
    assert abs(rep.max_te_high_slack) < 1e-12


def test_single_action_mdp_has_zero_te():
    rng = np.random.default_rng(0)
    p = rng.random((6, 1, 6))
    mdp = TabularMDP(p / p.sum(axis=2, keepdims=True))
    for s in range(6):
        assert exact_transfer_entropy(mdp, s, 0) == pytest.approx(0.0, abs=1e-15)
    assert check_propositions(mdp).ok
