"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
also repeated in the pytest terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from causalcap import pipeline as pl
from causalcap import predictor as pr
from causalcap.capacity import (PartitionConfig, capacity_clustered, capacity_map, capacity_mc, check_propositions,
                                count_transitions, exact_capacity, sample_random_policy)
from causalcap.config import load_config
from causalcap.mazes import load_builtin, random_maze
from causalcap.mdpcore import GridEnv, PointEnv, build_tabular, random_tabular
from causalcap.sampler import rollout_random
from causalcap.shaping import (build_potentials, euclidean_potentials, greedy_descent, non_potential_bonus,
                               single_region_potentials, verify_invariance)
from causalcap.subgoals import build_subgoal_graph, select_subgoals

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
RESULTS: list = []


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_criterion_1_bounds_on_random_mdps():
    t0 = time.perf_counter()
    violations, checked = 0, 0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        n, a = int(rng.integers(2, 21)), int(rng.integers(2, 6))
        rep = check_propositions(random_tabular(n, a, int(rng.integers(1, n + 1)), seed=i), tol=1e-9)
        violations += len(rep.violations)
        checked += rep.checked
    dt = time.perf_counter() - t0
    assert report(1, violations == 0 and dt < 10.0,
                  f"{violations} violations over {checked} (s, a) pairs in 100 MDPs, {dt:.2f}s (< 10s)")


def test_criterion_2_monte_carlo_estimates():
    mdp = random_tabular(10, 4, 4, seed=2024)
    assert all((mdp.transition[s] > 0).sum(axis=1).max() > 1 for s in range(10))  # stochastic
    n = 100_000
    counts = count_transitions(sample_random_policy(mdp, n, seed=1))
    worst_tv = 0.0
    for s in range(10):
        est = np.zeros(10)
        for (k, _), v in counts.next_counts[(s, 0)].items():
            est[k] = v
        worst_tv = max(worst_tv, 0.5 * float(np.abs(est / est.sum() - mdp.marginal(s)).sum()))
    small = count_transitions(sample_random_policy(mdp, 10_000, seed=2))
    worst_h = max(abs(capacity_mc(small, (s, 0)) - exact_capacity(mdp, s)) for s in range(10))
    assert report(2, worst_tv <= 0.02 and worst_h <= 0.05,
                  f"max TV {worst_tv:.4f} (<= 0.02) at 1e5 samples/state; "
                  f"max |H_mc - H| {worst_h:.4f} (<= 0.05) at 1e4 visits/state")


def test_criterion_3_demo_subgoals_are_junctions():
    env = GridEnv(load_builtin("demo"))
    subs = select_subgoals(capacity_map(rollout_random(env, 500, 600, seed=pl.stage_seed(0, "sample"))),
                           threshold=math.log(2.5))
    got = sorted(g.key for g in subs)
    want = sorted(c for c in env.maze.free_cells if env.maze.degree(c) >= 3)
    assert report(3, got == want, f"subgoals {got} vs junctions {want}")


def test_criterion_4_t_junction_clustered_capacity():
    env = PointEnv(load_builtin("tjunction"))
    states = np.asarray(rollout_random(env, 200, 600, seed=0).states)
    cfg = PartitionConfig(0.7, 1.0)
    junction = capacity_clustered(states, env.cell_position((1, 4)), cfg)
    dead = max(capacity_clustered(states, env.cell_position(c), cfg) for c in ((1, 1), (1, 7), (4, 4)))
    ok = abs(junction - math.log(3)) <= 0.1 and dead < 0.1
    assert report(4, ok, f"junction {junction:.4f} (ln 3 = {math.log(3):.4f} +- 0.1), dead ends max {dead:.4f} (< 0.1)")


def test_criterion_5_predictor():
    errs = pr.gradient_check(0)
    env = GridEnv(load_builtin("demo"))
    cfg = load_config(CONFIGS / "demo_desk.cfg")
    tr = rollout_random(env, cfg.sample_episodes, cfg.sample_horizon, seed=pl.stage_seed(cfg.seed, "sample"))
    graph = build_subgoal_graph(tr, select_subgoals(capacity_map(tr)), env)
    seed = pl.stage_seed(cfg.seed, "predictor")
    model = pr.init_model(2, cfg.embed_dim, cfg.hidden, cfg.layers, seed=seed, bounds=env.bounds())
    pr.pretrain_encoder(model, tr.states, graph.subgoals, steps=cfg.pretrain_steps, lr=cfg.pretrain_lr,
                        batch=cfg.pretrain_batch, seed=seed)
    pr.train_predictor(model, tr, graph.subgoals, cfg.segment_horizon, cfg.predictor_steps, cfg.predictor_lr,
                       cfg.predictor_batch, seed + 1)
    acc = pr.eval_accuracy(model, *pr.labeled_states(graph, env))
    # separation-only pretraining on the fixed demo subgoal fixture
    fixture = pr.init_model(2, 16, 64, 2, seed=0, bounds=env.bounds())
    sim = pr.pretrain_encoder(fixture, tr.states, graph.subgoals, pr.LossWeights(0.0, 1.0), steps=1000, lr=0.01,
                              batch=256, seed=0)["sim"]
    rises = float(np.diff(sim).max())
    ok = max(errs.values()) < 1e-4 and acc > 0.9 and rises <= 1e-12 and sim[-1] < sim[0]
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert report(5, ok, f"grad rel err {detail} (< 1e-4); demo accuracy {acc:.3f} (> 0.9); "
                         f"subgoal cosine {sim[0]:.3f} -> {sim[-1]:.3f}, max step increase {rises:.1e}")


def test_criterion_6_shaping():
    mismatched = 0
    for i in range(50):
        rng = np.random.default_rng(5000 + i)
        maze = random_maze(int(rng.integers(2, 5)), int(rng.integers(2, 5)), seed=i, loop_prob=0.2)
        mdp = build_tabular(maze, float(rng.choice([0.0, 0.2])))
        goal = int(rng.integers(mdp.n_states))
        mismatched += not verify_invariance(mdp, rng.normal(size=mdp.n_states) * 3, 0.99, tol=1e-9, goal=goal).ok
    demo = load_builtin("demo")
    mdp = build_tabular(demo)
    goal_cell = demo.free_cells[-1]
    goal = mdp.state_index[goal_cell]
    field = single_region_potentials(demo, goal_cell)
    flagged = not verify_invariance(mdp, field, 0.99, bonus=non_potential_bonus(mdp, goal, 0.99)).ok
    u = GridEnv(load_builtin("uobstacle"))
    tr = rollout_random(u, 500, 600, seed=0)
    graph = build_subgoal_graph(tr, select_subgoals(capacity_map(tr)), u)
    _, concat_ok = greedy_descent(u.maze, build_potentials(u.maze, graph, u.maze.goal), u.maze.start)
    _, naive_ok = greedy_descent(u.maze, euclidean_potentials(u.maze, u.maze.goal), u.maze.start)
    ok = mismatched == 0 and flagged and concat_ok and not naive_ok
    assert report(6, ok, f"{mismatched}/50 fuzzed mazes changed greedy sets; negative control "
                         f"{'flagged' if flagged else 'missed'}; U-obstacle descent: concatenated "
                         f"{'reaches goal' if concat_ok else 'stuck'}, single straight-line "
                         f"{'reaches goal' if naive_ok else 'stuck'}")


@pytest.fixture(scope="module")
def large_run(tmp_path_factory):
    cfg = load_config(CONFIGS / "large_desk.cfg")
    out = tmp_path_factory.mktemp("large")
    t0 = time.perf_counter()
    art = pl.run_all(cfg, out)
    return cfg, out, art, time.perf_counter() - t0


def test_criterion_7_large_maze_ablation(large_run):
    cfg, _, art, dt = large_run
    res = art["ablation"]
    m = {v: res.mean_final(v) for v in res.finals}
    uplift = m["gdcc"] - m["sparse"]
    ordered = m["gdcc"] >= m["no_predictor"] >= m["no_reward"]
    ok = len(res.seeds) >= 5 and uplift >= 0.25 and ordered and dt < 1800
    means = ", ".join(f"{v} {x:.3f}" for v, x in m.items())
    assert report(7, ok, f"{len(res.seeds)} seeds; mean final {means}; gdcc - sparse {uplift:+.3f} (>= 0.25); "
                         f"ordering gdcc >= no_predictor >= no_reward {'holds' if ordered else 'fails'}; "
                         f"predictor accuracy {art['accuracy']:.3f}; {dt:.0f}s (< 1800s)")


def test_criterion_8_byte_identical_rerun(large_run):
    cfg, out, _, _ = large_run
    first = pl.output_digest(out)
    pl.run_all(cfg, out)
    second = pl.output_digest(out)
    changed = sorted(k for k in first if first[k] != second.get(k))
    ok = first == second and len(first) > 0
    assert report(8, ok, f"{len(first)} output files, {len(changed)} differ after rerun with master seed {cfg.seed}")
