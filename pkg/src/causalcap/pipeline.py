"""Stage functions wiring sampling, capacity, subgoals, predictor and RL together.

Every stage draws its seed from the master seed with ``stage_seed``, so a
stage can be rerun alone and still reproduce the files of a full run.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

from . import capacity as cap
from . import predictor as pr
from . import rl
from .config import PipelineConfig
from .mazes import NAMES, load_builtin
from .mdpcore import GridEnv, PointEnv, load_maze
from .sampler import explore, read_trajectories, write_trajectories
from .subgoals import build_subgoal_graph, read_subgoals, select_subgoals, write_subgoals

log = logging.getLogger("causalcap.pipeline")

FILES = {
    "config": "config.txt",
    "trajectories": "trajectories.txt",
    "capacity": "capacity.txt",
    "subgoals": "subgoals.txt",
    "model": "model.bin",
    "predictor_log": "predictor_log.txt",
    "ablation": "ablation",
}


def stage_seed(master: int, stage: str) -> int:
    """Seed for ``stage``: the first 4 bytes of sha256("<master>/<stage>"), little-endian."""
    digest = hashlib.sha256(f"{master}/{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def make_env(cfg: PipelineConfig):
    maze = load_builtin(cfg.maze) if cfg.maze in NAMES else load_maze(cfg.maze)
    return GridEnv(maze) if cfg.kind == "discrete" else PointEnv(maze, bin_width=cfg.tau_nei)


@dataclass
class Workspace:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def path(self, name: str) -> Path:
        return self.root / FILES.get(name, name)

    def ensure(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        return self.root


def partition_config(cfg: PipelineConfig) -> cap.PartitionConfig:
    return cap.PartitionConfig(cfg.tau_nei, cfg.tau_adj, cfg.metric)


def run_sample(cfg: PipelineConfig, env, ws: Workspace):
    seed = stage_seed(cfg.seed, "sample")
    log.info("sample: seed %d", seed)
    trajs = explore(env, cfg.sample_episodes, cfg.sample_horizon, seed, cfg.frontier_rounds,
                    workers=cfg.workers)
    ws.ensure()
    write_trajectories(ws.path("trajectories"), trajs)
    return trajs


def run_capacity(cfg: PipelineConfig, env, ws: Workspace, trajs=None) -> cap.CapacityMap:
    trajs = trajs if trajs is not None else read_trajectories(ws.path("trajectories"))
    estimator = cfg.estimator if env.kind == "continuous" else "mc"
    cmap = cap.capacity_map(trajs, partition_config(cfg), estimator, cfg.min_samples, env=env)
    ws.ensure()
    cap.write_capacity_map(ws.path("capacity"), cmap)
    return cmap


def run_subgoals(cfg: PipelineConfig, env, ws: Workspace, trajs=None, cmap=None):
    trajs = trajs if trajs is not None else read_trajectories(ws.path("trajectories"))
    cmap = cmap if cmap is not None else cap.read_capacity_map(ws.path("capacity"))
    subs = select_subgoals(cmap, cfg.threshold, cfg.suppression_radius, cfg.tau_nei)
    graph = build_subgoal_graph(trajs, subs, env, cfg.tau_nei)
    ws.ensure()
    write_subgoals(ws.path("subgoals"), graph)
    return graph


def run_predictor(cfg: PipelineConfig, env, ws: Workspace, trajs=None, graph=None):
    """Pretrain, train and score the predictor; returns ``(model, accuracy)``."""
    trajs = trajs if trajs is not None else read_trajectories(ws.path("trajectories"))
    graph = graph if graph is not None else read_subgoals(ws.path("subgoals"))
    seed = stage_seed(cfg.seed, "predictor")
    model = pr.init_model(2, cfg.embed_dim, cfg.hidden, cfg.layers, seed=seed, bounds=env.bounds())
    w = pr.LossWeights(cfg.lambda_recon, cfg.lambda_sim)
    clip = cfg.grad_clip or None
    curves = pr.pretrain_encoder(model, trajs.states, graph.subgoals, w, cfg.pretrain_steps, cfg.pretrain_lr,
                                 cfg.pretrain_batch, seed, clip=clip)
    loss = pr.train_predictor(model, trajs, graph.subgoals, cfg.segment_horizon, cfg.predictor_steps,
                              cfg.predictor_lr, cfg.predictor_batch, seed + 1, clip=clip)
    pts, labels = pr.labeled_states(graph, env)
    acc = pr.eval_accuracy(model, pts, labels)
    log.info("predictor: seed %d, region accuracy %.4f", seed, acc)
    ws.ensure()
    pr.save_model(ws.path("model"), model)
    lines = [f"# region_accuracy {acc!r}", "# phase step loss sim"]
    lines += [f"pretrain {i} {r!r} {s!r}" for i, (r, s) in enumerate(zip(curves["recon"], curves["sim"]))]
    lines += [f"predictor {i} {v!r} nan" for i, v in enumerate(loss)]
    ws.path("predictor_log").write_text("\n".join(lines) + "\n")
    return model, acc


def guidance(env, ws: Workspace, graph=None, model=None) -> rl.Guidance:
    graph = graph if graph is not None else read_subgoals(ws.path("subgoals"))
    if model is None and ws.path("model").exists():
        model = pr.load_model(ws.path("model"))
    return rl.Guidance(graph, model=model)


def rl_seed(cfg: PipelineConfig, seed: int) -> int:
    return stage_seed(cfg.seed, f"rl/{seed}")


def run_train(cfg: PipelineConfig, env, ws: Workspace, variant: str, guide=None, seed: int | None = None):
    seed = cfg.rl_seeds[0] if seed is None else seed
    guide = guide if guide is not None or variant in ("sparse", "no_reward") else guidance(env, ws)
    table, curve = rl.train(env, cfg.rl_config(rl_seed(cfg, seed)), variant, guide)
    ws.ensure()
    rl.write_curve(ws.path(f"curve_{variant}_seed{seed}.txt"), curve)
    rl.save_qtable(ws.path(f"qtable_{variant}_seed{seed}.bin"), table)
    return table, curve


def run_eval(cfg: PipelineConfig, env, ws: Workspace, variant: str, seed: int | None = None) -> float:
    seed = cfg.rl_seeds[0] if seed is None else seed
    table = rl.load_qtable(ws.path(f"qtable_{variant}_seed{seed}.bin"))
    eval_seed = stage_seed(cfg.seed, f"eval/{seed}")
    if isinstance(env, PointEnv):
        return rl.evaluate_continuous(env, table, cfg.rl_config(), cfg.eval_episodes, eval_seed)
    return rl.evaluate(env, table, cfg.eval_episodes, eval_seed, cfg.horizon)


def run_ablation(cfg: PipelineConfig, env, ws: Workspace, guide=None) -> rl.AblationResult:
    needs = any(v in ("gdcc", "no_predictor") for v in cfg.variants)
    guide = guide if guide is not None or not needs else guidance(env, ws)
    seeds = [rl_seed(cfg, s) for s in cfg.rl_seeds]
    result = rl.run_ablation(env, cfg.rl_config(), seeds, guide, cfg.variants, cfg.workers)
    result.seeds = list(cfg.rl_seeds)
    rl.write_ablation(ws.path("ablation"), result)
    return result


def run_all(cfg: PipelineConfig, outdir=None) -> dict:
    """Full sample -> capacity -> subgoals -> predictor -> ablation run; returns artifacts."""
    from .render import render_capacity, render_curves, render_regions

    ws = Workspace(outdir or cfg.output_dir)
    ws.ensure()
    ws.path("config").write_text(cfg.render())
    env = make_env(cfg)
    trajs = run_sample(cfg, env, ws)
    cmap = run_capacity(cfg, env, ws, trajs)
    graph = run_subgoals(cfg, env, ws, trajs, cmap)
    model, acc = run_predictor(cfg, env, ws, trajs, graph)
    result = run_ablation(cfg, env, ws, rl.Guidance(graph, model=model))
    render_capacity(ws.path("capacity.ppm"), cmap, env)
    render_regions(ws.path("regions.ppm"), graph, env)
    render_curves(ws.path("curves.svg"), {f"{v} seed {s}": c for v, per in result.curves.items()
                                          for s, c in zip(result.seeds, per)})
    return {"env": env, "trajectories": trajs, "capacity": cmap, "graph": graph, "model": model,
            "accuracy": acc, "ablation": result, "workspace": ws}


def output_digest(root) -> dict:
    """sha256 of every file below ``root`` keyed by relative path."""
    root = Path(root)
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}
