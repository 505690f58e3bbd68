"""Command-line driver: ``causalcap <command> [options]``.

Exit codes: 0 ok, 1 verification or runtime failure, 2 usage, 3 config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import PipelineConfig, load_config, parse_config
from .errors import CausalCapError, ConfigError, UnknownCommand

log = logging.getLogger("causalcap.cli")

COMMANDS = ("sample", "capacity", "subgoals", "train-predictor", "eval-predictor", "train", "eval", "ablate",
            "render", "verify", "run")
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UnknownCommand(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides seed)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p = _Parser(prog="causalcap", description="Causal-capacity subgoal discovery pipeline.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name in ("sample", "capacity", "subgoals", "train-predictor", "eval-predictor", "ablate", "run"):
        sub.add_parser(name, parents=[common])
    for name in ("train", "eval"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--variant", default="gdcc", choices=["gdcc", "no_predictor", "no_reward", "sparse"])
        sp.add_argument("--rl-seed", type=int, help="RL seed label (default: first of rl_seeds)")
    sp = sub.add_parser("render", parents=[common])
    sp.add_argument("--kind", required=True, choices=["capacity", "potential", "regions", "curve"])
    sp.add_argument("--input", nargs="+", help="input file(s); defaults to the workspace artifact")
    sp.add_argument("--output", required=True, help="output .ppm or .svg path")
    sp.add_argument("--goal", help="goal cell 'row,col' for potential maps")
    sp.add_argument("--scale", type=int, default=16, help="pixels per cell or world unit")
    sp = sub.add_parser("verify", parents=[common])
    sp.add_argument("--mdps", type=int, default=100, help="random tabular MDPs for the bound checks")
    sp.add_argument("--mazes", type=int, default=50, help="fuzzed mazes for shaping invariance")
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else parse_config("", source="<defaults>")
    overrides = list(args.set)
    if args.out:
        overrides.append(f"output_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if overrides:
        cfg = parse_config("\n".join(o.replace("=", " = ", 1) for o in overrides), base=cfg, source="<command line>")
    return cfg


def _verify(cfg: PipelineConfig, n_mdps: int, n_mazes: int) -> bool:
    from .capacity import check_propositions
    from .mazes import load_builtin, random_maze
    from .mdpcore import build_tabular, random_tabular
    from .predictor import gradient_check
    from .shaping import non_potential_bonus, single_region_potentials, verify_invariance

    ok = True
    violations = 0
    for i in range(n_mdps):
        rng = np.random.default_rng(pl.stage_seed(cfg.seed, f"verify/mdp/{i}"))
        n, a = int(rng.integers(2, 21)), int(rng.integers(2, 6))
        mdp = random_tabular(n, a, int(rng.integers(1, n + 1)), int(rng.integers(2**31)))
        violations += len(check_propositions(mdp).violations)
    print(f"propositions: {n_mdps} MDPs, {violations} violations")
    ok &= violations == 0
    bad = 0
    for i in range(n_mazes):
        rng = np.random.default_rng(pl.stage_seed(cfg.seed, f"verify/maze/{i}"))
        maze = random_maze(int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2**31)), 0.2)
        mdp = build_tabular(maze, noise=float(rng.choice([0.0, 0.2])))
        goal = int(rng.integers(mdp.n_states))
        phi = rng.normal(size=mdp.n_states) * 3
        bad += not verify_invariance(mdp, phi, cfg.gamma, goal=goal).ok
    print(f"shaping invariance: {n_mazes} fuzzed mazes, {bad} with greedy-set changes")
    ok &= bad == 0
    for name in ("demo", "uobstacle"):
        maze = load_builtin(name)
        mdp = build_tabular(maze)
        goal_cell = maze.goal or maze.free_cells[-1]
        field = single_region_potentials(maze, goal_cell)
        fixture_ok = verify_invariance(mdp, field, cfg.gamma).ok
        goal = mdp.state_index[goal_cell]
        flagged = not verify_invariance(mdp, field, cfg.gamma, bonus=non_potential_bonus(mdp, goal, cfg.gamma)).ok
        print(f"fixture {name}: invariance {'ok' if fixture_ok else 'FAILED'}, "
              f"negative control {'flagged' if flagged else 'MISSED'}")
        ok &= fixture_ok and flagged
    errs = gradient_check(pl.stage_seed(cfg.seed, "verify/grad") % 1000)
    for k, v in errs.items():
        print(f"gradient check {k}: relative error {v:.3e}")
    ok &= max(errs.values()) < 1e-4
    print("verify:", "ok" if ok else "FAILED")
    return ok


def _render(cfg: PipelineConfig, args, ws: pl.Workspace) -> None:
    from .capacity import read_capacity_map
    from .render import render_capacity, render_curves, render_potential, render_regions
    from .rl import read_curve
    from .shaping import build_potentials
    from .subgoals import read_subgoals

    env = pl.make_env(cfg)
    if args.kind == "capacity":
        render_capacity(args.output, read_capacity_map((args.input or [ws.path("capacity")])[0]), env, args.scale)
    elif args.kind == "regions":
        render_regions(args.output, read_subgoals((args.input or [ws.path("subgoals")])[0]), env, args.scale)
    elif args.kind == "potential":
        if not args.goal:
            raise ConfigError("--goal", "potential maps need a goal cell 'row,col'")
        goal = tuple(int(v) for v in args.goal.split(","))
        graph = read_subgoals((args.input or [ws.path("subgoals")])[0])
        cell_size = None if env.kind == "discrete" else env.cell_size
        render_potential(args.output, build_potentials(env.maze, graph, goal, cell_size), env.maze, args.scale)
    else:
        paths = [Path(p) for p in (args.input or [ws.path("ablation")])]
        files = sorted(f for p in paths for f in (p.glob("curve_*.txt") if p.is_dir() else [p]))
        render_curves(args.output, {f.stem: read_curve(f) for f in files})


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UnknownCommand as exc:
        print(f"causalcap: {exc}", file=sys.stderr)
        print(f"commands: {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("resolved config:\n%s", cfg.render())
    log.info("master seed %d", cfg.seed)
    ws = pl.Workspace(cfg.output_dir)
    try:
        return _run(args, cfg, ws)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CausalCapError, OSError) as exc:
        print(f"causalcap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def _run(args, cfg: PipelineConfig, ws: pl.Workspace) -> int:
    cmd = args.command
    if cmd == "verify":
        return EXIT_OK if _verify(cfg, args.mdps, args.mazes) else EXIT_FAIL
    if cmd == "render":
        _render(cfg, args, ws)
        print(f"wrote {args.output}")
        return EXIT_OK
    env = pl.make_env(cfg)
    if cmd == "sample":
        trajs = pl.run_sample(cfg, env, ws)
        print(f"wrote {len(trajs)} transitions to {ws.path('trajectories')}")
    elif cmd == "capacity":
        cmap = pl.run_capacity(cfg, env, ws)
        print(f"wrote {len(cmap)} capacity entries to {ws.path('capacity')}")
    elif cmd == "subgoals":
        graph = pl.run_subgoals(cfg, env, ws)
        print(f"wrote {len(graph.subgoals)} subgoals, {len(graph.edges)} edges to {ws.path('subgoals')}")
    elif cmd == "train-predictor":
        _, acc = pl.run_predictor(cfg, env, ws)
        print(f"region accuracy {acc:.4f}; wrote {ws.path('model')}")
    elif cmd == "eval-predictor":
        from .predictor import eval_accuracy, labeled_states, load_model
        from .subgoals import read_subgoals

        pts, labels = labeled_states(read_subgoals(ws.path("subgoals")), env)
        print(f"region accuracy {eval_accuracy(load_model(ws.path('model')), pts, labels):.4f}")
    elif cmd == "train":
        _, curve = pl.run_train(cfg, env, ws, args.variant, seed=args.rl_seed)
        print(f"{args.variant}: final success rate {curve[-1][1] if curve else 0.0:.4f}")
    elif cmd == "eval":
        print(f"{args.variant}: success rate {pl.run_eval(cfg, env, ws, args.variant, args.rl_seed):.4f}")
    elif cmd == "ablate":
        from .rl import summary_table

        print(summary_table(pl.run_ablation(cfg, env, ws)), end="")
    elif cmd == "run":
        from .rl import summary_table

        art = pl.run_all(cfg)
        print(f"region accuracy {art['accuracy']:.4f}")
        print(summary_table(art["ablation"]), end="")
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())
