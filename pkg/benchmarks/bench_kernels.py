"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from causalcap import kernels
from causalcap.mazes import load_builtin
from causalcap.mdpcore import MARGIN, build_tabular


def cases():
    maze = load_builtin("large")
    mdp = build_tabular(maze, 0.1)
    nxt, cum = mdp.sparse_tables
    rng = np.random.default_rng(0)
    u2 = rng.random((20_000, 2))
    u3 = rng.random((600, 3))
    disp = rng.uniform(-0.3, 0.3, size=(20_000, 2))
    pts = rng.uniform(0, 3, size=(300, 2))
    dist = np.ascontiguousarray(np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)))
    phi = rng.random(mdp.n_states)
    gate = np.ones(mdp.n_states, dtype=np.uint8)
    q = np.zeros((mdp.n_states, 4))
    walls = maze.walls_u8
    return {
        "tabular_rollout 20k steps": lambda k: k.tabular_rollout(nxt, cum, 0, u2),
        "point_rollout 20k steps": lambda k: k.point_rollout(walls, 1.5, 1.5, disp, MARGIN),
        "average_linkage 300 points": lambda k: k.average_linkage(dist, 0.7),
        "q_episode 600 steps": lambda k: k.q_episode(q, nxt, cum, phi, gate, 5, 0, 0.5, 0.99, 0.3, 1.0,
                                                     u3, True, True),
    }


def best_time(fn, backend, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(backend)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        print("compiled extension not built; only the Python fallback is available")
    print(f"{'kernel':<30}{'python s':>12}{'compiled s':>12}{'speedup':>10}")
    for name, fn in cases().items():
        tp = best_time(fn, kernels.python_backend, args.repeat)
        if kernels.compiled_backend is None:
            print(f"{name:<30}{tp:>12.5f}{'-':>12}{'-':>10}")
            continue
        tc = best_time(fn, kernels.compiled_backend, args.repeat)
        print(f"{name:<30}{tp:>12.5f}{tc:>12.5f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
