"""Goal-conditioned tabular Q-learning harness, value iteration and ablations."""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import BadInput, MissingDependency, NonConvergence
from .mdpcore import GridEnv, PointEnv
from .sampler import episode_rng
from .shaping import build_potentials
from .subgoals import assign_nearest_many

VARIANTS = ("gdcc", "no_predictor", "no_reward", "sparse")
TRAIN_STREAM = 10
EVAL_STREAM = 11


@dataclass(frozen=True)
class RLConfig:
    gamma: float = 0.99
    alpha: float = 0.5
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5   # fraction of episodes over which epsilon decays linearly
    episodes: int = 2000
    horizon: int = 600
    eval_every: int = 200
    eval_episodes: int = 100
    kappa: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.horizon < 1 or self.episodes < 0 or self.eval_episodes < 0:
            raise ValueError("horizon must be >= 1 and episode counts >= 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def epsilon(self, episode: int) -> float:
        span = self.eps_decay_frac * self.episodes
        if span <= 0:
            return self.eps_end
        frac = min(1.0, episode / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class QTable:
    """``q[goal, state, action]`` plus per-(goal, state) visit counts."""

    q: np.ndarray
    visits: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> QTable:
        return cls(np.zeros((n_states, n_states, n_actions)), np.zeros((n_states, n_states), dtype=np.int64))

    def equals(self, other: QTable) -> bool:
        return np.array_equal(self.q, other.q) and np.array_equal(self.visits, other.visits)


def value_iteration(mdp, reward, gamma: float, tol: float = 1e-10, terminal=None, max_iters: int = 100_000):
    """Bellman optimality iteration until the sup-norm change of V drops below ``tol``.

    ``reward`` is an ``(n, A, n)`` tensor or a callable ``r(s, a, s')``.
    Terminal states have value 0. Returns ``(V, Q)``.
    """
    p = mdp.transition
    n, n_act, _ = p.shape
    if callable(reward):
        reward = np.array([[[reward(s, a, t) for t in range(n)] for a in range(n_act)] for s in range(n)])
    expected = (p * reward).sum(axis=2)
    live = np.ones(n, dtype=bool) if terminal is None else ~np.asarray(terminal, dtype=bool)
    v = np.zeros(n)
    for _ in range(max_iters):
        q = expected + gamma * (p @ v)
        q[~live] = 0.0
        v_new = q.max(axis=1)
        delta = np.abs(v_new - v).max()
        v = v_new
        if delta < tol:
            return v, q
    raise NonConvergence(f"value iteration did not converge in {max_iters} sweeps")


def greedy_policy(q: np.ndarray, tol: float = 1e-9) -> list:
    best = q.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row >= b - tol).tolist()) for row, b in zip(q, best[:, 0])]


@dataclass
class Guidance:
    """Everything the shaped variants need: the subgoal graph, cell regions and a gate source.

    Potentials handed to the learner are shifted so their maximum is zero and
    the goal keeps its shifted value at termination. A constant shift is
    still a potential; with the terminal value kept it adds a constant step
    cost and scales the goal reward, so greedy policies are unchanged while
    the equivalent Q initialisation becomes optimistic instead of pessimistic.
    """

    graph: object
    regions: np.ndarray | None = None
    model: object = None
    subgoals: object = None
    shift: bool = True
    _phi: dict = field(default_factory=dict)

    def potential(self, maze, goal_index: int) -> np.ndarray:
        if goal_index not in self._phi:
            f = build_potentials(maze, self.graph, maze.free_cells[goal_index], regions=self.regions)
            phi = f.phi - f.phi.max() if self.shift else f.phi
            self._phi[goal_index] = np.ascontiguousarray(phi)
        return self._phi[goal_index]


def _gate(env: GridEnv, variant: str, guide: Guidance | None) -> np.ndarray:
    n = env.mdp.n_states
    if variant in ("sparse", "no_reward"):
        return np.zeros(n, dtype=np.uint8)
    if guide is None:
        raise MissingDependency(f"variant {variant!r} needs subgoal guidance")
    cells = np.asarray(env.maze.free_cells, dtype=np.float64)
    if variant == "gdcc":
        if guide.model is None:
            raise MissingDependency("variant 'gdcc' needs a trained predictor")
        from .predictor import predict_many

        pred = predict_many(guide.model, cells)
    elif variant == "no_predictor":
        subs = guide.subgoals if guide.subgoals is not None else guide.graph.subgoals
        pred = assign_nearest_many(cells, subs)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return (pred == guide.regions).astype(np.uint8)


def _prepare(env: GridEnv, variant: str, guide: Guidance | None):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if guide is not None and guide.regions is None:
        from .shaping import cell_regions

        guide.regions = cell_regions(env.maze, guide.graph)
    return _gate(env, variant, guide)


def _start_goal(rng, n: int) -> tuple[int, int]:
    s = int(rng.integers(n))
    g = int(rng.integers(n - 1))
    return s, g + (g >= s)


def evaluate(env: GridEnv, q: QTable, episodes: int = 100, seed: int = 0, horizon: int = 600) -> float:
    """Greedy success rate over ``episodes`` random (start, goal) pairs."""
    if episodes == 0:
        return 0.0
    nxt, cum = env.mdp.sparse_tables
    n = env.mdp.n_states
    dummy_phi = np.zeros(n)
    dummy_gate = np.zeros(n, dtype=np.uint8)
    wins = 0
    for ep in range(episodes):
        rng = episode_rng(seed, EVAL_STREAM, ep)
        s, g = _start_goal(rng, n)
        u = rng.random((horizon, 3))
        _, ok = kernels.q_episode(q.q[g], nxt, cum, dummy_phi, dummy_gate, g, s, 0.0, 0.99, 0.0, 0.0,
                                  u, False, False)
        wins += bool(ok)
    return wins / episodes


def train(env: GridEnv, cfg: RLConfig, variant: str, guide: Guidance | None = None,
          gate_override: np.ndarray | None = None):
    """Train one variant; returns ``(QTable, curve)`` with curve rows ``(episode, success_rate)``."""
    if isinstance(env, PointEnv):
        return train_continuous(env, cfg, variant, guide)
    gate = _prepare(env, variant, guide)
    if gate_override is not None:
        gate = np.asarray(gate_override, dtype=np.uint8)
    shaped = variant in ("gdcc", "no_predictor")
    n, n_act = env.mdp.n_states, env.mdp.n_actions
    nxt, cum = env.mdp.sparse_tables
    table = QTable.zeros(n, n_act)
    zero_phi = np.zeros(n)
    trace = np.zeros(cfg.horizon + 1, dtype=np.int64)
    curve = []
    eval_seed = cfg.seed + 1_000_003
    for ep in range(cfg.episodes):
        rng = episode_rng(cfg.seed, TRAIN_STREAM, ep)
        s, g = _start_goal(rng, n)
        u = rng.random((cfg.horizon, 3))
        phi = guide.potential(env.maze, g) if shaped else zero_phi
        steps, _ = kernels.q_episode(table.q[g], nxt, cum, phi, gate, g, s, cfg.alpha, cfg.gamma,
                                     cfg.epsilon(ep), cfg.kappa, u, True, shaped, trace)
        np.add.at(table.visits[g], trace[: steps + 1], 1)
        if (ep + 1) % cfg.eval_every == 0 or ep + 1 == cfg.episodes:
            curve.append((ep + 1, evaluate(env, table, cfg.eval_episodes, eval_seed, cfg.horizon)))
    return table, curve


# continuous fallback: Q-table over (bin key, goal cell) with eight compass actions
_DIRS = [(math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)) for k in range(8)]


def _cont_gate(env: PointEnv, variant: str, guide: Guidance | None, cells) -> dict:
    if variant in ("sparse", "no_reward"):
        return {}
    if guide is None:
        raise MissingDependency(f"variant {variant!r} needs subgoal guidance")
    pts = np.array([env.cell_position(c) for c in cells])
    if variant == "gdcc":
        if guide.model is None:
            raise MissingDependency("variant 'gdcc' needs a trained predictor")
        from .predictor import predict_many

        pred = predict_many(guide.model, pts)
    else:
        pred = assign_nearest_many(pts, guide.subgoals if guide.subgoals is not None else guide.graph.subgoals)
    return {c: bool(p == r) for c, p, r in zip(cells, pred.tolist(), guide.regions.tolist())}


def _cont_episode(env, q, start, goal_cell, cfg, eps, rng, learn, phi=None, gate=None, index=None):
    goal_xy = env.cell_position(goal_cell)
    s = start
    for t in range(cfg.horizon):
        key = env.key(s)
        row = q.setdefault(key, [0.0] * len(_DIRS))
        if rng.random() < eps:
            a = int(rng.integers(len(_DIRS)))
        else:
            best = max(row)
            ties = [b for b, v in enumerate(row) if v == best]
            a = ties[int(rng.integers(len(ties)))]
        d = _DIRS[a]
        tr = env.step(s, (d[0] * env.step_max, d[1] * env.step_max), goal=goal_xy)
        r = tr.reward
        if phi is not None:
            c0, c1 = env.cell_of(s), env.cell_of(tr.next_state)
            if gate.get(c0) and gate.get(c1):
                r += cfg.kappa * (phi[index[c0]] - cfg.gamma * phi[index[c1]])
        if learn:
            nrow = q.setdefault(env.key(tr.next_state), [0.0] * len(_DIRS))
            target = r if tr.done else r + cfg.gamma * max(nrow)
            row[a] += cfg.alpha * (target - row[a])
        s = tr.next_state
        if tr.done:
            return True
    return False


def train_continuous(env: PointEnv, cfg: RLConfig, variant: str, guide: Guidance | None = None):
    """Pure-Python fallback for the point maze; dynamics stay continuous.

    Returns ``(tables, curve)`` where ``tables`` maps goal cell to a dict
    keyed by state bin.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    cells = env.maze.free_cells
    index = env.maze.cell_index
    shaped = variant in ("gdcc", "no_predictor")
    if shaped and guide is not None and guide.regions is None:
        from .shaping import cell_regions

        guide.regions = cell_regions(env.maze, guide.graph, env.cell_size)
    gate = _cont_gate(env, variant, guide, cells)
    tables: dict = {}
    curve = []
    for ep in range(cfg.episodes):
        rng = episode_rng(cfg.seed, TRAIN_STREAM, ep)
        si, gi = _start_goal(rng, len(cells))
        start = env.cell_position(cells[si])
        q = tables.setdefault(cells[gi], {})
        phi = guide.potential(env.maze, gi) if shaped else None
        _cont_episode(env, q, start, cells[gi], cfg, cfg.epsilon(ep), rng, True, phi, gate, index)
        if (ep + 1) % cfg.eval_every == 0 or ep + 1 == cfg.episodes:
            curve.append((ep + 1, evaluate_continuous(env, tables, cfg, cfg.eval_episodes, cfg.seed + 1_000_003)))
    return tables, curve


def evaluate_continuous(env: PointEnv, tables: dict, cfg: RLConfig, episodes: int, seed: int) -> float:
    cells = env.maze.free_cells
    wins = 0
    for ep in range(episodes):
        rng = episode_rng(seed, EVAL_STREAM, ep)
        si, gi = _start_goal(rng, len(cells))
        q = dict(tables.get(cells[gi], {}))
        wins += _cont_episode(env, q, env.cell_position(cells[si]), cells[gi], cfg, 0.0, rng, False)
    return wins / episodes if episodes else 0.0


@dataclass
class AblationResult:
    seeds: list
    curves: dict   # variant -> list of per-seed curves
    finals: dict   # variant -> per-seed final success rates

    def mean_final(self, variant: str) -> float:
        return float(np.mean(self.finals[variant]))

    def ordering(self) -> list:
        return sorted(self.finals, key=lambda v: (-self.mean_final(v), VARIANTS.index(v)))


def _ablation_job(args):
    env, cfg, variant, guide = args
    _, curve = train(env, cfg, variant, guide)
    return curve


def run_ablation(env: GridEnv, cfg: RLConfig, seeds, guide: Guidance, variants=VARIANTS,
                 workers: int = 1) -> AblationResult:
    """Run every variant on the same seeds; shared guidance, per-seed RL randomness."""
    seeds = list(seeds)
    jobs = [(env, replace(cfg, seed=s), v, guide) for v in variants for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablation_job, jobs))
    else:
        results = [_ablation_job(j) for j in jobs]
    curves, finals = {}, {}
    for (_, c, v, _), curve in zip(jobs, results):
        curves.setdefault(v, []).append(curve)
        finals.setdefault(v, []).append(curve[-1][1] if curve else 0.0)
    return AblationResult(seeds, curves, finals)


def write_curve(path, curve) -> None:
    lines = ["# episode success_rate"] + [f"{ep} {rate!r}" for ep, rate in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve(path) -> list:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            ep, rate = line.split()
            out.append((int(ep), float(rate)))
    return out


def summary_table(result: AblationResult) -> str:
    rows = [f"{'variant':<14}{'mean_final':>12}{'min':>8}{'max':>8}  seeds"]
    for v in result.ordering():
        f = result.finals[v]
        rows.append(f"{v:<14}{np.mean(f):>12.4f}{min(f):>8.3f}{max(f):>8.3f}  {len(f)}")
    return "\n".join(rows) + "\n"


def write_ablation(outdir, result: AblationResult) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for v, per_seed in result.curves.items():
        for s, curve in zip(result.seeds, per_seed):
            write_curve(out / f"curve_{v}_seed{s}.txt", curve)
    (out / "summary.txt").write_text(summary_table(result))


QTABLE_MAGIC = b"CCAPQTB1"
CONT_MAGIC = b"CCAPQTC1"


def save_qtable(path, table) -> None:
    """Binary Q-table: magic, dims as <q, then little-endian blocks.

    A QTable stores q (<f8) and visits (<i8). A continuous table dict is
    written as sorted ``goal_r goal_c key_x key_y q[8]`` records.
    """
    with open(path, "wb") as fh:
        if isinstance(table, QTable):
            fh.write(QTABLE_MAGIC + struct.pack("<3q", *table.q.shape))
            fh.write(np.ascontiguousarray(table.q, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(table.visits, dtype="<i8").tobytes())
            return
        rows = sorted((g, k, tuple(v)) for g, per in table.items() for k, v in per.items())
        fh.write(CONT_MAGIC + struct.pack("<2q", len(rows), len(_DIRS)))
        for g, k, v in rows:
            fh.write(struct.pack("<4q", *g, *k) + struct.pack(f"<{len(v)}d", *v))


def load_qtable(path):
    data = Path(path).read_bytes()
    magic, body = data[:8], data[8:]
    if magic == QTABLE_MAGIC:
        n, m, a = struct.unpack_from("<3q", body)
        size_q = 8 * n * m * a
        if len(body) != 24 + size_q + 8 * n * m:
            raise BadInput("Q-table size does not match its header")
        q = np.frombuffer(body, "<f8", n * m * a, 24).reshape(n, m, a).astype(np.float64)
        visits = np.frombuffer(body, "<i8", n * m, 24 + size_q).reshape(n, m).astype(np.int64)
        return QTable(q, visits)
    if magic == CONT_MAGIC:
        count, a = struct.unpack_from("<2q", body)
        rec = 32 + 8 * a
        if len(body) != 16 + count * rec:
            raise BadInput("Q-table size does not match its header")
        out: dict = {}
        for i in range(count):
            off = 16 + i * rec
            gr, gc, kx, ky = struct.unpack_from("<4q", body, off)
            out.setdefault((gr, gc), {})[(kx, ky)] = list(struct.unpack_from(f"<{a}d", body, off + 32))
        return out
    raise BadInput("not a Q-table file")
