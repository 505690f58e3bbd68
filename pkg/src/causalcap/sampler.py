"""Random-policy trajectory collection, frontier restarts and the trajectory log."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCounts, MalformedLine
from .mdpcore import Transition

LOG_MAGIC = "# causalcap-trajectories v1"
LOG_COLUMNS = "# episode t sx sy ax ay nsx nsy reward done"

# RNG stream ids, so random and frontier episodes never share a stream
RANDOM_STREAM = 0
FRONTIER_STREAM = 1
FRONTIER_START_STREAM = 2


def episode_rng(seed: int, stream: int, episode: int) -> np.random.Generator:
    """Independent generator for one episode, keyed by (seed, stream, episode)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, episode)))


@dataclass(eq=False)
class TrajectorySet:
    kind: str
    episode: np.ndarray
    t: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, kind: str, metadata=None) -> TrajectorySet:
        dt = np.int64 if kind == "discrete" else np.float64
        return cls(kind, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 2), dt),
                   np.zeros((0, 2), dt), np.zeros((0, 2), dt), np.zeros(0), np.zeros(0, bool),
                   dict(metadata or {}))

    def __len__(self) -> int:
        return len(self.episode)

    @property
    def n_episodes(self) -> int:
        return len(np.unique(self.episode))

    def episode_slices(self) -> list[tuple[int, int, int]]:
        """``(episode, start, stop)`` row ranges, in storage order."""
        if len(self) == 0:
            return []
        cuts = np.flatnonzero(np.diff(self.episode)) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [len(self)]])
        return [(int(self.episode[a]), int(a), int(b)) for a, b in zip(starts, stops)]

    def state_sequences(self) -> list[np.ndarray]:
        """Per-episode visited states, including the final next state."""
        return [np.concatenate([self.states[a:b], self.next_states[b - 1:b]])
                for _, a, b in self.episode_slices()]

    def transitions(self):
        for i in range(len(self)):
            yield Transition(tuple(self.states[i].tolist()), tuple(self.actions[i].tolist()),
                             tuple(self.next_states[i].tolist()), float(self.rewards[i]),
                             bool(self.dones[i]), int(self.episode[i]), int(self.t[i]))

    def check_chaining(self) -> bool:
        for _, a, b in self.episode_slices():
            ok = np.all(self.next_states[a:b - 1] == self.states[a + 1:b], axis=1)
            if not np.all(ok | self.dones[a:b - 1]):
                return False
        return True

    def equals(self, other: TrajectorySet) -> bool:
        cols = ("episode", "t", "states", "actions", "next_states", "rewards", "dones")
        return (self.kind == other.kind
                and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols))

    def concat(self, other: TrajectorySet) -> TrajectorySet:
        """Append ``other``, renumbering its episodes after ours."""
        if other.kind != self.kind:
            raise ValueError("cannot mix discrete and continuous trajectories")
        offset = int(self.episode.max()) + 1 if len(self) else 0
        _, inverse = np.unique(other.episode, return_inverse=True)
        meta = dict(self.metadata)
        tags = [p for m in (self.metadata, other.metadata) for p in m.get("policy", "").split("+") if p]
        meta["policy"] = "+".join(dict.fromkeys(tags))
        return TrajectorySet(
            self.kind,
            np.concatenate([self.episode, inverse.astype(np.int64) + offset]),
            np.concatenate([self.t, other.t]),
            np.concatenate([self.states, other.states]),
            np.concatenate([self.actions, other.actions]),
            np.concatenate([self.next_states, other.next_states]),
            np.concatenate([self.rewards, other.rewards]),
            np.concatenate([self.dones, other.dones]),
            meta,
        )

    def permuted(self, rng) -> TrajectorySet:
        """Rows in a random order (for order-invariance checks)."""
        p = rng.permutation(len(self))
        return TrajectorySet(self.kind, self.episode[p], self.t[p], self.states[p], self.actions[p],
                             self.next_states[p], self.rewards[p], self.dones[p], dict(self.metadata))


def _episode_block(env, episode: int, horizon: int, seed: int, stream: int, start=None):
    rng = episode_rng(seed, stream, episode)
    if start is None:
        start = env.random_start(rng)
    states, actions = env.rollout(start, horizon, rng)
    return episode, states, actions


def _run_chunk(args):
    env, episodes, horizon, seed, stream, starts = args
    return [_episode_block(env, ep, horizon, seed, stream, s) for ep, s in zip(episodes, starts)]


def _collect(env, n_episodes, horizon, seed, stream, starts, workers, metadata):
    if n_episodes < 1 or horizon < 1:
        raise ValueError("episodes and horizon must both be >= 1")
    eps = list(range(n_episodes))
    if workers <= 1:
        blocks = _run_chunk((env, eps, horizon, seed, stream, starts))
    else:
        chunks = [(env, eps[i::workers], horizon, seed, stream, starts[i::workers]) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = [b for part in pool.map(_run_chunk, chunks) for b in part]
    # merge keyed by episode index, independent of worker scheduling
    blocks.sort(key=lambda b: b[0])
    dt = np.int64 if env.kind == "discrete" else np.float64
    n = n_episodes * horizon
    out = TrajectorySet(
        env.kind,
        np.repeat(np.arange(n_episodes, dtype=np.int64), horizon),
        np.tile(np.arange(horizon, dtype=np.int64), n_episodes),
        np.empty((n, 2), dt), np.empty((n, 2), dt), np.empty((n, 2), dt),
        np.zeros(n), np.zeros(n, bool), metadata,
    )
    for ep, states, actions in blocks:
        sl = slice(ep * horizon, (ep + 1) * horizon)
        out.states[sl] = states[:-1]
        out.next_states[sl] = states[1:]
        out.actions[sl] = actions
    return out


def rollout_random(env, episodes: int, horizon: int, seed: int, workers: int = 1,
                   start=None) -> TrajectorySet:
    """Uniform random-policy rollouts.

    Each episode starts from a uniformly random free state unless ``start``
    pins it. Output is identical for any ``workers`` count.
    """
    starts = [start] * episodes
    meta = {"seed": str(seed), "policy": "random", "env": env.tag}
    return _collect(env, episodes, horizon, seed, RANDOM_STREAM, starts, workers, meta)


@dataclass
class VisitCounts:
    counts: dict
    representative: dict

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __len__(self) -> int:
        return len(self.counts)


def visit_counts(trajs: TrajectorySet, env) -> VisitCounts:
    """Visits per state key over every logged state (record states plus each final state)."""
    seqs = trajs.state_sequences()
    counts: Counter = Counter()
    rep: dict = {}
    for seq in seqs:
        keys = env.keys(seq)
        for k, s in zip(map(tuple, keys.tolist()), seq.tolist()):
            counts[k] += 1
            if k not in rep:
                rep[k] = tuple(s)
    return VisitCounts(dict(counts), rep)


def frontier_candidates(counts: VisitCounts, fraction: float = 0.1) -> list:
    """Keys among the least-visited ``fraction`` (ties at the cutoff included)."""
    if not counts.counts:
        raise EmptyCounts("no visited states to restart from")
    ordered = sorted(counts.counts.items(), key=lambda kv: (kv[1], kv[0]))
    cutoff = max(1, math.ceil(fraction * len(ordered)))
    limit = ordered[cutoff - 1][1]
    return sorted(k for k, c in counts.counts.items() if c <= limit)


def frontier_resample(env, counts: VisitCounts, episodes: int, horizon: int, seed: int,
                      fraction: float = 0.1, workers: int = 1) -> TrajectorySet:
    """Random rollouts restarted from the least-visited visited states."""
    cands = frontier_candidates(counts, fraction)
    starts = []
    for ep in range(episodes):
        rng = episode_rng(seed, FRONTIER_START_STREAM, ep)
        starts.append(counts.representative[cands[int(rng.integers(len(cands)))]])
    meta = {"seed": str(seed), "policy": "frontier", "env": env.tag}
    return _collect(env, episodes, horizon, seed, FRONTIER_STREAM, starts, workers, meta)


def explore(env, episodes: int, horizon: int, seed: int, frontier_rounds: int = 0,
            frontier_episodes: int | None = None, workers: int = 1, start=None) -> TrajectorySet:
    """Random rollouts followed by ``frontier_rounds`` rounds of frontier restarts."""
    data = rollout_random(env, episodes, horizon, seed, workers, start)
    for rnd in range(frontier_rounds):
        counts = visit_counts(data, env)
        extra = frontier_resample(env, counts, frontier_episodes or episodes, horizon,
                                  seed + 7919 * (rnd + 1), workers=workers)
        data = data.concat(extra)
    return data


def _fmt(v, kind):
    return str(int(v)) if kind == "discrete" else repr(float(v))


def write_trajectories(path, trajs: TrajectorySet) -> None:
    meta = {"kind": trajs.kind, **trajs.metadata}
    lines = [LOG_MAGIC, "# " + " ".join(f"{k}={v}" for k, v in meta.items()), LOG_COLUMNS]
    k = trajs.kind
    for i in range(len(trajs)):
        s, a, ns = trajs.states[i], trajs.actions[i], trajs.next_states[i]
        lines.append(" ".join([
            str(int(trajs.episode[i])), str(int(trajs.t[i])),
            _fmt(s[0], k), _fmt(s[1], k), _fmt(a[0], k), _fmt(a[1], k), _fmt(ns[0], k), _fmt(ns[1], k),
            repr(float(trajs.rewards[i])), "1" if trajs.dones[i] else "0",
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectories(path) -> TrajectorySet:
    meta: dict = {}
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    meta.update(kv.split("=", 1) for kv in body.split())
                continue
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 10:
                raise MalformedLine(line_no, f"expected 10 fields, got {len(parts)}")
            rows.append((line_no, parts))
    kind = meta.pop("kind", "discrete")
    out = TrajectorySet.empty(kind, meta)
    if not rows:
        return out
    conv = int if kind == "discrete" else float
    n = len(rows)
    cols = [np.empty(n, np.int64), np.empty(n, np.int64)] + [np.empty(n, out.states.dtype) for _ in range(6)]
    rewards = np.empty(n)
    dones = np.empty(n, bool)
    for i, (line_no, p) in enumerate(rows):
        try:
            cols[0][i] = int(p[0])
            cols[1][i] = int(p[1])
            for j in range(6):
                cols[2 + j][i] = conv(p[2 + j])
            rewards[i] = float(p[8])
            if p[9] not in ("0", "1"):
                raise ValueError(f"done flag {p[9]!r}")
            dones[i] = p[9] == "1"
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
    out.episode, out.t = cols[0], cols[1]
    out.states = np.stack([cols[2], cols[3]], axis=1)
    out.actions = np.stack([cols[4], cols[5]], axis=1)
    out.next_states = np.stack([cols[6], cols[7]], axis=1)
    out.rewards, out.dones = rewards, dones
    return out


def log_io(path, trajs: TrajectorySet | None = None, mode: str = "read") -> TrajectorySet:
    if mode == "write":
        write_trajectories(path, trajs)
        return trajs
    if mode == "read":
        return read_trajectories(path)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")
