"""Causal-capacity estimation.

Capacity of a state is the entropy (nats) of its next-state distribution
when no policy intervenes, which equals the uniform-random-policy marginal.
Two estimators are provided: frequency counting over discrete keys and
distance-band clustering for continuous states. Exact quantities on tabular
MDPs serve as oracles.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from . import kernels
from .errors import EmptyData, EmptyInput, IndexOutOfRange, InsufficientSamples, MalformedLine
from .sampler import TrajectorySet

MIN_SAMPLES = 20
_METRICS = {"euclidean": ("euclidean", 2), "manhattan": ("cityblock", 1)}


def entropy(counts) -> float:
    """Plug-in Shannon entropy in nats of a count (or probability) vector."""
    c = np.asarray(counts, dtype=np.float64)
    c = c[c > 0]
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-(p * np.log(p)).sum()) + 0.0


def miller_madow(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum()
    k = int((c > 0).sum())
    return entropy(c) + (k - 1) / (2.0 * n) if n > 0 else 0.0


@dataclass
class CountTable:
    totals: dict       # key -> N(S=s), all records leaving s
    next_counts: dict  # key -> {next key: N(S'=s'|S=s)}

    def outcomes(self, key) -> int:
        return sum(self.next_counts.get(key, {}).values())

    def distribution(self, key) -> dict:
        row = self.next_counts.get(key, {})
        n = sum(row.values())
        return {k: v / n for k, v in row.items()} if n else {}


def _as_keys(states, discretizer):
    if discretizer is None:
        return np.asarray(states, dtype=np.int64)
    if hasattr(discretizer, "keys"):
        return discretizer.keys(states)
    return np.asarray(discretizer(states), dtype=np.int64)


def count_transitions(trajs: TrajectorySet, discretizer=None, exclude_self: bool = False) -> CountTable:
    """Count next-state frequencies per state key.

    Terminal records add to ``N(S=s)`` but not to the next-state counts.
    With ``exclude_self`` a transition that stays on the same key is treated
    as "no state change" and dropped from the next-state counts as well.
    """
    if len(trajs) == 0:
        raise EmptyData("no transitions to count")
    ks = _as_keys(trajs.states, discretizer)
    kn = _as_keys(trajs.next_states, discretizer)
    uniq, tot = np.unique(ks, axis=0, return_counts=True)
    totals = {tuple(k): int(c) for k, c in zip(uniq.tolist(), tot.tolist())}
    keep = ~np.asarray(trajs.dones, dtype=bool)
    if exclude_self:
        keep &= np.any(ks != kn, axis=1)
    pairs = np.concatenate([ks[keep], kn[keep]], axis=1)
    nexts: dict = defaultdict(dict)
    if len(pairs):
        upairs, pc = np.unique(pairs, axis=0, return_counts=True)
        for row, c in zip(upairs.tolist(), pc.tolist()):
            nexts[tuple(row[:2])][tuple(row[2:])] = int(c)
    for k in totals:
        nexts.setdefault(k, {})
    return CountTable(totals, dict(nexts))


def capacity_mc(counts: CountTable, s, min_samples: int = MIN_SAMPLES,
                bias_correction: bool = False) -> float:
    """Entropy of the empirical next-state distribution of ``s`` (nats)."""
    key = tuple(int(v) for v in s)
    row = counts.next_counts.get(key, {})
    n = sum(row.values())
    if n < min_samples:
        raise InsufficientSamples(key, n, min_samples)
    values = [row[k] for k in sorted(row)]
    return miller_madow(values) if bias_correction else entropy(values)


@dataclass(frozen=True)
class PartitionConfig:
    tau_nei: float = 0.7
    tau_adj: float = 1.0
    metric: str = "euclidean"
    link_threshold: float | None = None  # None -> tau_nei

    def __post_init__(self):
        if not 0 < self.tau_nei < self.tau_adj:
            raise ValueError(f"need 0 < tau_nei < tau_adj, got {self.tau_nei}, {self.tau_adj}")
        if self.metric not in _METRICS:
            raise ValueError(f"metric must be one of {sorted(_METRICS)}")
        if self.link_threshold is not None and self.link_threshold <= 0:
            raise ValueError("link_threshold must be positive")

    @property
    def link(self) -> float:
        return self.tau_nei if self.link_threshold is None else self.link_threshold


def distances(points, anchor, metric: str = "euclidean") -> np.ndarray:
    diff = np.asarray(points, dtype=np.float64) - np.asarray(anchor, dtype=np.float64)
    if metric == "manhattan":
        return np.abs(diff).sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


@dataclass
class Partition:
    nei: np.ndarray  # indices with d < tau_nei
    adj: np.ndarray  # tau_nei <= d < tau_adj
    out: np.ndarray  # d >= tau_adj


def partition_states(samples, s, cfg: PartitionConfig) -> Partition:
    d = distances(samples, s, cfg.metric)
    nei = d < cfg.tau_nei
    adj = (d >= cfg.tau_nei) & (d < cfg.tau_adj)
    return Partition(np.flatnonzero(nei), np.flatnonzero(adj), np.flatnonzero(~nei & ~adj))


@dataclass
class ClusterResult:
    labels: np.ndarray
    sizes: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    @property
    def probabilities(self) -> np.ndarray:
        return self.sizes / self.sizes.sum()

    @property
    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == i) for i in range(self.n_clusters)]


def agglomerative_cluster(points, metric: str = "euclidean", link_threshold: float = 0.7) -> ClusterResult:
    """Average-linkage agglomerative clustering with a distance stop threshold."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise EmptyInput("need a nonempty (n, d) point array")
    dist = np.ascontiguousarray(cdist(pts, pts, metric=_METRICS[metric][0]))
    labels = kernels.average_linkage(dist, float(link_threshold))
    return ClusterResult(labels, np.bincount(labels).astype(np.int64))


def _thin(idx: np.ndarray, max_points: int | None) -> np.ndarray:
    if max_points is None or len(idx) <= max_points:
        return idx
    return idx[np.linspace(0, len(idx) - 1, max_points).round().astype(np.int64)]


def cluster_next_states(samples, s, cfg: PartitionConfig, max_points: int | None = 400):
    """Partition around ``s`` and cluster its general next-state set.

    Returns ``(partition, clustered_indices, ClusterResult | None)``. Large
    next-state sets are thinned to ``max_points`` evenly spaced samples.
    """
    part = partition_states(samples, s, cfg)
    idx = _thin(part.adj, max_points)
    if len(idx) == 0:
        return part, idx, None
    return part, idx, agglomerative_cluster(np.asarray(samples)[idx], cfg.metric, cfg.link)


def capacity_clustered(samples, s, cfg: PartitionConfig, min_samples: int = MIN_SAMPLES,
                       max_points: int | None = 400) -> float:
    """Entropy (nats) of cluster-size frequencies of the next-state band around ``s``."""
    part, _, res = cluster_next_states(samples, s, cfg, max_points)
    if len(part.adj) < min_samples:
        raise InsufficientSamples(tuple(np.asarray(s).tolist()), len(part.adj), min_samples)
    return entropy(res.sizes)


@dataclass
class CapacityEntry:
    capacity: float
    support: int
    samples: int
    confident: bool
    position: tuple


@dataclass
class CapacityMap:
    entries: dict
    estimator: str = "mc"
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key) -> CapacityEntry:
        return self.entries[tuple(key)]

    def __contains__(self, key) -> bool:
        return tuple(key) in self.entries

    def keys(self):
        return sorted(self.entries)

    def capacity(self, key) -> float:
        return self.entries[tuple(key)].capacity

    def equals(self, other: CapacityMap) -> bool:
        return self.estimator == other.estimator and self.entries == other.entries


def _key_positions(trajs: TrajectorySet, keys: np.ndarray) -> dict:
    """Mean sampled state per key."""
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(uniq), 2))
    np.add.at(sums, inv, np.asarray(trajs.states, dtype=np.float64))
    cnt = np.bincount(inv, minlength=len(uniq))
    return {tuple(k): tuple((sums[i] / cnt[i]).tolist()) for i, k in enumerate(uniq.tolist())}


def capacity_map(data, cfg: PartitionConfig | None = None, estimator: str = "mc",
                 min_samples: int = MIN_SAMPLES, env=None, exclude_self: bool = True,
                 bias_correction: bool = False, max_points: int | None = 400) -> CapacityMap:
    """Capacity of every sampled state.

    ``data`` is a TrajectorySet (or, for ``mc``, a CountTable). States with
    fewer than ``min_samples`` outcomes keep their plug-in value but are
    flagged low-confidence. For maze data ``exclude_self`` treats a move that
    stays on the same key (a blocked move) as no transition, mirroring how
    the clustered estimator drops the same-state band.
    """
    cfg = cfg or PartitionConfig()
    if estimator == "mc":
        if isinstance(data, CountTable):
            counts, positions = data, {}
        else:
            if len(data) == 0:
                raise EmptyData("no transitions")
            keys = _as_keys(data.states, env)
            counts = count_transitions(data, env, exclude_self=exclude_self)
            positions = _key_positions(data, keys) if data.kind == "continuous" else {}
        entries = {}
        for key in sorted(counts.totals):
            row = counts.next_counts.get(key, {})
            values = [row[k] for k in sorted(row)]
            n = sum(values)
            cap = miller_madow(values) if (bias_correction and n) else entropy(values)
            pos = positions.get(key, tuple(float(v) for v in key))
            entries[key] = CapacityEntry(cap, len(values), n, n >= min_samples, pos)
        return CapacityMap(entries, "mc")
    if estimator != "clustered":
        raise ValueError(f"unknown estimator {estimator!r}")
    if not isinstance(data, TrajectorySet) or len(data) == 0:
        raise EmptyData("clustered estimator needs nonempty trajectories")
    samples = np.asarray(data.states, dtype=np.float64)
    keys = _as_keys(data.states, env)
    positions = _key_positions(data, keys)
    tree = cKDTree(samples)
    p = _METRICS[cfg.metric][1]
    entries = {}
    for key in sorted(positions):
        anchor = np.asarray(positions[key])
        near = np.asarray(sorted(tree.query_ball_point(anchor, cfg.tau_adj, p=p)), dtype=np.int64)
        local = samples[near]
        part, _, res = cluster_next_states(local, anchor, cfg, max_points)
        n = len(part.adj)
        if res is None:
            cap, support = 0.0, 0
        else:
            cap, support = entropy(res.sizes), res.n_clusters
        entries[key] = CapacityEntry(cap, support, n, n >= min_samples, positions[key])
    return CapacityMap(entries, "clustered")


def write_capacity_map(path, cmap: CapacityMap, columns: str = "state_key capacity support samples confidence px py") -> None:
    lines = [f"# causalcap-capacity v1 estimator={cmap.estimator}", f"# {columns}"]
    for key in cmap.keys():
        e = cmap.entries[key]
        lines.append(" ".join([
            ",".join(str(int(k)) for k in key), repr(float(e.capacity)), str(e.support), str(e.samples),
            "ok" if e.confident else "low", repr(float(e.position[0])), repr(float(e.position[1])),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_capacity_map(path) -> CapacityMap:
    estimator = "mc"
    entries = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("estimator="):
                        estimator = tok.split("=", 1)[1]
                continue
            parts = line.split()
            if len(parts) not in (5, 7):
                raise MalformedLine(line_no, f"expected 5 or 7 fields, got {len(parts)}")
            try:
                key = tuple(int(v) for v in parts[0].split(","))
                pos = (float(parts[5]), float(parts[6])) if len(parts) == 7 else tuple(float(v) for v in key)
                if parts[4] not in ("ok", "low"):
                    raise ValueError(f"confidence {parts[4]!r}")
                entries[key] = CapacityEntry(float(parts[1]), int(parts[2]), int(parts[3]),
                                             parts[4] == "ok", pos)
            except ValueError as exc:
                raise MalformedLine(line_no, str(exc)) from None
    return CapacityMap(entries, estimator)


def _check_sa(mdp, s, a=None):
    if not 0 <= s < mdp.n_states:
        raise IndexOutOfRange(f"state {s} out of range [0, {mdp.n_states})")
    if a is not None and not 0 <= a < mdp.n_actions:
        raise IndexOutOfRange(f"action {a} out of range [0, {mdp.n_actions})")


def exact_capacity(mdp, s: int) -> float:
    """H(S'|S=s) under the uniform-action marginal."""
    _check_sa(mdp, s)
    return entropy(mdp.marginal(s))


def exact_transfer_entropy(mdp, s: int, a: int) -> float:
    """H(S'|S=s) - H(S'|S=s, do(A=a)), exact from the transition tensor."""
    _check_sa(mdp, s, a)
    return entropy(mdp.marginal(s)) - entropy(mdp.transition[s, a])


def sample_random_policy(mdp, per_state: int, seed: int) -> TrajectorySet:
    """``per_state`` uniform-random-policy transitions from every state.

    States are stored as ``(index, 0)`` pairs so the regular counting path
    applies unchanged.
    """
    rng = np.random.default_rng(seed)
    n, n_act = mdp.n_states, mdp.n_actions
    nxt, cum = mdp.sparse_tables
    s = np.repeat(np.arange(n), per_state)
    a = rng.integers(n_act, size=s.size)
    u = rng.random(s.size)
    k = (u[:, None] >= cum[s, a]).sum(axis=1)
    k = np.minimum(k, cum.shape[2] - 1)
    s2 = nxt[s, a, k]
    z = np.zeros_like(s)
    return TrajectorySet(
        "discrete", s.astype(np.int64), np.zeros(s.size, np.int64),
        np.stack([s, z], 1), np.stack([a, z], 1), np.stack([s2, z], 1),
        np.zeros(s.size), np.zeros(s.size, bool), {"seed": str(seed), "policy": "random"},
    )


@dataclass
class BoundReport:
    checked: int = 0
    upper_slack: float = math.inf        # min H - T
    lower_slack: float = math.inf        # min T - min_a(1 - 1/p(a|s)) H
    max_te_low_slack: float = math.inf   # min over s of max_a T
    max_te_high_slack: float = math.inf  # min over s of H - max_a T
    mc_tv: float | None = None           # worst total variation of the MC marginal
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_propositions(mdp, tol: float = 1e-9, mc_samples: int = 0, seed: int = 0,
                       mc_tol: float = 0.05) -> BoundReport:
    """Check the transfer-entropy bounds at every (s, a) of ``mdp``.

    The lower bound uses the uniform policy, ``min_a(1 - 1/p(a|s)) = 1 - |A|``.
    With ``mc_samples > 0`` the counting estimator's marginal is also
    compared with the exact one in total variation.
    """
    rep = BoundReport()
    n_act = mdp.n_actions
    p_a = np.full(n_act, 1.0 / n_act)
    low_coef = float(np.min(1.0 - 1.0 / p_a))
    for s in range(mdp.n_states):
        h = exact_capacity(mdp, s)
        tes = [exact_transfer_entropy(mdp, s, a) for a in range(n_act)]
        for a, te in enumerate(tes):
            rep.checked += 1
            up = h - te
            lo = te - low_coef * h
            rep.upper_slack = min(rep.upper_slack, up)
            rep.lower_slack = min(rep.lower_slack, lo)
            if up < -tol:
                rep.violations.append(f"upper bound at s={s} a={a}: T={te:.12g} > H={h:.12g}")
            if lo < -tol:
                rep.violations.append(f"lower bound at s={s} a={a}: T={te:.12g}")
        best = max(tes)
        rep.max_te_low_slack = min(rep.max_te_low_slack, best)
        rep.max_te_high_slack = min(rep.max_te_high_slack, h - best)
        if best < -tol or best > h + tol:
            rep.violations.append(f"max_a T outside [0, H] at s={s}: {best:.12g} vs H={h:.12g}")
    if mc_samples > 0:
        counts = count_transitions(sample_random_policy(mdp, mc_samples, seed))
        worst = 0.0
        for s in range(mdp.n_states):
            exact = mdp.marginal(s)
            est = np.zeros(mdp.n_states)
            for (k, _), v in counts.next_counts.get((s, 0), {}).items():
                est[k] = v
            est /= est.sum()
            worst = max(worst, 0.5 * float(np.abs(est - exact).sum()))
        rep.mc_tv = worst
        if worst > mc_tol:
            rep.violations.append(f"MC marginal total variation {worst:.4f} > {mc_tol}")
    return rep
