"""Subgoal predictor: encoder/decoder/predictor MLPs trained with manual backprop.

The encoder ``p_theta`` embeds states, the decoder ``q_phi`` reconstructs
them, and the predictor ``rho`` maps a state to the embedding of the
subgoal it will reach next. Optimisation is plain SGD.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadDims, BadInput, EmptyLabels, NoSegments, TooFewSubgoals, Untrained
from .sampler import TrajectorySet
from .subgoals import NONE, SubgoalSet

EPS = 1e-12
MAGIC = b"CCAPMDL1"


@dataclass
class MLP:
    weights: list  # (fan_in, fan_out) blocks
    biases: list

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray):
        """Return the output and the per-layer inputs needed for backprop."""
        cache = []
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, out_grad: np.ndarray):
        """Gradients ``(dW list, db list, dx)`` for upstream gradient ``out_grad``."""
        dws, dbs = [None] * self.n_layers, [None] * self.n_layers
        g = out_grad
        for i in range(self.n_layers - 1, -1, -1):
            h_in = cache[i]
            dws[i] = h_in.T @ g
            dbs[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (cache[i] > 0)
        return dws, dbs, g

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> MLP:
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def sgd(self, dws, dbs, lr: float) -> None:
        for w, dw in zip(self.weights, dws):
            w -= lr * dw
        for b, db in zip(self.biases, dbs):
            b -= lr * db


def make_mlp(sizes: list[int], rng: np.random.Generator) -> MLP:
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        # nonzero biases keep the zero state away from the cosine singularity at z = 0
        biases.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))
    return MLP(weights, biases)


@dataclass(frozen=True)
class LossWeights:
    recon: float = 1.0  # lambda_theta
    sim: float = 1.0    # lambda_phi

    def __post_init__(self):
        if self.recon < 0 or self.sim < 0 or (self.recon == 0 and self.sim == 0):
            raise ValueError("loss weights must be >= 0 and not both zero")


@dataclass
class PredictorModel:
    encoder: MLP
    decoder: MLP
    predictor: MLP
    state_dim: int
    embed_dim: int
    hidden: int
    layers: int
    lo: np.ndarray = field(default_factory=lambda: np.full(2, -1.0))
    hi: np.ndarray = field(default_factory=lambda: np.full(2, 1.0))
    anchors: np.ndarray | None = None       # subgoal anchors, raw coordinates
    subgoal_table: np.ndarray | None = None  # encoder embeddings of the anchors

    def normalize(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        return 2.0 * (s - self.lo) / (self.hi - self.lo) - 1.0

    def embed(self, states) -> np.ndarray:
        return self.encoder(self.normalize(states))

    def predict_embedding(self, states) -> np.ndarray:
        return self.predictor(self.normalize(states))


def init_model(state_dim: int = 2, embed_dim: int = 64, hidden: int = 256, layers: int = 3,
               seed: int = 0, bounds=None) -> PredictorModel:
    """Fresh model; ``layers`` hidden ReLU layers of width ``hidden`` per network."""
    if min(state_dim, embed_dim, hidden, layers) < 1:
        raise BadDims("all model dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    mid = [hidden] * layers
    enc = make_mlp([state_dim, *mid, embed_dim], rng)
    dec = make_mlp([embed_dim, *mid, state_dim], rng)
    pred = make_mlp([state_dim, *mid, embed_dim], rng)
    lo, hi = (np.full(state_dim, -1.0), np.full(state_dim, 1.0)) if bounds is None else bounds
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    if lo.shape != (state_dim,) or hi.shape != (state_dim,) or np.any(hi <= lo):
        raise BadDims("bounds must be two state_dim vectors with hi > lo")
    return PredictorModel(enc, dec, pred, state_dim, embed_dim, hidden, layers, lo, hi)


def cosine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity."""
    nx = np.sqrt((x * x).sum(axis=-1) + EPS)
    ny = np.sqrt((y * y).sum(axis=-1) + EPS)
    return (x * y).sum(axis=-1) / (nx * ny)


def cosine_grads(x: np.ndarray, y: np.ndarray):
    """Row-wise gradients of cosine(x, y) with respect to x and y."""
    nx = np.sqrt((x * x).sum(axis=-1, keepdims=True) + EPS)
    ny = np.sqrt((y * y).sum(axis=-1, keepdims=True) + EPS)
    c = (x * y).sum(axis=-1, keepdims=True) / (nx * ny)
    return y / (nx * ny) - c * x / nx**2, x / (nx * ny) - c * y / ny**2


def pairwise_similarity(z: np.ndarray) -> float:
    """Mean cosine similarity over ordered pairs i != j."""
    k = len(z)
    n = np.sqrt((z * z).sum(axis=1) + EPS)
    c = (z @ z.T) / np.outer(n, n)
    return float((c.sum() - np.trace(c)) / (k * (k - 1)))


def pretrain_loss(model: PredictorModel, x: np.ndarray, g: np.ndarray, w: LossWeights, grad: bool = True):
    """Reconstruction plus subgoal-separation loss on normalized inputs.

    Returns ``(total, recon, sim, grads)`` where grads are
    ``(enc dW, enc db, dec dW, dec db)`` or None.
    """
    n, k = len(x), len(g)
    z, enc_cache = model.encoder.forward(x)
    xr, dec_cache = model.decoder.forward(z)
    diff = xr - x
    recon = float((diff * diff).sum() / n)
    zg, g_cache = model.encoder.forward(g)
    nz = np.sqrt((zg * zg).sum(axis=1, keepdims=True) + EPS)
    u = zg / nz
    c = u @ u.T
    pairs = k * (k - 1)
    sim = float((c.sum() - np.trace(c)) / pairs)
    total = w.recon * recon + w.sim * sim
    if not grad:
        return total, recon, sim, None
    d_xr = w.recon * 2.0 * diff / n
    dec_dw, dec_db, d_z = model.decoder.backward(dec_cache, d_xr)
    enc_dw, enc_db, _ = model.encoder.backward(enc_cache, d_z)
    # d sim / d u_i = 2/pairs * sum_{j != i} u_j, then through u = z / |z|
    d_u = (2.0 / pairs) * (u.sum(axis=0, keepdims=True) - u) * w.sim
    d_zg = (d_u - (d_u * u).sum(axis=1, keepdims=True) * u) / nz
    g_dw, g_db, _ = model.encoder.backward(g_cache, d_zg)
    enc_dw = [a + b for a, b in zip(enc_dw, g_dw)]
    enc_db = [a + b for a, b in zip(enc_db, g_db)]
    return total, recon, sim, (enc_dw, enc_db, dec_dw, dec_db)


def clip_gradients(grads: list, max_norm: float | None) -> list:
    """Rescale a list of gradient blocks so their joint L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if not np.isfinite(norm) or norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


def set_subgoals(model: PredictorModel, subgoals) -> None:
    """Store anchors and their encoder embeddings as the prediction table."""
    anchors = subgoals.anchors if isinstance(subgoals, SubgoalSet) else np.asarray(subgoals, dtype=np.float64)
    model.anchors = anchors.reshape(-1, model.state_dim).copy()
    model.subgoal_table = model.embed(model.anchors)


def pretrain_encoder(model: PredictorModel, states, subgoals, w: LossWeights | None = None,
                     steps: int = 10000, lr: float = 1e-3, batch: int = 1000, seed: int = 0,
                     target: float | None = None, clip: float | None = None) -> dict:
    """Jointly train encoder and decoder; returns ``recon``/``sim`` curves.

    ``target`` optionally stops training once the reconstruction loss falls
    below it. ``clip`` bounds the joint gradient norm per step.
    """
    w = w or LossWeights()
    anchors = subgoals.anchors if isinstance(subgoals, SubgoalSet) else np.asarray(subgoals, dtype=np.float64)
    if len(anchors) < 2:
        raise TooFewSubgoals(f"need >= 2 subgoals, got {len(anchors)}")
    x_all = model.normalize(states)
    if len(x_all) == 0:
        raise BadInput("no states to train on")
    g = model.normalize(anchors)
    rng = np.random.default_rng(seed)
    recon_curve, sim_curve = [], []
    for _ in range(steps):
        idx = rng.integers(len(x_all), size=min(batch, len(x_all)))
        _, recon, sim, grads = pretrain_loss(model, x_all[idx], g, w)
        edw, edb, ddw, ddb = grads
        if clip is not None:
            ne, nd = len(edw), len(ddw)
            flat = clip_gradients(edw + edb + ddw + ddb, clip)
            edw, edb = flat[:ne], flat[ne:2 * ne]
            ddw, ddb = flat[2 * ne:2 * ne + nd], flat[2 * ne + nd:]
        model.encoder.sgd(edw, edb, lr)
        model.decoder.sgd(ddw, ddb, lr)
        recon_curve.append(recon)
        sim_curve.append(sim)
        if target is not None and recon < target:
            break
    set_subgoals(model, anchors)
    return {"recon": np.array(recon_curve), "sim": np.array(sim_curve)}


@dataclass
class SegmentIndex:
    """Per-state lookup of the first subgoal reached from each position."""

    states: np.ndarray      # all states of all episodes, concatenated
    starts: np.ndarray      # valid segment start rows
    first_hit: np.ndarray   # row of the first achieving state at or after each row, or -1
    hit_goal: np.ndarray    # subgoal achieved at each row, or NONE
    episode_end: np.ndarray  # one past the last row of each row's episode


def segment_index(trajs: TrajectorySet, subgoals: SubgoalSet, horizon: int) -> SegmentIndex:
    seqs = trajs.state_sequences()
    parts, starts, first, ends = [], [], [], []
    offset = 0
    for seq in seqs:
        n = len(seq)
        ach = subgoals.achieved(seq)
        nxt = np.full(n, -1, dtype=np.int64)
        hit = np.flatnonzero(ach != NONE)
        if len(hit):
            pos = np.searchsorted(hit, np.arange(n))
            ok = pos < len(hit)
            nxt[ok] = hit[pos[ok]] + offset
        parts.append((seq, ach))
        first.append(nxt)
        ends.append(np.full(n, offset + n, dtype=np.int64))
        if n >= horizon:
            starts.append(np.arange(offset, offset + n - horizon + 1))
        offset += n
    if not starts:
        raise NoSegments(f"no episode has {horizon} states")
    states = np.concatenate([p[0] for p in parts]).astype(np.float64)
    hit_goal = np.concatenate([p[1] for p in parts])
    return SegmentIndex(states, np.concatenate(starts), np.concatenate(first), hit_goal, np.concatenate(ends))


def segment_targets(model: PredictorModel, index: SegmentIndex, seg_starts, horizon: int):
    """Flatten segments into ``(rows, targets, weights)`` for the predictor loss.

    A segment reaching subgoal g at offset m contributes states 0..m with
    target z_g and weight 1/(m+1). A segment reaching nothing contributes all
    ``horizon`` states with the predictor's own (constant) output at the last
    state as target and weight 1/horizon.
    """
    if model.subgoal_table is None:
        raise Untrained("encoder has no subgoal table; pretrain first")
    rows, targets, weights = [], [], []
    for t in np.asarray(seg_starts, dtype=np.int64):
        hit = index.first_hit[t]
        if hit >= 0 and hit - t < horizon:
            m = int(hit - t)
            r = np.arange(t, t + m + 1)
            targets.append(np.repeat(model.subgoal_table[index.hit_goal[hit]][None, :], m + 1, axis=0))
        else:
            r = np.arange(t, t + horizon)
            last = model.predict_embedding(index.states[t + horizon - 1])
            targets.append(np.repeat(last, horizon, axis=0))
        rows.append(r)
        weights.append(np.full(len(r), 1.0 / len(r)))
    return np.concatenate(rows), np.concatenate(targets), np.concatenate(weights)


def predictor_loss(model: PredictorModel, x: np.ndarray, targets: np.ndarray, weights: np.ndarray,
                   n_segments: int, grad: bool = True):
    """Negative weighted cosine to fixed targets, averaged over segments."""
    y, cache = model.predictor.forward(x)
    c = cosine(y, targets)
    loss = float(-(weights * c).sum() / n_segments)
    if not grad:
        return loss, None
    dy, _ = cosine_grads(y, targets)
    dy = -dy * (weights / n_segments)[:, None]
    dws, dbs, _ = model.predictor.backward(cache, dy)
    return loss, (dws, dbs)


def train_predictor(model: PredictorModel, trajs: TrajectorySet, subgoals: SubgoalSet, horizon: int = 50,
                    steps: int = 10000, lr: float = 1e-3, batch: int = 1000, seed: int = 0,
                    clip: float | None = None) -> np.ndarray:
    """Train ``rho`` on length-``horizon`` segments; encoder and decoder stay frozen.

    ``batch`` counts states, so each step uses ``batch // horizon`` segments.
    ``clip`` bounds the gradient norm per step.
    """
    if model.subgoal_table is None:
        set_subgoals(model, subgoals)
    index = segment_index(trajs, subgoals, horizon)
    x_all = model.normalize(index.states)
    n_seg = max(1, batch // horizon)
    rng = np.random.default_rng(seed)
    curve = []
    for _ in range(steps):
        seg = index.starts[rng.integers(len(index.starts), size=n_seg)]
        rows, tg, wt = segment_targets(model, index, seg, horizon)
        loss, (dws, dbs) = predictor_loss(model, x_all[rows], tg, wt, n_seg)
        if clip is not None:
            flat = clip_gradients(dws + dbs, clip)
            dws, dbs = flat[:len(dws)], flat[len(dws):]
        model.predictor.sgd(dws, dbs, lr)
        curve.append(loss)
    return np.array(curve)


def predict_many(model: PredictorModel, states) -> np.ndarray:
    if model.subgoal_table is None:
        raise Untrained("model has no subgoal table")
    y = model.predict_embedding(states)
    t = model.subgoal_table
    sims = (y @ t.T) / np.outer(np.sqrt((y * y).sum(1) + EPS), np.sqrt((t * t).sum(1) + EPS))
    return np.argmax(sims, axis=1).astype(np.int64)


def predict_subgoal(model: PredictorModel, state) -> int:
    """Subgoal whose embedding is most cosine-similar to ``rho(state)``."""
    return int(predict_many(model, state)[0])


def eval_accuracy(model: PredictorModel, states, labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyLabels("no labeled states")
    return float(np.mean(predict_many(model, states) == labels))


def labeled_states(graph, env) -> tuple[np.ndarray, np.ndarray]:
    """Region-map supervision as ``(states, labels)`` at key positions."""
    keys = sorted(graph.regions)
    if env.kind == "discrete":
        pts = np.array(keys, dtype=np.float64)
    else:
        pts = (np.array(keys, dtype=np.float64) + 0.5) * graph.bin_width
    return pts.reshape(-1, 2), np.array([graph.regions[k] for k in keys], dtype=np.int64)


def _blocks(model: PredictorModel) -> list[np.ndarray]:
    out = []
    for net in (model.encoder, model.decoder, model.predictor):
        out.extend(net.params())
    return out


def save_model(path, model: PredictorModel) -> None:
    """Binary checkpoint: magic, dims, bounds, subgoal table, weight blocks (<f8)."""
    k = 0 if model.anchors is None else len(model.anchors)
    head = struct.pack("<5q", model.state_dim, model.embed_dim, model.hidden, model.layers, k)
    body = [model.lo, model.hi]
    if k:
        body += [model.anchors, model.subgoal_table]
    body += _blocks(model)
    with open(path, "wb") as fh:
        fh.write(MAGIC + head)
        for arr in body:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> PredictorModel:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise BadInput("not a predictor checkpoint")
    pos = len(MAGIC)
    sd, ed, hid, lay, k = struct.unpack_from("<5q", data, pos)
    pos += 40
    model = init_model(sd, ed, hid, lay, seed=0)

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + 8 * n > len(data):
            raise BadInput("truncated checkpoint")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
        return arr

    model.lo, model.hi = take((sd,)), take((sd,))
    if k:
        model.anchors, model.subgoal_table = take((k, sd)), take((k, ed))
    for net in (model.encoder, model.decoder, model.predictor):
        net.weights = [take(w.shape) for w in net.weights]
        net.biases = [take(b.shape) for b in net.biases]
    if pos != len(data):
        raise BadInput("trailing bytes in checkpoint")
    return model


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else 0.0


def _numeric_grad(loss_fn, params: list, h: float = 1e-6) -> list:
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def gradient_check(seed: int = 0) -> dict:
    """Max relative error of analytic vs central-difference gradients per loss.

    Keys: ``pretrain`` (reconstruction plus subgoal separation),
    ``predictor_hit`` (segment reaching a subgoal) and ``predictor_miss``
    (segment with the frozen self-target).
    """
    rng = np.random.default_rng(seed)
    model = init_model(2, 3, 5, 2, seed=seed)
    x = rng.uniform(-1, 1, size=(6, 2))
    g = rng.uniform(-1, 1, size=(3, 2))
    w = LossWeights(0.7, 1.3)
    _, _, _, (edw, edb, ddw, ddb) = pretrain_loss(model, x, g, w)
    params = model.encoder.params() + model.decoder.params()
    num = _numeric_grad(lambda: pretrain_loss(model, x, g, w, grad=False)[0], params)
    errs = {"pretrain": max(_rel_error(a, b) for a, b in zip(edw + edb + ddw + ddb, num))}
    set_subgoals(model, g)
    # hit branch: states 0..m toward a subgoal embedding, weight 1/(m+1)
    m = 3
    xs = rng.uniform(-1, 1, size=(m + 1, 2))
    tg = np.repeat(model.subgoal_table[1][None, :], m + 1, axis=0)
    wt = np.full(m + 1, 1.0 / (m + 1))
    # miss branch: T states toward the predictor's own (frozen) output at the last state
    horizon = 5
    xm = rng.uniform(-1, 1, size=(horizon, 2))
    tm = np.repeat(model.predictor(xm[-1:]), horizon, axis=0)
    wm = np.full(horizon, 1.0 / horizon)
    for name, (xx, tt, ww) in {"predictor_hit": (xs, tg, wt), "predictor_miss": (xm, tm, wm)}.items():
        _, (dws, dbs) = predictor_loss(model, xx, tt, ww, 1)
        num = _numeric_grad(lambda: predictor_loss(model, xx, tt, ww, 1, grad=False)[0], model.predictor.params())
        errs[name] = max(_rel_error(a, b) for a, b in zip(dws + dbs, num))
    return errs
