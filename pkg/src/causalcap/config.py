"""Pipeline configuration: plain-text ``key = value`` files with ``#`` comments."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, ParseError, UnknownKey
from .mazes import NAMES

log = logging.getLogger("causalcap.config")


def _seeds(text: str) -> tuple:
    out = []
    for part in text.replace(",", " ").split():
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class PipelineConfig:
    maze: str = "demo"             # builtin name or path to an ASCII maze
    kind: str = "discrete"         # discrete | continuous
    output_dir: str = "out"
    seed: int = 0                  # master seed; stage seeds derive from it
    workers: int = 1
    # sampling
    sample_episodes: int = 500
    sample_horizon: int = 600
    frontier_rounds: int = 0
    frontier_fraction: float = 0.1
    # capacity and subgoals
    tau_nei: float = 0.7
    tau_adj: float = 1.0
    metric: str = "euclidean"
    estimator: str = "mc"          # mc | clustered
    min_samples: int = 20
    threshold: float = math.log(2.5)
    suppression_radius: float = 1.0
    # predictor
    embed_dim: int = 64
    hidden: int = 256
    layers: int = 3
    pretrain_steps: int = 10000
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 1000
    predictor_steps: int = 10000
    predictor_lr: float = 1e-3
    predictor_batch: int = 1000
    segment_horizon: int = 50
    lambda_recon: float = 1.0
    lambda_sim: float = 1.0
    grad_clip: float = 0.0         # global gradient-norm cap; 0 disables
    # reinforcement learning
    gamma: float = 0.99
    alpha: float = 0.5
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    episodes: int = 2000
    horizon: int = 600
    eval_every: int = 200
    eval_episodes: int = 100
    kappa: float = 1.0
    rl_seeds: tuple = field(default=(0, 1, 2, 3, 4))
    variants: tuple = field(default=("gdcc", "no_predictor", "no_reward", "sparse"))

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ConfigError("kind", f"must be discrete or continuous, got {self.kind!r}")
        if self.tau_nei <= 0:
            raise ConfigError("tau_nei", "must be positive")
        if self.tau_nei >= self.tau_adj:
            raise ConfigError("tau_nei, tau_adj", f"need tau_nei < tau_adj, got {self.tau_nei} >= {self.tau_adj}")
        if self.metric not in ("euclidean", "manhattan"):
            raise ConfigError("metric", f"unknown metric {self.metric!r}")
        if self.estimator not in ("mc", "clustered"):
            raise ConfigError("estimator", f"unknown estimator {self.estimator!r}")
        if self.threshold <= 0:
            raise ConfigError("threshold", "must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma", f"must lie in (0, 1), got {self.gamma}")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha", f"must lie in (0, 1], got {self.alpha}")
        if self.horizon < 1:
            raise ConfigError("horizon", "must be >= 1")
        if self.segment_horizon < 1:
            raise ConfigError("segment_horizon", "must be >= 1")
        if self.lambda_recon < 0 or self.lambda_sim < 0 or self.lambda_recon == self.lambda_sim == 0:
            raise ConfigError("lambda_recon, lambda_sim", "must be >= 0 and not both zero")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip", "must be >= 0")
        if min(self.embed_dim, self.hidden, self.layers) < 1:
            raise ConfigError("embed_dim, hidden, layers", "must be >= 1")
        for name in ("sample_episodes", "sample_horizon", "episodes", "eval_every", "eval_episodes",
                     "pretrain_batch", "predictor_batch", "min_samples", "workers"):
            if getattr(self, name) < (0 if name in ("episodes", "eval_episodes") else 1):
                raise ConfigError(name, "out of range")
        if not self.rl_seeds:
            raise ConfigError("rl_seeds", "need at least one seed")
        bad = [v for v in self.variants if v not in ("gdcc", "no_predictor", "no_reward", "sparse")]
        if bad:
            raise ConfigError("variants", f"unknown variants {bad}")
        if self.maze not in NAMES and not Path(self.maze).is_file():
            raise ConfigError("maze", f"no builtin maze or file named {self.maze!r}")

    def rl_config(self, seed: int | None = None):
        from .rl import RLConfig

        return RLConfig(self.gamma, self.alpha, self.eps_start, self.eps_end, self.eps_decay_frac, self.episodes,
                        self.horizon, self.eval_every, self.eval_episodes, self.kappa,
                        self.rl_seeds[0] if seed is None else seed)

    def render(self) -> str:
        """Resolved configuration as a loadable text block."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_CONVERT = {}
for _f in fields(PipelineConfig):
    _CONVERT[_f.name] = {"int": int, "float": float, "str": str, "bool": _bool}.get(_f.type, None)
_CONVERT["rl_seeds"] = _seeds
_CONVERT["variants"] = lambda t: tuple(v for v in t.replace(",", " ").split())


def parse_config(text: str, base: PipelineConfig | None = None, source: str = "<string>") -> PipelineConfig:
    """Parse ``key = value`` lines over ``base`` (defaults when None)."""
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(line_no, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key or not value:
            raise ParseError(line_no, "empty key or value")
        if key not in _CONVERT:
            raise UnknownKey(key)
        try:
            parsed = _CONVERT[key](value)
        except ValueError as exc:
            raise ParseError(line_no, f"{key}: {exc}") from None
        if key in values:
            log.warning("%s: duplicate key %r on line %d; last value wins", source, key, line_no)
        values[key] = parsed
    base = base or PipelineConfig()
    for f in fields(base):
        if f.name not in values:
            log.debug("%s: %s = %r (default)", source, f.name, getattr(base, f.name))
    return replace(base, **values)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text, source=str(path))
