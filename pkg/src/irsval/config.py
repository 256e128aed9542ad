"""Experiment configuration: a sectioned key-value (INI) file.

Every seed is explicit; nothing defaults to wall-clock state. See README for
the full key list.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentHyper
from .data import RatingFormat, RatingScale
from .errors import ConfigError
from .simulator import MFHyper, SyntheticEnvConfig

DATA_DIR_ENV = "IRS_DATA_DIR"

# values the scaled-down defaults replace, echoed next to ours in every report
REFERENCE_SETTINGS = {
    "encoder": "2-layer uni-directional transformer (replaced by windowed embedding means)",
    "hidden_dim": 64,
    "max_sequence_length": 200,
    "gamma": 0.95,
    "adam_betas": [0.9, 0.999],
    "grad_clip_l2": 5.0,
    "batch_size": 256,
    "lr_grid": [0.01, 0.001, 0.0001],
    "wd_grid": [0.001, 0.0001, 0.00001],
    "split": [0.85, 0.05, 0.10],
    "warmup": 40,
    "horizon": 40,
    "eval_seeds": 10,
    "beam_k": [1, 10],
}


@dataclass
class DataSection:
    source: str = "file"
    path: str = ""
    format: str = "doublecolon"
    k_core: int = 5
    rating_min: float = 1.0
    rating_max: float = 5.0
    positive_threshold: float = 4.0
    split: tuple[float, float, float] = (0.85, 0.05, 0.10)
    split_seed: int = 0

    @property
    def scale(self) -> RatingScale:
        return RatingScale(self.rating_min, self.rating_max, self.positive_threshold)


@dataclass
class SimulatorSection:
    kind: str = "mf"
    dim: int = 64
    lr: float = 0.01
    l2: float = 0.05
    epochs: int = 20
    seed: int = 0
    holdout: float = 0.1
    num_users: int = 100
    num_items: int = 200
    num_genres: int = 3
    fatigue: float = 0.0
    window: int = 5
    log_length: int = 80

    @property
    def mf_hyper(self) -> MFHyper:
        return MFHyper(self.dim, self.lr, self.l2, self.epochs, self.seed)

    def synthetic(self, scale: RatingScale) -> SyntheticEnvConfig:
        return SyntheticEnvConfig(self.num_users, self.num_items, self.num_genres,
                                  self.fatigue, self.window, scale, self.seed)


@dataclass
class AgentSection:
    dim: int = 32
    history: int = 50
    gamma: float = 0.95
    lr: float = 0.001
    wd: float = 0.0001
    batch: int = 256
    epochs: int = 10
    grad_clip: float = 5.0
    target_sync: int = 500
    seed: int = 0
    train_warmup: int = 1
    tune: bool = False

    def hyper(self, **overrides) -> AgentHyper:
        base = AgentHyper(self.dim, self.history, self.gamma, self.lr, self.wd, self.batch,
                          self.epochs, self.grad_clip, self.target_sync, self.seed)
        return dataclasses.replace(base, **overrides)


@dataclass
class EvalSection:
    warmup: int = 40
    horizon: int = 40
    seeds: tuple[int, ...] = tuple(range(10))
    policies: tuple[str, ...] = ("random", "pop", "greedyrm", "dqnr")
    mask_seen: bool = True


@dataclass
class OracleSection:
    beam_sizes: tuple[int, ...] = (1, 10)
    k_ref: int = 10
    max_users: int = 200
    users: str = "test"


@dataclass
class SweepSection:
    gammas: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
    plot: bool = True


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    agent: AgentSection = field(default_factory=AgentSection)
    eval: EvalSection = field(default_factory=EvalSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    base_dir: Path = field(default=Path("."), compare=False)

    def data_path(self) -> Path:
        p = Path(self.data.path)
        if p.is_absolute():
            return p
        local = self.base_dir / p
        if local.exists():
            return local
        root = os.environ.get(DATA_DIR_ENV)
        if root and (Path(root) / p).exists():
            return Path(root) / p
        return local

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Every seed replaced by ``seed``; eval seeds become seed, seed+1, ..."""
        n = len(self.eval.seeds)
        return dataclasses.replace(
            self,
            data=dataclasses.replace(self.data, split_seed=seed),
            simulator=dataclasses.replace(self.simulator, seed=seed),
            agent=dataclasses.replace(self.agent, seed=seed),
            eval=dataclasses.replace(self.eval, seeds=tuple(seed + i for i in range(n))),
        )

    def echo(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "base_dir":
                continue
            out[f.name] = {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in dataclasses.asdict(getattr(self, f.name)).items()}
        out["reference_settings"] = REFERENCE_SETTINGS
        return out


def _convert(section: str, key: str, raw: str, template):
    try:
        if isinstance(template, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            parts = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
            kind = type(template[0]) if template else str
            return tuple(kind(p) for p in parts)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _fill(obj, section: str, items: dict):
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        changes[key] = _convert(section, key, raw, getattr(obj, key))
    return dataclasses.replace(obj, **changes)


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    cfg = ExperimentConfig(base_dir=base_dir)
    for section in cp.sections():
        if not hasattr(cfg, section) or section == "base_dir":
            raise ConfigError(f"unknown section [{section}]")
        cfg = dataclasses.replace(cfg, **{section: _fill(getattr(cfg, section), section,
                                                          dict(cp.items(section)))})
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), p.parent)


def validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    if d.source not in ("file", "synthetic"):
        raise ConfigError(f"[data] source must be file or synthetic, got {d.source!r}")
    if d.source == "file":
        try:
            RatingFormat.parse(d.format)
        except ValueError as exc:
            raise ConfigError(f"[data] format: {exc}") from None
    try:
        d.scale
    except ValueError as exc:
        raise ConfigError(f"[data] {exc}") from None
    if len(d.split) != 3 or abs(sum(d.split) - 1.0) > 1e-9:
        raise ConfigError("[data] split must be three fractions summing to 1")
    if cfg.simulator.kind not in ("mf", "synthetic"):
        raise ConfigError("[simulator] kind must be mf or synthetic")
    if (d.source == "synthetic") != (cfg.simulator.kind == "synthetic"):
        raise ConfigError("synthetic data requires the synthetic simulator and vice versa")
    if not 0.0 <= cfg.agent.gamma < 1.0:
        raise ConfigError("[agent] gamma must be in [0, 1)")
    if any(not 0.0 <= g < 1.0 for g in cfg.sweep.gammas):
        raise ConfigError("[sweep] gammas must lie in [0, 1)")
    if not cfg.eval.seeds:
        raise ConfigError("[eval] seeds must be non-empty")
    unknown = set(cfg.eval.policies) - {"random", "pop", "greedyrm", "dqnr"}
    if unknown:
        raise ConfigError(f"[eval] unknown policies {sorted(unknown)}")
    if cfg.oracle.k_ref < 1 or cfg.oracle.users not in ("test", "all"):
        raise ConfigError("[oracle] k_ref must be >= 1 and users test|all")
