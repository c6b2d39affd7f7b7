"""
settings.py - configuration objects for detectors, training and experiments,
    plus loading of flat YAML config files and .env defaults.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from CommunityMembershipHiding.utils.errors import ConfigError

DETECTOR_NAMES = ("demon", "angel", "louvain")
POLICY_NAMES = ("odrl", "random", "degree", "betweenness", "roam", "naive")
BUDGET_MULTIPLIERS = (0.5, 1.0, 2.0)

# desk-scale vs paper-scale protocol sizes
DESK_N_TARGETS, DESK_EPISODES = 25, 1500
PAPER_N_TARGETS, PAPER_EPISODES = 100, 5000


def data_dir() -> Path:
    """default dataset directory: $CMH_DATA_DIR (a .env file is honoured) or ./data"""
    load_dotenv()
    return Path(os.environ.get("CMH_DATA_DIR", "data"))


@dataclass(frozen=True)
class DetectorConfig:
    name: str
    phi: float = 0.8
    min_size: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.name not in DETECTOR_NAMES:
            raise ConfigError(
                f"ERROR: unknown detector '{self.name}', expected one of {DETECTOR_NAMES}"
            )
        if not 0.0 < self.phi <= 1.0:
            raise ConfigError(f"ERROR: merge threshold phi must be in (0,1], got {self.phi}")
        if self.min_size < 1:
            raise ConfigError(f"ERROR: min_size must be >= 1, got {self.min_size}")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = PAPER_EPISODES
    lr: float = 5e-4
    clip_eps: float = 0.1
    gae_lambda: float = 0.95
    gamma: float = 0.99
    updates_per_episode: int = 4
    c_v: float = 1.0
    c_clip: float = 0.1
    ent_start: float = 1e-2
    ent_end: float = 1e-4
    d_h: int = 32
    target_resample_every: int = 5
    community_resample_every: int = 50
    optimizer: str = "rmsprop"
    normalize_advantages: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "gae_lambda", "gamma", "c_v", "c_clip", "ent_start", "ent_end"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ERROR: {name} must be > 0, got {getattr(self, name)}")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError(f"ERROR: clip_eps must be in (0,1), got {self.clip_eps}")
        if self.episodes < 1 or self.updates_per_episode < 1:
            raise ConfigError("ERROR: episodes and updates_per_episode must be >= 1")
        if self.d_h < 4 or self.d_h % 4 != 0:
            raise ConfigError(f"ERROR: d_h must be a positive multiple of 4, got {self.d_h}")
        if self.target_resample_every < 1 or self.community_resample_every < 1:
            raise ConfigError("ERROR: resampling periods must be >= 1")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ConfigError(f"ERROR: unknown optimizer '{self.optimizer}'")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "kar"
    train_detector: DetectorConfig = field(default_factory=lambda: DetectorConfig("angel"))
    test_detector: DetectorConfig = field(default_factory=lambda: DetectorConfig("angel"))
    tau: float = 0.5
    beta_multiplier: float = 1.0
    k_multiplier: float = 1.0
    p: float = 0.5
    policy: str = "odrl"
    n_targets: int = DESK_N_TARGETS
    seed: int = 0
    episodes: int = DESK_EPISODES
    paper_scale: bool = False
    # which detector defines c_orig in the asymmetric setting: "test" or "train"
    c_orig_source: str = "test"
    checkpoint: Optional[str] = None
    recompute_centrality: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ConfigError(f"ERROR: tau must be in [0,1), got {self.tau}")
        if self.beta_multiplier <= 0 or self.k_multiplier <= 0:
            raise ConfigError("ERROR: budget multipliers must be > 0")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"ERROR: edge probability p must be in [0,1], got {self.p}")
        if self.policy not in POLICY_NAMES:
            raise ConfigError(
                f"ERROR: unknown policy '{self.policy}', expected one of {POLICY_NAMES}"
            )
        if self.n_targets < 1 or self.episodes < 1:
            raise ConfigError("ERROR: n_targets and episodes must be >= 1")
        if self.c_orig_source not in ("test", "train"):
            raise ConfigError(f"ERROR: c_orig_source must be 'test' or 'train'")
        if self.paper_scale:
            object.__setattr__(self, "n_targets", PAPER_N_TARGETS)
            object.__setattr__(self, "episodes", PAPER_EPISODES)

    @property
    def symmetric(self) -> bool:
        return self.train_detector.name == self.test_detector.name

    def train_config(self, **overrides) -> TrainConfig:
        return TrainConfig(episodes=self.episodes, seed=self.seed, **overrides)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_DETECTOR_KEYS = ("phi", "min_size", "detector_seed")


def experiment_config_from_dict(values: Dict[str, Any]) -> ExperimentConfig:
    """build an ExperimentConfig from a flat key-value mapping

    Args:
        values (dict) - flat mapping; detector entries are names, with phi, min_size
            and detector_seed shared by both detectors

    Returns:
        a validated ExperimentConfig
    """
    known = {f.name for f in fields(ExperimentConfig)} | set(_DETECTOR_KEYS)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"ERROR: unknown config keys {sorted(unknown)}")

    values = dict(values)
    shared = {
        "phi": float(values.pop("phi", 0.8)),
        "min_size": int(values.pop("min_size", 3)),
        "seed": int(values.pop("detector_seed", 0)),
    }
    for key in ("train_detector", "test_detector"):
        if key in values and isinstance(values[key], str):
            values[key] = DetectorConfig(values[key], **shared)
    values.setdefault("train_detector", DetectorConfig("angel", **shared))
    values.setdefault("test_detector", DetectorConfig("angel", **shared))
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"ERROR: bad config value: {exc}") from exc


def load_experiment_config(
    path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """read a flat YAML document mirroring ExperimentConfig, then apply overrides

    Args:
        path (str | None) - YAML file; None means defaults only
        overrides (dict | None) - values that win over the file (e.g. CLI flags set by the user)
    """
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fp:
                loaded = yaml.safe_load(fp) or {}
        except OSError as exc:
            raise ConfigError(f"ERROR: cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"ERROR: {path} is not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"ERROR: {path} must hold a flat key-value document")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return experiment_config_from_dict(values)


def with_detectors(cfg: ExperimentConfig, train: str, test: str) -> ExperimentConfig:
    base = cfg.test_detector
    return replace(
        cfg,
        train_detector=DetectorConfig(train, base.phi, base.min_size, base.seed),
        test_detector=DetectorConfig(test, base.phi, base.min_size, base.seed),
    )
