"""Run configuration: JSON file + flag overrides, canonical echo."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .data import SyntheticSpec
from .diffusion import LossWeights
from .sampling import GuidanceConfig
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T
from .training import TrainConfig


@dataclass
class ScheduleParams:
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END


@dataclass
class ModelParams:
    hidden: list = field(default_factory=lambda: [48, 24, 12])
    d_t: int = 32
    d_c: int = 32
    n_heads: int = 2
    n_tokens: int = 1
    dropout: float = 0.18


@dataclass
class RunConfig:
    dataset: str | None = None          # RZD directory; None means synthetic
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    model: ModelParams = field(default_factory=ModelParams)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    output_dir: str = "runs/default"
    seed: int = 0
    deterministic: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"].pop("weights", None)  # weights live at the top level
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        known = {"dataset", "synthetic", "schedule", "model", "weights",
                 "train", "guidance", "output_dir", "seed", "deterministic"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" in d:
            cfg.dataset = d["dataset"]
        for key, klass in (("synthetic", SyntheticSpec),
                           ("schedule", ScheduleParams),
                           ("model", ModelParams),
                           ("weights", LossWeights),
                           ("guidance", GuidanceConfig)):
            if key in d:
                setattr(cfg, key, klass(**d[key]))
        if "train" in d:
            cfg.train = TrainConfig(**d["train"])
        for key in ("output_dir", "seed", "deterministic"):
            if key in d:
                setattr(cfg, key, d[key])
        cfg.train.weights = cfg.weights
        cfg.train.seed = cfg.seed
        cfg.train.deterministic = cfg.deterministic
        return cfg

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def apply_overrides(self, **kv) -> None:
        """Flag-level overrides (flag > file > default)."""
        for key, value in kv.items():
            if value is None:
                continue
            if key == "g":
                self.guidance.g = value
            elif key == "steps":
                self.guidance.steps = value
            elif key == "noise_mode":
                self.guidance.noise_mode = value
            elif key == "lambda3":
                self.weights.lambda3 = value
            elif key == "epochs":
                self.train.epochs = value
            elif key == "seed":
                self.seed = value
                self.train.seed = value
                self.guidance.seed = value
            elif key == "deterministic":
                self.deterministic = value
                self.train.deterministic = value
            elif key == "dataset":
                self.dataset = value
            elif key == "output_dir":
                self.output_dir = value
            else:
                raise ValueError(f"unknown override '{key}'")
        self.train.weights = self.weights
