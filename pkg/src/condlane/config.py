"""Run configuration: model/train/scene/data sections from a versioned YAML file.

Every validation failure names the offending field (e.g. "train.lr must be
> 0", "unknown field model.xyz") so config mistakes are directly actionable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import yaml

from .backbone import VARIANT_BLOCKS
from .errors import ConfigError
from .geometry import GridSpec, ImageSpec
from .heads import KERNEL_DIM, RIM_FEATURE_DIM
from .losses import FocalParams, LossWeights
from .synth import SceneConfig

SCHEMA_VERSION = 1
PROPOSAL_DOWNSCALE = 16


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "small"
    canvas: ImageSpec = ImageSpec(height=320, width=800)
    rim_enabled: bool = False
    rim_max_steps: int = 5
    encoder_enabled: bool = True
    encoder_heads: int = 1
    offset_enabled: bool = True
    omega: int = 5
    heatmap_sigma: float = 2.0
    proposal_threshold: float = 0.3

    def __post_init__(self):
        if self.variant not in VARIANT_BLOCKS:
            raise ConfigError(f"model.variant must be one of {sorted(VARIANT_BLOCKS)}")
        if self.canvas.height % 32 or self.canvas.width % 32:
            raise ConfigError("model canvas dims must be divisible by 32")
        if self.rim_max_steps < 1:
            raise ConfigError("model.rim_max_steps must be >= 1")
        if self.encoder_heads < 1:
            raise ConfigError("model.encoder_heads must be >= 1")
        if self.omega < 1:
            raise ConfigError("model.omega must be >= 1")
        if self.heatmap_sigma <= 0:
            raise ConfigError("model.heatmap_sigma must be > 0")
        if not (0.0 < self.proposal_threshold < 1.0):
            raise ConfigError("model.proposal_threshold must be in (0, 1)")

    @property
    def shape_downscale(self) -> int:
        return 4 if self.variant == "large" else 8

    @property
    def param_channels(self) -> int:
        return RIM_FEATURE_DIM if self.rim_enabled else KERNEL_DIM

    def shape_grid(self) -> GridSpec:
        ds = self.shape_downscale
        return GridSpec(rows=self.canvas.height // ds,
                        cols=self.canvas.width // ds, image=self.canvas)

    def proposal_grid(self) -> GridSpec:
        return GridSpec(rows=self.canvas.height // PROPOSAL_DOWNSCALE,
                        cols=self.canvas.width // PROPOSAL_DOWNSCALE,
                        image=self.canvas)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    decay_gamma: float = 0.1
    decay_at: float = 0.8
    checkpoint_every: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    focal: FocalParams = field(default_factory=FocalParams)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if not (0.0 < self.decay_gamma <= 1.0):
            raise ConfigError("train.decay_gamma must be in (0, 1]")
        if not (0.0 < self.decay_at <= 1.0):
            raise ConfigError("train.decay_at must be in (0, 1]")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    data_dir: Optional[str] = None
    dataset_size: int = 32

    def __post_init__(self):
        if self.dataset_size < 0:
            raise ConfigError("data.count must be >= 0")
        if self.scene.image != self.model.canvas:
            raise ConfigError("scene image size must equal the model canvas")


def _take(section: dict, name: str, known: dict) -> dict:
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown field {name}.{sorted(unknown)[0]}")
    out = {}
    for key, caster in known.items():
        if key in section and section[key] is not None:
            try:
                out[key] = caster(section[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}.{key}: {exc}") from None
    return out


def _pair(value) -> Tuple[float, float]:
    lo, hi = value
    return float(lo), float(hi)


def _int_pair(value) -> Tuple[int, int]:
    lo, hi = value
    return int(lo), int(hi)


def parse_run_config(raw: dict, base_dir=None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"version: expected {SCHEMA_VERSION}, got {version}")
    known_sections = {"version", "model", "train", "scene", "data"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"unknown section {sorted(unknown)[0]}")

    m = _take(raw.get("model") or {}, "model", {
        "variant": str, "height": int, "width": int, "rim": bool,
        "rim_max_steps": int, "encoder": bool, "encoder_heads": int,
        "offsets": bool, "omega": int, "heatmap_sigma": float,
        "proposal_threshold": float,
    })
    canvas = ImageSpec(height=m.pop("height", 320), width=m.pop("width", 800))
    rename = {"rim": "rim_enabled", "encoder": "encoder_enabled",
              "offsets": "offset_enabled"}
    model = ModelConfig(canvas=canvas,
                        **{rename.get(k, k): v for k, v in m.items()})

    t = _take(raw.get("train") or {}, "train", {
        "lr": float, "batch_size": int, "epochs": int, "seed": int,
        "decay_gamma": float, "decay_at": float, "checkpoint_every": int,
        "weights": dict, "focal": dict,
    })
    try:
        if "weights" in t:
            t["weights"] = LossWeights(**_take(t["weights"], "train.weights", {
                "alpha": float, "beta": float, "gamma": float, "eta": float}))
        if "focal" in t:
            t["focal"] = FocalParams(**_take(t["focal"], "train.focal", {
                "alpha_exp": float, "beta_exp": float}))
    except ValueError as exc:
        raise ConfigError(f"train.weights: {exc}") from None
    train = TrainConfig(**t)

    s = _take(raw.get("scene") or {}, "scene", {
        "seed": int, "lane_count": _int_pair, "curvature": _pair,
        "fork_probability": float, "dense_probability": float,
        "dense_gap": float, "noise": float,
    })
    scene = SceneConfig(image=canvas, **s)

    d = _take(raw.get("data") or {}, "data", {"dir": str, "count": int})
    return RunConfig(model=model, train=train, scene=scene,
                     data_dir=d.get("dir"), dataset_size=d.get("count", 32))


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parse_run_config(raw or {})


def run_config_record(cfg: RunConfig) -> dict:
    """JSON-safe snapshot for run manifests and checkpoints."""
    return {
        "version": SCHEMA_VERSION,
        "model": {
            "variant": cfg.model.variant,
            "height": cfg.model.canvas.height,
            "width": cfg.model.canvas.width,
            "rim": cfg.model.rim_enabled,
            "rim_max_steps": cfg.model.rim_max_steps,
            "encoder": cfg.model.encoder_enabled,
            "encoder_heads": cfg.model.encoder_heads,
            "offsets": cfg.model.offset_enabled,
            "omega": cfg.model.omega,
            "heatmap_sigma": cfg.model.heatmap_sigma,
            "proposal_threshold": cfg.model.proposal_threshold,
        },
        "train": {
            "lr": cfg.train.lr,
            "batch_size": cfg.train.batch_size,
            "epochs": cfg.train.epochs,
            "seed": cfg.train.seed,
            "decay_gamma": cfg.train.decay_gamma,
            "decay_at": cfg.train.decay_at,
            "checkpoint_every": cfg.train.checkpoint_every,
            "weights": {
                "alpha": cfg.train.weights.alpha,
                "beta": cfg.train.weights.beta,
                "gamma": cfg.train.weights.gamma,
                "eta": cfg.train.weights.eta,
            },
            "focal": {
                "alpha_exp": cfg.train.focal.alpha_exp,
                "beta_exp": cfg.train.focal.beta_exp,
            },
        },
        "scene": {
            "seed": cfg.scene.seed,
            "lane_count": list(cfg.scene.lane_count),
            "curvature": list(cfg.scene.curvature),
            "fork_probability": cfg.scene.fork_probability,
            "dense_probability": cfg.scene.dense_probability,
            "dense_gap": cfg.scene.dense_gap,
            "noise": cfg.scene.noise,
        },
        "data": {"dir": cfg.data_dir, "count": cfg.dataset_size},
    }


def run_config_from_record(rec: dict) -> RunConfig:
    return parse_run_config(rec)
