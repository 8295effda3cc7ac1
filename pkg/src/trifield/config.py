"""Run configuration: flat key=value files covering training, the scene
source, outputs, and evaluation choices.

The format is plain text, one ``key = value`` per line, ``#`` comments,
no nesting. A config round-trips losslessly through format/parse. The
trajectory hash covers every field that influences the training run (and
the scene spec), so resuming under a changed config is rejected.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field, fields

from .scenes import BoxSceneConfig, WallTexture
from .trainer import ABLATION_TAGS, TrainConfig


class ConfigError(ValueError):
    """Malformed config file or invalid field value."""


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: str = "box"          # path to a .dlrs file, or "box" to generate
    scene_seed: int = 100
    out: str = "runs/latest"
    ablation: str = "full"
    eval_decoders: str = "both"  # "R" | "DL" | "both"
    # box generator knobs (used when scene == "box")
    box_half_x: float = 1.0
    box_half_y: float = 1.0
    box_half_z: float = 1.25
    box_n_train: int = 12
    box_n_test: int = 4
    box_height: int = 96
    box_width: int = 128
    box_focal: float = 110.0
    box_position_jitter: float = 0.22
    box_angle_jitter_deg: float = 4.0
    box_texture_period: float = 0.5
    box_noise_amp: float = 0.12

    def validate(self):
        self.train.validate()
        if self.ablation not in ABLATION_TAGS:
            raise ConfigError(
                f"unknown ablation tag {self.ablation!r}; "
                f"valid: {', '.join(ABLATION_TAGS)}"
            )
        if self.eval_decoders not in ("R", "DL", "both"):
            raise ConfigError(
                f"eval_decoders must be R, DL, or both, got {self.eval_decoders!r}"
            )

    def decoders(self) -> tuple:
        return ("R", "DL") if self.eval_decoders == "both" else (self.eval_decoders,)

    def box_config(self) -> BoxSceneConfig:
        return BoxSceneConfig(
            half_extents=(self.box_half_x, self.box_half_y, self.box_half_z),
            textures={"*": WallTexture(period=self.box_texture_period,
                                       noise_amp=self.box_noise_amp)},
            n_train=self.box_n_train,
            n_test=self.box_n_test,
            height=self.box_height,
            width=self.box_width,
            focal=self.box_focal,
            position_jitter=self.box_position_jitter,
            angle_jitter_deg=self.box_angle_jitter_deg,
            d_min=self.train.model_config().d_min,
            d_max=self.train.model_config().d_max,
        )

    def trajectory_hash(self) -> int:
        parts = [self.train.canonical_text(), f"scene={self.scene}",
                 f"scene_seed={self.scene_seed}", f"ablation={self.ablation}"]
        if self.scene == "box":
            for name in (
                "box_half_x", "box_half_y", "box_half_z", "box_n_train",
                "box_n_test", "box_height", "box_width", "box_focal",
                "box_position_jitter", "box_angle_jitter_deg",
                "box_texture_period", "box_noise_amp",
            ):
                parts.append(f"{name}={getattr(self, name)!r}")
        return zlib.crc32("\n".join(parts).encode("utf-8")) & 0xFFFFFFFF


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"config field {key!r}: {e}") from e


def format_config(cfg: RunConfig) -> str:
    """Serialize every field, training fields first, sorted within groups."""
    lines = ["# resolved run configuration"]
    for f in fields(TrainConfig):
        lines.append(f"{f.name} = {getattr(cfg.train, f.name)}")
    for f in fields(RunConfig):
        if f.name == "train":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    run_fields = {f.name: f.type for f in fields(RunConfig) if f.name != "train"}
    train_types = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}
    run_defaults = RunConfig()
    run_types = {
        f.name: type(getattr(run_defaults, f.name))
        for f in fields(RunConfig)
        if f.name != "train"
    }
    train_kwargs = {}
    run_kwargs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key in train_fields:
            train_kwargs[key] = _coerce(raw, train_types[key], key)
        elif key in run_fields:
            run_kwargs[key] = _coerce(raw, run_types[key], key)
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    return RunConfig(train=TrainConfig(**train_kwargs), **run_kwargs)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_config(text)


def resolve_scene(cfg: RunConfig):
    """Load the scene file, or generate the procedural box scene."""
    from .scenes import generate_box_scene, load_scene

    if cfg.scene == "box":
        return generate_box_scene(cfg.box_config(), seed=cfg.scene_seed)
    return load_scene(cfg.scene)
