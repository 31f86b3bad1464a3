"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Tuple

from .data import AugmentationPolicy
from .errors import ConfigurationError
from .model import CViTConfig, FLConfig, ViTConfig
from .train import Schedule


@dataclass(frozen=True)
class RunConfig:
    dataset_root: str = ""
    output_dir: str = "runs/cvit"
    seed: int = 0
    workers: int = 1
    # model
    reduced_scale: bool = False
    image_size: Optional[int] = None
    stage_channels: Optional[Tuple[int, ...]] = None
    encoder_depth: int = 3
    embed_dim: Optional[int] = None
    heads: int = 8
    mlp_hidden: Optional[int] = None
    head_hidden: Optional[int] = None
    # optimisation
    base_lr: float = 1e-4
    gamma: float = 0.1
    step_size: int = 15
    epochs: int = 50
    batch_size: int = 32
    weight_decay: float = 1e-7
    # data
    train_ratio: float = 0.70
    val_ratio: float = 0.15
    test_ratio: float = 0.15
    probability_augmented: float = 0.9
    flip_probability: float = 0.5
    max_rotation: float = 10.0
    brightness: float = 0.2
    contrast: float = 0.2
    max_noise_std: float = 0.02
    offline_augment: bool = False

    def validate(self) -> "RunConfig":
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigurationError(f"split ratios must be non-negative and sum to 1, got {ratios}")
        if not 0.0 <= self.probability_augmented <= 1.0:
            raise ConfigurationError("probability_augmented must lie in [0, 1]")
        # surfaces model/schedule range errors early
        self.model_config()
        self.schedule()
        return self

    @property
    def ratios(self):
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def model_config(self) -> CViTConfig:
        if self.reduced_scale:
            base = CViTConfig.reduced()
        else:
            base = CViTConfig()
        fl = base.fl if self.stage_channels is None else FLConfig(stage_channels=tuple(self.stage_channels),
                                                                   convs_per_stage=base.fl.convs_per_stage)
        v = base.vit
        vit = ViTConfig(embed_dim=self.embed_dim or v.embed_dim, heads=self.heads,
                        encoder_depth=self.encoder_depth, mlp_hidden=self.mlp_hidden or v.mlp_hidden,
                        head_hidden=self.head_hidden or v.head_hidden)
        return CViTConfig(fl=fl, vit=vit, image_size=self.image_size or base.image_size)

    def schedule(self) -> Schedule:
        return Schedule(self.base_lr, self.gamma, self.step_size, self.epochs)

    def augmentation(self) -> AugmentationPolicy:
        return AugmentationPolicy(self.probability_augmented, self.flip_probability, self.max_rotation,
                                  self.brightness, self.contrast, self.max_noise_std)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    f = _FIELDS.get(key)
    if f is None:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    kind = str(f.type)
    raw = raw.strip()
    try:
        if "Optional" in kind and raw.lower() in ("", "none"):
            return None
        if "bool" in kind:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "Tuple" in kind:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"bad value {raw!r} for {key}") from exc


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a config file (optional) and apply ``overrides``; overrides win."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_pairs(text.splitlines(), str(path)))
    for key, value in (overrides or {}).items():
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return replace(RunConfig(), **values).validate()
