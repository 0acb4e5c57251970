"""Strict pipeline configuration. Unknown keys are rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .diffusion import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_OMEGA, DEFAULT_SAMPLING_STEPS, DEFAULT_T_STEPS
from .windows import DEFAULT_OVERLAP, DEFAULT_WINDOW

Mode = Literal["relight-animate", "hints-only", "train-toy", "sample-oracle"]

PATH_FIELDS = ("model", "driving", "reference", "lighting", "weights")
REQUIRED_INPUTS: dict[str, tuple[str, ...]] = {
    "relight-animate": ("driving", "lighting"),
    "hints-only": ("driving", "lighting"),
    "sample-oracle": ("driving", "lighting"),
    "train-toy": (),
}


class ConfigError(ValueError):
    """Validation failure; ``errors`` holds (dotted path, message) pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScheduleConfig(_Strict):
    T_steps: int = Field(DEFAULT_T_STEPS, ge=1, le=10000)
    beta_start: float = Field(DEFAULT_BETA_START, gt=0, lt=1)
    beta_end: float = Field(DEFAULT_BETA_END, gt=0, lt=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        return self


class TrainConfig(_Strict):
    lr: float = Field(0.05, ge=0)
    steps: int = Field(200, ge=1)
    batch_size: int = Field(2, ge=1)
    frames: int = Field(4, ge=1)
    latent: int = Field(8, ge=2, le=8)
    feature_channels: int = Field(16, ge=1)
    adapter_channels: tuple[int, int, int] = (8, 16, 16)


class PipelineConfig(_Strict):
    mode: Mode = "relight-animate"
    model: Optional[Path] = None
    driving: Optional[Path] = None
    reference: Optional[Path] = None
    lighting: Optional[Path] = None
    weights: Optional[Path] = None
    omega: float = Field(DEFAULT_OMEGA, ge=0)
    steps: int = Field(DEFAULT_SAMPLING_STEPS, ge=1)
    window: int = Field(DEFAULT_WINDOW, ge=1)
    overlap: int = Field(DEFAULT_OVERLAP, ge=0)
    seed: int = 0
    output_dir: Path = Path("out")
    mask_polarity: Literal["portrait", "background"] = "portrait"
    alignment: Literal["relative", "scale-consistent"] = "relative"
    resolution: int = Field(512, ge=16)
    feature_channels: int = Field(64, ge=1)
    backend: Literal["oracle", "toy"] = "oracle"
    sigma0: float = Field(0.0, ge=0)
    schedule: ScheduleConfig = ScheduleConfig()
    train: TrainConfig = TrainConfig()

    @model_validator(mode="after")
    def _cross_field(self):
        if self.overlap >= self.window:
            raise ValueError(f"overlap ({self.overlap}) must be smaller than window ({self.window})")
        if self.resolution % 8:
            raise ValueError("resolution must be a multiple of 8")
        if self.steps > self.schedule.T_steps:
            raise ValueError("steps exceeds schedule.T_steps")
        if self.backend == "toy" and self.weights is None and self.mode != "train-toy":
            raise ValueError("backend 'toy' requires weights")
        return self


def _loc(loc: tuple) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def validate_config(raw, base_dir=None) -> PipelineConfig:
    """Parse and validate a config mapping or JSON string.

    Relative paths resolve against ``base_dir`` (default: cwd). Referenced
    input files must exist, and each mode's required inputs must be present.
    """
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError([("<root>", f"invalid JSON: {exc}")]) from None
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    raw = dict(raw)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for key in PATH_FIELDS + ("output_dir",):
        if isinstance(raw.get(key), str):
            p = Path(raw[key])
            raw[key] = str(p if p.is_absolute() else base / p)
    try:
        cfg = PipelineConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(
            [
                (_loc(e["loc"]), "unknown key" if e["type"] == "extra_forbidden" else e["msg"])
                for e in exc.errors()
            ]
        ) from None

    errors = []
    for key in REQUIRED_INPUTS[cfg.mode]:
        if getattr(cfg, key) is None:
            errors.append((key, f"required for mode {cfg.mode}"))
    for key in PATH_FIELDS:
        p = getattr(cfg, key)
        if p is None:
            continue
        target = p.with_suffix(".json") if key == "weights" else p
        if not target.exists():
            errors.append((key, f"file not found: {target}"))
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([("<root>", f"cannot read config {path}: {exc}")]) from None
    if overrides:
        overrides = dict(overrides)
        if isinstance(overrides.get("train"), dict) and isinstance(raw.get("train"), dict):
            overrides["train"] = {**raw["train"], **overrides["train"]}
        raw.update(overrides)
    return validate_config(raw, base_dir=path.parent)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return cfg.model_dump(mode="json")
