"""Run configuration: model, training, scoring, data and dataset profiles.

Everything that determines a run lives in one `RunConfig` tree that
round-trips through YAML.  Dotted overrides (``train.lr=1e-3``) are applied
on top of a file or the defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(RuntimeError):
    """Missing, unreadable or malformed dataset content."""


class CheckpointError(RuntimeError):
    """Checkpoint cannot be loaded for the requested configuration."""


@dataclass
class ModelConfig:
    t: int = 4
    sigma: int = 4
    channel_plan: tuple[int, ...] = (32, 64, 128, 256)
    c_in: int = 3
    image_size: int = 224
    use_cfa: bool = True
    use_ega: bool = True

    # ── block internals ─────────────────────────────────────
    activation: str = "relu"
    decoder_kernel: int = 1        # kernel of the two convs refining each decoder stage
    upsample_kernel: int = 4       # stride-2 transposed conv

    # ── GCAM ────────────────────────────────────────────────
    cfa_reduction: int = 8
    dilation_rates: tuple[int, ...] = (3, 5)
    eca_b: int = 1
    eca_gamma: int = 2
    attention_bias: bool = False   # bias on the ECA/ESA convolutions

    def __post_init__(self) -> None:
        self.channel_plan = tuple(int(c) for c in self.channel_plan)
        self.dilation_rates = tuple(int(d) for d in self.dilation_rates)
        self.validate()

    def validate(self) -> None:
        if self.t < 1 or self.sigma < 1:
            raise ConfigError(f"t and sigma must be >= 1, got t={self.t}, sigma={self.sigma}")
        plan = self.channel_plan
        if len(plan) != 4 or any(b <= a for a, b in zip(plan, plan[1:])):
            raise ConfigError(f"channel_plan must be 4 strictly increasing widths, got {plan}")
        if self.image_size % 8:
            raise ConfigError(f"image_size must be divisible by 8, got {self.image_size}")
        if self.c_in < 1:
            raise ConfigError("c_in must be >= 1")
        if self.cfa_reduction < 1 or any(c % self.cfa_reduction for c in plan[:3]):
            raise ConfigError(
                f"cfa_reduction={self.cfa_reduction} must divide the skip widths {plan[:3]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_channels(self) -> int:
        return self.t * self.c_in


ACTIVATIONS = ("relu", "leaky_relu", "silu")


@dataclass
class LossMask:
    """Switches for the loss ablations.  The intensity term is never optional."""

    use_grad: bool = True
    use_pred: bool = True
    use_fc: bool = True
    use_con: bool = True

    @classmethod
    def without(cls, term: str | None) -> LossMask:
        if term in (None, "", "none"):
            return cls()
        key = {"grad": "use_grad", "pred": "use_pred", "fc": "use_fc", "con": "use_con"}.get(term)
        if key is None:
            raise ConfigError(f"unknown loss term {term!r}")
        return cls(**{key: False})


@dataclass
class SsimConfig:
    window_size: int = 11
    window_std: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 2.0

    def __post_init__(self) -> None:
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ConfigError(f"SSIM window_size must be odd, got {self.window_size}")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    stride: int = 1
    max_grad_norm: float | None = None
    checkpoint_every: int = 1      # epochs
    loss_mask: LossMask = field(default_factory=LossMask)
    ssim: SsimConfig = field(default_factory=SsimConfig)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0 or self.stride < 1:
            raise ConfigError("batch_size and stride must be >= 1, epochs >= 0")


@dataclass
class ScoringConfig:
    lam: float = 0.06
    mode: str = "pyramid"          # pyramid | plain
    windows: tuple[int, ...] = (4, 8, 16, 32)
    eps: float = 1e-8
    smooth_sigma: float = 3.0
    batch_size: int = 16

    def __post_init__(self) -> None:
        self.windows = tuple(int(w) for w in self.windows)
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.mode not in ("pyramid", "plain"):
            raise ConfigError(f"scoring mode must be 'pyramid' or 'plain', got {self.mode!r}")
        if not self.windows or any(b <= a for a, b in zip(self.windows, self.windows[1:])):
            raise ConfigError(f"pyramid windows must be strictly increasing, got {self.windows}")
        if self.smooth_sigma <= 0:
            raise ConfigError("smooth_sigma must be positive")


@dataclass
class SyntheticSpec:
    """Moving-shape videos with injected motion anomalies."""

    num_train: int = 20
    num_test: int = 8
    frames_per_video: int = 100
    size: int = 64
    shapes: tuple[int, int] = (1, 2)           # min/max objects per video
    shape_size: tuple[int, int] = (8, 12)      # min/max side/diameter in pixels
    speed: tuple[float, float] = (0.8, 1.6)    # normal speed range, px/frame
    anomaly_types: tuple[str, ...] = ("teleport", "speed_burst")
    anomalies_per_video: int = 1
    anomaly_length: tuple[int, int] = (15, 25)
    burst_factor: float = 4.0
    grayscale: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        self.shapes = tuple(self.shapes)
        self.shape_size = tuple(self.shape_size)
        self.speed = tuple(float(s) for s in self.speed)
        self.anomaly_types = tuple(self.anomaly_types)
        self.anomaly_length = tuple(self.anomaly_length)
        unknown = set(self.anomaly_types) - {"teleport", "speed_burst", "direction_flip"}
        if unknown:
            raise ConfigError(f"unknown anomaly types {sorted(unknown)}")
        if self.anomaly_length[1] > self.frames_per_video:
            raise ConfigError(
                f"anomaly interval of up to {self.anomaly_length[1]} frames does not fit "
                f"in a {self.frames_per_video}-frame video"
            )


@dataclass
class DataConfig:
    profile: str = "synthetic"
    root: str | None = None
    train_dir: str = "training"
    test_dir: str = "testing"
    labels_file: str = "labels.txt"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        return _build(cls, d or {}, "")

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


# Benchmark settings; t/sigma/lambda per dataset, everything else default.
PROFILES: dict[str, dict[str, Any]] = {
    "ped1": {"model.t": 4, "model.sigma": 4, "scoring.lam": 0.06},
    "ped2": {"model.t": 4, "model.sigma": 4, "scoring.lam": 1.0},
    "avenue": {"model.t": 8, "model.sigma": 4, "scoring.lam": 0.2},
    "shanghaitech": {"model.t": 4, "model.sigma": 4, "scoring.lam": 0.06},
    # desk-scale run on generated moving shapes
    "synthetic": {
        "model.t": 4,
        "model.sigma": 4,
        "model.image_size": 64,
        "model.channel_plan": [16, 32, 64, 128],
        "scoring.lam": 0.06,
        "scoring.windows": [4, 8, 16, 32],
        "train.lr": 1e-3,
    },
}


def profile_config(name: str, overrides: dict[str, Any] | None = None) -> RunConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    d = RunConfig().to_dict()
    for key, value in PROFILES[name].items():
        _set_dotted(d, key, value)
    d["data"]["profile"] = name
    for key, value in (overrides or {}).items():
        _set_dotted(d, key, value)
    return RunConfig.from_dict(d)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Read a YAML config (or start from defaults) and apply ``key=value`` overrides.

    The profile named by ``data.profile`` (``synthetic`` when absent) is applied
    first, then the file's own keys, then the overrides.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")

    parsed = [parse_override(o) for o in overrides or []]
    profile = raw.get("data", {}).get("profile") if isinstance(raw.get("data"), dict) else None
    for key, value in parsed:
        if key == "data.profile":
            profile = value

    d = RunConfig().to_dict()
    profile = profile or d["data"]["profile"]
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    for key, value in PROFILES[profile].items():
        _set_dotted(d, key, value)
    d["data"]["profile"] = profile
    _merge(d, raw, "")
    for key, value in parsed:
        _set_dotted(d, key, value)
    return RunConfig.from_dict(d)


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, _, value = text.partition("=")
    return key.strip(), yaml.safe_load(value)


# ── helpers ──────────────────────────────────────────────────


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _set_dotted(d: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def _merge(base: dict[str, Any], new: dict[str, Any], prefix: str) -> None:
    for k, v in new.items():
        if k not in base:
            raise ConfigError(f"unknown config key {prefix + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, prefix + k + ".")
        else:
            base[k] = v


def _build(cls: type, d: dict[str, Any], prefix: str) -> Any:
    if not isinstance(d, dict):
        raise ConfigError(f"section {prefix.rstrip('.') or '<root>'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in d.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, prefix + name + ".") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in {prefix.rstrip('.') or '<root>'}: {exc}") from exc


_SECTIONS: dict[tuple[type, str], type] = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "scoring"): ScoringConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "synth"): SyntheticSpec,
    (TrainConfig, "loss_mask"): LossMask,
    (TrainConfig, "ssim"): SsimConfig,
}
