"""Dual-horizon frame predictor: a 4-level U-Net with GCAM skip connections.

Encoder level ``l`` runs at ``image_size / 2**l`` with ``channel_plan[l]``
channels; three 2x2 max-pools sit between levels.  Each decoder stage is a
stride-2 transposed convolution, a GCAM (or plain sum) with the matching
encoder level, and a refining conv block.  Two independent 3x3 conv + tanh
heads produce the immediate (t+1) and forward (t+sigma) frames.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .config import CheckpointError, ConfigError, ModelConfig
from .gcam import GCAM, eca_kernel_size, esa_kernel_size

CHECKPOINT_VERSION = 1


@dataclass
class PredictionPair:
    immediate: torch.Tensor
    forward: torch.Tensor


def _activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU(inplace=True)
    if name == "leaky_relu":
        return nn.LeakyReLU(0.2, inplace=True)
    if name == "silu":
        return nn.SiLU(inplace=True)
    raise ConfigError(f"unknown activation {name!r}")


def conv_block(in_channels: int, out_channels: int, kernel_size: int = 3,
               activation: str = "relu") -> nn.Sequential:
    """(conv -> batch norm -> activation) x 2, size preserving.

    The convolutions carry no bias; the following norm has its own shift.
    """
    pad = kernel_size // 2
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, padding=pad, bias=False),
        nn.BatchNorm2d(out_channels),
        _activation(activation),
        nn.Conv2d(out_channels, out_channels, kernel_size, padding=pad, bias=False),
        nn.BatchNorm2d(out_channels),
        _activation(activation),
    )


def _upsample(in_channels: int, out_channels: int, kernel_size: int) -> nn.ConvTranspose2d:
    # output = 2 * input for even and odd kernels alike
    pad = (kernel_size - 1) // 2
    return nn.ConvTranspose2d(in_channels, out_channels, kernel_size, stride=2,
                              padding=pad, output_padding=kernel_size % 2)


class FoGA(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        plan = cfg.channel_plan
        act = cfg.activation

        chans = [cfg.in_channels, *plan]
        self.encoder = nn.ModuleList(
            conv_block(chans[l], chans[l + 1], 3, act) for l in range(4)
        )
        self.pool = nn.MaxPool2d(2)

        # decoder stages indexed by target level (2, 1, 0)
        self.up = nn.ModuleList(_upsample(plan[l + 1], plan[l], cfg.upsample_kernel) for l in range(3))
        self.skips = nn.ModuleList(
            GCAM(plan[l], cfg.image_size >> l, cfg.use_cfa, cfg.use_ega, cfg.cfa_reduction,
                 cfg.dilation_rates, cfg.eca_b, cfg.eca_gamma, cfg.attention_bias)
            for l in range(3)
        )
        self.refine = nn.ModuleList(
            conv_block(plan[l], plan[l], cfg.decoder_kernel, act) for l in range(3)
        )
        self.head_immediate = nn.Conv2d(plan[0], cfg.c_in, 3, padding=1)
        self.head_forward = nn.Conv2d(plan[0], cfg.c_in, 3, padding=1)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        size = self.config.image_size
        if x.shape[1] != self.config.in_channels or x.shape[-2:] != (size, size):
            raise ConfigError(
                f"expected input B x {self.config.in_channels} x {size} x {size}, "
                f"got {tuple(x.shape)}"
            )
        levels = []
        for l, block in enumerate(self.encoder):
            if l:
                x = self.pool(x)
            x = block(x)
            levels.append(x)
        return levels

    def decode(self, levels: list[torch.Tensor]) -> torch.Tensor:
        x = levels[3]
        for l in (2, 1, 0):
            f_d = self.up[l](x)
            x = self.refine[l](self.skips[l](levels[l], f_d))
        return x

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``x`` is B x (t*c_in) x H x W; returns (immediate, forward) in [-1, 1]."""
        if x.dim() == 5:
            x = x.flatten(1, 2)
        feat = self.decode(self.encode(x))
        return torch.tanh(self.head_immediate(feat)), torch.tanh(self.head_forward(feat))

    def predict(self, window) -> PredictionPair:
        """Predict both horizons for one FrameWindow (or a t x C x H x W stack)."""
        inputs = getattr(window, "inputs", window)
        cfg = self.config
        if inputs.dim() != 4 or inputs.shape[0] != cfg.t or inputs.shape[1] != cfg.c_in:
            raise ConfigError(
                f"window of shape {tuple(inputs.shape)} does not match t={cfg.t}, c_in={cfg.c_in}"
            )
        immediate, forward = self(inputs.flatten(0, 1)[None])
        return PredictionPair(immediate[0], forward[0])

    def attention_record(self, enable: bool = True) -> list[dict]:
        """Start (or stop) capturing EGA maps; returns the per-level dicts."""
        records = []
        for unit in self.skips:
            unit.record = {} if enable else None
            records.append(unit.record)
        return records


# ── budget ──────────────────────────────────────────────────


def count_params(model_or_config: nn.Module | ModelConfig) -> int:
    """Trainable parameters of the model (built on the meta device if given a config)."""
    if isinstance(model_or_config, ModelConfig):
        with torch.device("meta"):
            model_or_config = FoGA(model_or_config)
    return sum(p.numel() for p in model_or_config.parameters() if p.requires_grad)


def estimate_flops(config: ModelConfig, input_shape: tuple[int, int] | None = None,
                   flops_per_mac: int = 1) -> float:
    """Analytic convolution cost of one forward pass (batch 1).

    Counts multiply-accumulates of every convolution, transposed convolution
    and attention convolution.  The default reports one FLOP per MAC, the
    convention of the common profilers; pass ``flops_per_mac=2`` to count the
    multiply and the add separately.  Norms, activations, pooling and
    elementwise products are not counted.
    """
    h, w = input_shape or (config.image_size, config.image_size)
    if h % 8 or w % 8:
        raise ConfigError(f"input {h}x{w} must be divisible by 8")
    plan = config.channel_plan
    hw = [(h >> l) * (w >> l) for l in range(4)]
    macs = 0

    chans = [config.in_channels, *plan]
    for l in range(4):
        macs += 9 * chans[l] * chans[l + 1] * hw[l] + 9 * chans[l + 1] ** 2 * hw[l]

    kd, ku = config.decoder_kernel, config.upsample_kernel
    for l in range(3):
        c = plan[l]
        macs += ku * ku * plan[l + 1] * c * hw[l + 1]       # transposed conv, per input pixel
        macs += 2 * kd * kd * c * c * hw[l]                 # refine block
        if config.use_cfa:
            mid = c // config.cfa_reduction
            taps = 1 + 9 + 25 + 9 * len(config.dilation_rates)
            macs += taps * c * mid * hw[l]
            macs += (3 + len(config.dilation_rates)) * mid * c * hw[l]
        if config.use_ega:
            macs += eca_kernel_size(c, config.eca_b, config.eca_gamma) * c
            k = esa_kernel_size(h >> l, w >> l, config.eca_b, config.eca_gamma)
            macs += k * k * hw[l]
            macs += 2 * c * c * hw[l]

    macs += 2 * 9 * plan[0] * config.c_in * hw[0]           # two heads
    return float(macs * flops_per_mac)


# ── checkpoints ─────────────────────────────────────────────


def save_checkpoint(path: str | Path, model: FoGA, step: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config": dataclasses.asdict(model.config),
            "state_dict": model.state_dict(),
            "step": step,
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> tuple[FoGA, dict]:
    """Rebuild the model stored at ``path``.

    If ``config`` is given it must equal the stored one; a mismatch raises
    rather than silently loading weights into a different architecture.
    """
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except Exception as exc:  # noqa: BLE001 - torch raises many unpickling errors
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {blob.get('version')} != {CHECKPOINT_VERSION}")
    stored = ModelConfig(**blob["config"])
    if config is not None and dataclasses.asdict(config) != dataclasses.asdict(stored):
        diff = {
            k: (v, getattr(stored, k))
            for k, v in dataclasses.asdict(config).items()
            if v != getattr(stored, k)
        }
        raise CheckpointError(f"checkpoint config mismatch (requested, stored): {diff}")
    model = FoGA(stored)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob
