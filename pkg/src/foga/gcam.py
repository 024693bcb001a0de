"""Gated context aggregation on U-Net skip connections.

A GCAM unit takes the encoder feature and the upsampled decoder feature of one
scale.  CFA fuses their sum through parallel plain and dilated convolutions;
EGA then reweights the result with channel attention (ECA), spatial attention
(ESA) and a learned sigmoid gate over the two attended maps.

CFA has no residual path: the concatenated branches are fused by a 1x1
convolution and that is the output.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .config import ConfigError


def _odd(x: float) -> int:
    # floor, then bump even values up to the next odd integer
    k = int(math.floor(x))
    return k if k % 2 else k + 1


def eca_kernel_size(channels: int, b: int = 1, gamma: int = 2) -> int:
    if channels < 1:
        raise ConfigError(f"channel count must be >= 1, got {channels}")
    return max(1, _odd((math.log2(channels) + b) / gamma))


def esa_kernel_size(height: int, width: int, b: int = 1, gamma: int = 2) -> int:
    if height < 1 or width < 1:
        raise ConfigError(f"spatial size must be >= 1, got {height}x{width}")
    return max(3, _odd((math.log2(height * width) + b) / gamma))


class CFA(nn.Module):
    """Multi-kernel + dilated context fusion over ``f_e + f_d``.

    The fused output replaces its input; there is no residual path.
    """

    def __init__(self, channels: int, reduction: int = 8, dilations=(3, 5)):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"{channels} channels not divisible by reduction {reduction}")
        mid = channels // reduction
        branches = [nn.Conv2d(channels, mid, k, padding=k // 2) for k in (1, 3, 5)]
        branches += [nn.Conv2d(channels, mid, 3, padding=d, dilation=d) for d in dilations]
        self.branches = nn.ModuleList(branches)
        self.fuse = nn.Conv2d(mid * len(branches), channels, 1)

    def forward(self, f_e: torch.Tensor, f_d: torch.Tensor) -> torch.Tensor:
        if f_e.shape != f_d.shape:
            raise ValueError(f"CFA inputs differ in shape: {tuple(f_e.shape)} vs {tuple(f_d.shape)}")
        x = f_e + f_d
        return self.fuse(torch.cat([branch(x) for branch in self.branches], dim=1))


class ECA(nn.Module):
    """Channel attention: GAP -> zero-padded 1D conv across channels -> sigmoid."""

    def __init__(self, channels: int, b: int = 1, gamma: int = 2, bias: bool = False):
        super().__init__()
        self.k = eca_kernel_size(channels, b, gamma)
        self.conv = nn.Conv1d(1, 1, self.k, padding=self.k // 2, bias=bias)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        f_c = x.mean(dim=(2, 3))                        # B x C
        m = self.conv(f_c.unsqueeze(1)).squeeze(1)      # B x C
        return torch.sigmoid(m)[:, :, None, None]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.attention(x)


class ESA(nn.Module):
    """Spatial attention: channel mean -> kxk conv -> sigmoid, k from the map size."""

    def __init__(self, height: int, width: int, b: int = 1, gamma: int = 2, bias: bool = False):
        super().__init__()
        self.k = esa_kernel_size(height, width, b, gamma)
        self.conv = nn.Conv2d(1, 1, self.k, padding=self.k // 2, bias=bias)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(x.mean(dim=1, keepdim=True)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.attention(x)


class GatedFusion(nn.Module):
    """g = sigmoid(conv1x1([F_c, F_s])); out = g * (F_c + F_s)."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, channels, 1)

    def gate(self, f_c: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(torch.cat([f_c, f_s], dim=1)))

    def forward(self, f_c: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        return self.gate(f_c, f_s) * (f_c + f_s)


class EGA(nn.Module):
    def __init__(self, channels: int, height: int, width: int,
                 b: int = 1, gamma: int = 2, bias: bool = False):
        super().__init__()
        self.eca = ECA(channels, b, gamma, bias)
        self.esa = ESA(height, width, b, gamma, bias)
        self.fusion = GatedFusion(channels)

    def forward(self, x: torch.Tensor, record: dict | None = None) -> torch.Tensor:
        m_c = self.eca.attention(x)
        m_s = self.esa.attention(x)
        f_c, f_s = x * m_c, x * m_s
        g = self.fusion.gate(f_c, f_s)
        if record is not None:
            record.update(channel=m_c.detach(), spatial=m_s.detach(), gate=g.detach())
        return g * (f_c + f_s)


class GCAM(nn.Module):
    """One skip-connection unit.  With both parts disabled it is ``f_e + f_d``."""

    def __init__(self, channels: int, size: int, use_cfa: bool = True, use_ega: bool = True,
                 reduction: int = 8, dilations=(3, 5), b: int = 1, gamma: int = 2,
                 bias: bool = False):
        super().__init__()
        self.cfa = CFA(channels, reduction, dilations) if use_cfa else None
        self.ega = EGA(channels, size, size, b, gamma, bias) if use_ega else None
        self.record: dict | None = None   # set to a dict to capture attention maps

    def forward(self, f_e: torch.Tensor, f_d: torch.Tensor) -> torch.Tensor:
        if f_e.shape != f_d.shape:
            raise ValueError(f"skip/decoder scale mismatch: {tuple(f_e.shape)} vs {tuple(f_d.shape)}")
        x = self.cfa(f_e, f_d) if self.cfa is not None else f_e + f_d
        if self.ega is not None:
            x = self.ega(x, self.record)
        return x
