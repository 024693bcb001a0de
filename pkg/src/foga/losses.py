"""Training objective: intensity, gradient, two-horizon prediction and SSIM consistency.

Intensity and gradient terms are means over elements rather than sums so the
loss scale does not depend on resolution.  All terms have unit weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .config import ConfigError, LossMask, SsimConfig


@dataclass
class LossBreakdown:
    l_pred: torch.Tensor
    l_fc: torch.Tensor
    l_con: torch.Tensor
    total: torch.Tensor
    mask: LossMask = field(default_factory=LossMask)

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_pred", "l_fc", "l_con", "total")}


def _check(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def intensity_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check(pred, gt)
    return (pred - gt).pow(2).mean()


def gradient_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference of absolute forward differences.

    Evaluated at positions (i, j) with i, j >= 1, where both the vertical
    difference (i-1 -> i) and the horizontal one (j-1 -> j) exist.
    """
    _check(pred, gt)
    if pred.shape[-1] < 2 or pred.shape[-2] < 2:
        raise ConfigError(f"gradient loss needs H, W >= 2, got {tuple(pred.shape[-2:])}")

    def diffs(x):
        dh = x[..., 1:, 1:] - x[..., :-1, 1:]
        dw = x[..., 1:, :-1] - x[..., 1:, 1:]
        return dh.abs(), dw.abs()

    gh, gw = diffs(gt)
    ph, pw = diffs(pred)
    return ((gh - ph).abs() + (gw - pw).abs()).mean()


def gaussian_window(size: int, std: float, dtype=torch.float32) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * std**2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def ssim(a: torch.Tensor, b: torch.Tensor, cfg: SsimConfig | None = None) -> torch.Tensor:
    """Mean SSIM over all valid (unpadded) Gaussian windows, channels and batch."""
    cfg = cfg or SsimConfig()
    _check(a, b)
    if a.dim() == 3:
        a, b = a[None], b[None]
    n = cfg.window_size
    if a.shape[-1] < n or a.shape[-2] < n:
        raise ConfigError(f"SSIM window {n} larger than image {tuple(a.shape[-2:])}")

    c = a.shape[1]
    win = gaussian_window(n, cfg.window_std, a.dtype).to(a.device).expand(c, 1, n, n)

    def filt(x):
        return F.conv2d(x, win, groups=c)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def consistency_loss(immediate: torch.Tensor, forward: torch.Tensor,
                     cfg: SsimConfig | None = None) -> torch.Tensor:
    # SSIM can round a hair above 1 for identical inputs
    return (1.0 - ssim(immediate, forward, cfg)).clamp_min(0.0)


def total_loss(pair, target_immediate: torch.Tensor, target_forward: torch.Tensor,
               mask: LossMask | None = None, ssim_cfg: SsimConfig | None = None) -> LossBreakdown:
    """Sum of the enabled terms.  ``pair`` is a PredictionPair or (immediate, forward)."""
    mask = mask or LossMask()
    if not (mask.use_pred or mask.use_fc or mask.use_con):
        raise ConfigError("every loss term is masked out; nothing to optimise")
    immediate, forward = (pair.immediate, pair.forward) if hasattr(pair, "immediate") else pair

    def int_grad(p, g):
        loss = intensity_loss(p, g)
        return loss + gradient_loss(p, g) if mask.use_grad else loss

    l_pred = int_grad(immediate, target_immediate)
    l_fc = int_grad(forward, target_forward)
    l_con = consistency_loss(immediate, forward, ssim_cfg)

    total = immediate.new_zeros(())
    if mask.use_pred:
        total = total + l_pred
    if mask.use_fc:
        total = total + l_fc
    if mask.use_con:
        total = total + l_con
    return LossBreakdown(l_pred, l_fc, l_con, total, mask)
