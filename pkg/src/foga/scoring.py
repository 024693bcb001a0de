"""Anomaly scoring: hybrid error maps, pyramid PSNR, per-video normalisation, AUC.

Per video the pipeline is

    E = E_i + lam * E_f                       (per-pixel, channel-averaged)
    PSNR = 10 log10(1 / max(sum_i v_i, eps))  (v_i: worst mean-pooled patch at window i)
    S = minmax(PSNR)                          (per video)
    a = 1 - gaussian_smooth(S)

PSNR of a window is keyed to its immediate-target frame.  The first ``t``
frames and the last ``sigma - 1`` frames have no target of their own and
copy the nearest computed value.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter1d
from sklearn.metrics import roc_auc_score

from .config import ConfigError, DataError, ScoringConfig
from .datapipe import window_bases

log = logging.getLogger(__name__)


@dataclass
class ScoreSeries:
    video_id: str
    psnr: np.ndarray           # one value per scored frame
    normalized: np.ndarray     # full length, padded
    anomaly: np.ndarray        # full length, 1 - smoothed normalized
    first_scored: int          # frame index of psnr[0]
    padding: str = "edge"
    labels: np.ndarray | None = None
    mode: str = "pyramid"
    smoothed: bool = True

    def __len__(self) -> int:
        return len(self.anomaly)

    def to_csv(self, path: str | Path) -> Path:
        """Columns: frame_index, raw_psnr (blank when padded), normalized, anomaly_score, label."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "raw_psnr", "normalized", "anomaly_score", "label"])
            for i in range(len(self)):
                j = i - self.first_scored
                raw = f"{self.psnr[j]:.6f}" if 0 <= j < len(self.psnr) else ""
                label = "" if self.labels is None else int(self.labels[i])
                w.writerow([i, raw, f"{self.normalized[i]:.6f}", f"{self.anomaly[i]:.6f}", label])
        return path


# ── error maps ──────────────────────────────────────────────


def error_map(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Squared error averaged over channels: (..., C, H, W) -> (..., H, W)."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).pow(2).mean(dim=-3)


def hybrid_error(e_i: torch.Tensor, e_f: torch.Tensor, lam: float) -> torch.Tensor:
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    if e_i.shape != e_f.shape:
        raise ValueError(f"shape mismatch: {tuple(e_i.shape)} vs {tuple(e_f.shape)}")
    return e_i + lam * e_f


def pyramid_terms(err: torch.Tensor, windows: Sequence[int] = (4, 8, 16, 32)) -> torch.Tensor:
    """Worst mean-pooled patch per window: (..., H, W) -> (..., len(windows)).

    Patches are non-overlapping; a trailing remainder smaller than the window
    is dropped.
    """
    if max(windows) > min(err.shape[-2:]):
        raise ConfigError(f"pyramid window {max(windows)} exceeds error map {tuple(err.shape[-2:])}")
    lead = err.shape[:-2]
    x = err.reshape(-1, 1, *err.shape[-2:])
    v = [F.avg_pool2d(x, w, stride=w).flatten(1).amax(dim=1) for w in windows]
    return torch.stack(v, dim=-1).reshape(*lead, len(windows))


def pyramid_psnr(err: torch.Tensor, windows: Sequence[int] = (4, 8, 16, 32),
                 eps: float = 1e-8) -> torch.Tensor:
    total = pyramid_terms(err, windows).sum(dim=-1)
    return 10.0 * torch.log10(1.0 / total.clamp_min(eps))


def plain_psnr(err: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    return 10.0 * torch.log10(1.0 / err.mean(dim=(-2, -1)).clamp_min(eps))


def frame_psnr(err: torch.Tensor, cfg: ScoringConfig) -> torch.Tensor:
    if cfg.mode == "plain":
        return plain_psnr(err, cfg.eps)
    return pyramid_psnr(err, cfg.windows, cfg.eps)


# ── series post-processing ──────────────────────────────────


def normalize_scores(psnr: Sequence[float], eps: float = 1e-12) -> np.ndarray:
    """Min-max to [0, 1]; a constant series maps to zeros."""
    x = np.asarray(psnr, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalise an empty series")
    lo, hi = x.min(), x.max()
    span = hi - lo
    if span <= eps:
        return np.zeros_like(x)
    return (x - lo) / span


def gaussian_smooth(series: Sequence[float], sigma: float = 3.0) -> np.ndarray:
    """Normalised Gaussian, radius ceil(3 sigma), reflect-padded at the ends."""
    if sigma <= 0:
        raise ConfigError(f"smoothing sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    return gaussian_filter1d(np.asarray(series, dtype=np.float64), sigma,
                             mode="reflect", radius=radius)


def pad_series(values: np.ndarray, first: int, length: int) -> np.ndarray:
    out = np.empty(length, dtype=np.float64)
    n = len(values)
    out[:first] = values[0]
    out[first : first + n] = values
    out[first + n :] = values[-1]
    return out


# ── full pipeline ───────────────────────────────────────────


@torch.no_grad()
def video_psnr(frames: torch.Tensor, model, cfg: ScoringConfig,
               return_maps: bool = False):
    """PSNR for every scorable frame of a preprocessed (L, C, H, W) video.

    Returns ``(psnr, first_scored)`` and, with ``return_maps``, the hybrid
    error maps stacked as (N, H, W).
    """
    mcfg = model.config
    t, sigma = mcfg.t, mcfg.sigma
    bases = list(window_bases(len(frames), t, sigma))
    if not bases:
        raise DataError(f"video of {len(frames)} frames is shorter than t + sigma = {t + sigma}")
    was_training = model.training
    model.eval()
    psnr, maps = [], []
    try:
        for i in range(0, len(bases), cfg.batch_size):
            chunk = bases[i : i + cfg.batch_size]
            x = torch.stack([frames[b - t + 1 : b + 1].flatten(0, 1) for b in chunk])
            immediate, forward = model(x)
            e_i = error_map(immediate, frames[[b + 1 for b in chunk]])
            e_f = error_map(forward, frames[[b + sigma for b in chunk]])
            err = hybrid_error(e_i, e_f, cfg.lam)
            psnr.append(frame_psnr(err, cfg))
            if return_maps:
                maps.append(err)
    finally:
        model.train(was_training)
    out = torch.cat(psnr).double().numpy()
    first = bases[0] + 1
    if return_maps:
        return out, first, torch.cat(maps)
    return out, first


def series_from_psnr(video_id: str, psnr: np.ndarray, first: int, length: int,
                     cfg: ScoringConfig, labels: np.ndarray | None = None) -> ScoreSeries:
    normalized = pad_series(normalize_scores(psnr), first, length)
    anomaly = 1.0 - gaussian_smooth(normalized, cfg.smooth_sigma)
    return ScoreSeries(video_id, psnr, normalized, anomaly, first,
                       labels=labels, mode=cfg.mode)


def score_video(frames: torch.Tensor, model, cfg: ScoringConfig, video_id: str = "",
                labels: np.ndarray | None = None) -> ScoreSeries:
    psnr, first = video_psnr(frames, model, cfg)
    return series_from_psnr(video_id, psnr, first, len(frames), cfg, labels)


# ── evaluation ──────────────────────────────────────────────


def frame_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC with anomalies as the positive class; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if len(np.unique(labels)) != 2:
        raise ValueError("AUC is undefined unless both classes are present")
    return float(roc_auc_score(labels, scores))


@dataclass
class AucSummary:
    micro: float
    macro: float | None
    per_video: dict[str, float | None] = field(default_factory=dict)


def summarize_auc(series: Sequence[ScoreSeries]) -> AucSummary:
    """Micro AUC over the concatenated stream; macro over videos holding both classes."""
    per_video: dict[str, float | None] = {}
    for s in series:
        if s.labels is None:
            raise DataError(f"video {s.video_id} has no labels")
        if len(s.labels) != len(s):
            raise DataError(f"video {s.video_id}: {len(s.labels)} labels for {len(s)} frames")
        per_video[s.video_id] = (
            frame_auc(s.anomaly, s.labels) if len(np.unique(s.labels)) == 2 else None
        )
    scores = np.concatenate([s.anomaly for s in series])
    labels = np.concatenate([s.labels for s in series])
    valid = [v for v in per_video.values() if v is not None]
    return AucSummary(frame_auc(scores, labels), float(np.mean(valid)) if valid else None, per_video)
