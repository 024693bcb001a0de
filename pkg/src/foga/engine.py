"""Training loop, evaluation, throughput benchmark and the ablation grid."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch

from .backbone import FoGA, count_params, estimate_flops, load_checkpoint, save_checkpoint
from .config import ConfigError, DataError, LossMask, RunConfig
from .datapipe import DatasetIndex, WindowDataset, load_video, preprocess_frame
from .losses import total_loss
from .scoring import (
    ScoreSeries,
    error_map,
    frame_psnr,
    hybrid_error,
    series_from_psnr,
    summarize_auc,
    video_psnr,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


# ── training ────────────────────────────────────────────────


@dataclass
class TrainResult:
    model: FoGA
    history: list[dict[str, float]]
    checkpoint: Path | None = None


def train(config: RunConfig, dataset: DatasetIndex, out_dir: str | Path | None = None,
          steps: int | None = None, log_every: int = 50,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Minimise the unit-weight objective over every training window.

    ``steps`` caps the number of optimiser steps (for smoke runs).  Each
    epoch's end writes ``checkpoint.pt`` under ``out_dir`` and every step is
    appended to ``train_log.jsonl``.
    """
    if dataset.split != "train":
        raise DataError("training requires the train split")
    mcfg, tcfg = config.model, config.train
    seed_everything(tcfg.seed)

    data = WindowDataset(dataset, mcfg.t, mcfg.sigma, mcfg.image_size, mcfg.c_in, tcfg.stride)
    if len(data) == 0:
        raise DataError(f"no training windows: every video shorter than t + sigma = {mcfg.t + mcfg.sigma}")
    gen = torch.Generator().manual_seed(tcfg.seed)
    loader = torch.utils.data.DataLoader(data, batch_size=tcfg.batch_size, shuffle=True,
                                         generator=gen, num_workers=0, drop_last=False)

    model = FoGA(mcfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.dump(out / "config.yaml")
        log_fh = (out / "train_log.jsonl").open("w")

    history: list[dict[str, float]] = []
    step = 0
    ckpt = None
    try:
        for epoch in range(tcfg.epochs):
            for x, y1, ys in loader:
                immediate, forward = model(x)
                losses = total_loss((immediate, forward), y1, ys, tcfg.loss_mask, tcfg.ssim)
                if not torch.isfinite(losses.total):
                    raise TrainingDiverged(
                        f"non-finite loss at step {step} (epoch {epoch}): {losses.as_floats()}"
                    )
                opt.zero_grad(set_to_none=True)
                losses.total.backward()
                if tcfg.max_grad_norm:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.max_grad_norm)
                opt.step()

                record = {"step": step, "epoch": epoch, **losses.as_floats()}
                history.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                if on_step is not None:
                    on_step(record)
                if log_every and step % log_every == 0:
                    log.info("step %d epoch %d total %.4f", step, epoch, record["total"])
                step += 1
                if steps is not None and step >= steps:
                    break
            if out is not None and (epoch + 1) % tcfg.checkpoint_every == 0:
                ckpt = save_checkpoint(out / "checkpoint.pt", model, step,
                                       {"config_hash": config.hash(), "epoch": epoch + 1})
            if steps is not None and step >= steps:
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None and (ckpt is None or tcfg.epochs % tcfg.checkpoint_every):
        ckpt = save_checkpoint(out / "checkpoint.pt", model, step, {"config_hash": config.hash()})
    model.eval()
    return TrainResult(model, history, ckpt)


# ── evaluation ──────────────────────────────────────────────


@dataclass
class EvalReport:
    auc: float
    macro_auc: float | None
    per_video_auc: dict[str, float | None]
    params: int
    flops: float
    fps_plain: float | None = None
    fps_pyramid: float | None = None
    peak_memory_mb: float | None = None
    config_hash: str = ""
    config: dict[str, Any] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EvalReport:
        return cls(**d)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        return cls.from_dict(json.loads(text))


def _resolve_model(model_or_path, config: RunConfig) -> FoGA:
    if isinstance(model_or_path, FoGA):
        return model_or_path
    model, _ = load_checkpoint(model_or_path, config.model)
    return model


def score_dataset(model: FoGA, dataset: DatasetIndex, config: RunConfig,
                  maps_out: str | Path | None = None) -> tuple[list[ScoreSeries], list[str]]:
    """Score every test video; too-short videos are skipped and reported."""
    mcfg = model.config
    series, skipped = [], []
    for video in dataset:
        if len(video) < mcfg.t + mcfg.sigma:
            log.warning("video %s has %d frames (< t + sigma), skipped", video.video_id, len(video))
            skipped.append(video.video_id)
            continue
        if video.labels is not None and len(video.labels) != len(video):
            raise DataError(f"video {video.video_id}: {len(video.labels)} labels for {len(video)} frames")
        frames = load_video(video, mcfg.image_size, mcfg.c_in)
        if maps_out is not None:
            psnr, first, maps = video_psnr(frames, model, config.scoring, return_maps=True)
            Path(maps_out).mkdir(parents=True, exist_ok=True)
            np.savez_compressed(Path(maps_out) / f"{video.video_id}.npz",
                                hybrid_error=maps.numpy(), first_frame=first)
        else:
            psnr, first = video_psnr(frames, model, config.scoring)
        series.append(series_from_psnr(video.video_id, psnr, first, len(frames),
                                       config.scoring, video.labels))
    return series, skipped


def evaluate(model_or_path, dataset: DatasetIndex, config: RunConfig,
             with_fps: bool = False) -> tuple[EvalReport, list[ScoreSeries]]:
    if dataset.split != "test":
        raise DataError("evaluation requires the test split")
    model = _resolve_model(model_or_path, config)
    series, skipped = score_dataset(model, dataset, config)
    if not series:
        raise DataError("no scorable test videos")
    auc = summarize_auc(series)
    report = EvalReport(
        auc=auc.micro,
        macro_auc=auc.macro,
        per_video_auc=auc.per_video,
        params=count_params(model),
        flops=estimate_flops(model.config),
        config_hash=config.hash(),
        config=config.to_dict(),
        skipped=skipped,
    )
    if with_fps:
        b = bench(model, config)
        report.fps_plain, report.fps_pyramid = b["fps_plain"], b["fps_pyramid"]
    return report, series


# ── benchmark ───────────────────────────────────────────────


def _median_time(fn: Callable[[], Any], reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@torch.no_grad()
def bench(model_or_path, config: RunConfig, frames: int = 200, warmup: int = 5,
          seed: int = 0) -> dict[str, Any]:
    """Per-frame latency split into preprocessing, model and scoring stages.

    Model time is measured over ``frames`` single-window forward passes and
    shared by both scoring modes; each mode adds its own measured scoring
    cost.  FPS values are end-to-end (``1 / (pre + model + score)``).
    """
    model = _resolve_model(model_or_path, config)
    model.eval()
    mcfg, scfg = model.config, config.scoring
    size = mcfg.image_size
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    x = torch.from_numpy(rng.uniform(-1, 1, (1, mcfg.in_channels, size, size)).astype(np.float32))
    gt = torch.from_numpy(rng.uniform(-1, 1, (1, mcfg.c_in, size, size)).astype(np.float32))

    for _ in range(warmup):
        model(x)
    t_pre = _median_time(lambda: preprocess_frame(raw, size, mcfg.c_in), max(frames // 4, 10))
    t_model = _median_time(lambda: model(x), frames)
    immediate, forward = model(x)

    def scorer(mode):
        cfg = dataclasses.replace(scfg, mode=mode)
        return lambda: frame_psnr(
            hybrid_error(error_map(immediate, gt), error_map(forward, gt), cfg.lam), cfg
        )

    t_plain = _median_time(scorer("plain"), frames)
    t_pyr = _median_time(scorer("pyramid"), frames)

    return {
        "params": count_params(model),
        "flops": estimate_flops(mcfg),
        "fps_model": 1.0 / t_model,
        "fps_plain": 1.0 / (t_pre + t_model + t_plain),
        "fps_pyramid": 1.0 / (t_pre + t_model + t_pyr),
        "latency_ms": {
            "preprocess": 1e3 * t_pre,
            "model": 1e3 * t_model,
            "score_plain": 1e3 * t_plain,
            "score_pyramid": 1e3 * t_pyr,
        },
        "frames": frames,
        "image_size": size,
        "peak_memory_mb": _peak_rss_mb(),
    }


def _peak_rss_mb() -> float | None:
    try:
        import resource
    except ImportError:  # pragma: no cover - non-POSIX
        return None
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


# ── attention export ────────────────────────────────────────


@torch.no_grad()
def export_attention(model: FoGA, inputs: torch.Tensor, path: str | Path) -> Path:
    """Dump channel, spatial and gate maps of every GCAM level for one window."""
    if not model.config.use_ega:
        raise ConfigError("attention maps need use_ega=True")
    model.eval()
    records = model.attention_record(True)
    try:
        if inputs.dim() == 4:
            inputs = inputs.flatten(0, 1)[None]
        model(inputs)
        arrays = {
            f"level{l}_{name}": rec[name][0].numpy()
            for l, rec in enumerate(records)
            for name in ("channel", "spatial", "gate")
        }
    finally:
        model.attention_record(False)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, **arrays)
    return path


# ── ablations ───────────────────────────────────────────────


GCAM_GRID = [(False, False), (True, False), (False, True), (True, True)]
LOSS_GRID = ["grad", "pred", "fc", "con"]


def ablation_grid(config: RunConfig, sweep: dict | None = None) -> list[tuple[str, RunConfig]]:
    """Named configurations for the GCAM and loss-term ablations.

    ``sweep`` may restrict the grid: ``{"gcam": [[cfa, ega], ...], "loss": ["grad", ...],
    "sigma": [1, 4]}``.
    """
    sweep = sweep or {}
    runs = []
    for cfa, ega in sweep.get("gcam", GCAM_GRID):
        c = RunConfig.from_dict(config.to_dict())
        c.model = dataclasses.replace(c.model, use_cfa=bool(cfa), use_ega=bool(ega))
        runs.append((f"cfa{int(cfa)}_ega{int(ega)}", c))
    for term in sweep.get("loss", LOSS_GRID):
        c = RunConfig.from_dict(config.to_dict())
        c.train.loss_mask = LossMask.without(term)
        runs.append((f"wo_{term}", c))
    for sigma in sweep.get("sigma", []):
        c = RunConfig.from_dict(config.to_dict())
        c.model = dataclasses.replace(c.model, sigma=int(sigma))
        runs.append((f"sigma{sigma}", c))
    return runs


def ablate(config: RunConfig, train_set: DatasetIndex, test_set: DatasetIndex,
           sweep: dict | None = None, out_dir: str | Path | None = None) -> list[dict[str, Any]]:
    rows = []
    for name, cfg in ablation_grid(config, sweep):
        log.info("ablation run %s", name)
        sub = Path(out_dir) / name if out_dir is not None else None
        result = train(cfg, train_set, sub, log_every=0)
        report, _ = evaluate(result.model, test_set, cfg)
        rows.append({
            "run": name,
            "use_cfa": cfg.model.use_cfa,
            "use_ega": cfg.model.use_ega,
            "sigma": cfg.model.sigma,
            "loss_mask": dataclasses.asdict(cfg.train.loss_mask),
            "params": report.params,
            "flops": report.flops,
            "auc": report.auc,
            "macro_auc": report.macro_auc,
            "final_loss": result.history[-1]["total"] if result.history else math.nan,
        })
    return rows


def format_table(rows: list[dict[str, Any]]) -> str:
    lines = [f"{'run':<14}{'params(M)':>10}{'flops(G)':>10}{'AUC':>8}"]
    for r in rows:
        lines.append(f"{r['run']:<14}{r['params'] / 1e6:>10.3f}{r['flops'] / 1e9:>10.2f}{r['auc']:>8.4f}")
    return "\n".join(lines)
