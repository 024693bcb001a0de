"""
From error maps to anomaly scores
=================================

Walks through the scoring chain with a predictor that simply repeats the
last input frame: hybrid error, pyramid PSNR, per-video normalisation,
temporal smoothing and frame-level AUC.
"""

import numpy as np
import torch
from torch import nn

from foga.config import ModelConfig, ScoringConfig, SyntheticSpec
from foga.datapipe import load_video, synth_generate
from foga.scoring import error_map, hybrid_error, plain_psnr, pyramid_psnr, score_video, summarize_auc


class RepeatLast(nn.Module):
    def __init__(self):
        super().__init__()
        self.config = ModelConfig(image_size=64, channel_plan=(8, 16, 24, 32))

    def forward(self, x):
        last = x[:, -3:]
        return last, last


# a localised error hurts the pyramid score much more than the plain mean
err = torch.zeros(64, 64)
err[20:28, 20:28] = 0.5
print(f"8x8 blob: plain psnr {float(plain_psnr(err)):.2f}  pyramid psnr {float(pyramid_psnr(err, (4, 8, 16, 32))):.2f}")

# hybrid error mixes the two horizons
e_i, e_f = error_map(torch.zeros(3, 4, 4), torch.full((3, 4, 4), 0.1)), torch.full((4, 4), 0.5)
print("hybrid error with lambda 0.06:", float(hybrid_error(e_i, e_f, 0.06)[0, 0]))

_, test = synth_generate(SyntheticSpec(num_train=0, num_test=4, seed=3))
model = RepeatLast()
for mode in ("plain", "pyramid"):
    cfg = ScoringConfig(mode=mode)
    series = [score_video(load_video(v, 64, 3), model, cfg, v.video_id, v.labels) for v in test]
    auc = summarize_auc(series)
    print(f"{mode:<8} micro AUC {auc.micro:.3f}  macro {auc.macro:.3f}")

s = series[0]
peak = int(np.argmax(s.anomaly))
print(f"{s.video_id}: peak score at frame {peak}, labelled {int(s.labels[peak])}, "
      f"first {s.first_scored} frames padded")
