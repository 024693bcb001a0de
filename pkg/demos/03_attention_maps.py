"""
Inside the gated skip connections
=================================

Runs one window through an untrained model with attention recording on,
summarises the channel, spatial and gate maps of each skip level and
saves them to an .npz file.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from foga.backbone import FoGA
from foga.config import SyntheticSpec, profile_config
from foga.datapipe import load_video, synth_generate
from foga.engine import export_attention
from foga.gcam import eca_kernel_size, esa_kernel_size

cfg = profile_config("synthetic")
torch.manual_seed(0)
model = FoGA(cfg.model).eval()

# kernel sizes adapt to width and resolution of each level
for level, width in enumerate(cfg.model.channel_plan[:3]):
    side = cfg.model.image_size >> level
    print(f"level {level}: {width} channels at {side}x{side}, "
          f"channel kernel {eca_kernel_size(width)}, spatial kernel {esa_kernel_size(side, side)}")

_, test = synth_generate(SyntheticSpec(num_train=0, num_test=1, frames_per_video=30, anomaly_length=(5, 8)))
frames = load_video(test.videos[0], cfg.model.image_size, cfg.model.c_in)

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp()) / "attention.npz"
maps = np.load(export_attention(model, frames[: cfg.model.t], out))
for name in sorted(maps.files):
    m = maps[name]
    print(f"{name:<16}{str(m.shape):<16} mean {m.mean():.3f}  range [{m.min():.3f}, {m.max():.3f}]")
print("saved", out)
