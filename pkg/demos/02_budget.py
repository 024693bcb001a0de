"""
Parameters, FLOPs and throughput
================================

Counts parameters and multiply-accumulates for the four attention
variants at full resolution, then times one forward pass and both scoring
modes.
"""

from foga.backbone import FoGA, count_params, estimate_flops
from foga.config import ModelConfig, profile_config
from foga.engine import bench

print(f"{'variant':<10}{'params':>12}{'GFLOPs':>9}")
for cfa, ega in [(False, False), (True, False), (False, True), (True, True)]:
    cfg = ModelConfig(use_cfa=cfa, use_ega=ega)
    name = "+".join(n for n, on in (("cfa", cfa), ("ega", ega)) if on) or "base"
    print(f"{name:<10}{count_params(cfg):>12,}{estimate_flops(cfg) / 1e9:>9.2f}")

# counting multiply and add separately doubles every number
print("full model, 2 FLOPs per MAC:", estimate_flops(ModelConfig(), flops_per_mac=2) / 1e9, "G")

# the Avenue profile feeds 8 frames, which only widens the first convolution
avenue = profile_config("avenue").model
print("avenue input channels", avenue.in_channels, "params", count_params(avenue))

# throughput: model time is shared, the scoring mode adds its own cost
rec = bench(FoGA(ModelConfig()).eval(), profile_config("ped2"), frames=10)
for key, ms in rec["latency_ms"].items():
    print(f"  {key:<14}{ms:8.2f} ms")
print(f"fps plain {rec['fps_plain']:.2f}  fps pyramid {rec['fps_pyramid']:.2f}")
