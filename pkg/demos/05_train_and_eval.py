"""
Training and evaluating on the synthetic task
=============================================

Trains the desk-scale profile and reports frame-level AUC.  Pass a number
of epochs as the first argument (default 2; the acceptance run uses 10).
"""

import logging
import sys
import tempfile
import time

from foga.config import profile_config
from foga.datapipe import synth_generate
from foga.engine import evaluate, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2
cfg = profile_config("synthetic", {"train.epochs": epochs})
train_set, test_set = synth_generate(cfg.synth)

out = tempfile.mkdtemp()
t0 = time.perf_counter()
result = train(cfg, train_set, out, log_every=100)
print(f"{len(result.history)} steps in {time.perf_counter() - t0:.0f}s, "
      f"loss {result.history[0]['total']:.3f} -> {result.history[-1]['total']:.3f}")

for mode in ("pyramid", "plain"):
    cfg.scoring.mode = mode
    report, _ = evaluate(result.checkpoint, test_set, cfg)
    print(f"{mode:<8} micro AUC {report.auc:.4f}  macro {report.macro_auc:.4f}")
print("checkpoint and logs in", out)
