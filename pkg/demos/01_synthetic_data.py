"""
Moving shapes with injected anomalies
=====================================

Generates the desk-scale dataset, prints where the anomalies sit and
writes the frames to disk in the folder layout the loaders expect.
"""

import sys
import tempfile

import numpy as np

from foga.config import SyntheticSpec
from foga.datapipe import load_split, synth_generate, write_split

# a small version of the default spec: 4 normal training clips, 3 test clips
spec = SyntheticSpec(num_train=4, num_test=3, frames_per_video=60, anomaly_length=(10, 15), seed=7)
train, test = synth_generate(spec)
print(f"{len(train)} train videos, {len(test)} test videos, frames {train.videos[0].frames.shape}")

# every test clip carries per-frame labels and the interval that produced them
for video in test:
    start, stop, kind = test.anomaly_intervals[video.video_id][0]
    print(f"{video.video_id}: {kind:<12} frames [{start}, {stop})  "
          f"{int(video.labels.sum())} abnormal of {len(video)}")

# a teleport shows up as a jump in the frame-to-frame difference
video = test.videos[0]
diff = np.abs(np.diff(video.frames.astype(np.int16), axis=0)).mean(axis=(1, 2, 3))
print("largest frame jump after frame", int(diff.argmax()), "label there:", int(video.labels[diff.argmax() + 1]))

# round trip through PNG folders
root = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp()
write_split(train, root)
write_split(test, root)
again = load_split(root, "test")
print("reloaded", len(again), "test videos from", root,
      "labels equal:", all(np.array_equal(a.labels, b.labels) for a, b in zip(test, again)))
