"""From a softmax volume to a single exit-or-continue decision.

Dense predictions are naturally under-confident along object boundaries,
so a plain percentage-of-confident-pixels metric under-reports otherwise
easy images.  Median-smoothing the confidence of edge pixels before the
reduction recovers them.
"""

import numpy as np

from messkit import (
    PredictionTensor,
    enhance_confidence_map,
    exit_decision,
    image_confidence,
    pixel_confidence_map,
    semantic_edge_mask,
)

rng = np.random.default_rng(2)
M, R, C = 3, 16, 16

# a two-region image: class 0 left, class 1 right, confident everywhere
# except in a 2-pixel band around the boundary
labels = np.zeros((R, C), dtype=np.int64)
labels[:, C // 2:] = 1
confidence = np.full((R, C), 0.93) + rng.normal(0, 0.015, (R, C))
boundary = (np.abs(np.arange(C) - C // 2 + 0.5) < 2)[None, :] * np.ones((R, 1), bool)
confidence[boundary] = 0.45  # blurred class boundary
confidence = np.clip(confidence, 0.36, 0.99)

data = np.empty((M, R, C), dtype=np.float32)
rest = (1.0 - confidence) / (M - 1)
for m in range(M):
    data[m] = np.where(labels == m, confidence, rest)
pred = PredictionTensor(data)

for estimator in ("top1", "entropy"):
    cmap = pixel_confidence_map(pred, estimator)
    print(f"{estimator:>7}: mean pixel confidence {cmap.mean():.3f}, "
          f"boundary mean {cmap[boundary].mean():.3f}")

cmap = pixel_confidence_map(pred, "top1")
th_pix = 0.80
plain = image_confidence(cmap, th_pix)

# the mask marks the class discontinuity, widened by the output stride
mask = semantic_edge_mask(pred.argmax_labels(), output_stride=2)
smoothed = enhance_confidence_map(cmap, mask, output_stride=2)
enhanced = image_confidence(smoothed, th_pix)

print(f"\nedge pixels flagged: {int(mask.sum())} of {R * C}")
print(f"image confidence at th_pix={th_pix}: plain {plain:.3f} -> "
      f"edge-enhanced {enhanced:.3f}")

for th_img in (0.85, 0.95):
    for c_img, tag in ((plain, "plain"), (enhanced, "enhanced")):
        verdict = "exit early" if exit_decision(c_img, th_img) else "continue"
        print(f"  th_img={th_img:.2f} {tag:>9}: {verdict}")
print("\nthe boundary band alone was holding this easy image back")
