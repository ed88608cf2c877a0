"""Forward-only looks at the two multi-exit training losses.

`pretrain_loss` gates each early exit's cross-entropy with a batch-index
schedule so the backbone sees shallow-exit gradients without exit
cross-talk.  `pfd_loss` trains attached exits by mixing ground-truth
cross-entropy, filtered to pixels the final exit already gets right,
with distillation against the final exit.
"""

import numpy as np

from messkit import LabelMap, PredictionTensor, pfd_loss, pretrain_loss

rng = np.random.default_rng(3)
M, R, C, N = 4, 12, 12, 6

gt = LabelMap(rng.integers(0, M, (R, C)).astype(np.uint16))


def noisy_prediction(flip_rate):
    labels = gt.data.astype(np.int64).copy()
    flip = rng.random((R, C)) < flip_rate
    labels[flip] = (labels[flip] + rng.integers(1, M, int(flip.sum()))) % M
    conf = np.clip(rng.normal(0.9 - flip_rate / 2, 0.04, (R, C)), 0.3, 0.99)
    data = np.full((M, R, C), 0.0, dtype=np.float32)
    rest = (1.0 - conf) / (M - 1)
    for m in range(M):
        data[m] = np.where(labels == m, conf, rest)
    return PredictionTensor(data)


# deeper exits are more accurate
preds = [noisy_prediction(flip) for flip in (0.45, 0.35, 0.25, 0.18, 0.10, 0.05)]

print("exit-dropout schedule (N=6): active exits per batch index")
for j in range(1, 13):
    report = pretrain_loss(preds, gt, j)
    print(f"  batch {j:>2}: exits {list(report.active_exit_set)}  "
          f"total {report.total:.3f}")
print("batch 6 activates exits {1,2,3}: every divisor of the batch index;")
print("the final exit contributes in every batch\n")

print("round-robin alternative (one early exit per batch):")
actives = [pretrain_loss(preds, gt, j, round_robin=True).active_exit_set
           for j in range(1, 7)]
print("  " + " -> ".join(str(list(a)) for a in actives) + "\n")

print("positive filtering distillation across alpha (exit 1 term shown):")
for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
    report = pfd_loss(preds, gt, alpha=alpha)
    _, ce, kl = report.per_exit_terms[0]
    print(f"  alpha={alpha:.2f}  total {report.total:.3f}  "
          f"exit-1 CE part {ce:.3f}  KL part {kl:.3f}")
print("alpha interpolates linearly between pure distillation and "
      "correct-pixel-filtered cross entropy")
