"""Where do exits go on an unevenly loaded backbone?

Dilated segmentation backbones concentrate their FLOPs in the deep,
channel-rich blocks, so placing exits every k layers would bunch all the
cheap checkpoints at the front.  Placement therefore targets equal
workload shares: the n-th exit lands on the block whose cumulative cost
is closest to n/N of the total.
"""

import numpy as np

from messkit import CostProfile, place_exit_points, segment_workloads

# a 16-block backbone whose per-block cost ramps up with depth,
# mimicking the widening feature volumes of a dilated network
blocks = tuple(float(x) for x in 1.25 ** np.arange(16) * 2.0)
profile = CostProfile(blocks)
total = sum(blocks)
print(f"backbone: {len(blocks)} blocks, {total:.1f} GFLOPs total")

for n_exits in (3, 6):
    placement = place_exit_points(profile, n_exits)
    segments = segment_workloads(placement, profile)
    print(f"\nN={n_exits} exits -> block ordinals {list(placement.exit_points)}")
    cumulative = 0.0
    for point, seg in zip(placement.exit_points, segments):
        cumulative += seg
        print(f"  K={point:>2}  segment {seg:7.2f} GFLOPs  "
              f"cumulative {cumulative / total:5.1%} of backbone")

# equal *block counts* for comparison: the first naive exit sits at 6% of
# the workload while the placed one sits near 1/6 of it
naive = len(blocks) // 6
print(f"\nnaive exit after {naive} blocks covers "
      f"{sum(blocks[:naive]) / total:.1%} of the workload; "
      "workload-equidistant placement avoids that imbalance")

# placement is a function of cost *ratios* only
scaled = CostProfile(tuple(b * 4.0 for b in blocks))
assert place_exit_points(scaled, 6) == place_exit_points(profile, 6)
print("scaling every block by 4x leaves the placement unchanged")
