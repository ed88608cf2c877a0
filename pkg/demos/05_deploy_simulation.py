"""Close the loop: search on a calibration split, replay on unseen data.

The calibration cache predicts accuracy, cost and exit rates during the
search; the simulator replays the chosen instance on raw tensors.  On
the calibration split the two agree exactly; on a fresh split they agree
up to sampling noise, which is the number a deployment actually sees.
"""

import tempfile
from pathlib import Path

from messkit import (
    SearchLimits,
    SearchObjective,
    build_calibration_cache,
    evaluate_config,
    gen_synthetic_fixtures,
    instance_from_result,
    load_fixture_set,
    search,
    simulate,
)

with tempfile.TemporaryDirectory() as scratch:
    scratch = Path(scratch)
    common = dict(num_images=150, dims=(32, 32), class_count=5, num_exits=3,
                  accuracy_ladder=(0.6, 0.8, 0.95), confidence_correlation=0.9)
    gen_synthetic_fixtures(scratch / "calib", seed=51, id_prefix="cal", **common)
    gen_synthetic_fixtures(scratch / "test", seed=52, id_prefix="tst", **common)
    calib_man, profile = load_fixture_set(scratch / "calib")
    test_man, _ = load_fixture_set(scratch / "test")

    cache = build_calibration_cache(calib_man, th_pix_grid=(0.6, 0.75, 0.9))
    final_miou = cache.dataset_miou(cache.exit_points[-1], 0)
    result = search(
        SearchObjective("min_cost", final_miou - 0.01), cache, profile,
        "input_dependent",
        SearchLimits(th_img_grid=tuple(round(0.02 * i, 2) for i in range(51))))
    instance = instance_from_result(result)
    print("searched instance:")
    for _, point, sel in instance.config.selected():
        th = sel.thresholds
        policy = f"th_pix={th.th_pix} th_img={th.th_img}" if th else "terminal"
        print(f"  exit at block {point:>2}  arch {sel.arch.arch_id:>2}  {policy}")

    calib_rep = simulate(instance, calib_man, profile)
    direct = evaluate_config(instance.config, cache, profile)
    print("\ncalibration split: cache prediction vs raw-tensor replay")
    print(f"  mIoU      {direct.accuracy:.6f} vs {calib_rep.miou:.6f}  "
          f"(identical: {direct.accuracy == calib_rep.miou})")
    print(f"  workload  {direct.cost:.6f} vs {calib_rep.expected_workload:.6f}  "
          f"(identical: {direct.cost == calib_rep.expected_workload})")

    test_rep = simulate(instance, test_man, profile)
    print("\nfresh split:")
    print(f"  mIoU {test_rep.miou:.4f}  (calibration estimate {result.accuracy:.4f})")
    print(f"  expected workload {test_rep.expected_workload:.2f} GFLOPs, "
          f"latency {test_rep.expected_latency:.2f} ms")
    print(f"  exit counts {list(test_rep.exit_counts)} over "
          f"{test_rep.image_count} images")
    easy = [r for r in test_rep.per_image if r.exit_point == test_rep.selected_exit_points[0]]
    print(f"  {len(easy)} images left at the first exit; their mean per-image "
          f"IoU is {sum(r.iou for r in easy) / max(len(easy), 1):.4f}")
