"""One trained multi-exit network, four deployment shapes.

The same calibration cache answers all of them: a budgeted submodel for
a fixed device, an anytime chain of checkpoints, a per-sample
input-dependent policy, and the plain final-only baseline.
"""

import tempfile

from messkit import (
    ExitArch,
    ExitPlacement,
    MessConfig,
    SearchLimits,
    SearchObjective,
    SelectedExit,
    build_calibration_cache,
    cost_of,
    gen_synthetic_fixtures,
    load_fixture_set,
    search,
)

with tempfile.TemporaryDirectory() as scratch:
    gen_synthetic_fixtures(scratch, seed=404, num_images=120, dims=(32, 32),
                           class_count=5, num_exits=3,
                           accuracy_ladder=(0.6, 0.8, 0.95),
                           confidence_correlation=0.9)
    manifest, profile = load_fixture_set(scratch)
    cache = build_calibration_cache(manifest, th_pix_grid=(0.6, 0.75, 0.9))

placement = ExitPlacement(cache.exit_points)
final_only = MessConfig(
    "final_only", placement,
    (None,) * (placement.count - 1) + (SelectedExit(ExitArch.from_id(0)),))
final_cost = cost_of(final_only, profile)
final_miou = cache.dataset_miou(placement.exit_points[-1], 0)
print(f"final-only baseline: {final_cost:.1f} GFLOPs at mIoU {final_miou:.4f}\n")

# the shared accuracy requirement: within one point of the final exit
objective = SearchObjective("min_cost", final_miou - 0.01)
limits = SearchLimits(th_img_grid=tuple(round(0.02 * i, 2) for i in range(51)))

print(f"{'setting':<18} {'GFLOPs':>8} {'vs final':>9} {'mIoU':>8}  exits")
for setting in ("budgeted", "anytime", "input_dependent"):
    result = search(objective, cache, profile, setting, limits)
    tag = "feasible" if result.feasible else "INFEASIBLE"
    exits = [point for _, point, _ in result.config.selected()]
    print(f"{setting:<18} {result.cost:>8.2f} {result.cost / final_cost:>8.2f}x "
          f"{result.accuracy:>8.4f}  {exits}  ({tag})")
    if setting == "input_dependent":
        rates = [round(r, 3) for r in result.exit_rates]
        print(f"{'':<18} propagation rates {rates}")

print("\nbudgeted must hold the accuracy bar with a single static exit;")
print("input-dependent routes easy images out early and spends the deep")
print("backbone only on the hard ones, undercutting every static option")
