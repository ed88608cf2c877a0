"""`mess` command line: profile, search, simulate, eval-loss, confidence, gen-fixtures.

Every flag can also be supplied through a TOML config file
(``--config run.toml``): values are read from the ``[<subcommand>]``
table (and a shared ``[global]`` table), with command-line flags taking
precedence.  Exit status is 0 on success, 2 when a search constraint is
infeasible (the best-violating instance is still written), 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .confidence import image_confidence, pixel_confidence_map
from .errors import MessError
from .losses import pfd_loss, pretrain_loss
from .profiling import place_exit_points, segment_workloads
from .search import (
    CalibrationCache,
    SearchLimits,
    SearchObjective,
    build_calibration_cache,
    confidence_maps,
    instance_from_result,
    load_instance,
    save_instance,
    search,
)
from .simulate import gen_synthetic_fixtures, simulate
from .tensorio import (
    SHARED_ARCH,
    load_cost_profile,
    load_manifest,
    read_tensor,
    write_map,
)

log = logging.getLogger("mess")

_SETTINGS = {
    "budgeted": "budgeted",
    "anytime": "anytime",
    "input-dep": "input_dependent",
    "input_dependent": "input_dependent",
    "final-only": "final_only",
    "final_only": "final_only",
}
_OBJECTIVES = {"min-cost": "min_cost", "min_cost": "min_cost",
               "max-acc": "max_acc", "max_acc": "max_acc"}


class CliUsageError(Exception):
    pass


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise CliUsageError(f"missing required option(s): {flags}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _dims(text: str) -> tuple[int, int]:
    rows, cols = text.lower().split("x")
    return int(rows), int(cols)


def _threads(args: argparse.Namespace) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_profile(args: argparse.Namespace) -> int:
    _require(args, "costs", "num_exits")
    profile = load_cost_profile(args.costs)
    placement = place_exit_points(profile, args.num_exits)
    segments = segment_workloads(placement, profile)
    if args.json:
        print(json.dumps({
            "schema_version": 1,
            "exit_points": list(placement.exit_points),
            "segment_workloads": list(segments),
        }, indent=2))
    else:
        print(f"exit points (block ordinals): {list(placement.exit_points)}")
        prev = 0
        for point, seg in zip(placement.exit_points, segments):
            print(f"  K={point:<4d} segment (b{prev}..b{point}]  workload {seg:.4f}")
            prev = point
    return 0


def cmd_gen_fixtures(args: argparse.Namespace) -> int:
    _require(args, "out", "seed", "images")
    fixtures = gen_synthetic_fixtures(
        args.out,
        seed=args.seed,
        num_images=args.images,
        dims=_dims(args.dim),
        class_count=args.classes,
        num_exits=args.exits,
        accuracy_ladder=_floats(args.ladder),
        confidence_correlation=args.correlation,
        archs_per_point=args.archs_per_point,
        ignore_fraction=args.ignore_fraction,
        total_workload=args.total_workload,
        id_prefix=args.prefix,
    )
    print(f"wrote {args.images} images to {fixtures.out_dir}")
    print(f"manifest: {fixtures.manifest_path}")
    print(f"costs:    {fixtures.costs_path}")
    print(f"exit points: {list(fixtures.exit_points)}")
    return 0


def cmd_confidence(args: argparse.Namespace) -> int:
    _require(args, "pred", "th_pix")
    pred = read_tensor(args.pred)
    if args.edge_enhance:
        cmap, enhanced = confidence_maps(pred, args.estimator, args.output_stride)
        chosen = enhanced
    else:
        chosen = pixel_confidence_map(pred, args.estimator)
    c_img = image_confidence(chosen, args.th_pix)
    print(json.dumps({
        "schema_version": 1,
        "estimator": args.estimator,
        "th_pix": args.th_pix,
        "edge_enhance": bool(args.edge_enhance),
        "c_img": c_img,
    }, indent=2))
    if args.out:
        write_map(chosen, args.out)
        log.info("wrote confidence map to %s", args.out)
    return 0


def _loss_arch(manifest, exit_point: int, override: Optional[int]) -> int:
    if override is not None:
        return override
    ids = manifest.arch_ids(exit_point)
    return 0 if ids == (SHARED_ARCH,) else ids[0]


def cmd_eval_loss(args: argparse.Namespace) -> int:
    _require(args, "loss", "manifest")
    manifest = load_manifest(args.manifest)
    points = manifest.exit_points
    if len(points) < 2:
        raise CliUsageError("loss evaluation needs a manifest with at least two exits")
    totals = []
    term_sums: dict[int, list[float]] = {}
    active = None
    from .tensorio import read_labels

    for img in manifest.images:
        gt = read_labels(img.label_path)
        preds = [
            read_tensor(img.prediction_path(p, _loss_arch(manifest, p, args.arch)))
            for p in points
        ]
        if args.loss == "pretrain":
            report = pretrain_loss(preds, gt, args.batch_index,
                                   round_robin=args.round_robin)
        else:
            report = pfd_loss(preds, gt, alpha=args.alpha,
                              include_final=not args.exclude_final,
                              reverse_kl=args.reverse_kl)
        totals.append(report.total)
        active = report.active_exit_set
        for exit_id, ce, kl in report.per_exit_terms:
            term_sums.setdefault(exit_id, [0.0, 0.0])
            term_sums[exit_id][0] += ce
            term_sums[exit_id][1] += kl
    n = len(manifest.images)
    print(json.dumps({
        "schema_version": 1,
        "loss": args.loss,
        "images": n,
        "total": sum(totals) / n,
        "active_exit_set": list(active),
        "per_exit_terms": [
            {"exit": e, "ce": ce / n, "kl": kl / n}
            for e, (ce, kl) in sorted(term_sums.items())
        ],
    }, indent=2))
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    _require(args, "setting", "objective", "bound", "cache", "costs", "out")
    setting = _SETTINGS.get(args.setting)
    if setting is None:
        raise CliUsageError(f"unknown setting {args.setting!r}")
    mode = _OBJECTIVES.get(args.objective)
    if mode is None:
        raise CliUsageError(f"unknown objective {args.objective!r}")
    profile = load_cost_profile(args.costs)
    cache_path = Path(args.cache)
    if cache_path.is_file():
        cache = CalibrationCache.load(cache_path)
        log.info("loaded cache %s (%d images)", cache_path, cache.n_images)
    else:
        if not args.manifest:
            raise CliUsageError(
                f"cache {cache_path} does not exist; pass --manifest to build it")
        manifest = load_manifest(args.manifest)
        kwargs = {}
        if args.th_pix_grid:
            kwargs["th_pix_grid"] = _floats(args.th_pix_grid)
        cache = build_calibration_cache(
            manifest, estimator=args.estimator, threads=_threads(args), **kwargs)
        cache.save(cache_path)
        log.info("built cache %s (%d images)", cache_path, cache.n_images)

    limit_kwargs = {"max_exits": args.max_exits}
    if args.th_img_grid:
        limit_kwargs["th_img_grid"] = _floats(args.th_img_grid)
    if args.th_pix_grid:
        limit_kwargs["th_pix_grid"] = _floats(args.th_pix_grid)
    if args.edge_enhance_search:
        limit_kwargs["enhancement_options"] = (False, True)
    objective = SearchObjective(mode, args.bound, args.cost_kind)
    result = search(objective, cache, profile, setting, SearchLimits(**limit_kwargs))
    save_instance(instance_from_result(result), args.out)
    summary = (f"cost={result.cost:.4f} accuracy={result.accuracy:.4f} "
               f"evaluated={result.n_evaluated} pruned={result.n_pruned}")
    if result.feasible:
        print(f"feasible instance written to {args.out}: {summary}")
        return 0
    constraint = (f"accuracy >= {objective.threshold}" if mode == "min_cost"
                  else f"cost <= {objective.threshold}")
    print(f"infeasible: no configuration satisfies {constraint}; "
          f"best-violating instance written to {args.out}: {summary}")
    return 2


def cmd_simulate(args: argparse.Namespace) -> int:
    _require(args, "instance", "manifest", "costs", "report")
    instance = load_instance(args.instance)
    manifest = load_manifest(args.manifest)
    profile = load_cost_profile(args.costs)
    report = simulate(instance, manifest, profile, threads=_threads(args))
    Path(args.report).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"simulated {report.image_count} images under {report.setting}: "
          f"mIoU={report.miou:.4f} workload={report.expected_workload:.4f} "
          f"exit_rates={[round(r, 4) for r in report.exit_rates]}")
    print(f"report written to {args.report}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file supplying defaults for any flag")
    p.add_argument("--threads", type=int, default=None,
                   help="worker thread cap (default: all cores); results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="mess",
        description="Post-training tuning for multi-exit segmentation networks.",
    )
    subs = parser.add_subparsers(dest="command")
    by_name: dict[str, argparse.ArgumentParser] = {}

    p = subs.add_parser("profile", help="place candidate exit points on a cost profile")
    p.add_argument("--costs")
    p.add_argument("--num-exits", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_profile)
    by_name["profile"] = p

    p = subs.add_parser("gen-fixtures", help="write deterministic synthetic fixtures")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--images", type=int)
    p.add_argument("--dim", default="32x32")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--exits", type=int, default=3)
    p.add_argument("--ladder", default="0.6,0.8,0.95")
    p.add_argument("--correlation", type=float, default=0.9)
    p.add_argument("--archs-per-point", type=int, default=1)
    p.add_argument("--ignore-fraction", type=float, default=0.02)
    p.add_argument("--total-workload", type=float, default=60.0)
    p.add_argument("--prefix", default="img")
    p.set_defaults(func=cmd_gen_fixtures)
    by_name["gen-fixtures"] = p

    p = subs.add_parser("confidence", help="per-image confidence of one prediction")
    p.add_argument("--pred")
    p.add_argument("--estimator", default="top1", choices=["top1", "entropy"])
    p.add_argument("--th-pix", type=float)
    p.add_argument("--edge-enhance", action="store_true")
    p.add_argument("--output-stride", type=int, default=1)
    p.add_argument("--out", help="write the (optionally enhanced) map as .mt")
    p.set_defaults(func=cmd_confidence)
    by_name["confidence"] = p

    p = subs.add_parser("eval-loss", help="evaluate a training loss over a manifest")
    p.add_argument("--loss", choices=["pretrain", "pfd"])
    p.add_argument("--manifest")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--batch-index", type=int, default=1)
    p.add_argument("--round-robin", action="store_true")
    p.add_argument("--reverse-kl", action="store_true")
    p.add_argument("--exclude-final", action="store_true")
    p.add_argument("--arch", type=int, default=None)
    p.set_defaults(func=cmd_eval_loss)
    by_name["eval-loss"] = p

    p = subs.add_parser("search", help="search for a cost/accuracy-optimal instance")
    p.add_argument("--setting")
    p.add_argument("--objective")
    p.add_argument("--bound", type=float)
    p.add_argument("--cache")
    p.add_argument("--manifest", help="used to build the cache when it does not exist")
    p.add_argument("--costs")
    p.add_argument("--out")
    p.add_argument("--cost-kind", default="workload", choices=["workload", "latency"])
    p.add_argument("--estimator", default="top1", choices=["top1", "entropy"])
    p.add_argument("--max-exits", type=int, default=4)
    p.add_argument("--th-img-grid", help="comma-separated image-threshold grid")
    p.add_argument("--th-pix-grid", help="comma-separated pixel-threshold grid")
    p.add_argument("--edge-enhance-search", action="store_true",
                   help="also search configurations with edge enhancement on")
    p.set_defaults(func=cmd_search)
    by_name["search"] = p

    p = subs.add_parser("simulate", help="replay an instance over a manifest")
    p.add_argument("--instance")
    p.add_argument("--manifest")
    p.add_argument("--costs")
    p.add_argument("--report")
    p.set_defaults(func=cmd_simulate)
    by_name["simulate"] = p

    for sub in by_name.values():
        _add_common(sub)
    return parser, by_name


def _apply_config(argv: Sequence[str],
                  by_name: dict[str, argparse.ArgumentParser]) -> None:
    command = next((a for a in argv if not a.startswith("-")), None)
    if command not in by_name:
        return
    config_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif a.startswith("--config="):
            config_path = a.split("=", 1)[1]
    if not config_path:
        return
    with open(config_path, "rb") as f:
        doc = tomllib.load(f)
    table = {**doc.get("global", {}), **doc.get(command.replace("-", "_"), {}),
             **doc.get(command, {})}
    sub = by_name[command]
    known = {action.dest for action in sub._actions}
    defaults = {}
    for key, value in table.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise CliUsageError(f"unknown config key {key!r} for command {command!r}")
        defaults[dest] = value
    sub.set_defaults(**defaults)


def run(argv: Sequence[str]) -> int:
    parser, by_name = build_parser()
    try:
        _apply_config(argv, by_name)
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return 0 if not e.code else 1
        if not getattr(args, "func", None):
            parser.print_help()
            return 1
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except CliUsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MessError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
