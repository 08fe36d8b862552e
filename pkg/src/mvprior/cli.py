"""Command line interface.

Exit codes: 0 success, 2 validation failure, 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mvprior import __version__
from mvprior.config import CONFIG_ENV, PipelineConfig, load_config
from mvprior.errors import MvPriorError, SceneLoadError, StageError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3

# flag name -> (config field, type)
CONFIG_FLAGS = {
    "--ransac-iterations": ("ransac_iterations", int),
    "--ransac-threshold": ("ransac_threshold", float),
    "--seed": ("seed", int),
    "--fourier-freqs": ("fourier_freqs", int),
    "--gamma": ("gamma", float),
    "--gamma-threshold": ("gamma_threshold", int),
    "--max-extent": ("max_extent", float),
    "--bucket": ("bucket", str),
    "--max-rotation-drift": ("max_rotation_drift", float),
}


def _add_config_flags(p):
    g = p.add_argument_group("pipeline config")
    g.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    for flag, (name, typ) in CONFIG_FLAGS.items():
        g.add_argument(flag, dest=name, type=typ, default=None)
    g.add_argument("--no-align", dest="align", action="store_false", default=None, help="treat monocular depth as metric (r=1, s=0)")


def _config(args, manifest_doc=None) -> PipelineConfig:
    cfg = load_config(args.config)
    if manifest_doc and isinstance(manifest_doc.get("config"), dict):
        cfg = cfg.updated(**manifest_doc["config"])
    overrides = {name: getattr(args, name) for name, _ in CONFIG_FLAGS.values() if getattr(args, name, None) is not None}
    if getattr(args, "align", None) is not None:
        overrides["align"] = args.align
    return cfg.updated(**overrides)


def _scene_and_config(args, manifest=None):
    from mvprior.io import load_manifest, load_scene

    manifest = manifest or args.manifest
    doc = load_manifest(manifest)
    cfg = _config(args, doc)
    scene = load_scene(manifest, cfg.max_rotation_drift)
    return scene, cfg, doc.get("scene_id", Path(manifest).parent.name)


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# --- subcommands ----------------------------------------------------------


def cmd_align(args):
    from mvprior.depth_align import RansacParams, align_depth, apply_alignment
    from mvprior.io import read_depth, read_samples, write_depth

    cfg = _config(args)
    mono = read_depth(args.depth)
    res = align_depth(mono, read_samples(args.samples), RansacParams(cfg.ransac_iterations, cfg.ransac_threshold, cfg.seed))
    if args.out:
        write_depth(args.out, apply_alignment(mono, res))
    _emit(res.to_dict())


def cmd_normalize(args):
    from mvprior.camera import max_camera_distance, normalize_scene
    from mvprior.io import save_scene

    scene, cfg, scene_id = _scene_and_config(args)
    out, scale = normalize_scene(scene, cfg.max_extent)
    save_scene(args.out, out, scene_id)
    _emit({"scale": scale, "max_distance": max_camera_distance([v.pose for v in out.views]), "manifest": str(Path(args.out) / "manifest.json")})


def cmd_warp(args):
    from mvprior.io import save_warp
    from mvprior.pipeline import align_scene
    from mvprior.warp import compute_ccm, scene_median_depth, warp_view

    scene, cfg, _ = _scene_and_config(args)
    scene, _ = align_scene(scene, cfg)
    src = scene.views[args.src]
    if src.depth is None:
        raise ValidationError(f"view {args.src} has no depth to warp with")
    if src.image is None:
        raise ValidationError(f"view {args.src} has no image")
    refs = [scene.views[i].depth for i in scene.reference_indices if scene.views[i].depth is not None]
    median = scene_median_depth(refs or [src.depth])
    ccm = compute_ccm(src.depth, src.intrinsics, src.pose, median)
    result = warp_view(src.image, ccm, src.depth, scene.cameras[args.src], scene.cameras[args.dst], src_index=args.src)
    save_warp(args.out, result, preview=not args.no_preview)
    _emit({"out": str(args.out), "coverage": result.coverage})


def cmd_stack(args):
    from mvprior.io import write_arrays, write_json
    from mvprior.pipeline import BUNDLE_NAME, SIDECAR_NAME, build_priors, sidecar, stack_arrays

    scene, cfg, scene_id = _scene_and_config(args)
    p = build_priors(scene, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_arrays(out / BUNDLE_NAME, stack_arrays(p["stacks"]))
    write_json(out / SIDECAR_NAME, sidecar(scene_id, p["bucket"], cfg, p["scale"], p["coeffs"], p["stacks"], p["median_depth"]))
    _emit({"bundle": str(out / BUNDLE_NAME), "views": [s.view_index for s in p["stacks"]]})


def cmd_eval(args):
    from mvprior import metrics
    from mvprior.io import load_warp, read_image

    if args.manifest:
        return _eval_bundle(args)
    if not (args.gt and (args.pred or args.warp)):
        raise ValidationError("eval needs --gt with --pred or --warp, or --manifest with --bundle")
    gt = read_image(args.gt)
    if args.warp:
        w = load_warp(args.warp)
        pred, mask = w.rgb, w.mask
    else:
        pred = read_image(args.pred)
        mask = read_image(args.mask)[..., 0] > 0.5 if args.mask else None
    from mvprior.pipeline import ViewMetrics

    m = ViewMetrics(0, Path(args.gt).stem, coverage=metrics.coverage(mask) if mask is not None else 1.0)
    m.psnr = metrics.psnr(pred, gt, mask)
    m.ssim = metrics.ssim(pred, gt, mask)
    _emit(m.to_dict())


def _eval_bundle(args):
    from mvprior import metrics
    from mvprior.conditioning import resize_for_bucket
    from mvprior.config import parse_bucket
    from mvprior.io import read_arrays
    from mvprior.pipeline import BUNDLE_NAME, SIDECAR_NAME, ViewMetrics

    scene, _, _ = _scene_and_config(args)
    bundle_dir = Path(args.bundle)
    arrays = read_arrays(bundle_dir / BUNDLE_NAME)
    side = json.loads((bundle_dir / SIDECAR_NAME).read_text())
    bucket = parse_bucket(side["bucket"])
    rows = []
    for entry in side["views"]:
        if entry["role"] != "target":
            continue
        idx = entry["view"]
        full = arrays[entry["full_res"]].astype(np.float64)
        mask = full[..., 9] > 0.5
        m = ViewMetrics(idx, scene.views[idx].name, coverage=metrics.coverage(mask))
        gt = scene.views[idx].image
        if gt is not None and mask.any():
            gt, _, _ = resize_for_bucket(gt, None, scene.views[idx].intrinsics, bucket)
            m.psnr = metrics.psnr(full[..., :3], gt, mask)
            m.ssim = metrics.ssim(full[..., :3], gt, mask)
        rows.append(m)
    if args.order == "sorted":
        refs = [scene.views[i].pose.center for i in scene.reference_indices]
        rows.sort(key=lambda m: (min(float(np.linalg.norm(scene.views[m.view].pose.center - r)) for r in refs), m.view))
    _emit({"order": args.order, "views": [m.to_dict() for m in rows]})


def cmd_attention_demo(args):
    from mvprior.attention import dilution_experiment

    gammas = args.gammas
    table = {}
    for seed in range(args.seed, args.seed + args.seeds):
        for row in dilution_experiment(args.n_ref, args.n_targets, args.dim, seed, gammas):
            table.setdefault((row["n_target"], row["gamma"]), []).append(row["reference_mass"])
    rows = [
        {"n_ref": args.n_ref, "n_target": m, "gamma": g, "reference_mass": float(np.mean(v)), "seeds": len(v)}
        for (m, g), v in sorted(table.items())
    ]
    fields = ["n_ref", "n_target", "gamma", "reference_mass", "seeds"]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    if args.plot:
        from mvprior.plotting import plot_dilution

        plot_dilution(rows, args.plot)


def cmd_pipeline(args):
    from mvprior.pipeline import run_pipeline

    path = Path(args.manifest)
    if path.is_dir() and (path / "manifest.json").is_file():
        path = path / "manifest.json"
    if not path.is_dir():
        scene, cfg, scene_id = _scene_and_config(args, path)
        bundle, report = run_pipeline(scene, cfg, args.out, scene_id, figures=args.figures, order=args.order)
        _emit({"bundle": str(bundle), "report": report.to_dict()})
        return
    # batch mode: one output directory per scene
    manifests = sorted(path.glob("*/manifest.json"))
    if not manifests:
        raise SceneLoadError(f"no */manifest.json under {path}")
    results = []
    for m in manifests:
        scene, cfg, scene_id = _scene_and_config(args, m)
        bundle, report = run_pipeline(scene, cfg, Path(args.out) / m.parent.name, scene_id, figures=args.figures, order=args.order)
        results.append({"bundle": str(bundle), "report": report.to_dict()})
    _emit(results)


def build_parser():
    parser = argparse.ArgumentParser(prog="mvprior", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="align a monocular depth map to sparse metric samples")
    p.add_argument("--depth", required=True, help="monocular depth (.pfm or .npy)")
    p.add_argument("--samples", required=True, help="CSV with row,col,depth")
    p.add_argument("--out", help="write the aligned depth map here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("normalize", help="rescale a scene so camera centers span at most --max-extent")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output scene directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("warp", help="forward-warp one view into another")
    p.add_argument("manifest")
    p.add_argument("--src", type=int, required=True)
    p.add_argument("--dst", type=int, required=True)
    p.add_argument("--out", required=True, help="output .npz")
    p.add_argument("--no-preview", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("stack", help="build the conditioning bundle without evaluation")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("eval", help="masked PSNR/SSIM")
    p.add_argument("--gt")
    p.add_argument("--pred")
    p.add_argument("--mask", help="PNG, white = evaluated")
    p.add_argument("--warp", help="warp .npz; uses its rgb and coverage")
    p.add_argument("--manifest", help="scene manifest with target images")
    p.add_argument("--bundle", help="directory holding bundle.npz and bundle.json")
    p.add_argument("--order", choices=("manifest", "sorted"), default="manifest")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attention-demo", help="reference attention mass vs target count")
    p.add_argument("--n-ref", type=int, default=3)
    p.add_argument("--n-targets", type=int, nargs="+", default=[0, 5, 10, 24, 50, 100, 155])
    p.add_argument("--gammas", type=float, nargs="+", default=[1.0, 1.2])
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=100, help="number of consecutive seeds to average")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--plot", help="PNG path for the dilution figure")
    p.set_defaults(func=cmd_attention_demo)

    p = sub.add_parser("pipeline", help="align, normalize, warp, fuse, stack and evaluate a scene")
    p.add_argument("manifest", help="manifest.json, or a directory of scene directories")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true", help="also render stacks.png (imports matplotlib)")
    p.add_argument("--order", choices=("manifest", "sorted"), default="manifest")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    # the pipeline raises its own logger to INFO for the JSON-lines file
    for h in logging.getLogger().handlers:
        h.setLevel(level)
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValidationError, SceneLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MvPriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
