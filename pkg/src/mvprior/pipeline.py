"""End-to-end prior construction for one scene.

align -> resize -> normalize -> ccm/warp/fuse/stack -> eval, with every
output written atomically into the destination directory.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from mvprior import metrics
from mvprior.camera import Scene, normalize_scene
from mvprior.conditioning import build_stacks, resize_scene, select_bucket
from mvprior.config import PipelineConfig, parse_bucket
from mvprior.depth_align import AlignmentResult, RansacParams, align_depth, apply_alignment
from mvprior.errors import InsufficientDataError, MvPriorError, PreconditionError, StageError
from mvprior.io import write_arrays, write_json
from mvprior.warp import scene_median_depth

log = logging.getLogger("mvprior.pipeline")

BUNDLE_NAME = "bundle.npz"
SIDECAR_NAME = "bundle.json"
REPORT_NAME = "report.json"
LOG_NAME = "logs.jsonl"


class JsonLinesFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname, "logger": record.name, "msg": record.getMessage()}
        entry.update(getattr(record, "fields", {}))
        return json.dumps(entry, sort_keys=True)


@contextmanager
def stage(name, views=()):
    """Time a stage and turn library errors into StageError."""
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except MvPriorError as exc:
        log.error("stage failed", extra={"fields": {"stage": name, "error": str(exc), "error_type": type(exc).__name__}})
        raise StageError(name, str(exc), views) from exc
    log.info("stage done", extra={"fields": {"stage": name, "seconds": round(time.perf_counter() - t0, 6)}})


@dataclass
class ViewMetrics:
    view: int
    name: str
    psnr: float = None
    ssim: float = None
    coverage: float = 0.0

    def to_dict(self):
        p = self.psnr
        if p is not None and math.isinf(p):
            p = "inf"
        return {"view": self.view, "name": self.name, "psnr": p, "ssim": self.ssim, "coverage": self.coverage}


@dataclass
class MetricReport:
    scene_id: str
    bucket: str
    scale: float
    views: list = field(default_factory=list)
    alignment: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scene_id": self.scene_id,
            "bucket": self.bucket,
            "scale": self.scale,
            "views": [v.to_dict() for v in self.views],
            "alignment": {str(k): v for k, v in sorted(self.alignment.items())},
        }


def identity_alignment(n_samples=0) -> AlignmentResult:
    return AlignmentResult(1.0, 0.0, n_samples, False, np.ones(n_samples, dtype=bool), 0.0, False, n_samples)


def align_scene(scene: Scene, config: PipelineConfig):
    """Metric depth for every reference view; returns new scene + coefficients."""
    coeffs = {}
    for i in scene.reference_indices:
        v = scene.views[i]
        if v.mono_depth is None:
            if v.depth is None:
                raise PreconditionError(f"reference view {i} has neither metric nor monocular depth")
            continue
        if config.align:
            if v.samples is None:
                raise InsufficientDataError(f"reference view {i} has no sparse depth samples")
            res = align_depth(
                v.mono_depth,
                v.samples,
                RansacParams(config.ransac_iterations, config.ransac_threshold, config.seed),
            )
        else:
            res = identity_alignment(len(v.samples) if v.samples is not None else 0)
        coeffs[i] = res
        scene = scene.replace_view(i, replace(v, depth=apply_alignment(v.mono_depth, res), mono_depth=None))
    return scene, coeffs


def evaluate_targets(scene: Scene, warps, order="manifest"):
    """Masked PSNR/SSIM of fused warps against target images, if present."""
    rows = []
    for idx in scene.target_indices:
        w = warps[idx]
        m = ViewMetrics(idx, scene.views[idx].name, coverage=metrics.coverage(w.mask))
        gt = scene.views[idx].image
        if gt is not None and w.mask.any():
            m.psnr = metrics.psnr(w.rgb, gt, w.mask)
            m.ssim = metrics.ssim(w.rgb, gt, w.mask)
        rows.append(m)
    if order == "sorted":
        refs = [scene.views[i].pose.center for i in scene.reference_indices]

        def dist(m):
            c = scene.views[m.view].pose.center
            return (min(float(np.linalg.norm(c - r)) for r in refs), m.view)

        rows.sort(key=dist)
    return rows


def stack_arrays(stacks):
    arrays = {}
    for st in stacks:
        arrays[f"view{st.view_index:03d}_full_res"] = st.full_res.astype(np.float32)
        arrays[f"view{st.view_index:03d}_eighth_res"] = st.eighth_res.astype(np.float32)
    return arrays


def sidecar(scene_id, bucket, config, scale, coeffs, stacks, median_depth):
    return {
        "scene_id": scene_id,
        "bucket": str(bucket),
        "fourier_freqs": config.fourier_freqs,
        "scale": scale,
        "median_depth": median_depth,
        "full_res_channels": ["rgb_r", "rgb_g", "rgb_b", "plucker_m0", "plucker_m1", "plucker_m2", "plucker_d0", "plucker_d1", "plucker_d2", "mask"],
        "eighth_res_channels": 3 + 6 * config.fourier_freqs,
        "views": [
            {
                "view": st.view_index,
                "role": st.role,
                "full_res": f"view{st.view_index:03d}_full_res",
                "eighth_res": f"view{st.view_index:03d}_eighth_res",
                "alignment": coeffs[st.view_index].to_dict() if st.view_index in coeffs else None,
            }
            for st in stacks
        ],
        "config": config.to_dict(),
    }


def build_priors(scene: Scene, config: PipelineConfig):
    """All in-memory stages; returns a dict of intermediate products."""
    with stage("align", scene.reference_indices):
        scene, coeffs = align_scene(scene, config)
    with stage("resize"):
        if config.bucket:
            bucket = parse_bucket(config.bucket)
        else:
            bucket = select_bucket(*scene.views[scene.reference_indices[0]].intrinsics.shape)
        scene = resize_scene(scene, bucket)
    with stage("normalize"):
        scene, scale = normalize_scene(scene, config.max_extent)
    with stage("stack", scene.reference_indices + scene.target_indices):
        median = scene_median_depth([scene.views[i].depth for i in scene.reference_indices])
        stacks, warps = build_stacks(scene, L=config.fourier_freqs, median_depth=median, return_warps=True)
    return {
        "scene": scene,
        "coeffs": coeffs,
        "bucket": bucket,
        "scale": scale,
        "median_depth": median,
        "stacks": stacks,
        "warps": warps,
    }


def run_pipeline(scene: Scene, config: PipelineConfig, out_dir, scene_id="scene", figures=False, order="manifest"):
    """Run every stage and write bundle, sidecar, report and logs to ``out_dir``.

    ``figures=True`` adds a ``stacks.png`` overview (imports matplotlib).
    Returns ``(bundle_path, MetricReport)``. On failure only the log
    file is kept in ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir))
    handler = logging.FileHandler(tmp / LOG_NAME, mode="w")
    handler.setFormatter(JsonLinesFormatter())
    log.addHandler(handler)
    prev_level = log.level
    log.setLevel(logging.INFO)
    try:
        t0 = time.perf_counter()
        products = build_priors(scene, config)
        with stage("eval"):
            rows = evaluate_targets(products["scene"], products["warps"], order)
        report = MetricReport(
            scene_id,
            str(products["bucket"]),
            products["scale"],
            rows,
            {k: v.to_dict() for k, v in products["coeffs"].items()},
        )
        with stage("write"):
            write_arrays(tmp / BUNDLE_NAME, stack_arrays(products["stacks"]))
            write_json(
                tmp / SIDECAR_NAME,
                sidecar(scene_id, products["bucket"], config, products["scale"], products["coeffs"], products["stacks"], products["median_depth"]),
            )
            write_json(tmp / REPORT_NAME, report.to_dict())
        if figures:
            with stage("figures"):
                from mvprior import plotting

                plotting.plot_stacks(products["stacks"], tmp / "stacks.png", title=scene_id)
        log.info("pipeline done", extra={"fields": {"stage": "pipeline", "seconds": round(time.perf_counter() - t0, 6)}})
        handler.close()
        for f in sorted(tmp.iterdir()):
            os.replace(f, out_dir / f.name)
        return out_dir / BUNDLE_NAME, report
    finally:
        log.removeHandler(handler)
        handler.close()
        log.setLevel(prev_level)
        if (tmp / LOG_NAME).exists():
            os.replace(tmp / LOG_NAME, out_dir / LOG_NAME)
        shutil.rmtree(tmp, ignore_errors=True)
