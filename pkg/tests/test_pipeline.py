import json
import math
from dataclasses import replace
from importlib.resources import files

import jsonschema
import numpy as np
import pytest

from mvprior.camera import Scene
from mvprior.config import PipelineConfig
from mvprior.depth_align import DepthMap, SparseDepthSamples
from mvprior.errors import InsufficientDataError, PreconditionError, StageError
from mvprior.pipeline import build_priors, run_pipeline
from mvprior.synthetic import plane_scene, room_scene

SCHEMA = json.loads((files("mvprior") / "schemas" / "report.schema.json").read_text())


@pytest.fixture(scope="module")
def small_room():
    return room_scene(size=64, n_targets=2)


def test_identity_target_is_exact(small_room, tmp_path):
    _, report = run_pipeline(small_room, PipelineConfig(), tmp_path, "room")
    ident = report.views[0]
    assert ident.name == "tgt_identity"
    assert ident.psnr == math.inf and ident.ssim == 1.0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["views"][0]["psnr"] == "inf"
    jsonschema.validate(doc, SCHEMA)
    # the sideways target is a real prediction, not a copy
    assert 10 < report.views[1].psnr < math.inf and 0 < report.views[1].coverage < 1


def test_identity_coverage_is_valid_depth_fraction(small_room):
    products = build_priors(small_room, PipelineConfig())
    depth = products["scene"].views[0].depth
    assert np.array_equal(products["warps"][1].mask, depth.mask)


def test_plane_scene_reproduces_shift(tmp_path):
    # bucket-sized so no resampling touches the images
    scene = plane_scene(size=512, shift_px=3)
    _, report = run_pipeline(scene, PipelineConfig(), tmp_path, "plane")
    (m,) = report.views
    assert m.psnr == math.inf
    assert m.coverage == pytest.approx(509 / 512)


def test_missing_samples_fail_align_stage(small_room, tmp_path):
    ref = small_room.views[0]
    scene = small_room.replace_view(0, replace(ref, samples=None))
    with pytest.raises(StageError) as info:
        run_pipeline(scene, PipelineConfig(), tmp_path)
    assert info.value.stage == "align" and info.value.views == (0,)
    assert isinstance(info.value.__cause__, InsufficientDataError)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["logs.jsonl"]
    entries = [json.loads(line) for line in (tmp_path / "logs.jsonl").read_text().splitlines()]
    assert entries[-1]["stage"] == "align" and entries[-1]["error_type"] == "InsufficientDataError"


def test_no_depth_fails_with_precondition(small_room, tmp_path):
    ref = small_room.views[0]
    scene = small_room.replace_view(0, replace(ref, mono_depth=None, depth=None))
    with pytest.raises(StageError) as info:
        run_pipeline(scene, PipelineConfig(), tmp_path)
    assert isinstance(info.value.__cause__, PreconditionError)


def test_alignment_on_exact_samples_matches_metric_input(small_room):
    # the same metric depth handed in directly vs. recovered from mono + exact samples
    ref = small_room.views[0]
    mono = ref.mono_depth
    depth = np.where(mono.mask, mono.values * 1.7 + 0.3, 0.0)
    rng = np.random.default_rng(0)
    rows, cols = np.unravel_index(rng.choice(np.flatnonzero(mono.mask), 300, replace=False), depth.shape)
    samples = SparseDepthSamples(rows, cols, depth[rows, cols])
    as_mono = small_room.replace_view(0, replace(ref, samples=samples))
    as_metric = small_room.replace_view(0, replace(ref, samples=None, mono_depth=None, depth=DepthMap(depth)))
    a = build_priors(as_mono, PipelineConfig())
    b = build_priors(as_metric, PipelineConfig(align=False))
    res = a["coeffs"][0]
    assert res.r == pytest.approx(1.7, abs=1e-9) and res.s == pytest.approx(0.3, abs=1e-9)
    assert b["coeffs"] == {}
    for sa, sb in zip(a["stacks"], b["stacks"]):
        assert np.array_equal(sa.mask, sb.mask)
        assert np.abs(sa.full_res - sb.full_res).max() <= 1e-6
        assert np.abs(sa.eighth_res - sb.eighth_res).max() <= 1e-6


def test_outputs_are_byte_identical(small_room, tmp_path):
    for name in ("a", "b"):
        run_pipeline(small_room, PipelineConfig(seed=5), tmp_path / name, "room")
    for f in ("bundle.npz", "bundle.json", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_outputs_and_logs(small_room, tmp_path):
    bundle, _ = run_pipeline(small_room, PipelineConfig(fourier_freqs=2), tmp_path, "room", figures=True)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["bundle.json", "bundle.npz", "logs.jsonl", "report.json", "stacks.png"]
    arrays = np.load(bundle)
    assert sorted(arrays.files) == [f"view{i:03d}_{r}" for i in range(3) for r in ("eighth_res", "full_res")]
    assert arrays["view000_full_res"].shape == (512, 512, 10) and arrays["view000_full_res"].dtype == np.float32
    assert arrays["view001_eighth_res"].shape == (64, 64, 15)
    side = json.loads((tmp_path / "bundle.json").read_text())
    assert side["bucket"] == "512x512" and [v["role"] for v in side["views"]] == ["reference", "target", "target"]
    assert side["views"][1]["alignment"] is None and side["views"][0]["alignment"]["sample_count"] == 300
    entries = [json.loads(line) for line in (tmp_path / "logs.jsonl").read_text().splitlines()]
    stages = [e["stage"] for e in entries if "seconds" in e]
    assert stages == ["align", "resize", "normalize", "stack", "eval", "write", "figures", "pipeline"]
    assert all(e["seconds"] >= 0 for e in entries if "seconds" in e)


def test_sorted_order_puts_nearest_target_first(tmp_path):
    scene = room_scene(size=64, n_targets=3)
    flipped = Scene([scene.views[0], scene.views[3], scene.views[2], scene.views[1]], [0], [1, 2, 3])
    _, report = run_pipeline(flipped, PipelineConfig(), tmp_path, order="sorted")
    assert [m.name for m in report.views] == ["tgt_identity", "tgt1", "tgt2"]
