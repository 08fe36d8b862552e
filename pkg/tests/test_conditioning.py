import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvprior.camera import Intrinsics, Pose, Scene, View, project
from mvprior.conditioning import (
    BUCKETS,
    REFERENCE,
    TARGET,
    PriorStack,
    ResolutionBucket,
    build_stacks,
    downsample_ccm,
    resize_for_bucket,
    resize_scene,
    select_bucket,
)
from mvprior.depth_align import DepthMap
from mvprior.errors import PreconditionError, ValidationError
from mvprior.warp import CanonicalCoordinateMap


def test_bucket_examples():
    assert select_bucket(640, 1536) == ResolutionBucket(320, 768)
    assert select_bucket(1000, 1000) == ResolutionBucket(512, 512)
    assert select_bucket(768, 320) == ResolutionBucket(768, 320)
    assert str(select_bucket(480, 640)) == "384x512"


def test_bucket_membership_enforced():
    with pytest.raises(ValidationError):
        ResolutionBucket(500, 500)
    with pytest.raises(ValidationError):
        select_bucket(0, 10)


def test_all_buckets_divisible():
    assert all(h % 64 == 0 and w % 64 == 0 for h, w in BUCKETS)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20000), st.integers(1, 20000))
def test_bucket_total_and_idempotent(h, w):
    b = select_bucket(h, w)
    assert b.shape in BUCKETS
    assert select_bucket(*b.shape) == b
    assert select_bucket(h, w) == b


def test_bucket_extreme_aspects_clamp_to_table_ends():
    assert select_bucket(1, 10000).shape == (320, 768)
    assert select_bucket(10000, 1).shape == (768, 320)


def test_resize_identity():
    K = Intrinsics(400, 400, 256, 256, 512, 512)
    img = np.random.default_rng(0).random((512, 512, 3))
    out_img, out_d, K2 = resize_for_bucket(img, DepthMap(np.ones((512, 512))), K, ResolutionBucket(512, 512))
    assert out_img is img and K2 is K


def test_resize_downscale_halves_focal():
    K = Intrinsics(800, 700, 512, 512, 1024, 1024)
    _, _, K2 = resize_for_bucket(None, None, K, ResolutionBucket(512, 512))
    assert (K2.fx, K2.fy, K2.cx, K2.cy, K2.width, K2.height) == (400, 350, 256, 256, 512, 512)


def test_resize_crop_shifts_principal_point():
    # 480x900 scales by 0.8 to 384x720, then 40 px come off each side
    K = Intrinsics(500, 500, 450, 240, 900, 480)
    _, _, K2 = resize_for_bucket(None, None, K, ResolutionBucket(384, 640))
    assert K2.shape == (384, 640)
    assert K2.fx == pytest.approx(400) and K2.fy == pytest.approx(400)
    assert K2.cx == pytest.approx(450 * 0.8 - 40) and K2.cy == pytest.approx(240 * 0.8)


def test_resize_depth_values_unchanged():
    rng = np.random.default_rng(1)
    depth = DepthMap(rng.choice([1.5, 2.5, 7.0], size=(100, 150)))
    K = Intrinsics(100, 100, 75, 50, 150, 100)
    _, d2, _ = resize_for_bucket(None, depth, K, select_bucket(100, 150))
    assert set(np.unique(d2.values)) <= {1.5, 2.5, 7.0}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_resize_preserves_reprojection(seed):
    rng = np.random.default_rng(seed)
    h, w = (int(x) for x in rng.integers(100, 1500, size=2))
    K = Intrinsics(rng.uniform(50, 2000), rng.uniform(50, 2000), rng.uniform(0, w), rng.uniform(0, h), w, h)
    bucket = select_bucket(h, w)
    s = max(bucket.height / h, bucket.width / w)
    new_w, new_h = max(bucket.width, round(w * s)), max(bucket.height, round(h * s))
    dx, dy = (new_w - bucket.width) // 2, (new_h - bucket.height) // 2
    cx, cy = K.cx * new_w / w - dx, K.cy * new_h / h - dy
    if not (0 <= cx < bucket.width and 0 <= cy < bucket.height):
        with pytest.raises(ValidationError, match="principal point"):
            resize_for_bucket(None, None, K, bucket)
        return
    _, _, K2 = resize_for_bucket(None, None, K, bucket)
    X = rng.normal(size=(50, 3)) + [0, 0, 5]
    p1, _, _ = project(X, K)
    p2, _, _ = project(X, K2)
    expect = p1 * [new_w / w, new_h / h] - [dx, dy]
    assert np.abs(p2 - expect).max() <= 0.5


def test_resize_image_content():
    # a 2x downscale of a smooth ramp stays a ramp
    y, x = np.mgrid[0:256, 0:256] / 255.0
    img = np.stack([x, y, 0.5 * np.ones_like(x)], axis=-1)
    K = Intrinsics(200, 200, 128, 128, 256, 256)
    K_big = Intrinsics(400, 400, 256, 256, 512, 512)
    assert select_bucket(256, 256).shape == (512, 512)
    big_img, _, K2 = resize_for_bucket(img, None, K, ResolutionBucket(512, 512))
    assert K2 == K_big
    assert big_img.shape == (512, 512, 3)
    assert np.abs(big_img[::2, ::2, 0] - img[..., 0]).max() < 0.01


def test_downsample_ccm_samples_centers():
    coords = np.arange(16 * 16 * 3, dtype=float).reshape(16, 16, 3)
    ccm = downsample_ccm(CanonicalCoordinateMap(coords, np.ones((16, 16), bool)))
    assert ccm.shape == (2, 2)
    assert np.array_equal(ccm.coords[1, 0], coords[12, 4])
    with pytest.raises(ValidationError):
        downsample_ccm(CanonicalCoordinateMap(np.zeros((12, 16, 3)), np.ones((12, 16), bool)))


def _scene(size=64, identity_target=True):
    rng = np.random.default_rng(4)
    K = Intrinsics(size, size, size / 2, size / 2, size, size)
    depth = DepthMap(np.where(rng.random((size, size)) > 0.1, rng.uniform(2, 4, (size, size)), 0.0))
    ref = View(K, Pose.identity(), image=rng.random((size, size, 3)), depth=depth)
    tgt_pose = Pose.identity() if identity_target else Pose(np.eye(3), [-0.2, 0, 0])
    return Scene([ref, View(K, tgt_pose)], [0], [1])


def test_build_stacks_one_reference_one_target():
    scene = _scene(identity_target=False)
    stacks, warps = build_stacks(scene, return_warps=True)
    assert [s.role for s in stacks] == [REFERENCE, TARGET]
    ref, tgt = stacks
    assert ref.mask.all()
    assert np.array_equal(tgt.mask, warps[1].mask)
    assert not tgt.mask.all()
    assert ref.full_res.shape == (64, 64, 10)
    assert ref.eighth_res.shape == (8, 8, 27)
    assert np.all(tgt.rgb[~tgt.mask] == 0)


def test_build_stacks_channel_count_follows_L():
    for L in (0, 2, 4):
        st_ = build_stacks(_scene(), L=L)
        assert all(s.eighth_res.shape[-1] == 3 + 6 * L for s in st_)


def test_identity_target_copies_reference():
    scene = _scene()
    ref, tgt = build_stacks(scene)
    d = scene.views[0].depth
    assert np.array_equal(tgt.mask, d.mask)
    assert np.array_equal(tgt.rgb[tgt.mask], ref.rgb[tgt.mask])
    assert np.array_equal(tgt.plucker, ref.plucker)


def test_aligned_depth_override_and_errors():
    scene = _scene()
    no_depth = scene.replace_view(0, View(scene.views[0].intrinsics, Pose.identity(), image=scene.views[0].image))
    with pytest.raises(PreconditionError):
        build_stacks(no_depth)
    stacks = build_stacks(no_depth, aligned_depths={0: scene.views[0].depth})
    assert len(stacks) == 2


def test_prior_stack_invariants():
    ok = dict(view_index=0, role=REFERENCE, rgb=np.zeros((8, 8, 3)), plucker=np.zeros((8, 8, 6)), mask=np.ones((8, 8), bool), ccm_embedding=np.zeros((1, 1, 27)))
    PriorStack(**ok)
    for bad in (
        {"mask": np.ones((9, 8), bool)},
        {"role": "other"},
        {"mask": np.zeros((8, 8), bool)},
        {"ccm_embedding": np.zeros((1, 1, 5))},
        {"plucker": np.zeros((8, 8, 5))},
    ):
        with pytest.raises(ValidationError):
            PriorStack(**{**ok, **bad})


def test_resize_scene_drops_samples_only_when_resized():
    scene = _scene(size=64)
    out = resize_scene(scene, ResolutionBucket(512, 512))
    assert out.views[0].intrinsics.shape == (512, 512)
    assert out.views[0].depth.shape == (512, 512)
    assert out.views[1].image is None
