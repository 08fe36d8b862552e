"""Per-view conditioning stacks and multi-scale resolution buckets."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np
from PIL import Image

from mvprior.camera import Intrinsics, Scene, plucker_map
from mvprior.depth_align import DepthMap
from mvprior.errors import PreconditionError, ValidationError
from mvprior.warp import (
    FOURIER_FREQS,
    CanonicalCoordinateMap,
    compute_ccm,
    fourier_embed,
    fuse_priors,
    scene_median_depth,
    warp_view,
)

LATENT_STRIDE = 8

# (height, width), column-major order of the published table
BUCKETS = (
    (320, 768), (320, 704), (320, 640), (320, 576), (320, 512), (384, 640), (384, 576), (384, 512),
    (384, 448), (448, 576), (448, 512), (512, 512), (448, 384), (512, 448), (512, 384), (512, 320),
    (576, 448), (576, 384), (576, 320), (640, 384), (640, 320), (704, 320), (768, 320),
)  # fmt: skip

assert len(BUCKETS) == 23 and len(set(BUCKETS)) == 23
assert all(h % 64 == 0 and w % 64 == 0 for h, w in BUCKETS)

REFERENCE = "reference"
TARGET = "target"


@dataclass(frozen=True)
class ResolutionBucket:
    height: int
    width: int

    def __post_init__(self):
        if (self.height, self.width) not in BUCKETS:
            raise ValidationError(f"{self.height}x{self.width} is not a resolution bucket")

    @property
    def shape(self):
        return (self.height, self.width)

    def __str__(self):
        return f"{self.height}x{self.width}"


def select_bucket(in_height: int, in_width: int) -> ResolutionBucket:
    """Bucket with the closest log aspect ratio; earlier table entries win ties."""
    if in_height <= 0 or in_width <= 0:
        raise ValidationError("image dimensions must be positive")
    target = math.log(in_height / in_width)
    best = min(range(len(BUCKETS)), key=lambda i: (abs(target - math.log(BUCKETS[i][0] / BUCKETS[i][1])), i))
    return ResolutionBucket(*BUCKETS[best])


def _resize_channels(array, size, resample):
    """Resize an (H, W) or (H, W, C) float array channel by channel."""
    w, h = size
    if array.ndim == 2:
        return np.asarray(Image.fromarray(np.ascontiguousarray(array, dtype=np.float32)).resize((w, h), resample), dtype=np.float64)
    return np.stack([_resize_channels(array[..., c], size, resample) for c in range(array.shape[-1])], axis=-1)


def resize_for_bucket(image, depth: Optional[DepthMap], K: Intrinsics, bucket: ResolutionBucket):
    """Scale to cover the bucket, then center-crop.

    The image is resampled bilinearly, depth with nearest neighbour (depth
    values themselves are unchanged). Intrinsics follow the same scale and
    crop, so ``x' = x * s - offset`` in continuous pixel coordinates.
    """
    bh, bw = bucket.shape
    if K.shape == bucket.shape:
        return image, depth, K
    s = max(bh / K.height, bw / K.width)
    new_h = max(bh, int(round(K.height * s)))
    new_w = max(bw, int(round(K.width * s)))
    sx, sy = new_w / K.width, new_h / K.height
    dx, dy = (new_w - bw) // 2, (new_h - bh) // 2
    cx, cy = K.cx * sx - dx, K.cy * sy - dy
    if not (0 <= cx < bw and 0 <= cy < bh):
        raise ValidationError(f"center crop to {bucket} leaves the principal point at ({cx:.1f}, {cy:.1f}), outside the image")
    K_new = Intrinsics(K.fx * sx, K.fy * sy, cx, cy, bw, bh)

    out_img = None
    if image is not None:
        img = _resize_channels(np.asarray(image, dtype=np.float64), (new_w, new_h), Image.BILINEAR)
        out_img = np.clip(img[dy : dy + bh, dx : dx + bw], 0.0, 1.0)
    out_depth = None
    if depth is not None:
        values = np.where(depth.mask, depth.values, 0.0)
        d = _resize_channels(values, (new_w, new_h), Image.NEAREST)[dy : dy + bh, dx : dx + bw]
        out_depth = DepthMap(d)
    return out_img, out_depth, K_new


def downsample_ccm(ccm: CanonicalCoordinateMap, stride: int = LATENT_STRIDE) -> CanonicalCoordinateMap:
    """Point-sample the fine pixel nearest each coarse pixel center (halves round up)."""
    h, w = ccm.shape
    if h % stride or w % stride:
        raise ValidationError(f"{h}x{w} is not divisible by {stride}")
    off = stride // 2
    return CanonicalCoordinateMap(ccm.coords[off::stride, off::stride].copy(), ccm.mask[off::stride, off::stride].copy())


@dataclass(frozen=True)
class PriorStack:
    """Conditioning arrays for one view, channels last.

    ``full_res`` is rgb (3) + plucker (6) + mask (1) at (H, W);
    ``eighth_res`` is the Fourier-embedded CCM at (H/8, W/8).
    """

    view_index: int
    role: str
    rgb: np.ndarray
    plucker: np.ndarray
    mask: np.ndarray
    ccm_embedding: np.ndarray

    def __post_init__(self):
        h, w = self.mask.shape
        if h % LATENT_STRIDE or w % LATENT_STRIDE:
            raise ValidationError(f"stack size {h}x{w} is not divisible by {LATENT_STRIDE}")
        if self.rgb.shape != (h, w, 3) or self.plucker.shape != (h, w, 6):
            raise ValidationError("rgb/plucker shape mismatch")
        eh, ew, c = self.ccm_embedding.shape
        if (eh, ew) != (h // LATENT_STRIDE, w // LATENT_STRIDE) or (c - 3) % 6:
            raise ValidationError("ccm embedding shape mismatch")
        if self.role not in (REFERENCE, TARGET):
            raise ValidationError(f"unknown role {self.role!r}")
        if self.role == REFERENCE and not self.mask.all():
            raise ValidationError("reference masks must be all ones")

    @property
    def full_res(self) -> np.ndarray:
        return np.concatenate([self.rgb, self.plucker, self.mask[..., None].astype(self.rgb.dtype)], axis=-1)

    @property
    def eighth_res(self) -> np.ndarray:
        return self.ccm_embedding


def build_stacks(scene: Scene, aligned_depths: Optional[Mapping[int, DepthMap]] = None, L: int = FOURIER_FREQS, median_depth=None, return_warps=False):
    """Stacks for every reference and target view, in scene index order.

    ``aligned_depths`` overrides each reference view's attached depth.
    Pass ``return_warps=True`` to also get the fused ``WarpResult`` per target.
    """
    depths = {}
    for i in scene.reference_indices:
        d = (aligned_depths or {}).get(i, scene.views[i].depth)
        if d is None:
            raise PreconditionError(f"reference view {i} has no metric depth")
        if scene.views[i].image is None:
            raise PreconditionError(f"reference view {i} has no image")
        depths[i] = d
    if median_depth is None:
        median_depth = scene_median_depth([depths[i] for i in scene.reference_indices])

    ccms = {}
    for i in scene.reference_indices:
        v = scene.views[i]
        ccms[i] = compute_ccm(depths[i], v.intrinsics, v.pose, median_depth)

    stacks = []
    warps = {}
    for idx in sorted(scene.reference_indices + scene.target_indices):
        v = scene.views[idx]
        plucker = plucker_map(v.intrinsics, v.pose)
        if idx in depths:
            rgb = np.asarray(v.image, dtype=np.float64)
            mask = np.ones(v.intrinsics.shape, dtype=bool)
            ccm = ccms[idx]
            role = REFERENCE
        else:
            fused = fuse_priors(
                [
                    warp_view(scene.views[i].image, ccms[i], depths[i], scene.cameras[i], scene.cameras[idx], src_index=i)
                    for i in scene.reference_indices
                ]
            )
            warps[idx] = fused
            rgb, mask = fused.rgb, fused.mask
            ccm = CanonicalCoordinateMap(fused.ccm, fused.mask)
            role = TARGET
        emb = fourier_embed(downsample_ccm(ccm), L)
        stacks.append(PriorStack(idx, role, rgb, plucker, mask, emb))
    if return_warps:
        return stacks, warps
    return stacks


def resize_scene(scene: Scene, bucket: ResolutionBucket) -> Scene:
    """Apply ``resize_for_bucket`` to every view; sparse samples are dropped
    since they are only needed before resizing."""
    views = []
    for v in scene.views:
        image, depth, K = resize_for_bucket(v.image, v.depth, v.intrinsics, bucket)
        _, mono, _ = resize_for_bucket(None, v.mono_depth, v.intrinsics, bucket)
        views.append(replace(v, intrinsics=K, image=image, depth=depth, mono_depth=mono, samples=None if K is not v.intrinsics else v.samples))
    return replace(scene, views=tuple(views))
