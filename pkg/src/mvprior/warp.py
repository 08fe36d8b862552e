"""Canonical coordinate maps and forward warping with z-buffer fusion.

Every valid source pixel is lifted with its metric depth, moved into the
target camera and splatted onto the nearest target pixel. Collisions keep
the candidate with the smallest target-camera depth. Depths that agree to
``DEPTH_TIE_TOL`` are treated as equal and the lower (view, row, col) key
wins; depths are compared on a ``DEPTH_TIE_TOL`` grid so that this is a
strict total order and fusion is order independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mvprior.camera import Intrinsics, Pose, pixel_centers, relative_pose, unproject
from mvprior.depth_align import DepthMap
from mvprior.errors import PreconditionError, ValidationError

DEPTH_TIE_TOL = 1e-6
FOURIER_FREQS = 4
NO_SOURCE = -1


@dataclass(frozen=True)
class CanonicalCoordinateMap:
    coords: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.mask.shape


@dataclass(frozen=True)
class WarpResult:
    rgb: np.ndarray  # (H, W, 3), zero where uncovered
    ccm: np.ndarray  # (H, W, 3), zero where uncovered
    zbuffer: np.ndarray  # (H, W), +inf where uncovered
    mask: np.ndarray  # (H, W) coverage
    srcidx: np.ndarray  # (H, W) int, NO_SOURCE where uncovered

    @property
    def shape(self):
        return self.mask.shape

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


def contract_point(x: np.ndarray) -> np.ndarray:
    """Radial contraction of (..., 3) points into the open radius-2 ball.

    Identity for ``|x| <= 1``, ``(2 - 1/|x|) * x/|x|`` outside.
    """
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    outside = norm > 1.0
    safe = np.where(outside, norm, 1.0)
    return np.where(outside, (2.0 - 1.0 / safe) * (x / safe), x)


def scene_median_depth(depths: Sequence[DepthMap]) -> float:
    valid = [d.values[d.mask] for d in depths]
    values = np.concatenate(valid) if valid else np.empty(0)
    if values.size == 0:
        raise PreconditionError("no valid reference depth to take a median over")
    return float(np.median(values))


def _world_points(depth: DepthMap, K: Intrinsics, pose: Pose):
    """World coordinates of every valid pixel, as (N, 3) plus flat indices."""
    flat = np.flatnonzero(depth.mask.ravel())
    px = pixel_centers(K).reshape(-1, 2)[flat]
    cam = unproject(px, depth.values.ravel()[flat], K)
    return pose.inverse().apply(cam), flat


def compute_ccm(depth: DepthMap, K: Intrinsics, pose: Pose, median_depth: float) -> CanonicalCoordinateMap:
    """Canonical coordinates: world point / median depth, contracted, mapped to [0,1]^3."""
    if not median_depth > 0:
        raise ValidationError(f"median_depth must be positive, got {median_depth}")
    if depth.shape != K.shape:
        raise ValidationError(f"depth shape {depth.shape} does not match camera {K.shape}")
    world, flat = _world_points(depth, K, pose)
    canon = (contract_point(world / median_depth) + 2.0) / 4.0
    coords = np.zeros((K.height * K.width, 3))
    coords[flat] = np.clip(canon, 0.0, 1.0)
    return CanonicalCoordinateMap(coords.reshape(K.height, K.width, 3), depth.mask.copy())


def fourier_embed(ccm: CanonicalCoordinateMap, L: int = FOURIER_FREQS) -> np.ndarray:
    """(H, W, 3 + 6L) array: raw coords, then sin and cos of ``2^k pi x`` for k < L.

    Channel layout per frequency k: ``sin(xyz)`` (3) followed by ``cos(xyz)`` (3).
    Invalid pixels are all zero.
    """
    if L < 0:
        raise ValidationError("frequency count must be >= 0")
    x = ccm.coords
    parts = [x]
    for k in range(L):
        arg = (2.0**k * np.pi) * x
        parts += [np.sin(arg), np.cos(arg)]
    out = np.concatenate(parts, axis=-1)
    out[~ccm.mask] = 0.0
    return out


def empty_result(shape) -> WarpResult:
    h, w = shape
    return WarpResult(
        rgb=np.zeros((h, w, 3)),
        ccm=np.zeros((h, w, 3)),
        zbuffer=np.full((h, w), np.inf),
        mask=np.zeros((h, w), dtype=bool),
        srcidx=np.full((h, w), NO_SOURCE, dtype=np.int64),
    )


def depth_key(z: np.ndarray) -> np.ndarray:
    """Quantized depth used for z-buffer comparisons; +inf maps to int64 max."""
    z = np.asarray(z, dtype=np.float64)
    finite = np.isfinite(z)
    key = np.full(z.shape, np.iinfo(np.int64).max, dtype=np.int64)
    key[finite] = np.floor(z[finite] / DEPTH_TIE_TOL).astype(np.int64)
    return key


def forward_project(depth: DepthMap, src_cam, dst_cam):
    """Continuous target coordinates of every valid source pixel.

    Returns ``(flat_src_index, xy, z)`` where ``xy`` is (N, 2) in the
    target image and ``z`` the target-camera depth. Points behind the
    target camera are included with ``z <= 0``.
    """
    K_src, pose_src = src_cam
    K_dst, pose_dst = dst_cam
    if depth.shape != K_src.shape:
        raise ValidationError(f"depth shape {depth.shape} does not match source camera {K_src.shape}")
    flat = np.flatnonzero(depth.mask.ravel())
    px = pixel_centers(K_src).reshape(-1, 2)[flat]
    cam_src = unproject(px, depth.values.ravel()[flat], K_src)
    cam_dst = relative_pose(pose_src, pose_dst).apply(cam_src)
    x, y, z = cam_dst[:, 0], cam_dst[:, 1], cam_dst[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K_dst.fx * (x / z) + K_dst.cx
        v = K_dst.fy * (y / z) + K_dst.cy
    return flat, np.stack([u, v], axis=-1), z


def warp_view(src_rgb, src_ccm: CanonicalCoordinateMap, src_depth: DepthMap, src_cam, dst_cam, src_index: int = 0) -> WarpResult:
    """Forward-warp one source view's RGB and CCM into ``dst_cam``.

    A point lands on target pixel ``(floor(v), floor(u))``, i.e. the pixel
    whose center is nearest with halves rounded up.
    """
    if src_depth is None:
        raise PreconditionError("warp_view needs a metric depth map on the source view")
    K_dst = dst_cam[0]
    h, w = K_dst.shape
    out = empty_result((h, w))

    flat, xy, z = forward_project(src_depth, src_cam, dst_cam)
    with np.errstate(invalid="ignore"):
        col = np.floor(xy[:, 0])
        row = np.floor(xy[:, 1])
        keep = (z > 0) & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    if not np.any(keep):
        return out
    flat, z = flat[keep], z[keep]
    tgt = row[keep].astype(np.int64) * w + col[keep].astype(np.int64)

    # flat is ascending, so a stable sort on (tgt, depth key) leaves the
    # lowest (row, col) source first among equal keys
    order = np.lexsort((depth_key(z), tgt))
    tgt_sorted = tgt[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = tgt_sorted[1:] != tgt_sorted[:-1]
    win = order[first]
    tgt_win = tgt[win]
    src_win = flat[win]

    rgb = np.asarray(src_rgb, dtype=np.float64).reshape(-1, 3)
    ccm = src_ccm.coords.reshape(-1, 3)
    out.rgb.reshape(-1, 3)[tgt_win] = rgb[src_win]
    out.ccm.reshape(-1, 3)[tgt_win] = ccm[src_win]
    out.zbuffer.reshape(-1)[tgt_win] = z[win]
    out.mask.reshape(-1)[tgt_win] = True
    out.srcidx.reshape(-1)[tgt_win] = src_index
    return out


def fuse_priors(results: Sequence[WarpResult]) -> WarpResult:
    """Per-pixel z-buffer minimum over several warps into the same target."""
    if not results:
        raise ValidationError("fuse_priors needs at least one warp result")
    shape = results[0].shape
    for r in results[1:]:
        if r.shape != shape:
            raise ValidationError(f"warp resolution mismatch: {r.shape} vs {shape}")
    best = results[0]
    fused = WarpResult(
        best.rgb.copy(), best.ccm.copy(), best.zbuffer.copy(), best.mask.copy(), best.srcidx.copy()
    )
    best_key = depth_key(fused.zbuffer)
    for r in results[1:]:
        key = depth_key(r.zbuffer)
        take = r.mask & ((key < best_key) | ((key == best_key) & (r.srcidx < fused.srcidx)) | ~fused.mask)
        fused.rgb[take] = r.rgb[take]
        fused.ccm[take] = r.ccm[take]
        fused.zbuffer[take] = r.zbuffer[take]
        fused.mask[take] = True
        fused.srcidx[take] = r.srcidx[take]
        best_key[take] = key[take]
    return fused
