"""Slow, obviously-correct reference implementations used by the tests."""

import math

import mpmath
import numpy as np

from mvprior.camera import relative_pose
from mvprior.warp import DEPTH_TIE_TOL, NO_SOURCE


def naive_warp(src_rgb, src_ccm, depth_values, depth_mask, K_src, pose_src, K_dst, pose_dst, src_index=0):
    """Pixel-by-pixel forward warp with a sequential z-buffer.

    Sources are visited in row-major order and only replace the current
    winner on a strictly smaller quantized depth, so the earliest source
    wins ties.
    """
    rel = relative_pose(pose_src, pose_dst)
    R = [[float(x) for x in row] for row in rel.rotation]
    t = [float(x) for x in rel.translation]
    h, w = K_dst.height, K_dst.width
    rgb = np.zeros((h, w, 3))
    ccm = np.zeros((h, w, 3))
    zbuf = np.full((h, w), np.inf)
    mask = np.zeros((h, w), dtype=bool)
    srcidx = np.full((h, w), NO_SOURCE, dtype=np.int64)
    zkey = {}
    for r in range(K_src.height):
        for c in range(K_src.width):
            if not depth_mask[r, c]:
                continue
            d = float(depth_values[r, c])
            xn = (c + 0.5 - K_src.cx) / K_src.fx
            yn = (r + 0.5 - K_src.cy) / K_src.fy
            X, Y, Z = xn * d, yn * d, d
            x2 = R[0][0] * X + R[0][1] * Y + R[0][2] * Z + t[0]
            y2 = R[1][0] * X + R[1][1] * Y + R[1][2] * Z + t[1]
            z2 = R[2][0] * X + R[2][1] * Y + R[2][2] * Z + t[2]
            if not z2 > 0:
                continue
            u = K_dst.fx * (x2 / z2) + K_dst.cx
            v = K_dst.fy * (y2 / z2) + K_dst.cy
            if not (math.isfinite(u) and math.isfinite(v)):
                continue
            col, row = math.floor(u), math.floor(v)
            if not (0 <= col < w and 0 <= row < h):
                continue
            key = math.floor(z2 / DEPTH_TIE_TOL)
            if (row, col) in zkey and zkey[(row, col)] <= key:
                continue
            zkey[(row, col)] = key
            rgb[row, col] = src_rgb[r, c]
            ccm[row, col] = src_ccm[r, c]
            zbuf[row, col] = z2
            mask[row, col] = True
            srcidx[row, col] = src_index
    return rgb, ccm, zbuf, mask, srcidx


def brute_ssim(a, b, mask, size=11, sigma=1.5, data_range=1.0):
    """Mean masked SSIM of 2-D images via explicit window sums."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    half = size // 2
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            sw = sa = sb = saa = sbb = sab = 0.0
            for p in range(size):
                for q in range(size):
                    ii, jj = i + p - half, j + q - half
                    if 0 <= ii < h and 0 <= jj < w and mask[ii, jj]:
                        wt = g[p] * g[q]
                        sw += wt
                        sa += wt * a[ii, jj]
                        sb += wt * b[ii, jj]
                        saa += wt * a[ii, jj] ** 2
                        sbb += wt * b[ii, jj] ** 2
                        sab += wt * a[ii, jj] * b[ii, jj]
            ma, mb = sa / sw, sb / sw
            va, vb, cv = saa / sw - ma * ma, sbb / sw - mb * mb, sab / sw - ma * mb
            vals.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def mp_attention(q, k, v, span, gamma, dps=50):
    """Key-rescaled attention in arbitrary precision; returns (out, weights)."""
    with mpmath.workdps(dps):
        span = set(int(i) for i in span)
        dim = q.shape[1]
        scale = mpmath.sqrt(dim)
        keys = [[mpmath.mpf(float(x)) * (mpmath.mpf(gamma) if j in span else 1) for x in row] for j, row in enumerate(k)]
        out = np.zeros((q.shape[0], v.shape[1]))
        weights = np.zeros((q.shape[0], k.shape[0]))
        for i, qi in enumerate(q):
            logits = [mpmath.fsum(mpmath.mpf(float(a)) * b for a, b in zip(qi, kj)) / scale for kj in keys]
            top = max(logits)
            e = [mpmath.exp(x - top) for x in logits]
            z = mpmath.fsum(e)
            p = [x / z for x in e]
            weights[i] = [float(x) for x in p]
            for c in range(v.shape[1]):
                out[i, c] = float(mpmath.fsum(pj * mpmath.mpf(float(v[j, c])) for j, pj in enumerate(p)))
    return out, weights


def _rotation(rng, angle):
    from scipy.spatial.transform import Rotation

    return Rotation.from_rotvec(rng.normal(size=3) * angle).as_matrix()


def random_warp_case(seed):
    """Small random source/target pair. Every fourth case is built to
    collide: a constant-depth or few-level depth map seen by a target with
    a smaller focal length, so many sources share a target pixel at equal
    depth."""
    from mvprior.camera import Intrinsics, Pose
    from mvprior.warp import CanonicalCoordinateMap

    rng = np.random.default_rng(seed)
    kind = seed % 4
    hs, ws = (int(x) for x in rng.integers(1, 17, size=2))
    hd, wd = (int(x) for x in rng.integers(1, 17, size=2))
    f = rng.uniform(4.0, 20.0)
    K_src = Intrinsics(f, f * rng.uniform(0.8, 1.2), rng.uniform(0, ws), rng.uniform(0, hs), ws, hs)
    pose_src = Pose(_rotation(rng, 0.3), rng.normal(size=3))
    if kind == 0:
        depth = rng.uniform(0.5, 5.0, size=(hs, ws))
        pose_dst = Pose(_rotation(rng, 0.1) @ pose_src.rotation, pose_src.translation + rng.normal(size=3) * 0.3)
        fd = f * rng.uniform(0.7, 1.3)
    elif kind == 1:
        depth = np.full((hs, ws), rng.uniform(1.0, 4.0))
        pose_dst = pose_src
        fd = f * rng.uniform(0.2, 0.6)
    elif kind == 2:
        depth = rng.choice([1.0, 2.0, 3.0], size=(hs, ws))
        pose_dst = Pose(pose_src.rotation, pose_src.translation + np.array([rng.normal() * 0.5, 0.0, 0.0]))
        fd = f * rng.uniform(0.3, 1.0)
    else:
        # wide rotation puts some points behind the target; depth pairs
        # straddle the tie tolerance
        base = rng.uniform(1.0, 3.0, size=(hs, ws))
        depth = np.where(rng.random((hs, ws)) < 0.5, base, base + rng.choice([0.0, 4e-7, 2e-6], size=(hs, ws)))
        pose_dst = Pose(_rotation(rng, 1.2), rng.normal(size=3))
        fd = f * rng.uniform(0.3, 1.3)
    K_dst = Intrinsics(fd, fd, rng.uniform(0, wd), rng.uniform(0, hd), wd, hd)
    mask = rng.random((hs, ws)) > 0.15
    depth = np.where(mask, depth, 0.0)
    rgb = rng.random((hs, ws, 3))
    coords = rng.random((hs, ws, 3))
    from mvprior.depth_align import DepthMap

    dmap = DepthMap(depth)
    return {
        "rgb": rgb,
        "ccm": CanonicalCoordinateMap(coords, dmap.mask),
        "depth": dmap,
        "src_cam": (K_src, pose_src),
        "dst_cam": (K_dst, pose_dst),
    }
