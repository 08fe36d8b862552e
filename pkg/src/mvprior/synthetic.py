"""Procedural test scenes rendered by ray casting analytic geometry.

The room has a floor at ``y = 1`` (camera y points down), a back wall at
``z = 7`` with an open window, and a sphere. Pixels that see through the
window get no depth.
"""

from __future__ import annotations

from importlib.resources import files
from pathlib import Path

import numpy as np

from mvprior.camera import Intrinsics, Pose, Scene, View, pixel_centers
from mvprior.depth_align import DepthMap, SparseDepthSamples
from mvprior.io import save_scene

FLOOR_Y = 1.0
WALL_Z = 7.0
SPHERE_C = np.array([0.4, 0.1, 4.0])
SPHERE_R = 0.8
# monocular depth is metric mapped through the inverse of this affine pair
MONO_SCALE = 2.0
MONO_SHIFT = 0.5


def rotation_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def camera_from_center(center, yaw=0.0):
    """Pose for a camera at ``center`` rotated by ``yaw`` about the y axis."""
    R = rotation_y(yaw).T  # world-to-camera
    return Pose(R, -R @ np.asarray(center, dtype=np.float64))


def _texture(points, surface):
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    checker = (np.floor(x * 2) + np.floor(y * 2) + np.floor(z * 2)) % 2
    base = np.array([[0.55, 0.45, 0.35], [0.3, 0.45, 0.65], [0.75, 0.3, 0.3]])[surface]
    wave = 0.12 * np.stack([np.sin(3 * x + z), np.sin(2 * y + 3 * z), np.cos(4 * x - y)], axis=-1)
    return np.clip(base + 0.2 * checker[..., None] + wave, 0.0, 1.0)


def render(K: Intrinsics, pose: Pose):
    """Ray-cast the room; returns ``(image, depth)`` with depth 0 where empty."""
    px = pixel_centers(K)
    d_cam = np.stack([(px[..., 0] - K.cx) / K.fx, (px[..., 1] - K.cy) / K.fy, np.ones(K.shape)], axis=-1)
    d = d_cam @ pose.rotation  # world directions with unit camera-z component
    o = pose.center

    t = np.full(K.shape, np.inf)
    surface = np.zeros(K.shape, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(d[..., 1] > 0, (FLOOR_Y - o[1]) / d[..., 1], np.inf)
        t_wall = np.where(d[..., 2] > 0, (WALL_Z - o[2]) / d[..., 2], np.inf)
    hit_wall = o + t_wall[..., None] * d
    window = (np.abs(hit_wall[..., 0]) < 1.2) & (hit_wall[..., 1] < -0.6)
    t_wall = np.where(window, np.inf, t_wall)

    oc = o - SPHERE_C
    a = np.einsum("...i,...i", d, d)
    b = 2 * np.einsum("...i,i", d, oc)
    c = oc @ oc - SPHERE_R**2
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore"):
        t_sph = np.where(disc >= 0, (-b - np.sqrt(disc)) / (2 * a), np.inf)
    t_sph = np.where(t_sph > 0, t_sph, np.inf)

    for idx, cand in enumerate((t_floor, t_wall, t_sph)):
        closer = cand < t
        t = np.where(closer, cand, t)
        surface = np.where(closer, idx, surface)
    hit = np.isfinite(t)
    pts = o + np.where(hit, t, 0.0)[..., None] * d
    image = np.where(hit[..., None], _texture(pts, surface), 0.0)
    # d has unit camera-z component, so the ray parameter is z-depth
    depth = np.where(hit, t, 0.0)
    return image, depth


def sparse_samples(depth, n, rng, outlier_fraction=0.2):
    """Sample ``n`` valid pixels; outliers are scaled by 1.5-3x so they can
    never fall inside a 5% inlier band."""
    valid = np.flatnonzero(depth.ravel() > 0)
    pick = np.sort(rng.choice(valid, size=min(n, valid.size), replace=False))
    rows, cols = np.divmod(pick, depth.shape[1])
    d = depth.ravel()[pick].copy()
    out = rng.random(d.size) < outlier_fraction
    d[out] *= rng.uniform(1.5, 3.0, size=int(out.sum()))
    return SparseDepthSamples(rows, cols, d)


def _reference_view(K, pose, rng, name, n_samples=300):
    image, depth = render(K, pose)
    mono = np.where(depth > 0, (depth - MONO_SHIFT) / MONO_SCALE, 0.0)
    return View(
        K, pose, image=image, mono_depth=DepthMap(mono), samples=sparse_samples(depth, n_samples, rng), name=name
    )


def room_scene(size=512, seed=0, n_targets=2, baseline=0.3):
    """One reference view plus targets: the first target is the reference
    camera itself, later ones step sideways by ``baseline`` with a small yaw."""
    rng = np.random.default_rng(seed)
    f = 0.9 * size
    K = Intrinsics(f, f, size / 2, size / 2, size, size)
    views = [_reference_view(K, camera_from_center([0.0, 0.0, 0.0]), rng, "ref0")]
    views.append(View(K, views[0].pose, image=views[0].image, name="tgt_identity"))
    for k in range(1, n_targets):
        pose = camera_from_center([baseline * k, -0.05 * k, 0.1 * k], yaw=-0.04 * k)
        image, _ = render(K, pose)
        views.append(View(K, pose, image=image, name=f"tgt{k}"))
    return Scene(views, [0], list(range(1, len(views))))


def two_view_scene(size=64, seed=0):
    """Small reference + sideways target, the golden loader fixture."""
    scene = room_scene(size=size, seed=seed, n_targets=2)
    return Scene([scene.views[0], scene.views[2]], [0], [1])


def plane_scene(size=32, depth=2.0, shift_px=3, focal=None):
    """Fronto-parallel textured plane seen by a reference and a camera
    translated along +x so the content moves left by exactly ``shift_px``.

    The target image is the analytically shifted reference (holes black).
    """
    f = float(focal or size)
    K = Intrinsics(f, f, size / 2, size / 2, size, size)
    ref = Pose.identity()
    tx = shift_px * depth / f
    tgt = Pose(np.eye(3), [-tx, 0.0, 0.0])
    rng = np.random.default_rng(7)
    image = rng.uniform(0.0, 1.0, size=(size, size, 3))
    image = np.round(image * 255) / 255
    shifted = np.zeros_like(image)
    shifted[:, : size - shift_px] = image[:, shift_px:]
    dmap = DepthMap(np.full((size, size), depth))
    views = [View(K, ref, image=image, depth=dmap, name="plane_ref"), View(K, tgt, image=shifted, name="plane_tgt")]
    return Scene(views, [0], [1])


def bundled_fixture(name="two_view"):
    """Path to the manifest of a fixture shipped with the package."""
    return files("mvprior") / "data" / name / "manifest.json"


def write_bundled_fixtures(root):
    """Regenerate the shipped fixtures under ``root`` (the package data dir)."""
    root = Path(root)
    return [
        save_scene(root / "two_view", two_view_scene(), "two_view"),
        save_scene(root / "room3", room_scene(512), "room3"),
    ]


def alignment_problem(seed, n_samples=200, outlier_fraction=0.3, size=64):
    """Random monocular map with exact affine samples plus gross outliers.

    Returns ``(mono, samples, r, s, outlier_mask)``. Outliers are drawn
    uniformly over the inlier depth range widened by half on each side.
    """
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.2, 5.0)
    s = rng.uniform(-1.0, 1.0)
    mono = rng.uniform(6.0, 20.0, size=(size, size))  # keeps r * mono + s > 0
    pick = np.sort(rng.choice(size * size, size=n_samples, replace=False))
    rows, cols = np.divmod(pick, size)
    y = r * mono.ravel()[pick] + s
    out = np.zeros(n_samples, dtype=bool)
    out[rng.choice(n_samples, size=int(round(outlier_fraction * n_samples)), replace=False)] = True
    lo, hi = y.min(), y.max()
    y[out] = rng.uniform(max(0.5 * lo, 1e-3), 1.5 * hi, size=int(out.sum()))
    return DepthMap(mono), SparseDepthSamples(rows, cols, y), r, s, out
