"""Pinhole camera algebra.

Conventions: right-handed camera frame with +z forward, world-to-camera
extrinsics (``X_cam = R @ X_world + t``) and continuous pixel coordinates
in which pixel ``(row, col)`` covers ``[col, col+1) x [row, row+1)`` and
has its center at ``(col + 0.5, row + 0.5)``.

Point transforms are written out component by component instead of with
matmul so that vectorized and scalar code paths round identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from mvprior.depth_align import DepthMap, SparseDepthSamples
from mvprior.errors import ValidationError

ROTATION_TOL = 1e-6
MAX_EXTENT = 5.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height or self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image size must be positive integers, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"principal point ({self.cx}, {self.cy}) outside the image")
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def _check_rotation(rotation):
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise ValidationError("rotation must be a finite 3x3 matrix")
    if np.abs(rotation @ rotation.T - np.eye(3)).max() > ROTATION_TOL:
        raise ValidationError("rotation is not orthonormal")
    if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOL:
        raise ValidationError("rotation determinant is not +1")


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(rotation)
        if not np.all(np.isfinite(translation)):
            raise ValidationError("translation must be finite")
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R^T t``."""
        return -self.rotation.T @ self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) points."""
        p = np.asarray(points, dtype=np.float64)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        R, t = self.rotation, self.translation
        return np.stack(
            [
                R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0],
                R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1],
                R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2],
            ],
            axis=-1,
        )

    def with_translation(self, translation) -> "Pose":
        return Pose(self.rotation, translation)


ROUNDING_DRIFT = 16 * np.finfo(np.float64).eps


def orthonormalize(rotation, max_drift=1e-4) -> np.ndarray:
    """Project a nearly-orthonormal matrix onto SO(3).

    Raises if the input drifts more than ``max_drift`` from orthonormality
    or is a reflection.
    """
    rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(rotation)):
        raise ValidationError("rotation has non-finite entries")
    drift = np.abs(rotation @ rotation.T - np.eye(3)).max()
    if drift > max_drift:
        raise ValidationError(f"rotation drifts {drift:.2e} from orthonormal (limit {max_drift:g})")
    if np.linalg.det(rotation) <= 0:
        raise ValidationError("rotation has determinant <= 0 (reflection)")
    if drift <= ROUNDING_DRIFT:
        # already orthonormal to rounding; an SVD would only perturb the bits
        return rotation
    u, _, vt = np.linalg.svd(rotation)
    return u @ vt


def relative_pose(pose_i: Pose, pose_j: Pose) -> Pose:
    """Transform taking camera-i coordinates to camera-j coordinates."""
    if pose_i == pose_j:
        return Pose.identity()
    return pose_j.compose(pose_i.inverse())


def project(point_cam, K: Intrinsics):
    """Project camera-frame points (..., 3).

    Returns ``(pixel, depth, in_front)``; ``pixel`` is (..., 2) as (x, y).
    Points with ``z <= 0`` get NaN pixels and ``in_front = False``.
    """
    p = np.asarray(point_cam, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * (x / z) + K.cx
        v = K.fy * (y / z) + K.cy
    u = np.where(in_front, u, np.nan)
    v = np.where(in_front, v, np.nan)
    return np.stack([u, v], axis=-1), z, in_front


def unproject(pixel, depth, K: Intrinsics) -> np.ndarray:
    """Lift continuous pixels (..., 2) at z-depth ``depth`` to camera frame."""
    px = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValidationError("unproject requires depth > 0")
    xn = (px[..., 0] - K.cx) / K.fx
    yn = (px[..., 1] - K.cy) / K.fy
    return np.stack([xn * d, yn * d, d * np.ones_like(xn)], axis=-1)


def pixel_centers(K: Intrinsics) -> np.ndarray:
    """(H, W, 2) array of pixel-center coordinates (x, y)."""
    xs = np.arange(K.width, dtype=np.float64) + 0.5
    ys = np.arange(K.height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def plucker_map(K: Intrinsics, pose: Pose) -> np.ndarray:
    """(H, W, 6) Plucker coordinates ``(o x d, d)`` of per-pixel rays.

    ``d`` is the unit world-space direction through the pixel center and
    ``o`` the camera center in world coordinates.
    """
    px = pixel_centers(K)
    dirs_cam = np.stack(
        [(px[..., 0] - K.cx) / K.fx, (px[..., 1] - K.cy) / K.fy, np.ones(K.shape)], axis=-1
    )
    dirs = dirs_cam @ pose.rotation  # row-vector form of R^T d
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    o = pose.center
    moment = np.cross(np.broadcast_to(o, dirs.shape), dirs)
    return np.concatenate([moment, dirs], axis=-1)


@dataclass(frozen=True)
class View:
    """One camera with optional attachments.

    ``depth`` is metric depth once aligned; ``mono_depth`` holds a
    relative depth map waiting for alignment.
    """

    intrinsics: Intrinsics
    pose: Pose
    image: Optional[np.ndarray] = field(default=None, repr=False)
    depth: Optional[DepthMap] = field(default=None, repr=False)
    mono_depth: Optional[DepthMap] = field(default=None, repr=False)
    samples: Optional[SparseDepthSamples] = field(default=None, repr=False)
    name: str = ""


@dataclass(frozen=True)
class Scene:
    views: tuple
    reference_indices: tuple
    target_indices: tuple

    def __post_init__(self):
        views = tuple(self.views)
        ref = tuple(int(i) for i in self.reference_indices)
        tgt = tuple(int(i) for i in self.target_indices)
        if not ref:
            raise ValidationError("a scene needs at least one reference view")
        if set(ref) & set(tgt):
            raise ValidationError(f"reference and target indices overlap: {sorted(set(ref) & set(tgt))}")
        if len(set(ref)) != len(ref) or len(set(tgt)) != len(tgt):
            raise ValidationError("duplicate view index")
        for i in ref + tgt:
            if not 0 <= i < len(views):
                raise ValidationError(f"view index {i} out of range for {len(views)} cameras")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "reference_indices", ref)
        object.__setattr__(self, "target_indices", tgt)

    @property
    def cameras(self):
        return [(v.intrinsics, v.pose) for v in self.views]

    def replace_view(self, index: int, view: View) -> "Scene":
        views = list(self.views)
        views[index] = view
        return replace(self, views=tuple(views))


def max_camera_distance(poses: Sequence[Pose]) -> float:
    centers = [p.center for p in poses]
    return max((float(np.linalg.norm(a - b)) for a, b in combinations(centers, 2)), default=0.0)


def normalize_scene(scene: Scene, max_extent: float = MAX_EXTENT):
    """Shrink the scene so no two camera centers are farther apart than
    ``max_extent``.

    Translations, metric depth maps and sparse sample depths are scaled
    jointly, which leaves every reprojection unchanged. Scenes already
    within the bound are returned as-is with scale 1.
    """
    dist = max_camera_distance([v.pose for v in scene.views])
    # relative slack keeps the operation idempotent under rounding
    if dist <= max_extent * (1 + 1e-9):
        return scene, 1.0
    scale = max_extent / dist
    views = []
    for v in scene.views:
        views.append(
            replace(
                v,
                pose=v.pose.with_translation(v.pose.translation * scale),
                depth=v.depth.scaled(scale) if v.depth is not None else None,
                samples=v.samples.scaled(scale) if v.samples is not None else None,
            )
        )
    return replace(scene, views=tuple(views)), scale
