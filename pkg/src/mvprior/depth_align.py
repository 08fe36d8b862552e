"""Metric alignment of monocular depth against sparse SfM/MVS samples.

A monocular map ``D`` is mapped to metric depth with a single affine
transform ``r * D + s``. The coefficients come from a 2-point RANSAC line
fit followed by a least-squares refit on the winning consensus set,
trimmed of points whose residual is far above the set's median residual. The
slope is bounded below by ``0.1 * std(D_sfm) / std(D)`` so the fit can
never collapse to a constant depth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from mvprior.errors import DegenerateDepthError, InsufficientDataError, ValidationError

SLOPE_FLOOR_FACTOR = 0.1
# below this inlier ratio the result is flagged as unreliable
LOW_INLIER_RATIO = 0.2
# robust trimming of the consensus set: keep |res| <= k * 1.4826 * MAD
TRIM_SIGMAS = 3.0
TRIM_FLOOR = 1e-6  # relative residuals below this are storage noise
TRIM_ROUNDS = 20


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth with a validity mask.

    ``values`` has shape (H, W). A pixel is valid iff it is finite and
    strictly positive *and* the optional input mask allows it.
    """

    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"depth map must be 2-D, got shape {values.shape}")
        valid = np.isfinite(values) & (values > 0)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValidationError("depth mask shape does not match values")
            valid &= mask
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", valid)

    @property
    def shape(self):
        return self.values.shape

    def scaled(self, factor: float) -> "DepthMap":
        return DepthMap(self.values * factor, self.mask)


@dataclass(frozen=True)
class SparseDepthSamples:
    """Pixel-anchored metric depth observations, as (row, col, depth) triples."""

    rows: np.ndarray
    cols: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        depths = np.asarray(self.depths, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == depths.shape):
            raise ValidationError("rows, cols and depths must have equal length")
        if not np.all(np.isfinite(depths) & (depths > 0)):
            raise ValidationError("sample depths must be finite and positive")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "depths", depths)

    def __len__(self):
        return len(self.depths)

    def check_bounds(self, shape):
        h, w = shape
        if len(self) and (
            self.rows.min() < 0 or self.cols.min() < 0 or self.rows.max() >= h or self.cols.max() >= w
        ):
            raise ValidationError(f"sample pixels out of bounds for a {h}x{w} map")

    def scaled(self, factor: float) -> "SparseDepthSamples":
        return SparseDepthSamples(self.rows, self.cols, self.depths * factor)


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 1000
    threshold: float = 0.05  # relative: |pred - d| <= threshold * d
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("RANSAC needs at least one iteration")
        if not self.threshold > 0:
            raise ValidationError("RANSAC threshold must be positive")


@dataclass(frozen=True)
class AlignmentResult:
    """Affine coefficients mapping monocular to metric depth.

    ``inlier_mask`` and ``inlier_count`` describe the consensus set of the
    best RANSAC hypothesis. ``refit_count`` is the size of the trimmed
    subset the final least-squares fit used.
    """

    r: float
    s: float
    inlier_count: int
    clamped: bool
    inlier_mask: np.ndarray = field(repr=False)
    r_min: float = 0.0
    low_inlier_ratio: bool = False
    refit_count: int = 0

    def to_dict(self):
        return {
            "r": self.r,
            "s": self.s,
            "r_min": self.r_min,
            "inlier_count": self.inlier_count,
            "sample_count": int(self.inlier_mask.size),
            "refit_count": self.refit_count,
            "clamped": self.clamped,
            "low_inlier_ratio": self.low_inlier_ratio,
        }


def _lstsq_line(x, y):
    """Closed-form least squares for y = r*x + s."""
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = np.dot(dx, dx)
    if sxx == 0.0:
        return 0.0, float(ym)
    r = float(np.dot(dx, y - ym) / sxx)
    return r, float(ym - r * xm)


def _trimmed_refit(x, y, mask):
    """Least squares on ``mask``, iteratively dropping points whose relative
    residual exceeds a MAD-scaled bound. Only ever shrinks the set."""
    r, s = _lstsq_line(x[mask], y[mask])
    for _ in range(TRIM_ROUNDS):
        res = np.abs(r * x + s - y) / y
        sigma = 1.4826 * float(np.median(res[mask]))
        keep = mask & (res <= max(TRIM_SIGMAS * sigma, TRIM_FLOOR))
        if keep.sum() < 2 or np.array_equal(keep, mask):
            break
        mask = keep
        r, s = _lstsq_line(x[mask], y[mask])
    return r, s, mask


def _usable_samples(mono: DepthMap, samples: SparseDepthSamples):
    samples.check_bounds(mono.shape)
    ok = mono.mask[samples.rows, samples.cols]
    return mono.values[samples.rows[ok], samples.cols[ok]], samples.depths[ok], ok


def score_hypotheses(x, y, params: RansacParams):
    """Draw ``params.iterations`` 2-point line hypotheses and test them.

    Returns ``(inliers, counts)`` with ``inliers`` of shape
    (iterations, n). Pairs with equal monocular values score zero.
    """
    n = x.size
    rng = np.random.default_rng(params.seed)
    i = rng.integers(0, n, size=params.iterations)
    j = rng.integers(0, n - 1, size=params.iterations)
    j = j + (j >= i)  # distinct pair without rejection sampling

    dxp = x[j] - x[i]
    ok = dxp != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r_h = (y[j] - y[i]) / dxp
        s_h = y[i] - r_h * x[i]
    r_h[~ok] = np.nan  # NaN residuals never pass the inlier test
    s_h[~ok] = np.nan
    tol = params.threshold * y
    # (iterations, n) residual test, in place to stay within a few ms
    res = np.multiply.outer(r_h, x)
    res += s_h[:, None]
    res -= y
    np.abs(res, out=res)
    inl = res <= tol
    return inl, np.count_nonzero(inl, axis=1)


def align_depth(mono: DepthMap, samples: SparseDepthSamples, params: RansacParams = RansacParams()) -> AlignmentResult:
    """Fit ``metric = r * mono + s`` robustly.

    Samples landing on invalid monocular pixels are ignored; the returned
    ``inlier_mask`` is indexed over *all* samples and is False for those.

    Raises:
        InsufficientDataError: fewer than two samples on valid pixels.
        DegenerateDepthError: the monocular values at the samples are constant.
    """
    x, y, usable = _usable_samples(mono, samples)
    n = x.size
    if n < 2:
        raise InsufficientDataError(f"need at least 2 usable depth samples, got {n}")
    std_x = float(np.std(x))
    if std_x == 0.0:
        raise DegenerateDepthError("monocular depth is constant over the sample pixels")
    r_min = SLOPE_FLOOR_FACTOR * float(np.std(y)) / std_x

    inl, counts = score_hypotheses(x, y, params)
    best = int(np.argmax(counts))  # first maximum wins ties
    best_inliers = inl[best]
    best_count = int(counts[best])
    if best_count < 2:
        # every pair was degenerate; fall back to all samples
        best_inliers = np.ones(n, dtype=bool)
        best_count = n

    r, s, fit_mask = _trimmed_refit(x, y, best_inliers)
    clamped = False
    if r < r_min:
        r = r_min
        s = float(np.mean(y[fit_mask] - r * x[fit_mask]))
        clamped = True

    low = best_count / n < LOW_INLIER_RATIO
    if low:
        warnings.warn(
            f"depth alignment kept only {best_count}/{n} inliers", RuntimeWarning, stacklevel=2
        )

    full_mask = np.zeros(len(samples), dtype=bool)
    full_mask[np.flatnonzero(usable)[best_inliers]] = True
    return AlignmentResult(
        r=float(r),
        s=float(s),
        inlier_count=best_count,
        clamped=clamped,
        inlier_mask=full_mask,
        r_min=r_min,
        low_inlier_ratio=low,
        refit_count=int(fit_mask.sum()),
    )


def apply_alignment(mono: DepthMap, result: AlignmentResult) -> DepthMap:
    """Elementwise ``r * D + s``; non-positive outputs become invalid."""
    values = mono.values * result.r + result.s
    return DepthMap(np.where(mono.mask, values, 0.0), mono.mask)
