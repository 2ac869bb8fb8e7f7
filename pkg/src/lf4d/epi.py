"""Epipolar-plane images from sparse camera rows, and oriented windows.

Sparse arrays put only a handful of pixels in a classic EPI, so each
camera row is stretched over ``n_cams * rows_per_camera`` EPI rows: a
camera's EPI height coordinate is proportional to its calibration
baseline along the row,

    y_epi = H * (pos - pos_min) / (pos_max - pos_min),      H = N * mu.

A scene point then traces a line whose slope encodes its depth through
the rectified disparity relation  dx = -f * baseline / z.

Shear convention (centralized in ``disparity_offsets``): a view with
baseline offset (bx, by) meters from the anchor view sees a point at
depth z meters displaced by (-f*bx/z, -f*by/z) pixels. Depth ``inf``
means zero shear, i.e. the unsheared cross-view stack after
rectification, whose zero-disparity plane is at infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CameraArray, project_points, sample_bilinear
from .errors import DegenerateBaseline, NoOverlap, OutOfImage, TooFewSamples
from .objects import ObjectCluster
from .sequence import LightFieldFrame

DEFAULT_ROWS_PER_CAMERA = 50   # EPI rows allotted per camera along the axis
DEFAULT_WINDOW_SIGMA = 3.0     # spatial Gaussian sigma of oriented windows, px


def disparity_offsets(depth: float, angular_coords: np.ndarray) -> np.ndarray:
    """Per-view pixel offsets of a point at ``depth`` meters.

    ``angular_coords`` holds (-f*bx, -f*by) per view (pixel-meters);
    ``depth=inf`` gives the zero-shear identity.
    """
    if np.isinf(depth):
        return np.zeros_like(angular_coords)
    return angular_coords / depth


# -- EPI volumes -------------------------------------------------------------


@dataclass
class EPI:
    """One 2D epipolar-plane image, stored as exact sample coordinates."""

    width: int
    height: int
    xs: np.ndarray          # sample x, image pixels (exact)
    ys: np.ndarray          # sample EPI height coordinate (exact real)
    intensities: np.ndarray
    point_ids: np.ndarray
    views: np.ndarray

    def rasterize(self) -> np.ndarray:
        """Plot samples on the integer grid (rounded, capped to the frame)."""
        img = np.zeros((self.height, self.width))
        if len(self.xs) == 0:
            return img
        xi = np.clip(np.rint(self.xs), 0, self.width - 1).astype(int)
        yi = np.clip(np.rint(self.ys), 0, self.height - 1).astype(int)
        img[yi, xi] = self.intensities
        return img


@dataclass
class EPIVolume:
    direction: str                      # "horizontal" | "vertical"
    object_id: int
    rows_per_camera: int
    height: int                         # N_cams_along_axis * rows_per_camera
    focal: float
    baseline_span: float                # meters across the EPI height
    epis: dict = field(default_factory=dict)  # (grid line, image row/col) -> EPI

    @property
    def baseline_per_row(self) -> float:
        """Meters of camera baseline per EPI height unit."""
        return self.baseline_span / self.height

    def line_depth(self, slope: float) -> float:
        """Depth implied by an EPI line slope (dx per EPI height unit)."""
        if abs(slope) < 1e-12:
            return np.inf
        return -self.focal * self.baseline_per_row / slope


def build_epi_volume(frame: LightFieldFrame, cluster: ObjectCluster, array: CameraArray,
                     direction: str = "horizontal",
                     rows_per_camera: int = DEFAULT_ROWS_PER_CAMERA) -> EPIVolume:
    """Plot every visible projection of the object into per-image-row EPIs.

    Horizontal volumes use the cameras of each grid row (x is the sample
    axis); vertical volumes use grid columns (y is the sample axis).
    """
    if direction not in ("horizontal", "vertical"):
        raise ValueError(direction)
    horizontal = direction == "horizontal"
    img0 = frame.views[0]
    W = img0.width if horizontal else img0.height
    lines = array.grid_rows() if horizontal else array.grid_cols()
    ref = array.reference

    cloud = frame.cloud
    members = cluster.member_indices
    n_line_cams = None
    volume = None
    for line in lines:
        view_idx = array.row_indices(line) if horizontal else array.col_indices(line)
        if n_line_cams is None:
            n_line_cams = len(view_idx)
            H = n_line_cams * rows_per_camera
        # camera positions along the axis, in the rectified frame
        pos = []
        for v in view_idx:
            off = ref.rotation @ (array.cameras[v].center - array.cameras[view_idx[0]].center)
            pos.append(off[0] if horizontal else off[1])
        pos = np.asarray(pos)
        span = pos.max() - pos.min()
        if span <= 0:
            raise DegenerateBaseline(f"grid line {line} has zero baseline span")
        y_epi_per_view = {v: H * (p - pos.min()) / span for v, p in zip(view_idx, pos)}
        if volume is None:
            volume = EPIVolume(
                direction=direction,
                object_id=cluster.object_id,
                rows_per_camera=rows_per_camera,
                height=H,
                focal=ref.fx if horizontal else ref.fy,
                baseline_span=span,
            )

        # collect per (image row) samples across this line's cameras
        buckets: dict[int, list] = {}
        for v in view_idx:
            vis = cloud.visible_in(v)[members]
            idx = members[vis]
            if len(idx) == 0:
                continue
            pix, _ = project_points(cloud.points[idx], array.cameras[v])
            img = frame.views[v]
            vals, ok = img.sample(pix[:, 0], pix[:, 1])
            if vals.ndim == 2:  # RGB -> intensity
                vals = vals.mean(axis=1)
            for k in range(len(idx)):
                if not ok[k]:
                    continue
                s_coord = pix[k, 0] if horizontal else pix[k, 1]
                r_coord = pix[k, 1] if horizontal else pix[k, 0]
                j = int(np.rint(r_coord))
                buckets.setdefault(j, []).append(
                    (s_coord, y_epi_per_view[v], vals[k], cloud.point_ids[idx[k]], v)
                )
        for j, rows in buckets.items():
            arr = np.asarray([r[:3] for r in rows], dtype=np.float64)
            volume.epis[(line, j)] = EPI(
                width=W,
                height=H,
                xs=arr[:, 0],
                ys=arr[:, 1],
                intensities=arr[:, 2],
                point_ids=np.asarray([r[3] for r in rows], dtype=np.int64),
                views=np.asarray([r[4] for r in rows], dtype=np.intp),
            )
    return volume


@dataclass
class EPILine:
    slope: float           # dx per EPI height unit
    intercept: float       # x at y = 0
    inliers: np.ndarray    # indices of samples kept by the re-fit
    rms_residual: float
    depth: float = np.nan  # meters; inf = no parallax

    def x_at(self, y: np.ndarray) -> np.ndarray:
        return self.slope * np.asarray(y) + self.intercept


def _tls_fit(xs: np.ndarray, ys: np.ndarray):
    """Total least squares x = slope*y + intercept via the principal axis."""
    mx, my = xs.mean(), ys.mean()
    cov = np.cov(np.stack([xs - mx, ys - my]), bias=True)
    w, v = np.linalg.eigh(cov)
    d = v[:, np.argmax(w)]  # (dx, dy) principal direction
    if abs(d[1]) < 1e-12 * max(abs(d[0]), 1.0):
        raise TooFewSamples("samples do not span distinct EPI heights")
    slope = d[0] / d[1]
    intercept = mx - slope * my
    # orthogonal distances to the line x - slope*y - intercept = 0
    dist = np.abs(xs - slope * ys - intercept) / np.sqrt(1.0 + slope * slope)
    return slope, intercept, dist


def _theil_sen(xs: np.ndarray, ys: np.ndarray):
    """Median pairwise slope dx/dy; robust seed for outlier rejection."""
    slopes = []
    for i in range(len(xs)):
        dy = ys[i + 1 :] - ys[i]
        dx = xs[i + 1 :] - xs[i]
        nz = np.abs(dy) > 1e-12
        slopes.extend((dx[nz] / dy[nz]).tolist())
    slope = float(np.median(slopes))
    intercept = float(np.median(xs - slope * ys))
    return slope, intercept


def fit_epi_line(samples, focal: float | None = None,
                 baseline_per_row: float | None = None) -> EPILine:
    """Line fit with one outlier-rejection re-fit pass.

    ``samples`` is an (N, >=2) array-like of (x, y_epi[, intensity]) rows.
    A robust median-slope seed flags samples farther than twice the RMS
    orthogonal residual (a plain least-squares seed would chase gross
    outliers); the survivors get a total-least-squares fit. Depth is
    derived from the slope when focal and baseline-per-row are given.
    """
    arr = np.asarray(samples, dtype=np.float64)
    xs, ys = arr[:, 0], arr[:, 1]
    if len(xs) < 2 or len(np.unique(ys)) < 2:
        raise TooFewSamples("need at least two samples at distinct heights")
    s0, i0 = _theil_sen(xs, ys)
    dist0 = np.abs(xs - s0 * ys - i0) / np.sqrt(1.0 + s0 * s0)
    rms0 = float(np.sqrt(np.mean(dist0 ** 2)))
    keep = np.arange(len(xs))
    if rms0 > 0:
        mask = dist0 <= 2.0 * rms0
        if mask.sum() >= 2 and len(np.unique(ys[mask])) >= 2:
            keep = np.flatnonzero(mask)
    slope, intercept, dist = _tls_fit(xs[keep], ys[keep])
    rms = float(np.sqrt(np.mean(dist ** 2)))
    depth = np.nan
    if focal is not None and baseline_per_row is not None:
        depth = np.inf if abs(slope) < 1e-12 else -focal * baseline_per_row / slope
    return EPILine(float(slope), float(intercept), keep, rms, depth)


# -- oriented windows ---------------------------------------------------------


@dataclass
class OrientedWindow:
    center: np.ndarray         # (2,)
    depth: float
    sigma: float
    values: np.ndarray         # (V, K, K) or (V, K, K, C)
    valid: np.ndarray          # (V, K, K)
    weights: np.ndarray        # (K, K) spatial Gaussian
    view_indices: np.ndarray   # cross views, anchor order
    clipped: bool = False


class OrientedWindowEngine:
    """Cuts depth-sheared, Gaussian-weighted cross-view windows.

    Bound to one frame's views and one anchor view; reentrant (read-only
    state), so flow workers share a single instance.
    """

    def __init__(self, views, array: CameraArray, anchor_view: int,
                 sigma: float = DEFAULT_WINDOW_SIGMA):
        self.array = array
        self.anchor = anchor_view
        self.sigma = float(sigma)
        self.cross = np.asarray(array.cross_indices(), dtype=np.intp)
        offsets = array.baseline_offsets(anchor_view)[self.cross]  # (V, 2) meters
        ref = array.reference
        #: (-f*bx, -f*by) per cross view: pixel offset = angular / depth
        self.angular = -np.stack([ref.fx * offsets[:, 0], ref.fy * offsets[:, 1]], axis=1)
        self.images = [np.asarray(views[v].data, dtype=np.float64) for v in self.cross]
        self.height, self.width = self.images[0].shape[:2]
        r = max(1, int(round(3.0 * self.sigma)))
        self.radius = r
        grid = np.arange(-r, r + 1, dtype=np.float64)
        gx, gy = np.meshgrid(grid, grid)
        self.offsets_x = gx
        self.offsets_y = gy
        self.weights = np.exp(-(gx ** 2 + gy ** 2) / (2.0 * self.sigma ** 2))

    @property
    def n_views(self) -> int:
        return len(self.cross)

    def window_batch(self, centers: np.ndarray, depths: np.ndarray):
        """Windows at many centers: returns (values, valid) arrays.

        values: (N, V, K, K[, C]); valid: (N, V, K, K). Out-of-image
        samples carry zero value and False validity.
        """
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        depths = np.asarray(depths, dtype=np.float64).reshape(-1)
        n = len(centers)
        k = self.offsets_x.shape[0]
        multi = self.images[0].ndim == 3
        shape = (n, self.n_views, k, k) + ((self.images[0].shape[2],) if multi else ())
        values = np.zeros(shape)
        valid = np.zeros((n, self.n_views, k, k), dtype=bool)
        with np.errstate(divide="ignore"):
            inv_depth = np.where(np.isinf(depths), 0.0, 1.0 / depths)
        for vi in range(self.n_views):
            du = self.angular[vi, 0] * inv_depth  # (N,)
            dv = self.angular[vi, 1] * inv_depth
            xs = centers[:, 0, None, None] + self.offsets_x[None] + du[:, None, None]
            ys = centers[:, 1, None, None] + self.offsets_y[None] + dv[:, None, None]
            vals, ok = sample_bilinear(self.images[vi], xs, ys)
            values[:, vi] = vals
            valid[:, vi] = ok
        return values, valid

    def window(self, center, depth: float) -> OrientedWindow:
        center = np.asarray(center, dtype=np.float64).reshape(2)
        if not (0 <= center[0] <= self.width - 1 and 0 <= center[1] <= self.height - 1):
            raise OutOfImage(f"window center {center} outside image")
        values, valid = self.window_batch(center[None], np.array([depth]))
        return OrientedWindow(
            center=center,
            depth=float(depth),
            sigma=self.sigma,
            values=values[0],
            valid=valid[0],
            weights=self.weights,
            view_indices=self.cross.copy(),
            clipped=not bool(valid[0].all()),
        )


def oriented_window(engine: OrientedWindowEngine, depth: float, center) -> OrientedWindow:
    """Window at ``center`` for a scene point at ``depth`` meters (inf = no shear)."""
    return engine.window(center, depth)


def window_distance(a: OrientedWindow, b: OrientedWindow) -> float:
    """Weighted mean squared sample difference over jointly valid samples."""
    if a.values.shape != b.values.shape:
        raise ValueError("window shapes differ")
    joint = a.valid & b.valid
    w = a.weights[None] * joint
    diff = a.values - b.values
    if diff.ndim == 4:  # channels
        num = float(np.sum(w[..., None] * diff ** 2))
        den = float(np.sum(w)) * diff.shape[3]
    else:
        num = float(np.sum(w * diff ** 2))
        den = float(np.sum(w))
    if den <= 0.0:
        raise NoOverlap("windows share no valid samples")
    return num / den
