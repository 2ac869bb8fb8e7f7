"""Camera geometry, image containers and projection shared by every stage.

Conventions
-----------
* World-to-camera mapping is ``x_cam = R @ X + t``; the camera looks down
  its +z axis and only points with ``z > 0`` project.
* Pixel values are reals in [0, 1] everywhere inside the pipeline; 8-bit
  conversion happens only at I/O time.
* Sub-pixel image access is bilinear everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateHomography,
    NonPositiveDepth,
)

_ORTHONORMAL_TOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole camera with Brown-Conrady distortion and a grid position.

    ``distortion`` holds (k1, k2, k3, p1, p2); all-zero means an ideal
    pinhole. ``grid_pos`` is the (row, col) slot in the camera array.
    """

    intrinsics: np.ndarray   # 3x3, pixels
    rotation: np.ndarray     # 3x3 world-to-camera
    translation: np.ndarray  # (3,) world-to-camera, meters
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(5))
    grid_pos: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "intrinsics", _freeze(np.asarray(self.intrinsics).reshape(3, 3)))
        object.__setattr__(self, "rotation", _freeze(np.asarray(self.rotation).reshape(3, 3)))
        object.__setattr__(self, "translation", _freeze(np.asarray(self.translation).reshape(3)))
        object.__setattr__(self, "distortion", _freeze(np.asarray(self.distortion).reshape(5)))
        object.__setattr__(self, "grid_pos", (int(self.grid_pos[0]), int(self.grid_pos[1])))
        K, R = self.intrinsics, self.rotation
        if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHONORMAL_TOL):
            raise ValueError("rotation must be orthonormal")
        if K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0 or K[2, 2] != 1.0:
            raise ValueError("intrinsics must be upper-triangular with K[2,2] == 1")
        if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
            raise ValueError("focal lengths must be positive")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def principal_point(self) -> np.ndarray:
        return self.intrinsics[:2, 2].copy()

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def with_rotation(self, rotation: np.ndarray) -> "CameraCalibration":
        """Same camera center re-oriented to ``rotation`` (used by rectification)."""
        rotation = np.asarray(rotation, dtype=np.float64)
        t = -rotation @ self.center
        return CameraCalibration(self.intrinsics, rotation, t, self.distortion, self.grid_pos)


@dataclass(frozen=True)
class CameraArray:
    """Grid of cameras; exactly one is the reference view.

    After a camera-config restriction the occupied (row, col) slots are
    compacted so that ``rows * cols == len(cameras)`` still holds.
    """

    cameras: tuple[CameraCalibration, ...]
    rows: int
    cols: int
    reference_index: int

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.cameras) != self.rows * self.cols:
            raise ValueError(f"{len(self.cameras)} cameras do not fill a {self.rows}x{self.cols} grid")
        pos = [c.grid_pos for c in self.cameras]
        if len(set(pos)) != len(pos):
            raise ValueError("grid positions must be unique")
        if not 0 <= self.reference_index < len(self.cameras):
            raise ValueError("reference index out of range")

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def reference(self) -> CameraCalibration:
        return self.cameras[self.reference_index]

    def index_of(self, row: int, col: int) -> int:
        for i, c in enumerate(self.cameras):
            if c.grid_pos == (row, col):
                return i
        raise KeyError((row, col))

    def row_indices(self, row: int) -> list[int]:
        """View indices in grid row ``row``, ordered by column."""
        idx = [i for i, c in enumerate(self.cameras) if c.grid_pos[0] == row]
        return sorted(idx, key=lambda i: self.cameras[i].grid_pos[1])

    def col_indices(self, col: int) -> list[int]:
        idx = [i for i, c in enumerate(self.cameras) if c.grid_pos[1] == col]
        return sorted(idx, key=lambda i: self.cameras[i].grid_pos[0])

    def grid_rows(self) -> list[int]:
        return sorted({c.grid_pos[0] for c in self.cameras})

    def grid_cols(self) -> list[int]:
        return sorted({c.grid_pos[1] for c in self.cameras})

    def cross_indices(self) -> list[int]:
        """Views sharing the reference camera's grid row or column.

        This is the angular support of an oriented window: the reference
        row plus the reference column, ``cols + rows - 1`` views total.
        """
        r0, c0 = self.reference.grid_pos
        out = list(self.row_indices(r0))
        out += [i for i in self.col_indices(c0) if i not in out]
        return sorted(out)

    def baseline_offsets(self, anchor: int) -> np.ndarray:
        """(N, 2) signed (x, y) center offsets of every view from ``anchor``.

        Offsets are expressed in the reference camera's orientation so they
        line up with rectified pixel axes.
        """
        R = self.reference.rotation
        a = self.cameras[anchor].center
        out = np.stack([R @ (c.center - a) for c in self.cameras])
        return out[:, :2]


class Image:
    """Dense image with values in [0, 1] and an optional validity mask."""

    def __init__(self, data: np.ndarray, valid: np.ndarray | None = None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            pass
        elif data.ndim == 3 and data.shape[2] in (1, 3):
            if data.shape[2] == 1:
                data = data[:, :, 0]
        else:
            raise ValueError(f"unsupported image shape {data.shape}")
        self.data = data
        self.valid = None if valid is None else np.asarray(valid, dtype=bool)
        if self.valid is not None and self.valid.shape != data.shape[:2]:
            raise ValueError("validity mask shape mismatch")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def gray(self) -> np.ndarray:
        """Single-channel view (channel mean for RGB)."""
        if self.data.ndim == 2:
            return self.data
        return self.data.mean(axis=2)

    def sample(self, xs, ys):
        """Bilinear sample at (xs, ys); returns (values, valid)."""
        return sample_bilinear(self.data, xs, ys)

    @staticmethod
    def from_uint8(data: np.ndarray) -> "Image":
        return Image(np.asarray(data, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)


class PointCloud3D:
    """Reconstructed points with per-view visibility and object labels."""

    def __init__(
        self,
        points: np.ndarray,
        visibility: np.ndarray,
        object_ids: np.ndarray | None = None,
        depths: np.ndarray | None = None,
        point_ids: np.ndarray | None = None,
    ):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        self.visibility = np.asarray(visibility, dtype=np.uint64).reshape(n)
        self.object_ids = (
            np.zeros(n, dtype=np.int32)
            if object_ids is None
            else np.asarray(object_ids, dtype=np.int32).reshape(n)
        )
        self.depths = None if depths is None else np.asarray(depths, dtype=np.float64).reshape(n, -1)
        self.point_ids = (
            np.arange(n, dtype=np.int64)
            if point_ids is None
            else np.asarray(point_ids, dtype=np.int64).reshape(n)
        )

    def __len__(self) -> int:
        return len(self.points)

    def visible_in(self, view: int) -> np.ndarray:
        """Boolean mask of points visible in ``view``."""
        return (self.visibility >> np.uint64(view)) & np.uint64(1) > 0

    @staticmethod
    def pack_visibility(per_view: np.ndarray) -> np.ndarray:
        """(N, V) bool -> (N,) uint64 bitmask."""
        per_view = np.asarray(per_view, dtype=bool)
        bits = np.zeros(per_view.shape[0], dtype=np.uint64)
        for v in range(per_view.shape[1]):
            bits |= per_view[:, v].astype(np.uint64) << np.uint64(v)
        return bits


# -- sampling --------------------------------------------------------------

def sample_bilinear(data: np.ndarray, xs, ys):
    """Bilinear interpolation of ``data`` at float coordinates.

    Out-of-bounds samples return 0 with ``valid`` False; coordinates on the
    boundary (0 .. W-1 inclusive) are valid.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = data.shape[:2]
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = xc - x0
    ay = yc - y0
    if data.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    top = v00 * (1.0 - ax) + v01 * ax
    bot = v10 * (1.0 - ax) + v11 * ax
    vals = top * (1.0 - ay) + bot * ay
    if data.ndim == 3:
        vals = np.where(valid[..., None], vals, 0.0)
    else:
        vals = np.where(valid, vals, 0.0)
    return vals, valid


# -- distortion --------------------------------------------------------------

def _distort_normalized(xn: np.ndarray, yn: np.ndarray, dist: np.ndarray):
    k1, k2, k3, p1, p2 = dist
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
    return xd, yd


def _undistort_normalized(xd: np.ndarray, yd: np.ndarray, dist: np.ndarray, iters: int = 30):
    if not np.any(dist):
        return xd, yd
    xn, yn = np.array(xd, copy=True), np.array(yd, copy=True)
    k1, k2, k3, p1, p2 = dist
    for _ in range(iters):
        r2 = xn * xn + yn * yn
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
        dy = p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
        xn = (xd - dx) / radial
        yn = (yd - dy) / radial
    return xn, yn


# -- projection ----------------------------------------------------------

def project_point(point: np.ndarray, cam: CameraCalibration):
    """Project a world point; returns ((px, py), depth).

    Raises BehindCamera for camera-space z <= 0.
    """
    pix, depth = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), cam)
    if depth[0] <= 0.0:
        raise BehindCamera(f"point has camera depth {depth[0]:.6g}")
    return pix[0], float(depth[0])


def project_points(points: np.ndarray, cam: CameraCalibration):
    """Vectorized projection; returns ((N, 2) pixels, (N,) depths).

    Points behind the camera get NaN pixels and their (non-positive)
    depth; callers filter on depth.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x_cam = points @ cam.rotation.T + cam.translation
    z = x_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = x_cam[:, 0] / z
        yn = x_cam[:, 1] / z
    xd, yd = _distort_normalized(xn, yn, cam.distortion)
    K = cam.intrinsics
    px = K[0, 0] * xd + K[0, 1] * yd + K[0, 2]
    py = K[1, 1] * yd + K[1, 2]
    pix = np.stack([px, py], axis=1)
    pix[z <= 0.0] = np.nan
    return pix, z


def backproject_pixel(pixel: np.ndarray, depth: float, cam: CameraCalibration) -> np.ndarray:
    """Invert project_point for a single pixel at a known depth."""
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth {depth!r} must be positive")
    return backproject_pixels(np.asarray(pixel, dtype=np.float64).reshape(1, 2), np.array([depth]), cam)[0]


def backproject_pixels(pixels: np.ndarray, depths: np.ndarray, cam: CameraCalibration) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    K = cam.intrinsics
    yd = (pixels[:, 1] - K[1, 2]) / K[1, 1]
    xd = (pixels[:, 0] - K[0, 2] - K[0, 1] * yd) / K[0, 0]
    xn, yn = _undistort_normalized(xd, yd, cam.distortion)
    x_cam = np.stack([xn * depths, yn * depths, depths], axis=1)
    return (x_cam - cam.translation) @ cam.rotation


# -- rectification ---------------------------------------------------------

def rectifying_homography(cam: CameraCalibration, ref: CameraCalibration) -> np.ndarray:
    """Homography taking undistorted ``cam`` pixels onto the reference image plane.

    Pure-rotation model: H = K_ref @ R_ref @ R_cam^T @ K_cam^-1.
    """
    H = ref.intrinsics @ ref.rotation @ cam.rotation.T @ np.linalg.inv(cam.intrinsics)
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateHomography("rectifying rotation is not invertible")
    return H


def rectify_to_reference(img: Image, cam: CameraCalibration, ref: CameraCalibration) -> Image:
    """Undistort and warp ``img`` onto the reference camera's image plane.

    Epipolar lines become axis-aligned with the camera grid afterwards.
    Out-of-bounds pixels are 0 and flagged invalid in the output mask.
    """
    if cam.rotation is ref.rotation or (
        np.array_equal(cam.rotation, ref.rotation)
        and np.array_equal(cam.intrinsics, ref.intrinsics)
        and not np.any(cam.distortion)
    ):
        valid = np.ones(img.data.shape[:2], dtype=bool) if img.valid is None else img.valid
        return Image(img.data.copy(), valid.copy())

    h, w = img.height, img.width
    H = rectifying_homography(cam, ref)
    Hinv = np.linalg.inv(H)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ones = np.ones_like(xs)
    src = np.einsum("ij,jhw->ihw", Hinv, np.stack([xs, ys, ones]))
    sx = src[0] / src[2]
    sy = src[1] / src[2]
    if np.any(cam.distortion):
        K = cam.intrinsics
        ynd = (sy - K[1, 2]) / K[1, 1]
        xnd = (sx - K[0, 2] - K[0, 1] * ynd) / K[0, 0]
        xd, yd = _distort_normalized(xnd, ynd, cam.distortion)
        sx = K[0, 0] * xd + K[0, 1] * yd + K[0, 2]
        sy = K[1, 1] * yd + K[1, 2]
    vals, valid = sample_bilinear(img.data, sx, sy)
    if img.valid is not None:
        vmask, _ = sample_bilinear(img.valid.astype(np.float64), sx, sy)
        valid = valid & (vmask > 0.999)
    if img.data.ndim == 3:
        vals = np.where(valid[..., None], vals, 0.0)
    else:
        vals = np.where(valid, vals, 0.0)
    return Image(vals, valid)


def rectified_calibration(cam: CameraCalibration, ref: CameraCalibration) -> CameraCalibration:
    """Calibration of ``cam`` after rectification: reference orientation and
    intrinsics, original center, zero distortion."""
    t = -ref.rotation @ cam.center
    return CameraCalibration(ref.intrinsics, ref.rotation, t, np.zeros(5), cam.grid_pos)
