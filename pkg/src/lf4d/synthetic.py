"""Synthetic light-field sequences with analytic ground truth.

Scenes are textured rectangles under rigid motion, ray-cast into a pinhole
camera grid. Because every hit is analytic, the generator emits exact dense
depth, frame-to-frame flow, per-pixel object ids, z-buffer occlusion masks
and the true 3D trajectory of every sampled surface point --- the oracles
the rest of the test suite is checked against.

Textures are band-limited (smoothed noise), so every surface patch has
matchable gradients; uniform-appearance regions would starve both the
sparse matcher and the dense flow of signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import CameraArray, CameraCalibration, Image, PointCloud3D, project_points
from .errors import PlaneBehindCamera
from .sequence import LightFieldFrame, LightFieldSequence

#: depth agreement tolerance when testing point visibility against the z-buffer
_VIS_REL_TOL = 5e-3
_VIS_ABS_TOL = 1e-3


@dataclass
class RigidWaypoint:
    """Pose sample: translation plus axis-angle rotation about the object center."""

    frame: int
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class PlaneSpec:
    """Textured rectangle: origin corner plus two edge vectors."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture_id: int = 0
    motion: list[RigidWaypoint] = field(default_factory=list)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.edge_u = np.asarray(self.edge_u, dtype=np.float64)
        self.edge_v = np.asarray(self.edge_v, dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * (self.edge_u + self.edge_v)

    def pose(self, t: float):
        """(R, shift) so that a base point X maps to R @ (X - c) + c + shift."""
        if not self.motion:
            return np.eye(3), np.zeros(3)
        way = sorted(self.motion, key=lambda wp: wp.frame)
        if t <= way[0].frame:
            tr, rot = way[0].translation, way[0].rotation
        elif t >= way[-1].frame:
            tr, rot = way[-1].translation, way[-1].rotation
        else:
            k = max(i for i, wp in enumerate(way) if wp.frame <= t)
            a, b = way[k], way[k + 1]
            alpha = (t - a.frame) / (b.frame - a.frame)
            tr = (1 - alpha) * np.asarray(a.translation, float) + alpha * np.asarray(b.translation, float)
            rot = (1 - alpha) * np.asarray(a.rotation, float) + alpha * np.asarray(b.rotation, float)
        return _rodrigues(np.asarray(rot, dtype=np.float64)), np.asarray(tr, dtype=np.float64)

    def transform(self, base_points: np.ndarray, t: float) -> np.ndarray:
        R, shift = self.pose(t)
        c = self.center
        return (base_points - c) @ R.T + c + shift


@dataclass
class CameraGridSpec:
    rows: int = 2
    cols: int = 2
    baseline: float = 0.1          # meters between adjacent cameras, both axes
    width: int = 64
    height: int = 48
    focal_px: float = 80.0
    reference: tuple[int, int] | None = None  # default: center of the grid

    def build(self) -> CameraArray:
        cams = []
        for r in range(self.rows):
            for c in range(self.cols):
                center = np.array([c * self.baseline, r * self.baseline, 0.0])
                K = np.array(
                    [
                        [self.focal_px, 0.0, self.width / 2.0],
                        [0.0, self.focal_px, self.height / 2.0],
                        [0.0, 0.0, 1.0],
                    ]
                )
                cams.append(
                    CameraCalibration(K, np.eye(3), -center, np.zeros(5), grid_pos=(r, c))
                )
        ref_pos = self.reference if self.reference is not None else ((self.rows - 1) // 2, (self.cols - 1) // 2)
        ref_index = next(i for i, cam in enumerate(cams) if cam.grid_pos == tuple(ref_pos))
        return CameraArray(tuple(cams), self.rows, self.cols, ref_index)


@dataclass
class SyntheticSceneSpec:
    planes: list[PlaneSpec]
    grid: CameraGridSpec = field(default_factory=CameraGridSpec)
    n_frames: int = 2
    noise_sigma: float = 0.0
    points_per_plane: int = 144
    channels: int = 1
    texture_cells: int = 64
    texture_smooth: float = 1.5


@dataclass
class GroundTruth:
    """Analytic per-frame oracles emitted alongside the rendered sequence."""

    depths: np.ndarray            # (F, V, H, W) float32, inf = background
    object_ids: np.ndarray        # (F, V, H, W) int16, -1 = background
    flows: np.ndarray             # (F-1, V, H, W, 2) float32, forward t -> t+1
    occlusions: np.ndarray        # (F-1, V, H, W) bool: visible at t, gone at t+1
    disocclusions: np.ndarray     # (F-1, V, H, W) bool: visible at t+1, absent at t
    trajectories: np.ndarray      # (P, F, 3) float64 true surface-point paths
    point_object_ids: np.ndarray  # (P,)


def _rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(axis_angle)
    if theta < 1e-15:
        return np.eye(3)
    k = axis_angle / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def _texture(texture_id: int, seed: int, cells: int, smooth: float, channels: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919, texture_id])
    tex = rng.uniform(size=(cells, cells, channels))
    tex = gaussian_filter(tex, sigma=(smooth, smooth, 0), mode="wrap")
    lo, hi = tex.min(), tex.max()
    tex = 0.15 + 0.75 * (tex - lo) / max(hi - lo, 1e-12)
    return tex


def _sample_texture(tex: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    cells = tex.shape[0]
    xs = np.clip(a, 0.0, 1.0) * (cells - 1)
    ys = np.clip(b, 0.0, 1.0) * (cells - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, cells - 1)
    y1 = np.minimum(y0 + 1, cells - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = tex[y0, x0] * (1 - fx) + tex[y0, x1] * fx
    bot = tex[y1, x0] * (1 - fx) + tex[y1, x1] * fx
    return top * (1 - fy) + bot * fy


class _PosedPlane:
    """Plane geometry at one frame, with a cached dual basis for hit tests."""

    def __init__(self, spec: PlaneSpec, t: float):
        R, shift = spec.pose(t)
        c = spec.center
        self.origin = R @ (spec.origin - c) + c + shift
        self.eu = R @ spec.edge_u
        self.ev = R @ spec.edge_v
        self.normal = np.cross(self.eu, self.ev)
        n2 = np.linalg.norm(self.normal)
        if n2 < 1e-15:
            raise ValueError("degenerate plane (parallel edges)")
        gram = np.array([[self.eu @ self.eu, self.eu @ self.ev], [self.ev @ self.eu, self.ev @ self.ev]])
        self.dual = np.linalg.inv(gram) @ np.stack([self.eu, self.ev])

    def local_coords(self, pts: np.ndarray):
        d = pts - self.origin
        ab = d @ self.dual.T
        return ab[..., 0], ab[..., 1]

    def world_point(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.origin + a[..., None] * self.eu + b[..., None] * self.ev


def _same_pose(a: "_PosedPlane", b: "_PosedPlane") -> bool:
    return (
        np.array_equal(a.origin, b.origin)
        and np.array_equal(a.eu, b.eu)
        and np.array_equal(a.ev, b.ev)
    )


def _ray_grid(cam: CameraCalibration, width: int, height: int):
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    K = cam.intrinsics
    xn = (xs - K[0, 2]) / K[0, 0]
    yn = (ys - K[1, 2]) / K[1, 1]
    dirs_cam = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    return dirs_cam @ cam.rotation  # world directions, rows are R^T @ d

def _render_view(planes: list[_PosedPlane], tex: list[np.ndarray], cam: CameraCalibration,
                 width: int, height: int, channels: int):
    """Z-buffered ray cast; returns (image, depth, object id, hit local coords)."""
    dirs = _ray_grid(cam, width, height)
    center = cam.center
    depth = np.full((height, width), np.inf)
    obj = np.full((height, width), -1, dtype=np.int16)
    hit_a = np.zeros((height, width))
    hit_b = np.zeros((height, width))
    img = np.zeros((height, width, channels))
    # camera-space z per unit of ray parameter: rays are built with z_cam = s
    for pi, pl in enumerate(planes):
        denom = dirs @ pl.normal
        num = (pl.origin - center) @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / denom
        hits = center + s[..., None] * dirs
        a, b = pl.local_coords(hits)
        ok = (s > 1e-9) & (a >= 0.0) & (a <= 1.0) & (b >= 0.0) & (b <= 1.0) & (s < depth)
        if not np.any(ok):
            continue
        depth[ok] = s[ok]
        obj[ok] = pi
        hit_a[ok] = a[ok]
        hit_b[ok] = b[ok]
        img[ok] = _sample_texture(tex[pi], a[ok], b[ok])
    return img, depth, obj, hit_a, hit_b


def generate_synthetic(spec: SyntheticSceneSpec, seed: int = 0):
    """Render the scene and return (LightFieldSequence, GroundTruth).

    Deterministic: identical spec and seed give bitwise-identical outputs
    regardless of how callers later parallelize over views or frames.
    """
    array = spec.grid.build()
    W, H = spec.grid.width, spec.grid.height
    V = len(array)
    F = spec.n_frames
    tex = [
        _texture(pl.texture_id, seed, spec.texture_cells, spec.texture_smooth, spec.channels)
        for pl in spec.planes
    ]

    # surface sample points (the "reconstruction"): a regular grid per plane
    g = max(2, int(round(np.sqrt(spec.points_per_plane))))
    aa, bb = np.meshgrid((np.arange(g) + 0.5) / g, (np.arange(g) + 0.5) / g)
    base_pts = [
        pl.origin + aa.ravel()[:, None] * pl.edge_u + bb.ravel()[:, None] * pl.edge_v
        for pl in spec.planes
    ]
    point_obj = np.concatenate([np.full(len(p), i, dtype=np.int32) for i, p in enumerate(base_pts)])
    n_pts = sum(len(p) for p in base_pts)

    depths = np.full((F, V, H, W), np.inf, dtype=np.float32)
    objmaps = np.full((F, V, H, W), -1, dtype=np.int16)
    flows = np.zeros((max(F - 1, 0), V, H, W, 2), dtype=np.float32)
    occl = np.zeros((max(F - 1, 0), V, H, W), dtype=bool)
    disoccl = np.zeros((max(F - 1, 0), V, H, W), dtype=bool)
    traj = np.zeros((n_pts, F, 3))

    posed = [[_PosedPlane(pl, t) for pl in spec.planes] for t in range(F)]
    hit_cache = {}
    frames = []
    for t in range(F):
        # true point positions at t
        off = 0
        for pi, pts in enumerate(base_pts):
            traj[off : off + len(pts), t] = spec.planes[pi].transform(pts, t)
            off += len(pts)

        views = []
        frame_depths = []
        for v, cam in enumerate(array.cameras):
            img, dep, obj, ha, hb = _render_view(posed[t], tex, cam, W, H, spec.channels)
            if spec.noise_sigma > 0:
                rng = np.random.default_rng([seed, 104729, t, v])
                img = np.clip(img + rng.standard_normal(img.shape) * spec.noise_sigma, 0.0, 1.0)
            depths[t, v] = dep
            objmaps[t, v] = obj
            hit_cache[(t, v)] = (obj, ha, hb)
            views.append(Image(img if spec.channels == 3 else img[:, :, 0]))
            frame_depths.append(dep.astype(np.float64))

        # per-view visibility of the sampled points (z-buffer test)
        vis = np.zeros((n_pts, V), dtype=bool)
        pt_depths = np.full((n_pts, V), np.nan)
        pts_t = traj[:, t]
        for v, cam in enumerate(array.cameras):
            pix, z = project_points(pts_t, cam)
            inb = (z > 1e-9) & (pix[:, 0] >= 0) & (pix[:, 0] <= W - 1) & (pix[:, 1] >= 0) & (pix[:, 1] <= H - 1)
            xi = np.clip(np.rint(pix[:, 0]), 0, W - 1).astype(int)
            yi = np.clip(np.rint(pix[:, 1]), 0, H - 1).astype(int)
            zbuf = depths[t, v][yi, xi]
            close = np.abs(z - zbuf) <= _VIS_REL_TOL * z + _VIS_ABS_TOL
            vis[:, v] = inb & close
            pt_depths[:, v] = np.where(inb, z, np.nan)
        cloud = PointCloud3D(
            pts_t,
            PointCloud3D.pack_visibility(vis),
            object_ids=point_obj,
            depths=pt_depths,
            point_ids=np.arange(n_pts),
        )
        if np.any(depths[t] < 0):
            raise PlaneBehindCamera(f"negative depth at frame {t}")
        frames.append(LightFieldFrame(index=t, views=views, cloud=cloud, depths=frame_depths))

    # dense forward flow and z-buffer occlusion between consecutive frames
    for t in range(F - 1):
        for v, cam in enumerate(array.cameras):
            obj, ha, hb = hit_cache[(t, v)]
            flow = np.full((H, W, 2), np.float32(0.0))
            occ = np.zeros((H, W), dtype=bool)
            bg = obj < 0
            flow[bg] = np.float32(1e10)
            occ_any = np.zeros((H, W), dtype=bool)
            ys, xs = np.mgrid[0:H, 0:W]
            for pi in range(len(spec.planes)):
                sel = obj == pi
                if not np.any(sel):
                    continue
                static = _same_pose(posed[t][pi], posed[t + 1][pi])
                if static:
                    # exact zero flow; landing pixel is the pixel itself
                    pix = np.stack([xs[sel], ys[sel]], axis=1).astype(np.float64)
                    z = depths[t, v][sel].astype(np.float64)
                else:
                    moved = posed[t + 1][pi].world_point(ha[sel], hb[sel])
                    pix, z = project_points(moved, cam)
                    flow[sel, 0] = pix[:, 0] - xs[sel]
                    flow[sel, 1] = pix[:, 1] - ys[sel]
                inb = (z > 0) & (pix[:, 0] >= 0) & (pix[:, 0] <= W - 1) & (pix[:, 1] >= 0) & (pix[:, 1] <= H - 1)
                xi = np.clip(np.rint(pix[:, 0]), 0, W - 1).astype(int)
                yi = np.clip(np.rint(pix[:, 1]), 0, H - 1).astype(int)
                zbuf = depths[t + 1, v][yi, xi]
                covered = ~inb | (z > zbuf * (1 + _VIS_REL_TOL) + _VIS_ABS_TOL)
                occ_any[sel] = covered
            occ[~bg] = occ_any[~bg]
            flows[t, v] = flow
            occl[t, v] = occ

            # disocclusion: frame t+1 pixels whose surface point was hidden at t
            obj1, ha1, hb1 = hit_cache[(t + 1, v)]
            dis = np.zeros((H, W), dtype=bool)
            for pi in range(len(spec.planes)):
                sel = obj1 == pi
                if not np.any(sel):
                    continue
                if _same_pose(posed[t][pi], posed[t + 1][pi]):
                    pix = np.stack([xs[sel], ys[sel]], axis=1).astype(np.float64)
                    z = depths[t + 1, v][sel].astype(np.float64)
                else:
                    back = posed[t][pi].world_point(ha1[sel], hb1[sel])
                    pix, z = project_points(back, cam)
                inb = (z > 0) & (pix[:, 0] >= 0) & (pix[:, 0] <= W - 1) & (pix[:, 1] >= 0) & (pix[:, 1] <= H - 1)
                xi = np.clip(np.rint(pix[:, 0]), 0, W - 1).astype(int)
                yi = np.clip(np.rint(pix[:, 1]), 0, H - 1).astype(int)
                zbuf = depths[t, v][yi, xi]
                hidden = ~inb | (z > zbuf * (1 + _VIS_REL_TOL) + _VIS_ABS_TOL)
                dis[sel] = hidden
            disoccl[t, v] = dis

    seq = LightFieldSequence(array=array, frames=frames)
    gt = GroundTruth(
        depths=depths,
        object_ids=objmaps,
        flows=flows,
        occlusions=occl,
        disocclusions=disoccl,
        trajectories=traj,
        point_object_ids=point_obj,
    )
    return seq, gt
