"""Dense per-view scene flow between a frame pair, SimpleFlow-style.

Each object pixel p gets the displacement minimizing

    E(p, m) = w_lf * E_L + w_app * E_C + w_reg * E_R

over an integer search window, swept Jacobi-style (every pixel updates
against the previous iterate, so results are independent of scheduling),
coarse-to-fine over an image pyramid with warping, and finished with a
parabolic sub-pixel fit.

* E_L compares oriented cross-view windows at the two frames (depth-
  sheared at each end's own depth).
* E_C sums brightness constancy over time (same view), across views
  (reference view at t vs the others at t+1, disparity-compensated by
  default), and a sparse-track agreement penalty.
* E_R scales the squared deviation from the neighbourhood flow by the
  mean-minus-min spread of the neighbourhood data energies, so smoothing
  only kicks in where the data terms are undecided.

Ties break deterministically: smallest candidate norm, then lexicographic
(x, y). Energies are evaluated in float64 end to end so the batched sweep
and the per-pixel scalar evaluators agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .core import CameraArray, CameraCalibration, Image, sample_bilinear
from .epi import OrientedWindowEngine
from .errors import NoObjectPixels

DEFAULT_BIG_ENERGY = 1e6


@dataclass
class FlowParams:
    weight_lf: float = 1.0          # light-field consistency weight
    weight_app: float = 1.0         # appearance weight
    weight_reg: float = 0.5         # regularization weight
    reg_lf: float = 0.5             # light-field share of the reg gate
    reg_app: float = 0.5            # appearance share of the reg gate
    search_radius: int = 4          # candidate window radius per level, px
    levels: int = 4
    scale: float = 0.5
    iterations: int = 2             # Jacobi sweeps per level
    occlusion_threshold: float = 1.0
    sparse_window_radius: float = 5.0   # track constraint radius, px
    seed_radius: float = 16.0           # dense-init nearest-track radius, px
    window_sigma: float = 3.0
    subpixel: bool = True
    big_energy: float = DEFAULT_BIG_ENERGY
    disparity_compensation: bool = True

    def __post_init__(self):
        if self.levels < 1 or not (0.0 < self.scale < 1.0):
            raise ValueError("need levels >= 1 and 0 < scale < 1")
        if min(self.weight_lf, self.weight_app, self.weight_reg,
               self.reg_lf, self.reg_app) < 0:
            raise ValueError("energy weights must be nonnegative")


@dataclass
class FlowField:
    vectors: np.ndarray            # (H, W, 2) float64; NaN outside validity
    valid: np.ndarray              # (H, W) bool
    occlusion: np.ndarray          # (H, W) bool
    energy: np.ndarray             # (H, W) float64 final per-pixel energy
    view: int = 0
    frame_pair: tuple[int, int] = (0, 0)

    @staticmethod
    def blank(shape, view=0, frame_pair=(0, 0)) -> "FlowField":
        h, w = shape
        return FlowField(
            np.full((h, w, 2), np.nan),
            np.zeros((h, w), dtype=bool),
            np.zeros((h, w), dtype=bool),
            np.full((h, w), np.nan),
            view,
            frame_pair,
        )

    def sample(self, xs, ys):
        """Bilinear flow lookup; invalid where any support pixel is invalid."""
        u, ok_u = sample_bilinear(np.nan_to_num(self.vectors[:, :, 0]), xs, ys)
        v, _ = sample_bilinear(np.nan_to_num(self.vectors[:, :, 1]), xs, ys)
        frac, _ = sample_bilinear(self.valid.astype(np.float64), xs, ys)
        return np.stack([u, v], axis=-1), ok_u & (frac > 0.999)


@dataclass
class SparseSeeds:
    """Track constraints for one (view, frame pair): positions and displacements."""

    positions: np.ndarray   # (P, 2) pixel positions at the source frame
    displacements: np.ndarray  # (P, 2)

    @staticmethod
    def empty() -> "SparseSeeds":
        return SparseSeeds(np.zeros((0, 2)), np.zeros((0, 2)))

    def scaled(self, sx: float, sy: float) -> "SparseSeeds":
        s = np.array([sx, sy])
        return SparseSeeds(self.positions * s, self.displacements * s)


def seeds_from_tracks(tracks, t0: int, t1: int, view: int) -> SparseSeeds:
    pos, disp = [], []
    for tr in tracks:
        if tr.view != view or t0 not in tr.points or t1 not in tr.points:
            continue
        x0, y0, _ = tr.points[t0]
        x1, y1, _ = tr.points[t1]
        pos.append((x0, y0))
        disp.append((x1 - x0, y1 - y0))
    if not pos:
        return SparseSeeds.empty()
    return SparseSeeds(np.asarray(pos, dtype=np.float64), np.asarray(disp, dtype=np.float64))


# -- pure energy formulas -----------------------------------------------------


def regularization_energy(m_p, neighbor_flows, el_window, ec_window,
                          reg_lf: float = 0.5, reg_app: float = 0.5) -> float:
    """Smoothness cost of candidate m_p against its neighbourhood.

    The gate is the mean-minus-min spread of the neighbours' data energies
    (zero where the data terms already agree), scaled by the mean squared
    flow deviation.
    """
    el_window = np.asarray(el_window, dtype=np.float64)
    ec_window = np.asarray(ec_window, dtype=np.float64)
    e_r_l = float(el_window.mean() - el_window.min())
    e_r_c = float(ec_window.mean() - ec_window.min())
    dm = np.asarray(neighbor_flows, dtype=np.float64) - np.asarray(m_p, dtype=np.float64)
    return (reg_lf * e_r_l + reg_app * e_r_c) * float(np.mean(np.sum(dm ** 2, axis=1)))


# -- level problem ------------------------------------------------------------


def _resize_image(data: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Anti-aliased bilinear resize to (h, w)."""
    h, w = shape
    if data.shape[:2] == (h, w):
        return data.astype(np.float64)
    sy = data.shape[0] / h
    sx = data.shape[1] / w
    sigma = (max(0.0, (sy - 1) / 2), max(0.0, (sx - 1) / 2)) + ((0,) if data.ndim == 3 else ())
    smooth = ndimage.gaussian_filter(data.astype(np.float64), sigma)
    ys = (np.arange(h) + 0.5) * sy - 0.5
    xs = (np.arange(w) + 0.5) * sx - 0.5
    gx, gy = np.meshgrid(xs, ys)
    vals, _ = sample_bilinear(smooth, gx, gy)
    return vals


def _resize_nearest(data: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    if data.shape[:2] == (h, w):
        return data
    ys = np.clip(np.rint((np.arange(h) + 0.5) * data.shape[0] / h - 0.5), 0, data.shape[0] - 1).astype(int)
    xs = np.clip(np.rint((np.arange(w) + 0.5) * data.shape[1] / w - 0.5), 0, data.shape[1] - 1).astype(int)
    return data[np.ix_(ys, xs)]


def _scale_array(array: CameraArray, sx: float, sy: float) -> CameraArray:
    cams = []
    for cam in array.cameras:
        K = cam.intrinsics.copy()
        K[0, :] *= sx
        K[1, :] *= sy
        cams.append(CameraCalibration(K, cam.rotation, cam.translation, cam.distortion, cam.grid_pos))
    return CameraArray(tuple(cams), array.rows, array.cols, array.reference_index)


@dataclass
class FlowInput:
    """One (view, frame pair) flow problem at native resolution."""

    array: CameraArray
    view: int
    images_t: list        # per-view Image at the source frame
    images_t1: list
    depth_t: np.ndarray   # dense depth, inf where unknown
    depth_t1: np.ndarray
    mask: np.ndarray      # object pixels in the tracked view at t
    seeds: SparseSeeds = field(default_factory=SparseSeeds.empty)
    frame_pair: tuple[int, int] = (0, 0)


class LevelProblem:
    """Energy evaluators for one pyramid level (read-only once built)."""

    def __init__(self, inp: FlowInput, params: FlowParams, sx: float = 1.0, sy: float = 1.0):
        self.params = params
        h = max(8, int(round(inp.mask.shape[0] * sy)))
        w = max(8, int(round(inp.mask.shape[1] * sx)))
        self.sx = w / inp.mask.shape[1]
        self.sy = h / inp.mask.shape[0]
        self.shape = (h, w)
        self.view = inp.view
        self.array = _scale_array(inp.array, self.sx, self.sy)

        self.gray_t = [Image(_resize_image(im.gray(), (h, w))) for im in inp.images_t]
        self.gray_t1 = [Image(_resize_image(im.gray(), (h, w))) for im in inp.images_t1]
        self.raw_t = [np.asarray(g.data) for g in self.gray_t]
        self.raw_t1 = [np.asarray(g.data) for g in self.gray_t1]
        self.depth_t = _resize_nearest(inp.depth_t, (h, w))
        self.depth_t1 = _resize_nearest(inp.depth_t1, (h, w))
        self.mask = _resize_nearest(inp.mask.astype(np.uint8), (h, w)).astype(bool)
        if not self.mask.any():
            raise NoObjectPixels("object mask is empty at this level")
        self.seeds = inp.seeds.scaled(self.sx, self.sy)

        self.engine_t = OrientedWindowEngine(self.gray_t, self.array, inp.view, params.window_sigma)
        self.engine_t1 = OrientedWindowEngine(self.gray_t1, self.array, inp.view, params.window_sigma)

        ys, xs = np.nonzero(self.mask)
        self.pix = np.stack([xs, ys], axis=1).astype(np.float64)  # (N, 2)
        self.pidx = (ys, xs)
        self.n = len(xs)

        # source windows, once
        self.A_vals, self.A_valid = self.engine_t.window_batch(
            self.pix, self.depth_t[ys, xs]
        )
        kk = self.engine_t.weights
        self._wflat = np.broadcast_to(kk, self.A_vals.shape[1:]).reshape(-1)

        # target window table over the full level grid
        gy, gx = np.mgrid[0:h, 0:w]
        centers = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
        self.B_vals, self.B_valid = self.engine_t1.window_batch(
            centers, self.depth_t1.ravel()
        )
        self.B_vals = self.B_vals.reshape(h * w, -1)
        self.B_valid = self.B_valid.reshape(h * w, -1)
        self.A_flat = self.A_vals.reshape(self.n, -1)
        self.A_vflat = self.A_valid.reshape(self.n, -1)

        # Disparity-compensated views: each view resampled so pixel q shows
        # the surface point that the tracked view sees at q. Without this,
        # other views mix in parallax-shifted surfaces near depth edges.
        self.other_views = [v for v in range(len(self.array)) if v != inp.view]
        ref = self.array.reference
        offsets = self.array.baseline_offsets(inp.view)

        def _compensate(raw, depth_map, v):
            if not params.disparity_compensation or v == inp.view:
                return raw[v]
            with np.errstate(divide="ignore"):
                inv_z = np.where(np.isinf(depth_map), 0.0, 1.0 / depth_map)
            du = -ref.fx * offsets[v, 0] * inv_z
            dv = -ref.fy * offsets[v, 1] * inv_z
            vals, ok = sample_bilinear(raw[v], gx + du, gy + dv)
            return np.where(ok, vals, np.nan)

        self.comp_t = [_compensate(self.raw_t, self.depth_t, v) for v in range(len(self.array))]
        self.comp_t1_all = [_compensate(self.raw_t1, self.depth_t1, v) for v in range(len(self.array))]
        self.comp_t1 = [self.comp_t1_all[v] for v in self.other_views]

        # nearest-track constraint per mask pixel
        self.has_constraint = np.zeros(self.n, dtype=bool)
        self.constraint_disp = np.zeros((self.n, 2))
        if len(self.seeds.positions):
            tree = cKDTree(self.seeds.positions)
            dist, idx = tree.query(self.pix)
            near = dist <= params.sparse_window_radius
            self.has_constraint = near
            self.constraint_disp = self.seeds.displacements[idx]

    # -- energy terms (batched over mask pixels) --

    def light_field_energy(self, m: np.ndarray) -> np.ndarray:
        """E_L per mask pixel for per-pixel displacements ``m`` (N, 2).

        Integer displacements hit the precomputed window table; fractional
        ones get fresh windows at the landing points. With a single-view
        input the cross carries no multi-view information and the term is
        identically zero.
        """
        if self.engine_t.n_views < 2:
            return np.zeros(len(np.asarray(m).reshape(-1, 2)))
        m = np.asarray(m, dtype=np.float64)
        land = self.pix + m
        h, w = self.shape
        if np.all(m == np.rint(m)):
            xi = np.rint(land[:, 0]).astype(int)
            yi = np.rint(land[:, 1]).astype(int)
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            bv = np.zeros_like(self.A_flat)
            bok = np.zeros_like(self.A_vflat)
            rows = yi[inside] * w + xi[inside]
            bv[inside] = self.B_vals[rows]
            bok[inside] = self.B_valid[rows]
        else:
            dz, dok = sample_bilinear(self.depth_t1, land[:, 0], land[:, 1])
            dz = np.where(dok & np.isfinite(dz), dz, np.inf)
            bvals, bvalid = self.engine_t1.window_batch(land, dz)
            bv = bvals.reshape(self.n, -1)
            bok = bvalid.reshape(self.n, -1)
        joint = self.A_vflat & bok
        wj = self._wflat * joint
        num = (wj * (self.A_flat - bv) ** 2).sum(axis=1)
        den = wj.sum(axis=1)
        out = np.full(self.n, self.params.big_energy)
        ok = den > 0
        out[ok] = num[ok] / den[ok]
        return out

    def appearance_terms(self, m: np.ndarray):
        """(time constancy, cross-view constancy, sparse agreement) per pixel.

        Out-of-bounds samples are skipped with count renormalization; a
        candidate landing outside every view draws the big sentinel on the
        time term. An empty cross-view sample set contributes zero (there
        is nothing to compare).
        """
        m = np.asarray(m, dtype=np.float64)
        land = self.pix + m
        lx, ly = land[:, 0], land[:, 1]
        n_views = len(self.array)

        tsum = np.zeros(self.n)
        tcnt = np.zeros(self.n)
        for v in range(n_views):
            cur = self.comp_t[v][self.pidx]
            nxt, ok = sample_bilinear(self.comp_t1_all[v], lx, ly)
            ok = ok & np.isfinite(nxt) & np.isfinite(cur)
            d2 = (np.where(ok, cur, 0.0) - np.where(ok, nxt, 0.0)) ** 2
            tsum += np.where(ok, d2, 0.0)
            tcnt += ok
        e_t = np.where(tcnt > 0, tsum / np.maximum(tcnt, 1), self.params.big_energy)

        e_v = np.zeros(self.n)
        if self.comp_t1:
            anchor = self.raw_t[self.view][self.pidx]
            vsum = np.zeros(self.n)
            vcnt = np.zeros(self.n)
            for comp in self.comp_t1:
                nxt, ok = sample_bilinear(comp, lx, ly)
                ok = ok & np.isfinite(nxt)
                d2 = (anchor - np.where(ok, nxt, 0.0)) ** 2
                vsum += np.where(ok, d2, 0.0)
                vcnt += ok
            has = vcnt > 0
            e_v[has] = vsum[has] / vcnt[has]

        e_s = np.zeros(self.n)
        if self.has_constraint.any():
            dev = np.linalg.norm(m - self.constraint_disp, axis=1)
            bad = self.has_constraint & (dev > self.params.sparse_window_radius)
            e_s[bad] = self.params.big_energy
        return e_t, e_v, e_s

    def appearance_energy(self, m: np.ndarray) -> np.ndarray:
        """E_C = time-constancy + cross-view constancy + sparse agreement."""
        e_t, e_v, e_s = self.appearance_terms(m)
        return e_t + e_v + e_s

    def data_energies(self, m: np.ndarray):
        return self.light_field_energy(m), self.appearance_energy(m)

    # -- neighbourhood statistics over the search window --

    def _box_stats(self, values: np.ndarray):
        """Masked box mean and min of a dense (H, W) map over the window."""
        size = 2 * self.params.search_radius + 1
        filled = np.where(self.mask, values, 0.0)
        s = ndimage.uniform_filter(filled, size=size, mode="constant") * size * size
        c = ndimage.uniform_filter(self.mask.astype(np.float64), size=size, mode="constant") * size * size
        mean = s / np.maximum(c, 1e-9)
        inf_fill = np.where(self.mask, values, np.inf)
        mn = ndimage.minimum_filter(inf_fill, size=size, mode="constant", cval=np.inf)
        return mean, mn

    def regularizer_fields(self, flow_vals: np.ndarray):
        """Per-pixel reg gate and neighbour-flow stats from the current iterate.

        Returns (gate, mean flow (H,W,2), mean squared norm) over the
        search window restricted to the mask. A zero data weight disables
        that term's share of the gate as well (the no-light-field ablation
        must not touch windows at all).
        """
        gate = np.zeros(self.shape)
        if self.params.weight_lf > 0 and self.params.reg_lf > 0:
            el_map = np.zeros(self.shape)
            el_map[self.pidx] = self.light_field_energy(flow_vals[self.pidx])
            el_mean, el_min = self._box_stats(el_map)
            gate += self.params.reg_lf * (el_mean - el_min)
        if self.params.weight_app > 0 and self.params.reg_app > 0:
            ec_map = np.zeros(self.shape)
            ec_map[self.pidx] = self.appearance_energy(flow_vals[self.pidx])
            ec_mean, ec_min = self._box_stats(ec_map)
            gate += self.params.reg_app * (ec_mean - ec_min)

        size = 2 * self.params.search_radius + 1
        cnt = ndimage.uniform_filter(self.mask.astype(np.float64), size=size, mode="constant") * size * size
        mean_flow = np.zeros(self.shape + (2,))
        for k in (0, 1):
            f = np.where(self.mask, flow_vals[:, :, k], 0.0)
            s = ndimage.uniform_filter(f, size=size, mode="constant") * size * size
            mean_flow[:, :, k] = s / np.maximum(cnt, 1e-9)
        n2 = np.where(self.mask, np.sum(flow_vals ** 2, axis=2), 0.0)
        s2 = ndimage.uniform_filter(n2, size=size, mode="constant") * size * size
        mean_norm2 = s2 / np.maximum(cnt, 1e-9)
        return gate, mean_flow, mean_norm2

    def total_energy(self, m: np.ndarray, gate, mean_flow, mean_norm2) -> np.ndarray:
        """lambda-weighted total energy per mask pixel for displacements m."""
        p = self.params
        el = self.light_field_energy(m) if p.weight_lf > 0 else 0.0
        ec = self.appearance_energy(m) if p.weight_app > 0 else 0.0
        g = gate[self.pidx]
        mf = mean_flow[self.pidx]
        n2 = mean_norm2[self.pidx]
        er = g * (np.sum(m ** 2, axis=1) - 2.0 * np.sum(m * mf, axis=1) + n2)
        return p.weight_lf * el + p.weight_app * ec + p.weight_reg * er


def _candidate_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    gx, gy = np.meshgrid(r, r)
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, 0] < b[:, 0]) | ((a[:, 0] == b[:, 0]) & (a[:, 1] < b[:, 1]))


def _sweep(problem: LevelProblem, flow_vals: np.ndarray, params: FlowParams):
    """One Jacobi update: every mask pixel picks its argmin candidate.

    Candidates are the integer window around the rounded current estimate.
    Ties break on smaller candidate norm, then lexicographic (x, y).
    Returns the updated flow values plus the per-candidate energy tensor
    of this sweep (for sub-pixel refinement).
    """
    gate, mean_flow, mean_norm2 = problem.regularizer_fields(flow_vals)
    base = np.rint(flow_vals[problem.pidx])
    offsets = _candidate_offsets(params.search_radius)
    n = problem.n
    best_e = np.full(n, np.inf)
    best_m = np.zeros((n, 2))
    best_norm = np.full(n, np.inf)
    energies = np.empty((len(offsets), n))
    for k, off in enumerate(offsets):
        m = base + off
        e = problem.total_energy(m, gate, mean_flow, mean_norm2)
        energies[k] = e
        norm = np.sum(m ** 2, axis=1)
        better = e < best_e
        tie = (e == best_e) & ((norm < best_norm) | ((norm == best_norm) & _lex_less(m, best_m)))
        upd = better | tie
        best_e[upd] = e[upd]
        best_m[upd] = m[upd]
        best_norm[upd] = norm[upd]
    out = flow_vals.copy()
    out[problem.pidx] = best_m
    return out, best_e, energies, base, offsets


def _subpixel_refine(best_m, best_e, energies, base, offsets, radius):
    """1D parabolic fits in x and y around each pixel's discrete argmin."""
    n = best_m.shape[0]
    off_idx = {(int(o[0]), int(o[1])): k for k, o in enumerate(offsets)}
    rel = np.rint(best_m - base).astype(int)
    delta = np.zeros((n, 2))
    for axis, step in ((0, (1, 0)), (1, (0, 1))):
        ox, oy = rel[:, 0], rel[:, 1]
        can = (np.abs(rel[:, axis] + 1) <= radius) & (np.abs(rel[:, axis] - 1) <= radius)
        for i in np.flatnonzero(can):
            km = off_idx[(ox[i] - step[0], oy[i] - step[1])]
            kp = off_idx[(ox[i] + step[0], oy[i] + step[1])]
            e0 = best_e[i]
            em = energies[km, i]
            ep = energies[kp, i]
            denom = em - 2.0 * e0 + ep
            if denom > 1e-12 and em >= e0 and ep >= e0:
                d = np.clip(0.5 * (em - ep) / denom, -0.5, 0.5)
                # energies are sums of squares: a parabola whose vertex
                # dips below zero is a wrong model, keep the integer min
                if e0 - 0.125 * (em - ep) ** 2 / denom >= 0.0:
                    delta[i, axis] = d
    return best_m + delta


def seed_flow(shape, mask: np.ndarray, seeds: SparseSeeds, radius: float) -> np.ndarray:
    """Dense initialization: nearest track displacement within radius, else 0."""
    flow = np.zeros(shape + (2,))
    if len(seeds.positions) == 0 or not mask.any():
        return flow
    ys, xs = np.nonzero(mask)
    tree = cKDTree(seeds.positions)
    dist, idx = tree.query(np.stack([xs, ys], axis=1).astype(np.float64))
    near = dist <= radius
    flow[ys[near], xs[near]] = seeds.displacements[idx[near]]
    return flow


def estimate_flow_field(inp: FlowInput, params: FlowParams | None = None) -> FlowField:
    """Coarse-to-fine minimization of the flow energy for one view pair."""
    params = params or FlowParams()
    if not inp.mask.any():
        raise NoObjectPixels("object mask is empty")
    h, w = inp.mask.shape

    factors = [params.scale ** (params.levels - 1 - i) for i in range(params.levels)]
    flow_vals = None
    problem = None
    level_artifacts = None
    for li, f in enumerate(factors):
        problem = LevelProblem(inp, params, sx=f, sy=f)
        if flow_vals is None:
            flow_vals = seed_flow(problem.shape, problem.mask, problem.seeds, params.seed_radius * f)
        else:
            up = np.zeros(problem.shape + (2,))
            gy, gx = np.mgrid[0 : problem.shape[0], 0 : problem.shape[1]]
            px = gx * prev_shape[1] / problem.shape[1]
            py = gy * prev_shape[0] / problem.shape[0]
            for k in (0, 1):
                v, _ = sample_bilinear(prev_flow[:, :, k], px, py)
                ratio = (problem.shape[1] / prev_shape[1]) if k == 0 else (problem.shape[0] / prev_shape[0])
                up[:, :, k] = v * ratio
            flow_vals = np.where(problem.mask[:, :, None], up, 0.0)
        for _ in range(params.iterations):
            flow_vals, best_e, energies, base, offsets = _sweep(problem, flow_vals, params)
        level_artifacts = (best_e, energies, base, offsets)
        prev_flow = flow_vals
        prev_shape = problem.shape

    best_e, energies, base, offsets = level_artifacts
    best_m = flow_vals[problem.pidx]
    if params.subpixel:
        best_m = _subpixel_refine(best_m, best_e, energies, base, offsets, params.search_radius)

    out = FlowField.blank((h, w), inp.view, inp.frame_pair)
    # final level is full resolution by construction (factor 1.0)
    ys, xs = problem.pidx
    out.vectors[ys, xs] = best_m
    out.valid[ys, xs] = True
    out.energy[ys, xs] = best_e
    return out


def merge_flow_fields(fields) -> FlowField:
    """Union of per-object fields computed on disjoint masks."""
    fields = list(fields)
    out = FlowField.blank(fields[0].valid.shape, fields[0].view, fields[0].frame_pair)
    for f in fields:
        sel = f.valid & ~out.valid
        out.vectors[sel] = f.vectors[sel]
        out.energy[sel] = f.energy[sel]
        out.occlusion[sel] = f.occlusion[sel]
        out.valid |= f.valid
    return out


def detect_occlusions(forward: FlowField, backward: FlowField,
                      occlusion_threshold: float = 1.0) -> np.ndarray:
    """Forward/backward round-trip inconsistency test.

    Pixel p is occluded iff |m_fwd(p) + m_bwd(p + m_fwd(p))| exceeds the
    threshold, or the landing point has no backward flow.
    """
    h, w = forward.valid.shape
    occ = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(forward.valid)
    if len(ys) == 0:
        return occ
    m = forward.vectors[ys, xs]
    land_x = xs + m[:, 0]
    land_y = ys + m[:, 1]
    back, ok = backward.sample(land_x, land_y)
    err = np.linalg.norm(m + back, axis=1)
    occ[ys, xs] = ~ok | (err > occlusion_threshold)
    return occ
