"""Key-frame detection from fused appearance, distance and shape metrics.

A frame pair (i, j) is scored per view and object with three [0, 1]
metrics: matched-feature ratio M, frame-distance ratio L, and aligned
silhouette overlap I. The fused dissimilarity

    D(i, j) = 1 - (1 / (3 N_v)) * sum_views (M + I + L)

is 0 for indistinguishable nearby frames and grows to 1 as everything
stops matching. A greedy scan opens a new key-frame at the first frame
whose dissimilarity exceeds the threshold (default 0.75) or that hits the
maximum key-frame gap (default 100), whichever comes first.

Note the threshold-rule asymmetry: views where an object has no features
or no silhouette contribute worst-case (0) metric values --- invisibility
is itself evidence of change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    AlignmentDiverged,
    BadOrder,
    EmptySilhouette,
    NoFeatures,
    NotVisible,
)
from .features import DEFAULT_COHERENCE_WINDOW, DEFAULT_RATIO, extract_features, match_keyframes
from .objects import object_silhouette

DEFAULT_THRESHOLD = 0.75
DEFAULT_MAX_GAP = 100


# -- pure metric formulas ----------------------------------------------------


def appearance_ratio(n_matches: int, n_feat_i: int, n_feat_j: int) -> float:
    """M = 2Q / (R_i + R_j), clamped to [0, 1]."""
    total = n_feat_i + n_feat_j
    if total == 0:
        raise NoFeatures("both frames have zero features")
    return min(1.0, max(0.0, 2.0 * n_matches / total))


def distance_ratio(i: int, j: int, max_gap: int = DEFAULT_MAX_GAP) -> float:
    """L = (j - i) / max_gap for j > i."""
    if j <= i:
        raise BadOrder(f"need j > i, got ({i}, {j})")
    return (j - i) / max_gap


def fused_dissimilarity(per_view_m: np.ndarray, per_view_i: np.ndarray, distance: float) -> float:
    """D = 1 - mean over views of (M + I + L) / 3."""
    m = np.asarray(per_view_m, dtype=float)
    s = np.asarray(per_view_i, dtype=float)
    n_v = len(m)
    return float(1.0 - (m.sum() + s.sum() + n_v * distance) / (3.0 * n_v))


# -- silhouette alignment ------------------------------------------------------


def _moments_init(ref: np.ndarray, mov: np.ndarray):
    """Similarity-transform guess from mask moments (centroid, axis, area)."""

    def stats(mask):
        ys, xs = np.nonzero(mask)
        c = np.array([xs.mean(), ys.mean()])
        dx, dy = xs - c[0], ys - c[1]
        mu20, mu02, mu11 = (dx * dx).mean(), (dy * dy).mean(), (dx * dy).mean()
        angle = 0.5 * np.arctan2(2 * mu11, mu20 - mu02)
        return c, angle, mask.sum()

    c_r, a_r, area_r = stats(ref)
    c_m, a_m, area_m = stats(mov)
    scale = np.sqrt(area_r / area_m)
    return c_r, c_m, a_r - a_m, scale


def _warp_mask(mov: np.ndarray, c_ref, c_mov, theta: float, scale: float, shift) -> np.ndarray:
    """Sample ``mov`` so its (c_mov, theta, scale)-frame lands on the ref grid."""
    h, w = mov.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xs - c_ref[0] - shift[0]
    dy = ys - c_ref[1] - shift[1]
    ct, st = np.cos(-theta), np.sin(-theta)
    sx = (ct * dx - st * dy) / scale + c_mov[0]
    sy = (st * dx + ct * dy) / scale + c_mov[1]
    return ndimage.map_coordinates(mov.astype(np.float64), [sy, sx], order=1, mode="constant")


def align_masks(ref: np.ndarray, mov: np.ndarray, iters: int = 12):
    """Similarity alignment (translation, rotation, scale) of mov onto ref.

    Moment-based initialization followed by Gauss-Newton on smoothed masks;
    returns (warped mov as float, diverged flag). On divergence the
    centroid-only alignment is returned and flagged.
    """
    if not ref.any() or not mov.any():
        raise EmptySilhouette("cannot align an empty mask")
    ref_s = ndimage.gaussian_filter(ref.astype(np.float64), 1.5)
    mov_s = ndimage.gaussian_filter(mov.astype(np.float64), 1.5)
    c_ref, c_mov, theta0, scale0 = _moments_init(ref, mov)

    centroid_only = _warp_mask(mov, c_ref, c_mov, 0.0, 1.0, (0.0, 0.0))

    params = np.array([0.0, 0.0, theta0, np.log(scale0)])

    def residual(p):
        warped = _warp_mask(mov_s, c_ref, c_mov, p[2], np.exp(p[3]), p[:2])
        return (warped - ref_s).ravel()

    try:
        r = residual(params)
        cost = r @ r
        eps = np.array([0.25, 0.25, 0.01, 0.01])
        for _ in range(iters):
            J = np.empty((len(r), 4))
            for k in range(4):
                dp = np.zeros(4)
                dp[k] = eps[k]
                J[:, k] = (residual(params + dp) - r) / eps[k]
            JtJ = J.T @ J + 1e-6 * np.eye(4)
            step = np.linalg.solve(JtJ, -J.T @ r)
            new_params = params + step
            new_r = residual(new_params)
            new_cost = new_r @ new_r
            if not np.isfinite(new_cost):
                raise AlignmentDiverged("non-finite alignment cost")
            if new_cost > cost * 1.5:
                break
            improved = new_cost < cost
            params, r, cost = new_params, new_r, new_cost
            if not improved:
                break
        warped = _warp_mask(mov, c_ref, c_mov, params[2], np.exp(params[3]), params[:2])
        return warped, False
    except (AlignmentDiverged, np.linalg.LinAlgError):
        return centroid_only, True


def aligned_overlap(ref: np.ndarray, mov: np.ndarray) -> float:
    """IoU of ``mov`` aligned onto ``ref``; 0 when they cannot be overlapped."""
    warped, _ = align_masks(ref, mov)
    wbin = warped >= 0.5
    union = (ref | wbin).sum()
    if union == 0:
        return 0.0
    return float((ref & wbin).sum() / union)


# -- frame scoring -------------------------------------------------------------


@dataclass
class KeyFrameSet:
    """Ordered key-frames partitioning [0, n_frames) into segments."""

    keyframes: list[int]
    n_frames: int
    max_gap: int = DEFAULT_MAX_GAP
    score_log: list = field(default_factory=list)  # (k, j, D) audit trail

    def __post_init__(self):
        if not self.keyframes or self.keyframes[0] != 0:
            raise ValueError("frame 0 must be a key-frame")
        gaps = np.diff(self.keyframes + [self.n_frames])
        if np.any(gaps <= 0) or np.any(np.diff(self.keyframes) > self.max_gap):
            raise ValueError("key-frames must be increasing with gaps <= max_gap")

    @property
    def count(self) -> int:
        return len(self.keyframes)

    def segment(self, i: int) -> list[int]:
        """Frames [K_i, K_{i+1}) (the last segment runs to the end)."""
        start = self.keyframes[i]
        end = self.keyframes[i + 1] if i + 1 < len(self.keyframes) else self.n_frames
        return list(range(start, end))

    def segments(self) -> list[list[int]]:
        return [self.segment(i) for i in range(len(self.keyframes))]


class FrameScorer:
    """Caches features and silhouettes; evaluates the pair metrics.

    ``clusters_per_frame[t]`` is the list of ObjectClusters of frame t;
    objects are identified across frames by their object_id.
    """

    def __init__(self, sequence, clusters_per_frame, max_gap: int = DEFAULT_MAX_GAP,
                 ratio: float = DEFAULT_RATIO, coherence_window: int = DEFAULT_COHERENCE_WINDOW):
        self.seq = sequence
        self.clusters = clusters_per_frame
        self.max_gap = max_gap
        self.ratio = ratio
        self.coherence_window = coherence_window
        self._features = {}
        self._silhouettes = {}
        self._matches = {}

    def _cluster(self, frame: int, object_id: int):
        for cl in self.clusters[frame]:
            if cl.object_id == object_id:
                return cl
        return None

    def features(self, frame: int, view: int, object_id: int):
        key = (frame, view, object_id)
        if key not in self._features:
            cl = self._cluster(frame, object_id)
            if cl is None:
                self._features[key] = None
            else:
                try:
                    self._features[key] = extract_features(
                        self.seq.frames[frame], cl, view, array=self.seq.array
                    )
                except NotVisible:
                    self._features[key] = None
        return self._features[key]

    def silhouette(self, frame: int, view: int, object_id: int):
        key = (frame, view, object_id)
        if key not in self._silhouettes:
            cl = self._cluster(frame, object_id)
            w, h = self.seq.image_size()
            if cl is None:
                self._silhouettes[key] = None
            else:
                try:
                    self._silhouettes[key] = object_silhouette(
                        self.seq.frames[frame], cl, view, self.seq.array.cameras[view], (h, w)
                    )
                except NotVisible:
                    self._silhouettes[key] = None
        return self._silhouettes[key]

    def match_count(self, i: int, j: int, view: int, object_id: int) -> int:
        key = (i, j, view, object_id)
        if key not in self._matches:
            fi = self.features(i, view, object_id)
            fj = self.features(j, view, object_id)
            if fi is None or fj is None or len(fi) == 0 or len(fj) == 0:
                self._matches[key] = 0
            else:
                self._matches[key] = len(
                    match_keyframes(fi, fj, self.ratio, self.coherence_window)
                )
        return self._matches[key]

    # -- metric operations --

    def appearance_metric(self, i: int, j: int, view: int, object_id: int) -> float:
        fi = self.features(i, view, object_id)
        fj = self.features(j, view, object_id)
        ri = 0 if fi is None else len(fi)
        rj = 0 if fj is None else len(fj)
        return appearance_ratio(self.match_count(i, j, view, object_id), ri, rj)

    def distance_metric(self, i: int, j: int) -> float:
        return distance_ratio(i, j, self.max_gap)

    def shape_metric(self, i: int, j: int, view: int, object_id: int) -> float:
        si = self.silhouette(i, view, object_id)
        sj = self.silhouette(j, view, object_id)
        if si is None or sj is None or not si.any() or not sj.any():
            raise EmptySilhouette(f"object {object_id} pair ({i},{j}) view {view}")
        return aligned_overlap(si, sj)

    def frame_similarity(self, i: int, j: int, object_id: int) -> float:
        """Fused dissimilarity D(i, j) in [0, 1]; higher = more dissimilar.

        Views where the object is featureless or invisible contribute
        worst-case M = I = 0.
        """
        n_v = self.seq.n_views
        L = self.distance_metric(i, j)
        ms = np.zeros(n_v)
        ss = np.zeros(n_v)
        for c in range(n_v):
            try:
                ms[c] = self.appearance_metric(i, j, c, object_id)
            except NoFeatures:
                ms[c] = 0.0
            try:
                ss[c] = self.shape_metric(i, j, c, object_id)
            except EmptySilhouette:
                ss[c] = 0.0
        return fused_dissimilarity(ms, ss, L)


def select_keyframes(scorer: FrameScorer, n_frames: int, object_ids,
                     threshold: float = DEFAULT_THRESHOLD,
                     max_gap: int = DEFAULT_MAX_GAP) -> KeyFrameSet:
    """Greedy scan: key-frame at the first j with D > threshold or at the gap cap.

    D is max-fused over objects so that tracking stays reliable for every
    object.
    """
    keyframes = [0]
    log = []
    k = 0
    j = 1
    while j < n_frames:
        d = max(scorer.frame_similarity(k, j, oid) for oid in object_ids)
        log.append((k, j, float(d)))
        if d > threshold or (j - k) == max_gap:
            keyframes.append(j)
            k = j
        j += 1
    return KeyFrameSet(keyframes, n_frames, max_gap, log)
