"""Sparse temporal feature correspondence per view, per object.

Features are anchored at the projections of the reconstructed 3D points,
so scale and spatial correspondence come from the geometry; the descriptor
only has to discriminate appearance. It is a 128-d gradient-orientation
histogram (4x4 cells x 8 orientations over a 16x16 patch), L2-normalized.

Matching is nearest-neighbour under descriptor L2 distance with Lowe's
ratio test (first/second < ratio), a forward/backward symmetry test, and
a local displacement-coherence filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import project_points
from .errors import EmptySegment, NotVisible
from .objects import ObjectCluster
from .sequence import LightFieldFrame, LightFieldSequence

PATCH = 16              # descriptor patch side, pixels
CELLS = 4               # histogram grid per side
ORIENTATIONS = 8
DESCRIPTOR_DIM = CELLS * CELLS * ORIENTATIONS
DEFAULT_RATIO = 0.85
DEFAULT_COHERENCE_WINDOW = 11


@dataclass
class FeatureSet:
    """Features of one (frame, view, object) triple."""

    anchors: np.ndarray        # (R, 2) sub-pixel positions
    descriptors: np.ndarray    # (R, 128) unit L2 norm
    point_ids: np.ndarray      # (R,) source 3D point ids
    view: int
    frame: int
    object_id: int = 0

    def __len__(self) -> int:
        return len(self.anchors)


@dataclass
class MatchSet:
    """Injective pairing between two FeatureSets."""

    pairs: np.ndarray          # (Q, 2) indices (into A, into B)
    scores: np.ndarray         # (Q,) descriptor distances
    frame_pair: tuple[int, int] = (0, 0)
    view: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    @staticmethod
    def empty(frame_pair=(0, 0), view=0) -> "MatchSet":
        return MatchSet(np.zeros((0, 2), dtype=np.intp), np.zeros(0), frame_pair, view)

    def displacements(self, A: FeatureSet, B: FeatureSet) -> np.ndarray:
        if len(self) == 0:
            return np.zeros((0, 2))
        return B.anchors[self.pairs[:, 1]] - A.anchors[self.pairs[:, 0]]


@dataclass
class Track:
    track_id: int
    keyframe: int
    view: int
    object_id: int
    points: dict[int, tuple[float, float, int]] = field(default_factory=dict)
    # frame -> (x, y, 3D point id)

    @property
    def frames(self) -> list[int]:
        return sorted(self.points)


@dataclass
class TrackSet:
    tracks: list[Track] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tracks)

    def for_view(self, view: int) -> list[Track]:
        return [t for t in self.tracks if t.view == view]


# -- descriptor extraction -------------------------------------------------


def _patch_descriptor(gx: np.ndarray, gy: np.ndarray) -> np.ndarray | None:
    """Histogram the patch gradients; None when there is no gradient signal."""
    mag = np.hypot(gx, gy)
    if mag.sum() <= 1e-12:
        return None
    ang = np.arctan2(gy, gx)  # [-pi, pi)
    obin = np.floor((ang + np.pi) / (2 * np.pi) * ORIENTATIONS).astype(int) % ORIENTATIONS
    cell = PATCH // CELLS
    desc = np.zeros((CELLS, CELLS, ORIENTATIONS))
    ys, xs = np.mgrid[0:PATCH, 0:PATCH]
    cy = ys // cell
    cx = xs // cell
    np.add.at(desc, (cy.ravel(), cx.ravel(), obin.ravel()), mag.ravel())
    desc = desc.ravel()
    n = np.linalg.norm(desc)
    if n <= 1e-12:
        return None
    return desc / n


def extract_features(frame: LightFieldFrame, cluster: ObjectCluster, view: int,
                     cam=None, array=None) -> FeatureSet:
    """One feature per visible member point, anchored at its projection.

    Features whose 16x16 patch leaves the image, or whose patch has no
    gradient signal, are dropped.
    """
    cam = cam if cam is not None else array.cameras[view]
    cloud = frame.cloud
    members = cluster.member_indices
    vis = cloud.visible_in(view)[members]
    if not np.any(vis):
        raise NotVisible(f"object {cluster.object_id} not visible in view {view}")
    idx = members[vis]
    pix, _ = project_points(cloud.points[idx], cam)

    img = frame.views[view].gray()
    h, w = img.shape
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])

    half = PATCH // 2
    anchors, descs, pids = [], [], []
    for k in range(len(idx)):
        x, y = pix[k]
        xi, yi = int(np.rint(x)), int(np.rint(y))
        if xi - half < 0 or yi - half < 0 or xi + half > w or yi + half > h:
            continue
        d = _patch_descriptor(
            gx[yi - half : yi + half, xi - half : xi + half],
            gy[yi - half : yi + half, xi - half : xi + half],
        )
        if d is None:
            continue
        anchors.append((x, y))
        descs.append(d)
        pids.append(cloud.point_ids[idx[k]])
    return FeatureSet(
        anchors=np.asarray(anchors, dtype=np.float64).reshape(-1, 2),
        descriptors=np.asarray(descs, dtype=np.float64).reshape(-1, DESCRIPTOR_DIM),
        point_ids=np.asarray(pids, dtype=np.int64),
        view=view,
        frame=frame.index,
        object_id=cluster.object_id,
    )


# -- matching ---------------------------------------------------------------


def _distance_matrix(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Exact pairwise L2 distances, chunked over query rows.

    Differences are formed explicitly (not via the expanded quadratic form)
    so identical descriptors give an exact zero distance.
    """
    out = np.empty((len(query), len(target)))
    step = max(1, (1 << 22) // max(target.size, 1))
    for s in range(0, len(query), step):
        diff = query[s : s + step, None, :] - target[None, :, :]
        out[s : s + step] = np.linalg.norm(diff, axis=2)
    return out


def _two_nearest(query: np.ndarray, target: np.ndarray):
    """For each query row: (best index, best dist, second dist) under L2.

    Equidistant neighbours resolve to the lowest target index.
    """
    d = _distance_matrix(query, target)
    best = np.argmin(d, axis=1)  # argmin returns the first (lowest) index on ties
    bd = d[np.arange(len(query)), best]
    dm = d.copy()
    dm[np.arange(len(query)), best] = np.inf
    second = np.argmin(dm, axis=1)
    sd = dm[np.arange(len(query)), second]
    return best, bd, sd


def match_features(A: FeatureSet, B: FeatureSet, ratio: float = DEFAULT_RATIO) -> MatchSet:
    """Ratio-tested nearest neighbours, then forward/backward symmetry."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    if len(A) < 1 or len(B) < 2 or len(A) < 2:
        # fewer than two candidates means every match is ambiguous
        return MatchSet.empty((A.frame, B.frame), A.view)
    fwd_best, fwd_d, fwd_d2 = _two_nearest(A.descriptors, B.descriptors)
    bwd_best, _, _ = _two_nearest(B.descriptors, A.descriptors)
    pairs = []
    scores = []
    for i in range(len(A)):
        j = fwd_best[i]
        if fwd_d2[i] <= 0.0:  # duplicate descriptors in B: ambiguous
            continue
        if fwd_d[i] / fwd_d2[i] >= ratio:
            continue
        if bwd_best[j] != i:
            continue
        pairs.append((i, j))
        scores.append(fwd_d[i])
    if not pairs:
        return MatchSet.empty((A.frame, B.frame), A.view)
    return MatchSet(
        np.asarray(pairs, dtype=np.intp),
        np.asarray(scores),
        (A.frame, B.frame),
        A.view,
    )


def filter_spatial_coherence(matches: MatchSet, A: FeatureSet, B: FeatureSet,
                             m: int = DEFAULT_COHERENCE_WINDOW,
                             mode: str = "magnitude") -> MatchSet:
    """Drop matches whose displacement disagrees with their m x m neighbourhood.

    A match is kept iff its displacement magnitude is at most twice the mean
    magnitude of matches whose source anchor lies within the window (the
    match itself included). ``mode='deviation'`` instead thresholds the
    deviation from the neighbourhood mean displacement vector.
    """
    if m % 2 != 1:
        raise ValueError("window size m must be odd")
    if len(matches) == 0:
        return matches
    src = A.anchors[matches.pairs[:, 0]]
    disp = matches.displacements(A, B)
    mag = np.linalg.norm(disp, axis=1)
    half = m / 2.0
    tree = cKDTree(src)
    keep = np.zeros(len(matches), dtype=bool)
    neighbor_lists = tree.query_ball_point(src, r=half, p=np.inf)
    for k, nbrs in enumerate(neighbor_lists):
        if not nbrs:
            keep[k] = True
            continue
        if mode == "magnitude":
            keep[k] = mag[k] <= 2.0 * mag[nbrs].mean()
        else:
            dev = np.linalg.norm(disp[k] - disp[nbrs].mean(axis=0))
            keep[k] = dev <= 2.0 * np.linalg.norm(disp[nbrs] - disp[nbrs].mean(axis=0), axis=1).mean()
    return MatchSet(matches.pairs[keep], matches.scores[keep], matches.frame_pair, matches.view)


def match_keyframes(A: FeatureSet, B: FeatureSet, ratio: float = DEFAULT_RATIO,
                    m: int = DEFAULT_COHERENCE_WINDOW) -> MatchSet:
    """Key-frame pair matching: ratio + symmetry + spatial coherence."""
    return filter_spatial_coherence(match_features(A, B, ratio), A, B, m)


# -- track construction -----------------------------------------------------


def _restrict(fs: FeatureSet, keep: np.ndarray) -> FeatureSet:
    return FeatureSet(fs.anchors[keep], fs.descriptors[keep], fs.point_ids[keep],
                      fs.view, fs.frame, fs.object_id)


def build_tracks(feature_lookup, keyframe: int, segment_frames, view: int,
                 object_id: int, ratio: float = DEFAULT_RATIO,
                 m: int = DEFAULT_COHERENCE_WINDOW, track_id_start: int = 0) -> TrackSet:
    """Tracks anchored at ``keyframe``, one per matched key-frame feature.

    ``feature_lookup(frame)`` returns the FeatureSet of (frame, view,
    object). The key-frame is matched against every segment frame; features
    that stayed unmatched get a second pass restricted to unclaimed
    features, which rescues matches the ratio test called ambiguous when
    stronger features were still in play. Tracks may be partial: a frame
    with no surviving match is simply absent.
    """
    segment_frames = [f for f in segment_frames if f != keyframe]
    if not segment_frames:
        raise EmptySegment(f"no frames to track from key-frame {keyframe}")
    kf = feature_lookup(keyframe)
    tracks: dict[int, Track] = {}
    claimed: dict[int, set] = {f: set() for f in segment_frames}

    def add_matches(kf_sub, kf_map, frame, fs_sub, fs_map, matches):
        for (i, j), _ in zip(matches.pairs, matches.scores):
            ki = kf_map[i]
            fj = fs_map[j]
            tr = tracks.get(ki)
            if tr is None:
                tr = Track(
                    track_id=track_id_start + len(tracks),
                    keyframe=keyframe,
                    view=view,
                    object_id=object_id,
                    points={keyframe: (float(kf.anchors[ki, 0]), float(kf.anchors[ki, 1]),
                                       int(kf.point_ids[ki]))},
                )
                tracks[ki] = tr
            if frame not in tr.points:
                tr.points[frame] = (float(fs_sub.anchors[j, 0]), float(fs_sub.anchors[j, 1]),
                                    int(fs_sub.point_ids[j]))
                claimed[frame].add(fs_map[j])

    all_idx = np.arange(len(kf))
    for frame in segment_frames:
        fs = feature_lookup(frame)
        if len(fs) == 0:
            continue
        matches = match_keyframes(kf, fs, ratio, m)
        add_matches(kf, all_idx, frame, fs, np.arange(len(fs)), matches)

    # second pass: key-frame features without a track, against unclaimed targets
    leftover = np.array([i for i in all_idx if i not in tracks], dtype=np.intp)
    if len(leftover):
        kf_sub = _restrict(kf, leftover)
        for frame in segment_frames:
            fs = feature_lookup(frame)
            free = np.array([j for j in range(len(fs)) if j not in claimed[frame]], dtype=np.intp)
            if len(free) == 0:
                continue
            fs_sub = _restrict(fs, free)
            matches = match_keyframes(kf_sub, fs_sub, ratio, m)
            add_matches(kf_sub, leftover, frame, fs_sub, free, matches)

    ordered = sorted(tracks.values(), key=lambda t: t.track_id)
    return TrackSet(ordered)
