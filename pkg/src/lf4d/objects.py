"""Foreground object identification: 3D Euclidean clustering and silhouettes.

Clusters are the connected components of the fixed-radius neighbourhood
graph (single linkage); components below ``min_size`` are discarded as
noise. Ids are deterministic: sorted by size (descending) then centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import PointCloud3D, project_points
from .errors import EmptyCloud, NotVisible
from .sequence import LightFieldFrame, LightFieldSequence

DEFAULT_RADIUS = 0.05   # meters
DEFAULT_MIN_SIZE = 50


@dataclass
class ObjectCluster:
    object_id: int
    member_indices: np.ndarray   # indices into the frame cloud
    bounding_box: tuple[np.ndarray, np.ndarray]  # (min, max) corners

    @property
    def size(self) -> int:
        return len(self.member_indices)


def cluster_objects(cloud: PointCloud3D, radius: float = DEFAULT_RADIUS,
                    min_size: int = DEFAULT_MIN_SIZE) -> list[ObjectCluster]:
    """Partition the cloud into radius-connected components."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot cluster an empty cloud")
    pts = cloud.points
    tree = cKDTree(pts)
    pairs = tree.query_pairs(r=radius, output_type="ndarray")
    n = len(pts)
    if len(pairs):
        ones = np.ones(len(pairs))
        adj = coo_matrix((ones, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
    else:
        labels = np.arange(n)
    clusters = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        if len(members) < min_size:
            continue
        sub = pts[members]
        clusters.append((members, sub.mean(axis=0), sub.min(axis=0), sub.max(axis=0)))
    # deterministic ids: big clusters first, centroid breaks ties
    clusters.sort(key=lambda c: (-len(c[0]), tuple(c[1])))
    return [
        ObjectCluster(object_id=i, member_indices=m, bounding_box=(lo, hi))
        for i, (m, _, lo, hi) in enumerate(clusters)
    ]


def object_silhouette(frame: LightFieldFrame, cluster: ObjectCluster,
                      view: int, cam, image_shape: tuple[int, int]) -> np.ndarray:
    """Binary mask: projected member pixels, 3x3-dilated, then one closing pass."""
    cloud = frame.cloud
    members = cluster.member_indices
    vis = cloud.visible_in(view)[members]
    if not np.any(vis):
        raise NotVisible(f"object {cluster.object_id} has no visible point in view {view}")
    pts = cloud.points[members[vis]]
    pix, z = project_points(pts, cam)
    h, w = image_shape
    ok = (z > 0) & (pix[:, 0] >= 0) & (pix[:, 0] <= w - 1) & (pix[:, 1] >= 0) & (pix[:, 1] <= h - 1)
    if not np.any(ok):
        raise NotVisible(f"object {cluster.object_id} projects outside view {view}")
    mask = np.zeros((h, w), dtype=bool)
    xi = np.rint(pix[ok, 0]).astype(int)
    yi = np.rint(pix[ok, 1]).astype(int)
    mask[yi, xi] = True
    block = np.ones((3, 3), dtype=bool)
    mask = ndimage.binary_dilation(mask, structure=block)
    mask = ndimage.binary_closing(mask, structure=block)
    return mask


def clusters_from_labels(cloud: PointCloud3D) -> list[ObjectCluster]:
    """Clusters from pre-assigned per-point object ids (id >= 0)."""
    clusters = []
    for oid in np.unique(cloud.object_ids):
        if oid < 0:
            continue
        members = np.flatnonzero(cloud.object_ids == oid)
        sub = cloud.points[members]
        clusters.append(ObjectCluster(int(oid), members, (sub.min(axis=0), sub.max(axis=0))))
    return clusters


def label_frame_objects(frame: LightFieldFrame, radius: float = DEFAULT_RADIUS,
                        min_size: int = DEFAULT_MIN_SIZE) -> list[ObjectCluster]:
    """Use stored sidecar object ids when present, else cluster geometrically."""
    if np.any(frame.cloud.object_ids >= 0):
        return clusters_from_labels(frame.cloud)
    clusters = cluster_objects(frame.cloud, radius, min_size)
    for cl in clusters:
        frame.cloud.object_ids[cl.member_indices] = cl.object_id
    return clusters


def label_sequence_objects(seq: LightFieldSequence, radius: float = DEFAULT_RADIUS,
                           min_size: int = DEFAULT_MIN_SIZE) -> list[list[ObjectCluster]]:
    """Per-frame clusters with ids kept consistent across frames.

    Frame 0 fixes the labelling; later frames are clustered independently
    and matched to the previous frame's clusters by nearest centroid.
    """
    out = []
    prev = None
    for frame in seq.frames:
        if np.any(frame.cloud.object_ids >= 0):
            clusters = clusters_from_labels(frame.cloud)
        else:
            clusters = cluster_objects(frame.cloud, radius, min_size)
            if prev:
                cents_prev = np.array([p.bounding_box[0] + p.bounding_box[1] for p in prev]) / 2
                for cl in clusters:
                    c = (cl.bounding_box[0] + cl.bounding_box[1]) / 2
                    j = int(np.argmin(np.linalg.norm(cents_prev - c, axis=1)))
                    cl.object_id = prev[j].object_id
            for cl in clusters:
                frame.cloud.object_ids[cl.member_indices] = cl.object_id
        out.append(clusters)
        prev = clusters
    return out
