"""On-disk codecs: Middlebury .flo, PFM depth maps, ASCII PLY clouds, PNG.

Every reader/writer pair here is a lossless inverse; the .flo codec is
bit-exact by construction (raw little-endian float32 payload).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import PointCloud3D
from .errors import BadMagic, ParseError, TruncatedFile

FLO_MAGIC = b"PIEH"
#: Sentinel for unknown/occluded flow; values above FLO_UNKNOWN_THRESH are unknown.
FLO_UNKNOWN = 1e10
FLO_UNKNOWN_THRESH = 1e9


# -- Middlebury .flo -------------------------------------------------------

def write_flo(flow: np.ndarray, path) -> None:
    """Write an (H, W, 2) float32 field: magic, int32 w/h, row-major (u, v)."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLO_MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        header = f.read(8)
        if len(header) < 8:
            raise TruncatedFile(f"{path}: truncated header")
        w, h = struct.unpack("<ii", header)
        payload = f.read(4 * 2 * w * h)
        if len(payload) < 4 * 2 * w * h:
            raise TruncatedFile(f"{path}: expected {4 * 2 * w * h} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, 2).copy()


def flow_unknown_mask(flow: np.ndarray) -> np.ndarray:
    return np.any(np.abs(flow) > FLO_UNKNOWN_THRESH, axis=-1) | ~np.all(np.isfinite(flow), axis=-1)


# -- PFM -------------------------------------------------------------------

def write_pfm(data: np.ndarray, path) -> None:
    """Grayscale PFM, little-endian float32, bottom-to-top rows."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("only grayscale PFM supported")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(data[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header != b"Pf":
            raise BadMagic(f"{path}: bad PFM header {header!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        payload = f.read(4 * w * h)
        if len(payload) < 4 * w * h:
            raise TruncatedFile(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    return np.frombuffer(payload, dtype=dtype).reshape(h, w)[::-1].copy()


# -- ASCII PLY with per-view visibility ------------------------------------

def write_ply(cloud: PointCloud3D, path, n_views: int | None = None) -> None:
    """ASCII PLY; visibility stored as a list of visible view indices."""
    pts = cloud.points
    if n_views is None:
        n_views = int(cloud.visibility.max()).bit_length() if len(pts) else 0
    lines = [
        "ply",
        "format ascii 1.0",
        "comment lf4d cloud v1",
        f"comment views {n_views}",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "property int object_id",
        "property int point_id",
        "property list uchar uint visible_views",
        "end_header",
    ]
    for i in range(len(pts)):
        vis = [str(v) for v in range(n_views) if (int(cloud.visibility[i]) >> v) & 1]
        lines.append(
            f"{float(pts[i, 0])!r} {float(pts[i, 1])!r} {float(pts[i, 2])!r} "
            f"{int(cloud.object_ids[i])} {int(cloud.point_ids[i])} "
            f"{len(vis)} {' '.join(vis)}".rstrip()
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud3D:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "ply":
        raise BadMagic(f"{path}: not a PLY file")
    n = None
    body_at = None
    for k, line in enumerate(lines[1:], start=2):
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line == "end_header":
            body_at = k
            break
    if n is None or body_at is None:
        raise ParseError(f"{path}: missing vertex element or end_header")
    pts = np.zeros((n, 3))
    obj = np.zeros(n, dtype=np.int32)
    pid = np.zeros(n, dtype=np.int64)
    vis = np.zeros(n, dtype=np.uint64)
    for i in range(n):
        lineno = body_at + 1 + i
        try:
            tok = lines[body_at + i].split()
            pts[i] = [float(tok[0]), float(tok[1]), float(tok[2])]
            obj[i] = int(tok[3])
            pid[i] = int(tok[4])
            cnt = int(tok[5])
            bits = 0
            for v in tok[6 : 6 + cnt]:
                bits |= 1 << int(v)
            vis[i] = bits
        except (IndexError, ValueError) as exc:
            raise ParseError(str(exc), line=lineno) from exc
    return PointCloud3D(pts, vis, obj, point_ids=pid)


# -- PNG -------------------------------------------------------------------

def write_png(data: np.ndarray, path) -> None:
    """8-bit PNG from [0, 1] float (gray or RGB) or bool/uint8 arrays."""
    data = np.asarray(data)
    if data.dtype == bool:
        arr = data.astype(np.uint8) * 255
    elif data.dtype == np.uint8:
        arr = data
    else:
        arr = np.clip(np.rint(np.asarray(data, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """[0, 1] float64 array (H, W) or (H, W, 3)."""
    with PILImage.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr.astype(np.float64) / 255.0


def write_id_map(ids: np.ndarray, path) -> None:
    """Signed id map as 16-bit PNG (ids shifted by +1 so -1 encodes as 0)."""
    arr = (np.asarray(ids, dtype=np.int32) + 1).astype(">u2")
    im = PILImage.frombytes("I;16B", (arr.shape[1], arr.shape[0]), arr.tobytes())
    im.save(path, format="PNG")


def read_id_map(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im, dtype=np.int32)
    return arr - 1
