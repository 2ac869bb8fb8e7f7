"""In-memory light-field sequence containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CameraArray, Image, PointCloud3D


@dataclass
class LightFieldFrame:
    """One time instant: rectified views plus the reconstructed cloud.

    ``depths[v]`` is a dense per-view depth map (camera-space z, meters)
    with ``inf`` marking empty space; None when no dense depth exists.
    """

    index: int
    views: list[Image]
    cloud: PointCloud3D
    depths: list[np.ndarray] | None = None

    @property
    def n_views(self) -> int:
        return len(self.views)

    def depth(self, view: int) -> np.ndarray:
        if self.depths is None:
            raise ValueError(f"frame {self.index} has no dense depth maps")
        return self.depths[view]


@dataclass
class LightFieldSequence:
    array: CameraArray
    frames: list[LightFieldFrame] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_views(self) -> int:
        return len(self.array)

    def view_image(self, frame: int, view: int) -> Image:
        return self.frames[frame].views[view]

    def image_size(self) -> tuple[int, int]:
        """(width, height) of the rectified views."""
        img = self.frames[0].views[0]
        return img.width, img.height
