"""Temporally coherent 4D alignment of sparse light-field video."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    CameraArray,
    CameraCalibration,
    Image,
    PointCloud3D,
    backproject_pixel,
    project_point,
    rectify_to_reference,
)
