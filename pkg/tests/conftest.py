import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lf4d.core import CameraCalibration
from lf4d.synthetic import (
    CameraGridSpec,
    PlaneSpec,
    RigidWaypoint,
    SyntheticSceneSpec,
    generate_synthetic,
)


def canonical_camera(f=1.0, cx=0.0, cy=0.0):
    K = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
    return CameraCalibration(K, np.eye(3), np.zeros(3))


def frontal_plane(z=2.0, half=1.5, texture_id=0, motion=None):
    """Square plane at depth z facing the cameras."""
    return PlaneSpec(
        origin=np.array([-half, -half, z]),
        edge_u=np.array([2 * half, 0.0, 0.0]),
        edge_v=np.array([0.0, 2 * half, 0.0]),
        texture_id=texture_id,
        motion=motion or [],
    )


def shifting_plane(z=2.0, half=1.5, dx_per_frame=0.05, n_frames=2, texture_id=0):
    return frontal_plane(
        z=z,
        half=half,
        texture_id=texture_id,
        motion=[
            RigidWaypoint(frame=0, translation=np.zeros(3)),
            RigidWaypoint(frame=n_frames - 1, translation=np.array([dx_per_frame * (n_frames - 1), 0.0, 0.0])),
        ],
    )


@pytest.fixture(scope="session")
def static_scene():
    """2 frames, 2x2 views, one static textured plane."""
    spec = SyntheticSceneSpec(
        planes=[frontal_plane(z=2.0, half=1.2)],
        grid=CameraGridSpec(rows=2, cols=2, baseline=0.08, width=64, height=48, focal_px=70.0),
        n_frames=2,
        points_per_plane=144,
    )
    return generate_synthetic(spec, seed=3)


@pytest.fixture(scope="session")
def moving_scene():
    """3 frames, 2x2 views, plane shifting parallel to the image plane."""
    spec = SyntheticSceneSpec(
        planes=[shifting_plane(z=2.0, half=1.2, dx_per_frame=0.05, n_frames=3)],
        grid=CameraGridSpec(rows=2, cols=2, baseline=0.08, width=64, height=48, focal_px=70.0),
        n_frames=3,
        points_per_plane=144,
    )
    return generate_synthetic(spec, seed=4)


@pytest.fixture(scope="session")
def occlusion_scene():
    """Front plane slides sideways over a static back plane (3 frames)."""
    back = frontal_plane(z=2.5, half=1.4, texture_id=0)
    front = PlaneSpec(
        origin=np.array([-0.55, -0.4, 1.4]),
        edge_u=np.array([0.75, 0.0, 0.0]),
        edge_v=np.array([0.0, 0.8, 0.0]),
        texture_id=1,
        motion=[
            RigidWaypoint(frame=0, translation=np.zeros(3)),
            RigidWaypoint(frame=2, translation=np.array([0.5, 0.0, 0.0])),
        ],
    )
    spec = SyntheticSceneSpec(
        planes=[back, front],
        grid=CameraGridSpec(rows=2, cols=2, baseline=0.08, width=64, height=48, focal_px=70.0),
        n_frames=3,
        points_per_plane=196,
    )
    return generate_synthetic(spec, seed=5)
