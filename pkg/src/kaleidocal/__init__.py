"""Kaleidoscopic imaging system structure discovery and calibration.

Discovers the chamber labeling of 2D projections of a single 3D point seen
through multiple planar mirrors, and estimates all mirror normals and
distances, with a synthetic forward model for ground-truth verification.
"""

from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    InfeasibleHypothesisError,
    InsufficientDataError,
    InvalidInputError,
    InvalidSequenceError,
    KaleidocalError,
    NoSolutionError,
)
from .geometry import (
    CameraIntrinsics,
    Mirror,
    ReflectionTransform,
    compose_reflections,
    kpc_row,
    make_reflection,
    normalize,
    parse_label,
    project,
    reflect_point,
    sequence_label,
)
from .synthesis import (
    MirrorSystemConfig,
    Observation,
    SyntheticScene,
    enumerate_reflections,
    inject_noise,
    is_visible,
    synthesize_projections,
    synthesize_scene,
)

__version__ = "0.1.0"
