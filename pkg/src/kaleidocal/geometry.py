"""Mirror-reflection and pinhole-projection primitives.

Conventions used throughout the package:

* The camera frame is the world frame; the camera center sits at the origin
  looking down +z.
* A mirror plane is ``n . x + d = 0`` with the unit normal ``n`` oriented
  toward the camera center, so ``d > 0``.
* A reflection sequence is a tuple of 1-based mirror indices, outermost
  (last-applied, camera-facing) mirror first: the point observed in chamber
  "12" is ``S_1 S_2 p0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidInputError, InvalidSequenceError

UNIT_NORM_TOL = 1e-12


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise InvalidInputError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (zero skew) plus image bounds in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image size must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, pixel) -> bool:
        u, v = float(pixel[0]), float(pixel[1])
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height


@dataclass(frozen=True)
class Mirror:
    """Planar mirror ``n . x + d = 0``, unit n pointing at the camera, d > 0.

    The constructor renormalizes ``normal`` but rejects inputs whose norm
    deviates from 1 by more than ``UNIT_NORM_TOL``; use :meth:`from_direction`
    to build a mirror from an arbitrary non-zero direction.
    """

    normal: np.ndarray
    distance: float

    def __post_init__(self):
        n = _as_vec3(self.normal)
        norm = float(np.linalg.norm(n))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise InvalidInputError(f"mirror normal must be unit length, |n|={norm!r}")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "distance", float(self.distance))
        if self.distance <= 0:
            raise InvalidInputError("mirror distance must be positive")

    @classmethod
    def from_direction(cls, direction, distance) -> "Mirror":
        d = _as_vec3(direction)
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            raise InvalidInputError("mirror direction must be non-zero")
        return cls(d / norm, distance)

    def signed_distance(self, p) -> float:
        """n . p + d; positive on the camera side of the plane."""
        return float(self.normal @ _as_vec3(p) + self.distance)


@dataclass(frozen=True)
class ReflectionTransform:
    """Homogeneous reflection ``p -> H p + t`` with Householder block H."""

    householder: np.ndarray
    translation: np.ndarray
    matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        H = np.asarray(self.householder, dtype=float)
        t = _as_vec3(self.translation)
        object.__setattr__(self, "householder", H)
        object.__setattr__(self, "translation", t)
        M = np.eye(4)
        M[:3, :3] = H
        M[:3, 3] = t
        object.__setattr__(self, "matrix", M)

    def apply(self, p) -> np.ndarray:
        return self.householder @ _as_vec3(p) + self.translation

    @classmethod
    def identity(cls) -> "ReflectionTransform":
        return cls(np.eye(3), np.zeros(3))


def make_reflection(mirror: Mirror) -> ReflectionTransform:
    """Reflection across the mirror plane: H = I - 2 n n^T, t = -2 d n."""
    n = mirror.normal
    H = np.eye(3) - 2.0 * np.outer(n, n)
    return ReflectionTransform(H, -2.0 * mirror.distance * n)


def reflect_point(transform: ReflectionTransform, p) -> np.ndarray:
    return transform.apply(p)


def validate_sequence(seq, n_mirrors: int) -> tuple[int, ...]:
    """Check the no-consecutive-repeat and index-range rules; returns a tuple."""
    s = tuple(int(i) for i in seq)
    for i in s:
        if not 1 <= i <= n_mirrors:
            raise InvalidSequenceError(f"mirror index {i} outside 1..{n_mirrors}")
    for a, b in zip(s, s[1:]):
        if a == b:
            raise InvalidSequenceError(f"consecutive duplicate mirror index in {s}")
    return s


def compose_reflections(seq, mirrors) -> ReflectionTransform:
    """Product S_{i1} S_{i2} ... S_{ik}, outermost mirror first.

    ``compose_reflections("12", mirrors)`` maps p0 to the point observed in
    chamber "12": S_1 (S_2 p0). The empty sequence is the identity.
    """
    s = validate_sequence(seq, len(mirrors))
    H = np.eye(3)
    t = np.zeros(3)
    for i in s:
        Si = make_reflection(mirrors[i - 1])
        # (H, t) o (Hi, ti): first apply Si, then the transform built so far.
        t = H @ Si.translation + t
        H = H @ Si.householder
    return ReflectionTransform(H, t)


def project(camera: CameraIntrinsics, p) -> np.ndarray:
    """Pinhole projection to pixel coordinates; depth must be positive."""
    v = _as_vec3(p)
    if v[2] <= 0:
        raise BehindCameraError(f"point has non-positive depth {v[2]!r}")
    return np.array(
        [camera.fx * v[0] / v[2] + camera.cx, camera.fy * v[1] / v[2] + camera.cy]
    )


def normalize(camera: CameraIntrinsics, pixel) -> np.ndarray:
    """Pixel -> normalized image coordinates (x, y) with implicit third coord 1."""
    q = np.asarray(pixel, dtype=float)
    return np.array([(q[0] - camera.cx) / camera.fx, (q[1] - camera.cy) / camera.fy])


def normalized_homogeneous(camera: CameraIntrinsics, pixel) -> np.ndarray:
    x, y = normalize(camera, pixel)
    return np.array([x, y, 1.0])


def kpc_row(a, b) -> np.ndarray:
    """Kaleidoscopic projection constraint row for a doublet.

    ``a`` is the normalized projection of a point, ``b`` of its single
    reflection across some mirror; the returned row is orthogonal to that
    mirror's normal: (ya - yb, xb - xa, xa*yb - xb*ya) . n = 0.
    """
    xa, ya = float(a[0]), float(a[1])
    xb, yb = float(b[0]), float(b[1])
    return np.array([ya - yb, xb - xa, xa * yb - xb * ya])


def sequence_label(seq, n_mirrors: int | None = None) -> str:
    """Text form of a sequence: concatenated digits, hyphen-separated if any
    index needs more than one digit."""
    s = tuple(int(i) for i in seq)
    if not s:
        return ""
    wide = (n_mirrors is not None and n_mirrors > 9) or any(i > 9 for i in s)
    return "-".join(str(i) for i in s) if wide else "".join(str(i) for i in s)


def parse_label(label: str) -> tuple[int, ...]:
    """Inverse of :func:`sequence_label` (structure only, no range check)."""
    if label == "":
        return ()
    parts = label.split("-") if "-" in label else list(label)
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise InvalidSequenceError(f"unparseable sequence label {label!r}") from exc


def sequence_order(seq) -> int:
    return len(tuple(seq))
