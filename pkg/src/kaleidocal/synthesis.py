"""Forward model: synthesize kaleidoscopic projections with visibility handling.

Generates ground-truth scenes for the assignment and calibration pipelines:
enumerate reflection sequences, decide which reflections are actually visible
(field of view plus the bounce-by-bounce discontinuity test), project them,
and optionally perturb the pixels with seeded Gaussian noise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    CameraIntrinsics,
    Mirror,
    compose_reflections,
    make_reflection,
    project,
    sequence_label,
    validate_sequence,
)

PARALLEL_TOL = 1e-9
RAY_EPS = 1e-9


@dataclass(frozen=True)
class MirrorSystemConfig:
    """Camera, mirror set, and synthesis controls for one scene."""

    camera: CameraIntrinsics
    mirrors: tuple[Mirror, ...]
    max_order: int = 2
    seed: int = 0
    sigma: float = 0.0

    def __post_init__(self):
        mirrors = tuple(self.mirrors)
        object.__setattr__(self, "mirrors", mirrors)
        if len(mirrors) < 2:
            raise InvalidInputError("a kaleidoscopic system needs at least 2 mirrors")
        if self.max_order < 1:
            raise InvalidInputError("max_order must be >= 1")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be non-negative")
        for i, j in itertools.combinations(range(len(mirrors)), 2):
            dot = float(mirrors[i].normal @ mirrors[j].normal)
            if abs(dot) >= 1.0 - PARALLEL_TOL:
                raise InvalidInputError(f"mirrors {i + 1} and {j + 1} are parallel")
            if self.max_order >= 2 and dot >= 0:
                raise InvalidInputError(
                    f"mirrors {i + 1} and {j + 1} are not facing each other; "
                    "second reflections require n_i . n_j < 0"
                )

    @property
    def n_mirrors(self) -> int:
        return len(self.mirrors)


@dataclass(frozen=True)
class Observation:
    """One projected reflection of one scene point."""

    point_index: int
    sequence: tuple[int, ...]
    pixel: np.ndarray
    visible: bool

    @property
    def label(self) -> str:
        return sequence_label(self.sequence)

    @property
    def order(self) -> int:
        return len(self.sequence)


@dataclass(frozen=True)
class SyntheticScene:
    """Ground-truth points plus every projectable reflection, flagged by
    visibility. Candidate export keeps only the visible ones."""

    config: MirrorSystemConfig
    points: tuple[np.ndarray, ...]
    observations: tuple[Observation, ...] = field(default_factory=tuple)

    @property
    def mirrors(self) -> tuple[Mirror, ...]:
        return self.config.mirrors

    def visible_observations(self) -> list[Observation]:
        return [o for o in self.observations if o.visible]

    def candidates(self) -> np.ndarray:
        """(N, 2) pixel array of visible observations; row index is the
        candidate id used by CSV export and by the truth-label map."""
        vis = self.visible_observations()
        if not vis:
            return np.zeros((0, 2))
        return np.stack([o.pixel for o in vis])

    def truth_labels(self) -> dict[int, tuple[int, ...]]:
        return {i: o.sequence for i, o in enumerate(self.visible_observations())}


def enumerate_reflections(config: MirrorSystemConfig) -> list[tuple[int, ...]]:
    """All sequences of order 0..max_order, no consecutive repeats, ordered by
    (order, lexicographic)."""
    return enumerate_sequences(config.n_mirrors, config.max_order)


def enumerate_sequences(n_mirrors: int, max_order: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = [()]
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(max_order):
        frontier = [
            s + (i,) for s in frontier for i in range(1, n_mirrors + 1) if not s or s[-1] != i
        ]
        out.extend(frontier)
    return out


def _ray_plane_t(origin, direction, mirror: Mirror):
    """Parameter t with origin + t*direction on the mirror plane, or None if
    the ray is (numerically) parallel to it."""
    denom = float(mirror.normal @ direction)
    if abs(denom) < 1e-15:
        return None
    return -(float(mirror.normal @ origin) + mirror.distance) / denom


def _segment_visible(origin, seq, target, mirrors) -> bool:
    """Unfolded visibility test.

    The ray from ``origin`` toward the virtual point ``target`` must make its
    first forward mirror intersection on mirrors[seq[0]]; the reflected ray is
    then tested against the remaining sequence. With ``seq`` empty no mirror
    may cut the segment before the target.
    """
    direction = target - origin
    if not seq:
        for m in mirrors:
            t = _ray_plane_t(origin, direction, m)
            if t is not None and RAY_EPS < t < 1.0 - RAY_EPS:
                return False
        return True

    first = seq[0]
    t_first = _ray_plane_t(origin, direction, mirrors[first - 1])
    if t_first is None or not RAY_EPS < t_first < 1.0:
        return False
    for k, m in enumerate(mirrors, start=1):
        if k == first:
            continue
        t = _ray_plane_t(origin, direction, m)
        if t is not None and RAY_EPS < t < t_first:
            return False

    bounce = origin + t_first * direction
    reflected = make_reflection(mirrors[first - 1]).apply(target)
    return _segment_visible(bounce, seq[1:], reflected, mirrors)


def is_visible(seq, p0, config: MirrorSystemConfig) -> bool:
    """True iff the reflection of ``p0`` through ``seq`` is observable: it
    projects inside the image and the viewing ray reaches it bounce by bounce
    (no discontinuity, no occlusion of the direct leg)."""
    s = validate_sequence(seq, config.n_mirrors)
    p0 = np.asarray(p0, dtype=float)
    target = compose_reflections(s, config.mirrors).apply(p0)
    if target[2] <= 0:
        return False
    if not config.camera.contains(project(config.camera, target)):
        return False
    return _segment_visible(np.zeros(3), s, target, config.mirrors)


def synthesize_projections(config: MirrorSystemConfig, points) -> SyntheticScene:
    """Project every enumerated reflection of every point.

    Reflections that fall behind the camera are skipped (they have no pixel);
    everything else is recorded with its visibility flag. Noise is not
    applied here, see :func:`inject_noise`.
    """
    pts = tuple(np.asarray(p, dtype=float) for p in points)
    sequences = enumerate_reflections(config)
    transforms = [compose_reflections(s, config.mirrors) for s in sequences]
    observations = []
    for idx, p0 in enumerate(pts):
        if p0[2] <= 0:
            raise InvalidInputError(f"scene point {idx} has non-positive depth")
        for seq, tr in zip(sequences, transforms):
            reflected = tr.apply(p0)
            if reflected[2] <= 0:
                continue
            pixel = project(config.camera, reflected)
            visible = config.camera.contains(pixel) and _segment_visible(
                np.zeros(3), seq, reflected, config.mirrors
            )
            observations.append(Observation(idx, seq, pixel, visible))
    return SyntheticScene(config, pts, tuple(observations))


def _point_rng(seed: int, point_index: int) -> np.random.Generator:
    """Noise stream for one scene point.

    Stream-splitting rule: point ``i`` draws from
    Philox(SeedSequence(entropy=seed, spawn_key=(i,))), consumed as (du, dv)
    pairs in observation order. This keeps noise reproducible regardless of
    how synthesis is parallelized across points.
    """
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(point_index,)))
    )


def inject_noise(scene: SyntheticScene, sigma: float, seed: int) -> SyntheticScene:
    """Add zero-mean Gaussian pixel noise of std ``sigma``; sigma=0 is the
    identity, and a fixed seed gives identical output."""
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    if sigma == 0:
        return scene
    rngs = {i: _point_rng(seed, i) for i in range(len(scene.points))}
    noisy = [
        replace(o, pixel=o.pixel + rngs[o.point_index].normal(0.0, sigma, size=2))
        for o in scene.observations
    ]
    return replace(scene, observations=tuple(noisy))


def synthesize_scene(config: MirrorSystemConfig, points) -> SyntheticScene:
    """Forward model end to end: project, then apply the config's noise."""
    scene = synthesize_projections(config, points)
    return inject_noise(scene, config.sigma, config.seed)
