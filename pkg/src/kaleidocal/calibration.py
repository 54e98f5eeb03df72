"""Mirror-parameter estimation from labeled kaleidoscopic projections.

Input observations are given per landmark as ``{sequence: pixel}`` maps.
The linear stage first recovers every mirror normal as the null space of its
stacked projection-constraint rows (doublets of any order contribute), then
recovers all distances and the landmark positions jointly from the stacked
collinearity constraints, fixing the scale gauge at d1 = 1. A damped
least-squares bundle adjustment refines everything against the reprojection
error, keeping d1 frozen and the normals on the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import resolve_normal_sign
from .errors import (
    DegenerateGeometryError,
    InsufficientDataError,
    InvalidInputError,
)
from .geometry import (
    CameraIntrinsics,
    Mirror,
    kpc_row,
    normalize,
    normalized_homogeneous,
)

DEGENERATE_GAP = 1e-9
EIGEN_ISOLATION_RATIO = 0.5


@dataclass(frozen=True)
class CalibrationEstimate:
    """Mirror set plus one recovered 3D point per landmark.

    ``gauge_normalized`` records whether the d1 = 1 scale convention has been
    applied; projections are invariant under this rescaling.
    """

    mirrors: tuple[Mirror, ...]
    points: np.ndarray
    gauge_normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mirrors", tuple(self.mirrors))
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)

    def normalized(self) -> "CalibrationEstimate":
        d1 = self.mirrors[0].distance
        mirrors = tuple(Mirror(m.normal, m.distance / d1) for m in self.mirrors)
        return CalibrationEstimate(mirrors, self.points / d1, gauge_normalized=True)

    @property
    def distances(self) -> np.ndarray:
        return np.array([m.distance for m in self.mirrors])

    @property
    def normals(self) -> np.ndarray:
        return np.stack([m.normal for m in self.mirrors])


def _sorted_sequences(observation_map) -> list[tuple[int, ...]]:
    return sorted(observation_map, key=lambda s: (len(s), s))


def doublets_for_mirror(observation_map, mirror_index: int):
    """All observed (q_s, q_{i.s}) pairs for mirror i in one landmark's map:
    the single-reflection pair plus every higher-order pair whose outer
    reflection is mirror i."""
    pairs = []
    for seq in _sorted_sequences(observation_map):
        outer = (mirror_index,) + seq
        if seq[:1] != (mirror_index,) and outer in observation_map:
            pairs.append((observation_map[seq], observation_map[outer]))
    return pairs


def estimate_normals_linear(camera: CameraIntrinsics, n_mirrors: int, observations):
    """Each normal from the null space of its stacked constraint rows, sign
    fixed by triangulating one doublet in front of the camera."""
    normals = []
    for i in range(1, n_mirrors + 1):
        rows = []
        sign_pair = None
        for obs in observations:
            for q, q_ref in doublets_for_mirror(obs, i):
                a = normalize(camera, q)
                b = normalize(camera, q_ref)
                rows.append(kpc_row(a, b))
                if sign_pair is None:
                    sign_pair = (a, b)
        if len(rows) < 2:
            raise InsufficientDataError(
                f"mirror {i}: need at least two doublets, found {len(rows)}"
            )
        M = np.stack(rows)
        _, s, vh = np.linalg.svd(M)
        smin = float(s[2]) if len(s) >= 3 else 0.0
        if float(s[1]) - smin < DEGENERATE_GAP:
            raise DegenerateGeometryError(
                f"mirror {i}: constraint rows are linearly dependent (parallel mirrors)"
            )
        normals.append(resolve_normal_sign(vh[2], *sign_pair).normal)
    return normals


def _skew(x):
    return np.array([[0.0, -x[2], x[1]], [x[2], 0.0, -x[0]], [-x[1], x[0], 0.0]])


def estimate_distances_linear(camera: CameraIntrinsics, normals, observations):
    """Landmark positions and mirror distances from the stacked collinearity
    constraints of every observation, solved as the smallest eigenvector of
    K^T K, sign-fixed to positive depths and rescaled to d1 = 1.

    Returns (points, distances) with one 3D point per landmark.
    """
    m = len(normals)
    n_l = len(observations)
    cols = 3 * n_l + m
    if not observations or not any(observations):
        raise InsufficientDataError("no observations to constrain distances")
    K = build_collinearity_matrix(camera, normals, observations)
    if K.shape[0] < cols:
        raise InsufficientDataError(
            f"only {K.shape[0]} constraint rows for {cols} unknowns"
        )
    w, v = np.linalg.eigh(K.T @ K)
    if w[0] > EIGEN_ISOLATION_RATIO * max(w[1], 1e-300):
        raise DegenerateGeometryError(
            "smallest eigenvalue of the collinearity system is not isolated"
        )
    u = v[:, 0]
    depths = u[2 : 3 * n_l : 3]
    sign = 1.0 if np.sum(depths > 0) >= np.sum(depths < 0) else -1.0
    u = sign * u
    depths = u[2 : 3 * n_l : 3]
    if np.any(depths <= 0):
        raise DegenerateGeometryError("recovered depths have mixed signs")
    d = u[3 * n_l :]
    if d[0] <= 0:
        raise DegenerateGeometryError("recovered d1 is not positive")
    u = u / d[0]
    points = u[: 3 * n_l].reshape(n_l, 3)
    distances = u[3 * n_l :]
    if np.any(distances <= 0):
        raise DegenerateGeometryError("recovered mirror distances are not all positive")
    return points, distances


def build_collinearity_matrix(camera: CameraIntrinsics, normals, observations) -> np.ndarray:
    """The stacked K matrix alone (rank-property checks)."""
    normals = [np.asarray(n, dtype=float) for n in normals]
    m = len(normals)
    H = [np.eye(3) - 2.0 * np.outer(n, n) for n in normals]
    n_l = len(observations)
    cols = 3 * n_l + m
    blocks = []
    for l, obs in enumerate(observations):
        for seq in _sorted_sequences(obs):
            x = normalized_homogeneous(camera, obs[seq])
            S = _skew(x)
            R = np.eye(3)
            coeff = np.zeros((3, m))
            for i in seq:
                coeff[:, i - 1] += R @ (-2.0 * normals[i - 1])
                R = R @ H[i - 1]
            row = np.zeros((3, cols))
            row[:, 3 * l : 3 * l + 3] = S @ R
            row[:, 3 * n_l :] = S @ coeff
            blocks.append(row)
    return np.concatenate(blocks, axis=0)


def calibrate_linear(camera: CameraIntrinsics, n_mirrors: int, observations) -> CalibrationEstimate:
    """Linear pipeline: normals, then distances and points, d1 = 1 gauge."""
    normals = estimate_normals_linear(camera, n_mirrors, observations)
    points, distances = estimate_distances_linear(camera, normals, observations)
    mirrors = tuple(Mirror(n, d) for n, d in zip(normals, distances))
    return CalibrationEstimate(mirrors, points, gauge_normalized=True)


class _Reprojector:
    """Precomputed observation layout for fast residual evaluation."""

    def __init__(self, camera: CameraIntrinsics, observations):
        self.camera = camera
        rows = []  # (landmark, sequence) in residual order
        pixels = []
        for l, obs in enumerate(observations):
            for seq in _sorted_sequences(obs):
                rows.append((l, seq))
                pixels.append(np.asarray(obs[seq], dtype=float))
        self.rows = rows
        self.pixels = np.stack(pixels) if pixels else np.zeros((0, 2))
        self.sequences = sorted({seq for _, seq in rows}, key=lambda s: (len(s), s))
        self.groups = {
            seq: [k for k, (_, s) in enumerate(rows) if s == seq] for seq in self.sequences
        }
        self.group_landmarks = {
            seq: [rows[k][0] for k in self.groups[seq]] for seq in self.sequences
        }

    def residuals(self, normals, distances, points) -> np.ndarray:
        """(N_obs, 2) observed-minus-projected; rows behind the camera are inf."""
        m = len(normals)
        H = [np.eye(3) - 2.0 * np.outer(n, n) for n in normals]
        t = [-2.0 * d * n for n, d in zip(normals, distances)]
        out = np.empty_like(self.pixels)
        fx, fy = self.camera.fx, self.camera.fy
        cx, cy = self.camera.cx, self.camera.cy
        for seq in self.sequences:
            R = np.eye(3)
            tv = np.zeros(3)
            for i in seq:
                tv = tv + R @ t[i - 1]
                R = R @ H[i - 1]
            p = points[self.group_landmarks[seq]] @ R.T + tv
            z = p[:, 2]
            idx = self.groups[seq]
            with np.errstate(divide="ignore", invalid="ignore"):
                proj = np.column_stack([fx * p[:, 0] / z + cx, fy * p[:, 1] / z + cy])
            res = self.pixels[idx] - proj
            res[z <= 0] = np.inf
            out[idx] = res
        return out


def reprojection_error(camera: CameraIntrinsics, estimate: CalibrationEstimate, observations):
    """Residual vector ordered (landmark, then reflection order) plus RMS and
    the mean per-observation magnitude. Observations whose predicted
    reflection falls behind the camera get infinite residuals."""
    rep = _Reprojector(camera, observations)
    res = rep.residuals(estimate.normals, estimate.distances, estimate.points)
    mags = np.linalg.norm(res, axis=1)
    rms = float(np.sqrt(np.mean(res**2))) if res.size else 0.0
    mean = float(np.mean(mags)) if mags.size else 0.0
    return res, rms, mean


def _tangent_basis(n):
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, ref)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


@dataclass
class BundleAdjustInfo:
    n_iterations: int
    converged: bool
    cost_history: list[float]

    @property
    def initial_cost(self) -> float:
        return self.cost_history[0]

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1]


class BundleAdjustProblem:
    """Residuals and numeric Jacobian of the reprojection cost, parameterized
    around an anchor state.

    Parameters are [points (3 per landmark), 2 tangent-plane coordinates per
    mirror normal, distances d2..dm]; d1 is frozen at 1 by the gauge. The
    anchor is re-centered on every accepted step, so the tangent coordinates
    stay small and renormalization keeps the normals exactly unit.
    """

    def __init__(self, camera, estimate: CalibrationEstimate, observations):
        est = estimate if estimate.gauge_normalized else estimate.normalized()
        self.rep = _Reprojector(camera, observations)
        self.anchor_normals = [m.normal.copy() for m in est.mirrors]
        self.anchor_distances = [m.distance for m in est.mirrors]
        self.anchor_points = est.points.copy()
        self.m = len(est.mirrors)
        self.n_l = est.points.shape[0]
        self._bases = [_tangent_basis(n) for n in self.anchor_normals]

    @property
    def n_params(self) -> int:
        return 3 * self.n_l + 2 * self.m + (self.m - 1)

    def unpack(self, x):
        pts = self.anchor_points + x[: 3 * self.n_l].reshape(self.n_l, 3)
        normals = []
        for k in range(self.m):
            a, b = x[3 * self.n_l + 2 * k : 3 * self.n_l + 2 * k + 2]
            t1, t2 = self._bases[k]
            n = self.anchor_normals[k] + a * t1 + b * t2
            normals.append(n / np.linalg.norm(n))
        off = 3 * self.n_l + 2 * self.m
        distances = [1.0] + [self.anchor_distances[k] + x[off + k - 1] for k in range(1, self.m)]
        return normals, distances, pts

    def residuals(self, x) -> np.ndarray:
        normals, distances, pts = self.unpack(x)
        return self.rep.residuals(normals, distances, pts).ravel()

    def cost(self, x) -> float:
        r = self.residuals(x)
        return float(r @ r) if np.all(np.isfinite(r)) else np.inf

    def jacobian(self, x, step=1e-6) -> np.ndarray:
        """Central-difference Jacobian of the residual vector."""
        r0 = self.residuals(x)
        J = np.empty((r0.size, x.size))
        for k in range(x.size):
            h = step * max(1.0, abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            J[:, k] = (self.residuals(xp) - self.residuals(xm)) / (2 * h)
        return J

    def rebase(self, x) -> None:
        """Move the anchor to the state described by x."""
        normals, distances, pts = self.unpack(x)
        self.anchor_normals = normals
        self.anchor_distances = distances
        self.anchor_points = pts
        self._bases = [_tangent_basis(n) for n in self.anchor_normals]

    def estimate(self) -> CalibrationEstimate:
        mirrors = tuple(
            Mirror(n, d) for n, d in zip(self.anchor_normals, self.anchor_distances)
        )
        return CalibrationEstimate(mirrors, self.anchor_points, gauge_normalized=True)


def kaleidoscopic_bundle_adjustment(
    camera: CameraIntrinsics,
    estimate: CalibrationEstimate,
    observations,
    max_iterations: int = 200,
    damping_init: float = 1e-3,
    cost_tol: float = 1e-12,
    max_rejects: int = 60,
):
    """Damped least-squares refinement of {points, normals, distances}.

    The accepted-step cost sequence is non-increasing by construction;
    damping is multiplied by 10 on a rejected step and divided by 10 on an
    accepted one. Stops when the relative cost decrease drops below
    ``cost_tol``, the damping explodes, or ``max_iterations`` accepted steps
    were taken (then ``converged`` is False).
    """
    problem = BundleAdjustProblem(camera, estimate, observations)
    zero = np.zeros(problem.n_params)
    cost = problem.cost(zero)
    if not np.isfinite(cost):
        raise InvalidInputError("bundle adjustment initialized at an infeasible state")
    history = [cost]
    if cost == 0.0:
        return problem.estimate(), BundleAdjustInfo(0, True, history)

    mu = damping_init
    n_iter = 0
    converged = False
    while n_iter < max_iterations:
        J = problem.jacobian(zero)
        r = problem.residuals(zero)
        JtJ = J.T @ J
        Jtr = J.T @ r
        accepted = False
        for _ in range(max_rejects):
            try:
                delta = np.linalg.solve(JtJ + mu * np.eye(JtJ.shape[0]), -Jtr)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            new_cost = problem.cost(delta)
            if new_cost < cost:
                problem.rebase(delta)
                rel = (cost - new_cost) / max(cost, 1e-300)
                cost = new_cost
                history.append(cost)
                mu = max(mu / 10.0, 1e-15)
                n_iter += 1
                accepted = True
                if rel < cost_tol or cost == 0.0:
                    converged = True
                break
            mu *= 10.0
            if mu > 1e14:
                break
        if not accepted or converged:
            converged = True
            break

    return problem.estimate(), BundleAdjustInfo(n_iter, converged, history)


def calibrate(camera: CameraIntrinsics, n_mirrors: int, observations, run_ba: bool = True):
    """Linear pipeline plus optional bundle adjustment.

    Returns (estimate, info) where info is None when ``run_ba`` is False.
    """
    est = calibrate_linear(camera, n_mirrors, observations)
    if not run_ba:
        return est, None
    return kaleidoscopic_bundle_adjustment(camera, est, observations)
