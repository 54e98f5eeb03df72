"""Chamber assignment by exhaustive base-structure hypothesis testing.

Every ordered selection of 2*N mirrors candidate points is interpreted as a
base structure (base point, its reflection by a pivot mirror, and one doublet
per remaining mirror sharing that pivot). Each hypothesis is scored by the
feasibility of the stacked projection-constraint system, pruned by two
geometric propositions (the base point is nearest to the camera; mirror
normals pairwise face each other), and surviving hypotheses are ranked by the
recall of a discontinuity-aware label propagation.

All 2D math here runs in normalized image coordinates; pixel inputs are
normalized once up front. Hypothesis evaluation is vectorized over chunks of
the permutation table so the three-mirror 151,200-candidate search stays
interactive.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InfeasibleHypothesisError,
    InvalidInputError,
    NoSolutionError,
)
from .geometry import (
    CameraIntrinsics,
    Mirror,
    compose_reflections,
    kpc_row,
    normalize,
    project,
)
from .synthesis import _segment_visible, enumerate_sequences

DEGENERATE_GAP = 1e-9
DEFAULT_KPC_THRESHOLD = 0.01
CHUNK = 65536


@dataclass(frozen=True)
class Doublet:
    """Candidate indices of a projection and its single-mirror reflection."""

    un_reflected: int
    reflected: int


@dataclass(frozen=True)
class BaseStructureHypothesis:
    """A labeling guess: N doublets sharing one pivot mirror.

    ``doublets[0]`` pairs the hypothesized base point with its pivot-mirror
    reflection; ``doublets[m-1]`` (m >= 2) pairs the first reflection by
    mirror m with its second reflection through the pivot.
    """

    base: int
    pivot_mirror: int
    doublets: tuple[Doublet, ...]

    @property
    def slots(self) -> tuple[int, ...]:
        out = []
        for d in self.doublets:
            out.extend((d.un_reflected, d.reflected))
        return tuple(out)

    def implied_labels(self) -> dict[int, tuple[int, ...]]:
        j = self.pivot_mirror
        labels = {self.base: (), self.doublets[0].reflected: (j,)}
        others = [m for m in range(1, len(self.doublets) + 1) if m != j]
        for m, d in zip(others, self.doublets[1:]):
            labels[d.un_reflected] = (m,)
            labels[d.reflected] = (j, m)
        return labels


@dataclass(frozen=True)
class AssignmentConfig:
    """Knobs for the assignment search."""

    camera: CameraIntrinsics
    n_mirrors: int
    max_order: int = 2
    kpc_threshold: float = DEFAULT_KPC_THRESHOLD
    match_threshold: float | None = None
    sigma: float = 0.0
    threads: int = 1

    def effective_match_threshold(self) -> float:
        if self.match_threshold is not None:
            return self.match_threshold
        return max(5.0, 3.0 * self.sigma)


@dataclass
class AssignmentResult:
    """Winning hypothesis: labels, mirrors, base point, and search statistics."""

    labels: dict[int, tuple[int, ...]]
    mirrors: list[Mirror]
    p0: np.ndarray
    recall: float
    residual: float
    pruning_counts: dict[str, int]
    n_hypotheses: int
    winner_index: int


def enumerate_base_structures(num_candidates: int, n_mirrors: int):
    """Every ordered selection of 2*n_mirrors distinct candidates arranged as
    a base structure, in lexicographic slot order (pivot mirror fixed to 1;
    the other pivot choices are the same selections under a mirror renaming,
    which the permutation sweep already covers)."""
    for slots in itertools.permutations(range(num_candidates), 2 * n_mirrors):
        yield BaseStructureHypothesis(
            base=slots[0],
            pivot_mirror=1,
            doublets=tuple(Doublet(slots[2 * k], slots[2 * k + 1]) for k in range(n_mirrors)),
        )


def normal_from_doublets(doublets) -> tuple[np.ndarray, float]:
    """Mirror normal (up to sign) from stacked constraint rows.

    ``doublets`` is a sequence of (un_reflected, reflected) normalized-point
    pairs sharing one mirror. Returns the unit null-space vector and the
    feasibility score E = smallest singular value / sum of singular values,
    where the singular value list is padded to length 3 for under-square
    systems (two doublets always admit an exact normal, so their E is 0).
    """
    pairs = list(doublets)
    if len(pairs) < 2:
        raise InvalidInputError("need at least two doublets to constrain a normal")
    M = np.stack([kpc_row(a, b) for a, b in pairs])
    _, s, vh = np.linalg.svd(M)
    smin = float(s[2]) if s.shape[0] >= 3 else 0.0
    second = float(s[1])
    if second - smin < DEGENERATE_GAP:
        raise DegenerateGeometryError(
            "constraint rows are rank deficient (parallel mirrors or repeated doublet)"
        )
    denom = float(np.abs(s).sum())
    return vh[2], smin / denom


def triangulate_doublet(q, q_ref, mirror: Mirror):
    """Depths of a doublet across a known mirror (distance convention d=1 or
    any fixed d): least squares of [H a | -b] (lam, lam')^T = 2*d*n with
    a, b the normalized homogeneous rays of q and its reflection q_ref.

    Returns (p, p_ref, lam, lam_ref). Raises if the doublet is coincident or
    the two rays are numerically dependent.
    """
    a = np.array([q[0], q[1], 1.0])
    b = np.array([q_ref[0], q_ref[1], 1.0])
    if float(np.max(np.abs(a - b))) < 1e-12:
        raise DegenerateGeometryError("coincident doublet: point lies on the mirror plane")
    n = mirror.normal
    Ha = a - 2.0 * (n @ a) * n
    B = np.column_stack([Ha, -b])
    rhs = 2.0 * mirror.distance * n
    BtB = B.T @ B
    det = BtB[0, 0] * BtB[1, 1] - BtB[0, 1] ** 2
    if abs(det) < 1e-18 * max(BtB[0, 0] * BtB[1, 1], 1e-30):
        raise DegenerateGeometryError("degenerate rays in doublet triangulation")
    lam = np.linalg.solve(BtB, B.T @ rhs)
    return lam[0] * a, lam[1] * b, float(lam[0]), float(lam[1])


def resolve_normal_sign(normal, q, q_ref) -> Mirror:
    """Pick the normal sign whose d=1 triangulation puts both doublet points
    in front of the camera."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    for cand in (n, -n):
        mirror = Mirror(cand, 1.0)
        _, _, lam, lam_ref = triangulate_doublet(q, q_ref, mirror)
        if lam > 0 and lam_ref > 0:
            return mirror
    raise InfeasibleHypothesisError("neither normal sign triangulates in front of the camera")


def mirror_from_point_pair(p, p_ref) -> Mirror:
    """Mirror through the midplane of two 3D points, camera-facing."""
    p = np.asarray(p, dtype=float)
    p_ref = np.asarray(p_ref, dtype=float)
    diff = p - p_ref
    norm = float(np.linalg.norm(diff))
    if norm < 1e-12 * max(1.0, float(np.linalg.norm(p))):
        raise InvalidInputError("coincident points define no mirror")
    n = diff / norm
    d = -0.5 * float(n @ (p + p_ref))
    if d < 0:
        n, d = -n, -d
    if d == 0:
        raise InvalidInputError("mirror plane passes through the camera center")
    return Mirror(n, d)


def check_propositions(p0, first_reflections, mirrors) -> tuple[bool, str]:
    """Base-point-nearest (Prop 1) and mirrors-facing (Prop 2) checks.

    A failed check is a value, not an error: returns (passed, reason).
    """
    r0 = float(np.linalg.norm(p0))
    for i, p in enumerate(first_reflections, start=1):
        if not r0 < float(np.linalg.norm(p)):
            return False, f"prop1: base point not nearer than reflection {i}"
    for i, j in itertools.combinations(range(len(mirrors)), 2):
        if float(mirrors[i].normal @ mirrors[j].normal) >= 0:
            return False, f"prop2: mirrors {i + 1} and {j + 1} do not face each other"
    return True, "ok"


def synthesize_visible_projections(camera, mirrors, p0, max_order):
    """All visible reflections of p0 through the mirror set, as
    (sequence, pixel) in deterministic enumeration order."""
    p0 = np.asarray(p0, dtype=float)
    out = []
    for seq in enumerate_sequences(len(mirrors), max_order):
        reflected = compose_reflections(seq, mirrors).apply(p0)
        if reflected[2] <= 0:
            continue
        pixel = project(camera, reflected)
        if camera.contains(pixel) and _segment_visible(np.zeros(3), seq, reflected, mirrors):
            out.append((seq, pixel))
    return out


def propagate_labels(camera, mirrors, p0, candidates, max_order, distance_threshold):
    """Nearest-neighbor label propagation with recall.

    Synthesizes the visible reflections of the hypothesized structure and
    assigns each one its nearest candidate within the threshold (ties to the
    lowest candidate index). A candidate grabbed by several synthesized
    points keeps the label of smallest 2D distance. Recall is the fraction of
    synthesized points that found a candidate.
    """
    candidates = np.asarray(candidates, dtype=float)
    synth = synthesize_visible_projections(camera, mirrors, p0, max_order)
    if not synth or candidates.shape[0] == 0:
        return {}, 0.0
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    n_matched = 0
    for seq, pixel in synth:
        dists = np.linalg.norm(candidates - pixel, axis=1)
        j = int(np.argmin(dists))
        d = float(dists[j])
        if d > distance_threshold:
            continue
        n_matched += 1
        if j not in best or d < best[j][0]:
            best[j] = (d, seq)
    labels = {j: seq for j, (_, seq) in sorted(best.items())}
    recall = len(labels) / len(synth)
    return labels, recall


def _hypothesis_slot_table(num_candidates: int, n_mirrors: int) -> np.ndarray:
    return np.array(
        list(itertools.permutations(range(num_candidates), 2 * n_mirrors)), dtype=np.int32
    ).reshape(-1, 2 * n_mirrors)


def _evaluate_chunk(slots, xh, rows, n_mirrors, kpc_threshold):
    """Vectorized pruning of one chunk of hypotheses.

    Returns per-constraint pass masks (evaluated independently, so the
    pruning statistics match the exhaustive-table protocol) plus the
    recovered structure for every hypothesis in the chunk.
    """
    h = slots.shape[0]
    m = n_mirrors

    M = np.stack(
        [rows[slots[:, 2 * k], slots[:, 2 * k + 1]] for k in range(m)], axis=1
    )
    _, s, vh = np.linalg.svd(M)
    if s.shape[1] >= 3:
        smin, second = s[:, 2], s[:, 1]
    else:
        smin, second = np.zeros(h), s[:, 1]
    denom = s.sum(axis=1)
    ok_denom = denom > 0
    E = np.where(ok_denom, smin / np.where(ok_denom, denom, 1.0), np.inf)
    degen = (second - smin < DEGENERATE_GAP) | ~ok_denom
    kpc = (E < kpc_threshold) & ~degen

    n1 = vh[:, 2, :]

    def solve_doublet(xa, xb, n, rhs):
        # least squares of [ (I-2nn^T) xa | -xb ] lam = rhs, closed form 2x2
        Ha = xa - 2.0 * np.einsum("hi,hi->h", n, xa)[:, None] * n
        a = np.einsum("hi,hi->h", Ha, Ha)
        b = -np.einsum("hi,hi->h", Ha, xb)
        c = np.einsum("hi,hi->h", xb, xb)
        r0 = np.einsum("hi,hi->h", Ha, rhs)
        r1 = -np.einsum("hi,hi->h", xb, rhs)
        det = a * c - b * b
        bad = np.abs(det) < 1e-18 * np.maximum(a * c, 1e-30)
        safe = np.where(bad, 1.0, det)
        lam_a = (c * r0 - b * r1) / safe
        lam_b = (-b * r0 + a * r1) / safe
        return lam_a, lam_b, bad

    x0, x1 = xh[slots[:, 0]], xh[slots[:, 1]]
    lam0, lam1, bad = solve_doublet(x0, x1, n1, 2.0 * n1)
    pos = (lam0 > 0) & (lam1 > 0)
    neg = (lam0 < 0) & (lam1 < 0)
    sign = np.where(pos, 1.0, np.where(neg, -1.0, 0.0))
    feasible = (sign != 0) & ~bad & ~degen
    n1 = n1 * sign[:, None]
    lam0, lam1 = lam0 * sign, lam1 * sign

    p0 = lam0[:, None] * x0
    r0 = np.linalg.norm(p0, axis=1)
    prop1 = feasible & (r0 < np.linalg.norm(lam1[:, None] * x1, axis=1))

    normals = np.zeros((h, m, 3))
    dists = np.zeros((h, m))
    normals[:, 0] = n1
    dists[:, 0] = 1.0
    for k in range(1, m):
        xa, xb = xh[slots[:, 2 * k]], xh[slots[:, 2 * k + 1]]
        lam_a, _, bad_k = solve_doublet(xa, xb, n1, 2.0 * n1)
        feasible &= ~bad_k
        pm = lam_a[:, None] * xa
        prop1 &= r0 < np.linalg.norm(pm, axis=1)
        diff = p0 - pm
        norm = np.linalg.norm(diff, axis=1)
        good = norm > 1e-12
        feasible &= good
        nm = diff / np.where(good, norm, 1.0)[:, None]
        normals[:, k] = nm
        dists[:, k] = -0.5 * np.einsum("hi,hi->h", nm, p0 + pm)
    prop1 &= feasible

    prop2 = feasible.copy()
    for i, j in itertools.combinations(range(m), 2):
        prop2 &= np.einsum("hi,hi->h", normals[:, i], normals[:, j]) < 0

    return {
        "E": E,
        "kpc": kpc,
        "prop1": prop1,
        "prop2": prop2,
        "normals": normals,
        "dists": dists,
        "p0": p0,
    }


def evaluate_hypotheses(candidates, config: AssignmentConfig):
    """Run the pruning cascade over every base-structure hypothesis.

    Returns (pruning_counts, survivors, n_hypotheses) where survivors is a
    list of (hypothesis_index, E, mirrors, p0) for hypotheses passing all
    three constraints, in enumeration order.
    """
    candidates = np.asarray(candidates, dtype=float)
    norm = np.stack([normalize(config.camera, q) for q in candidates]) if len(candidates) else np.zeros((0, 2))
    n = norm.shape[0]
    xh = np.column_stack([norm, np.ones(n)]) if n else np.zeros((0, 3))

    # all ordered-pair constraint rows, indexed rows[a, b]
    X, Y = norm[:, 0], norm[:, 1]
    rows = np.stack(
        [
            Y[:, None] - Y[None, :],
            X[None, :] - X[:, None],
            X[:, None] * Y[None, :] - X[None, :] * Y[:, None],
        ],
        axis=-1,
    ) if n else np.zeros((0, 0, 3))

    slots = _hypothesis_slot_table(n, config.n_mirrors)
    total = slots.shape[0]
    counts = {"kpc": 0, "prop1": 0, "prop2": 0, "joint": 0, "all": 0}
    survivors = []

    chunks = [slots[i : i + CHUNK] for i in range(0, total, CHUNK)]

    def run(chunk):
        return _evaluate_chunk(chunk, xh, rows, config.n_mirrors, config.kpc_threshold)

    if config.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]

    offset = 0
    for chunk, res in zip(chunks, results):
        kpc, p1, p2 = res["kpc"], res["prop1"], res["prop2"]
        alive = kpc & p1 & p2
        counts["kpc"] += int(kpc.sum())
        counts["prop1"] += int(p1.sum())
        counts["prop2"] += int(p2.sum())
        counts["joint"] += int((p1 & p2).sum())
        counts["all"] += int(alive.sum())
        for i in np.flatnonzero(alive):
            mirrors = [
                Mirror(res["normals"][i, k], res["dists"][i, k])
                for k in range(config.n_mirrors)
            ]
            survivors.append((offset + int(i), float(res["E"][i]), mirrors, res["p0"][i]))
        offset += chunk.shape[0]

    return counts, survivors, total


def assign_chambers(candidates, config: AssignmentConfig) -> AssignmentResult:
    """Full chamber-assignment search: prune hypotheses, propagate labels for
    the survivors, return the one with the highest recall (ties: smaller
    feasibility score, then enumeration order)."""
    candidates = np.asarray(candidates, dtype=float)
    if candidates.shape[0] < 2 * config.n_mirrors:
        raise NoSolutionError(
            f"need at least {2 * config.n_mirrors} candidates, got {candidates.shape[0]}",
            {"kpc": 0, "prop1": 0, "prop2": 0, "joint": 0, "all": 0},
        )

    counts, survivors, total = evaluate_hypotheses(candidates, config)
    if not survivors:
        raise NoSolutionError("no base-structure hypothesis survived pruning", counts)

    threshold = config.effective_match_threshold()
    best = None
    for idx, E, mirrors, p0 in survivors:
        labels, recall = propagate_labels(
            config.camera, mirrors, p0, candidates, config.max_order, threshold
        )
        key = (recall, -E)
        if best is None or key > best[0]:
            best = (key, idx, labels, mirrors, p0, E, recall)

    _, idx, labels, mirrors, p0, E, recall = best
    return AssignmentResult(
        labels=labels,
        mirrors=mirrors,
        p0=np.asarray(p0, dtype=float),
        recall=recall,
        residual=E,
        pruning_counts=counts,
        n_hypotheses=total,
        winner_index=idx,
    )


def evaluate_single_hypothesis(candidates, hypothesis, config: AssignmentConfig):
    """Reference (non-vectorized) evaluation of one hypothesis.

    Returns a dict with the feasibility score, both proposition outcomes, and
    the recovered structure; used by the pruning-statistics trials to check
    that the ground-truth structure survives every stage.
    """
    candidates = np.asarray(candidates, dtype=float)
    norm = [normalize(config.camera, q) for q in candidates]
    pairs = [(norm[d.un_reflected], norm[d.reflected]) for d in hypothesis.doublets]
    try:
        n1, E = normal_from_doublets(pairs)
    except DegenerateGeometryError:
        return {"E": np.inf, "kpc": False, "prop1": False, "prop2": False}
    out = {"E": E, "kpc": E < config.kpc_threshold}
    try:
        pivot = resolve_normal_sign(n1, *pairs[0])
    except (InfeasibleHypothesisError, DegenerateGeometryError):
        out.update(prop1=False, prop2=False)
        return out
    p0, p1, _, _ = triangulate_doublet(*pairs[0], pivot)
    firsts = [p1]
    normals = [pivot.normal]
    distances = [pivot.distance]
    for q_m, q_jm in pairs[1:]:
        pm, _, _, _ = triangulate_doublet(q_m, q_jm, pivot)
        firsts.append(pm)
        diff = p0 - pm
        nm = diff / np.linalg.norm(diff)
        normals.append(nm)
        distances.append(-0.5 * float(nm @ (p0 + pm)))
    r0 = float(np.linalg.norm(p0))
    out["prop1"] = all(r0 < float(np.linalg.norm(p)) for p in firsts)
    out["prop2"] = all(
        float(normals[i] @ normals[j]) < 0
        for i, j in itertools.combinations(range(len(normals)), 2)
    )
    if all(d > 0 for d in distances):
        out["mirrors"] = [Mirror(n, d) for n, d in zip(normals, distances)]
        out["p0"] = p0
    return out
