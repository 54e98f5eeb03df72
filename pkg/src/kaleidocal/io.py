"""Versioned JSON/CSV schemas shared by the CLI and the experiment harness.

All JSON documents carry ``schema_version``; all CSV files use a comma
separator, dot decimal, and a mandatory header row. Serialization is
deterministic: keys are sorted and floats use their shortest round-trip
representation, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import CameraIntrinsics, Mirror, parse_label, sequence_label
from .synthesis import MirrorSystemConfig

SCHEMA_VERSION = 1


def dump_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"not valid JSON: {path}") from exc


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise InvalidInputError(f"missing key {key!r} in {where}")
    return d[key]


def camera_to_dict(camera: CameraIntrinsics) -> dict:
    return {
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
    }


def camera_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=float(_require(d, "fx", "camera")),
        fy=float(_require(d, "fy", "camera")),
        cx=float(_require(d, "cx", "camera")),
        cy=float(_require(d, "cy", "camera")),
        width=int(_require(d, "width", "camera")),
        height=int(_require(d, "height", "camera")),
    )


def mirror_to_dict(mirror: Mirror) -> dict:
    return {"normal": [float(v) for v in mirror.normal], "distance": mirror.distance}


def mirror_from_dict(d: dict) -> Mirror:
    return Mirror.from_direction(
        np.asarray(_require(d, "normal", "mirror"), dtype=float),
        float(_require(d, "distance", "mirror")),
    )


def scene_config_to_dict(config: MirrorSystemConfig, points, extras: dict | None = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "camera": camera_to_dict(config.camera),
        "mirrors": [mirror_to_dict(m) for m in config.mirrors],
        "points": [[float(v) for v in p] for p in points],
        "max_order": config.max_order,
        "sigma": config.sigma,
        "seed": config.seed,
    }
    if extras:
        doc.update(extras)
    return doc


def scene_config_from_dict(doc: dict) -> tuple[MirrorSystemConfig, list[np.ndarray]]:
    config = MirrorSystemConfig(
        camera=camera_from_dict(_require(doc, "camera", "scene config")),
        mirrors=tuple(mirror_from_dict(m) for m in _require(doc, "mirrors", "scene config")),
        max_order=int(doc.get("max_order", 2)),
        seed=int(doc.get("seed", 0)),
        sigma=float(doc.get("sigma", 0.0)),
    )
    points = [np.asarray(p, dtype=float) for p in doc.get("points", [])]
    return config, points


def load_scene_config(path) -> tuple[MirrorSystemConfig, list[np.ndarray], dict]:
    doc = load_json(path)
    config, points = scene_config_from_dict(doc)
    return config, points, doc


def write_candidates_csv(path, pixels, ids=None) -> None:
    pixels = np.asarray(pixels, dtype=float)
    if ids is None:
        ids = range(len(pixels))
    lines = ["id,u,v"]
    lines += [f"{int(i)},{float(p[0])!r},{float(p[1])!r}" for i, p in zip(ids, pixels)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_candidates_csv(path) -> tuple[list[int], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0].split(",")[:3] != ["id", "u", "v"]:
        raise InvalidInputError(f"candidate CSV must start with an 'id,u,v' header: {path}")
    ids, pix = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) < 3:
            raise InvalidInputError(f"malformed candidate row {ln!r}")
        ids.append(int(parts[0]))
        pix.append([float(parts[1]), float(parts[2])])
    return ids, np.asarray(pix, dtype=float) if pix else np.zeros((0, 2))


def truth_labels_to_dict(labels: dict[int, tuple]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "labels": {str(i): sequence_label(seq) for i, seq in labels.items()},
    }


def truth_labels_from_dict(doc: dict) -> dict[int, tuple[int, ...]]:
    return {int(i): parse_label(s) for i, s in _require(doc, "labels", "labels file").items()}


def assignment_to_dict(result) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "labels": {str(i): sequence_label(seq) for i, seq in sorted(result.labels.items())},
        "recall": result.recall,
        "residual": result.residual,
        "mirrors": [mirror_to_dict(m) for m in result.mirrors],
        "p0": [float(v) for v in result.p0],
        "pruning_counts": dict(result.pruning_counts),
        "n_hypotheses": result.n_hypotheses,
    }


def observations_to_dict(landmarks) -> dict:
    """``landmarks`` is a list of {sequence tuple: pixel} dicts, one per landmark."""
    out = []
    for lid, obs in enumerate(landmarks):
        rows = [
            {"label": sequence_label(seq), "u": float(px[0]), "v": float(px[1])}
            for seq, px in sorted(obs.items(), key=lambda kv: (len(kv[0]), kv[0]))
        ]
        out.append({"id": lid, "observations": rows})
    return {"schema_version": SCHEMA_VERSION, "landmarks": out}


def observations_from_dict(doc: dict) -> list[dict[tuple[int, ...], np.ndarray]]:
    landmarks = []
    for entry in _require(doc, "landmarks", "observations file"):
        obs = {}
        for row in _require(entry, "observations", "landmark entry"):
            seq = parse_label(str(_require(row, "label", "observation")))
            obs[seq] = np.array([float(row["u"]), float(row["v"])])
        landmarks.append(obs)
    return landmarks


def calibration_to_dict(estimate, e_rep=None, n_iter=None, converged=None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "mirrors": [mirror_to_dict(m) for m in estimate.mirrors],
        "points": [[float(v) for v in p] for p in np.atleast_2d(estimate.points)],
    }
    if e_rep is not None:
        doc["e_rep"] = float(e_rep)
    if n_iter is not None:
        doc["n_iter"] = int(n_iter)
    if converged is not None:
        doc["converged"] = bool(converged)
    return doc


def csv_table(header: list[str], rows: list[list]) -> str:
    """Deterministic CSV text: floats via repr, everything else via str."""

    def cell(v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (np.floating,)):
            return repr(float(v))
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
