"""Regenerate the versioned scenario fixtures shipped with the package.

The two scenarios replicate the simulation protocol's camera (fx=fy=1000,
cx=800, cy=600, 1600x1200) with mirrors tilted 5 degrees. Mirror poses and
base points were chosen so that every reflection sequence up to the
scenario's maximum order is visible, with margin for the randomized point
placement used by per-trial sampling (the ``sample_*`` keys). The chosen
poses are verified here against the package's own visibility oracle before
being written.

    python scripts/make_fixtures.py [--out src/kaleidocal/fixtures]
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from kaleidocal.geometry import CameraIntrinsics, Mirror
from kaleidocal.io import dump_json, scene_config_to_dict
from kaleidocal.synthesis import MirrorSystemConfig, enumerate_reflections, is_visible

CAMERA = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=800.0, cy=600.0, width=1600, height=1200)
TILT_DEG = 5.0


def two_mirror_scenario():
    """Two near-vertical mirrors left/right of the axis, leaning toward each
    other so their planes meet in front of the scene point."""
    t = math.radians(TILT_DEG)
    mirrors = (
        Mirror(np.array([-math.cos(t), 0.0, -math.sin(t)]), 1.0),
        Mirror(np.array([math.cos(t), 0.0, -math.sin(t)]), 1.0),
    )
    config = MirrorSystemConfig(camera=CAMERA, mirrors=mirrors, max_order=3)
    point = np.array([0.0, -0.2, 6.0])
    extras = {
        "name": "two-mirror-order3",
        "sample_center": [0.0, -0.2, 6.0],
        "sample_half_extent": [0.35, 0.8, 1.0],
    }
    return config, point, extras


def three_mirror_scenario():
    """Three mirrors around the optical axis (azimuths 90/210/330 degrees),
    each tilted 5 degrees out of the axis-parallel orientation."""
    t = math.radians(TILT_DEG)
    mirrors = []
    for phi_deg in (90.0, 210.0, 330.0):
        phi = math.radians(phi_deg)
        inward = -np.array([math.cos(phi), math.sin(phi), 0.0])
        n = math.cos(t) * inward - math.sin(t) * np.array([0.0, 0.0, 1.0])
        mirrors.append(Mirror.from_direction(n, 1.0))
    config = MirrorSystemConfig(camera=CAMERA, mirrors=tuple(mirrors), max_order=2)
    point = np.array([-0.05, -0.15, 3.4])
    extras = {
        "name": "three-mirror-order2",
        "sample_center": [-0.05, -0.1, 3.55],
        "sample_half_extent": [0.15, 0.12, 0.15],
    }
    return config, point, extras


def check_scenario(config, point):
    sequences = enumerate_reflections(config)
    missing = [s for s in sequences if not is_visible(s, point, config)]
    if missing:
        raise SystemExit(f"fixture point does not see sequences {missing}")
    return len(sequences)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="src/kaleidocal/fixtures")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for builder, fname in (
        (two_mirror_scenario, "two_mirror_order3.json"),
        (three_mirror_scenario, "three_mirror_order2.json"),
    ):
        config, point, extras = builder()
        n_seq = check_scenario(config, point)
        dump_json(out / fname, scene_config_to_dict(config, [point], extras))
        print(f"wrote {out / fname} ({n_seq} sequences visible)")


if __name__ == "__main__":
    main()
