"""Curate two synthetic clips: a static camera sweep and the same sweep with a moving object.

Both clips are written in the command-line formats (PPM frames, FLO flows,
track CSV) under ``--workdir`` so they can also be fed to ``mvcond curate``.
The moving object is simulated by adding a constant offset to the flow of a
central block, which no single epipolar geometry can explain.
"""

import argparse
from pathlib import Path

import numpy as np

from mvcond import io
from mvcond.camgeo import reproject_points
from mvcond.curation import ClipBundle, CurationConfig, TrackSet, curate_clip
from mvcond.synthetic import render, rigid_flow, sweep_trajectory


def make_clip(n, h, w, seed):
    cams = sweep_trajectory(n, h, w, span=1.2, yaw_span=0.3)
    frames, depths = zip(*(render(c, h, w) for c in cams))
    flows = [rigid_flow(depths[i], cams[i], cams[i + 1]) for i in range(n - 1)]
    gen = np.random.default_rng(seed)
    px = np.stack([gen.uniform(0, w, 100), gen.uniform(0, h, 100)], -1)
    d = depths[0][px[:, 1].astype(int), px[:, 0].astype(int)]
    pos = np.stack([reproject_points(px, d, cams[0], c)[0] for c in cams], axis=1)
    return list(frames), flows, TrackSet(list(range(100)), pos, np.ones((100, n), bool))


def write_clip(root: Path, frames, flows, tracks):
    for sub in ("frames", "flows"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        io.write_ppm(root / "frames" / f"frame_{i:04d}.ppm", f)
    for i, f in enumerate(flows):
        io.write_flo(root / "flows" / f"flow_{i:04d}.flo", f)
    io.write_tracks_csv(root / "tracks.csv", tracks)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=Path("curation_demo"))
    parser.add_argument("--frames", type=int, default=8)
    parser.add_argument("--height", type=int, default=96)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    h, w = args.height, args.width
    frames, flows, tracks = make_clip(args.frames, h, w, args.seed)
    moving = [f.copy() for f in flows]
    for f in moving:
        f[h // 3:2 * h // 3, w // 3:2 * w // 3] += (0.0, 4.0)

    cfg = CurationConfig(temporal_rate=1, target_short_side=None, seed=args.seed)
    for name, fl in (("static", flows), ("moving", moving)):
        write_clip(args.workdir / name, frames, fl, tracks)
        report = curate_clip(ClipBundle(frames, None, fl, tracks), cfg)
        (args.workdir / name / "report.json").write_text(report.to_json() + "\n")
        print(f"{name}: {report.verdict}" + (f" ({report.reason})" if report.reason else ""))
        for step in report.steps:
            print(f"  {step['name']:16s} {step['status']}")
    print(f"clips and reports in {args.workdir}")


if __name__ == "__main__":
    main()
