"""Command-line entry point.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from ._rng import rng as make_rng
from .camgeo import forward_warp
from .curation import ClipBundle, CurationConfig, curate_clip
from .depthalign import AlignParams, SparseGuidance, align_sparse, lwlr_recover
from .errors import DomainError
from .metrics import psnr, ssim
from .pipeline import PipelineConfig, run
from .vcond import MaskParams, ScheduleParams, ViewSet, add_noise, build_condition, irregular_mask


def _list_dir(path, pattern: str, what: str) -> list[Path]:
    if path is None:
        raise DomainError(f"no {what} directory given", stage="ingest")
    d = Path(path)
    if not d.is_dir():
        raise DomainError(f"{what} directory {d} does not exist", stage="ingest")
    files = sorted(d.glob(pattern))
    if not files:
        raise DomainError(f"no {pattern} files in {d}", stage="ingest")
    return files


def cmd_metrics(args) -> int:
    ref = io.load_image(args.ref)
    test = io.load_image(args.test)
    both = not (args.psnr or args.ssim)
    if args.psnr or both:
        print(f"{psnr(ref, test):.2f}")
    if args.ssim or both:
        print(f"{ssim(ref, test):.6f}")
    return 0


def cmd_curate(args) -> int:
    frames = [io.load_image(p) for p in _list_dir(args.frames_dir, "*.ppm", "frames")]
    masks = None
    if args.masks_dir is not None:
        masks = [io.read_mask(p) for p in _list_dir(args.masks_dir, "*.pgm", "masks")]
    flows = None
    if args.flows_dir is not None:
        flows = [io.read_flo(p).astype(np.float64) for p in _list_dir(args.flows_dir, "*.flo", "flows")]
    tracks = io.read_tracks_csv(args.tracks) if args.tracks else None
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError(f"cannot load curation config: {exc}", stage="ingest") from None
    if args.temporal_rate is not None:
        cfg["temporal_rate"] = args.temporal_rate
    if args.short_side is not None:
        cfg["target_short_side"] = None if args.short_side == 0 else args.short_side
    cfg.setdefault("seed", args.seed)
    try:
        bundle = ClipBundle(frames, masks, flows, tracks)
        config = CurationConfig.from_dict(cfg)
    except ValueError as exc:
        raise DomainError(str(exc), stage="ingest") from None
    report = curate_clip(bundle, config)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_vcond(args) -> int:
    frames = np.stack([io.load_image(p) for p in _list_dir(args.frames_dir, "*.ppm", "frames")])
    n, h, w = frames.shape[:3]
    refs = [int(x) for x in args.references.split(",") if x.strip()]
    if args.masks_dir is not None:
        masks = np.stack([io.read_mask(p) for p in _list_dir(args.masks_dir, "*.pgm", "masks")])
    else:
        masks = np.stack([irregular_mask(args.seed + 7919 * i, h, w, MaskParams()) for i in range(n)])
    views = ViewSet(frames, refs, masks)
    sched = ScheduleParams(beta_f=args.beta_f)
    noise_c = make_rng(args.seed, 1).standard_normal(frames.shape)
    noise_x = noise_c if args.shared_noise else make_rng(args.seed, 2).standard_normal(frames.shape)
    x_t = add_noise(frames, args.t, noise_x, sched)
    cond = build_condition(views, x_t, args.t, noise_c, sched)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arr = cond.as_array()
    for i in range(n):
        for c in range(arr.shape[-1]):
            io.write_pfm(out / f"cond_{i:04d}_c{c}.pfm", arr[i, ..., c])
    io.write_json(out / "condition.json", {
        "schema_version": 1, "t": cond.t, "t_prime": cond.t_prime, "w_t": cond.weight,
        "seed": args.seed, "references": list(views.reference_indices),
        "shared_noise": bool(args.shared_noise), "channels": int(arr.shape[-1]),
    })
    return 0


def cmd_align(args) -> int:
    depth = io.read_pfm(args.depth).astype(np.float64)
    matches = io.read_matches_csv(args.matches)
    cams = io.read_camera_json(args.cameras)
    views = sorted(set(matches.anchor_view.tolist()))
    if any(not 0 <= v < len(cams) for v in views) or not 0 <= args.source_view < len(cams):
        raise DomainError("match or source view index outside the camera list", stage="ingest")
    params = AlignParams(outlier_px=args.outlier_px)
    guidance = align_sparse(depth, matches, cams[args.source_view], {v: cams[v] for v in views}, params)
    io.write_json(args.out, guidance.to_dict())
    return 0


def cmd_lwlr(args) -> int:
    depth = io.read_pfm(args.depth).astype(np.float64)
    try:
        guidance = SparseGuidance.from_dict(json.loads(Path(args.guidance).read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DomainError(f"cannot load guidance: {exc}", stage="ingest") from None
    res = lwlr_recover(depth, guidance, args.bandwidth, args.lam)
    io.write_pfm(args.out, res.depth)
    if args.scale_out:
        io.write_pfm(args.scale_out, res.scale)
    if args.shift_out:
        io.write_pfm(args.shift_out, res.shift)
    return 0


def cmd_warp(args) -> int:
    img = io.load_image(args.image)
    depth = io.read_pfm(args.depth).astype(np.float64)
    cams = io.read_camera_json(args.cameras)
    for idx in (args.src, args.dst):
        if not 0 <= idx < len(cams):
            raise DomainError(f"view {idx} outside the camera list", stage="ingest")
    res = forward_warp(img, depth, cams[args.src], cams[args.dst], splat2x2=args.splat2x2)
    io.write_ppm(args.out, res.image)
    if args.mask_out:
        io.write_mask(args.mask_out, res.mask)
    if args.depth_out:
        io.write_pfm(args.depth_out, res.depth)
    return 0


def cmd_pipeline(args) -> int:
    summary = run(PipelineConfig.load(args.config))
    print(json.dumps({"status": summary["status"], "views": len(summary["views"])}, sort_keys=True))
    return 0


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--seed", type=_seed, **({"default": 0} if not suppress else kw))
    p.add_argument("--threads", type=_positive_int, **({"default": 1} if not suppress else kw),
                   help="accepted for reproducible invocations; work is vectorised in-process")
    p.add_argument("--json-errors", action="store_true", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvcond", description=__doc__)
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("metrics", cmd_metrics, "PSNR / SSIM between two PPM images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--psnr", action="store_true")
    p.add_argument("--ssim", action="store_true")

    p = add("curate", cmd_curate, "run the clip curation filter")
    p.add_argument("--frames-dir")
    p.add_argument("--masks-dir")
    p.add_argument("--flows-dir")
    p.add_argument("--tracks")
    p.add_argument("--config")
    p.add_argument("--temporal-rate", type=_positive_int)
    p.add_argument("--short-side", type=int, help="0 keeps the input resolution")
    p.add_argument("--out")

    p = add("vcond", cmd_vcond, "build visual-condition rasters for one timestep")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--masks-dir")
    p.add_argument("--references", required=True, help="comma-separated reference frame indices")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--beta-f", type=float, default=0.2)
    p.add_argument("--shared-noise", action="store_true")
    p.add_argument("--out-dir", required=True)

    p = add("align", cmd_align, "sparse per-keypoint depth alignment")
    p.add_argument("--depth", required=True)
    p.add_argument("--matches", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--source-view", type=int, required=True)
    p.add_argument("--outlier-px", type=float, default=2.0)
    p.add_argument("--out", required=True)

    p = add("lwlr", cmd_lwlr, "dense depth recovery from sparse guidance")
    p.add_argument("--depth", required=True)
    p.add_argument("--guidance", required=True)
    p.add_argument("--bandwidth", type=float, default=0.2)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.add_argument("--scale-out")
    p.add_argument("--shift-out")

    p = add("warp", cmd_warp, "forward-warp an image into another camera")
    p.add_argument("--image", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--src", type=int, required=True)
    p.add_argument("--dst", type=int, required=True)
    p.add_argument("--splat2x2", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--depth-out")

    p = add("pipeline", None, "iterative novel-view generation")
    pipe_sub = p.add_subparsers(dest="action", required=True)
    r = pipe_sub.add_parser("run")
    _add_globals(r, suppress=True)
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, ValueError) as exc:
        info = exc.to_dict() if isinstance(exc, DomainError) else {
            "stage": "input", "error": type(exc).__name__, "message": str(exc)}
        if info.get("stage") is None:
            info["stage"] = args.command
        if args.json_errors:
            print(json.dumps(info, sort_keys=True), file=sys.stderr)
        else:
            print(f"mvcond {args.command}: [{info['stage']}] {info['message']}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
