"""Iterative warping-based novel-view generation.

Each step takes the latest generated view as the source, corrects its
estimated depth against matches in randomly chosen anchor views, warps it
into the next chunk of trajectory cameras and asks a generator to complete
the warped images.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import io
from ._rng import rng as make_rng
from .camgeo import Camera, forward_warp
from .depthalign import AlignParams, MatchSet, align_sparse, lwlr_recover, synth_matches
from .errors import ConfigError, DomainError, EmptyState, StageError
from .metrics import psnr, ssim

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Trajectory:
    cameras: tuple[Camera, ...]
    chunk: int = 15
    anchors: int = 3

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.cameras) < 2:
            raise ConfigError("trajectory", "needs at least two cameras")
        if self.chunk < 1:
            raise ConfigError("chunk", "must be >= 1")
        if self.anchors < 1:
            raise ConfigError("anchors", "must be >= 1")

    def __len__(self):
        return len(self.cameras)


@dataclass(frozen=True)
class PipelineState:
    images: tuple[np.ndarray, ...]
    depths: dict = field(default_factory=dict)  # view index -> aligned depth used for warping
    iteration: int = 0
    seed: int = 0

    @property
    def n_generated(self) -> int:
        return len(self.images)


def select_anchors(n_generated: int, k: int, rng_seed: int) -> list[int]:
    """View 0 plus up to ``k - 1`` distinct uniform draws from the other generated views."""
    if n_generated < 1:
        raise EmptyState("no generated view to anchor on")
    others = np.arange(1, n_generated)
    take = min(max(k - 1, 0), len(others))
    picked = make_rng(rng_seed, 0xA7C).choice(others, size=take, replace=False) if take else []
    return [0] + sorted(int(i) for i in picked)


# -- depth and match sources ------------------------------------------------------

class DirectoryDepthSource:
    """Per-view depth estimates stored as ``depth_{view:04d}.pfm``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, view: int) -> np.ndarray:
        path = self.directory / f"depth_{view:04d}.pfm"
        if not path.exists():
            raise FileNotFoundError(f"missing depth file {path}")
        return io.read_pfm(path).astype(np.float64)


class ExecDepthSource:
    """Runs an external depth estimator per view.

    The template may use ``{image}`` (PPM written by the pipeline) and
    ``{out}`` (PFM the command must write).
    """

    def __init__(self, template: str, images: Callable[[int], np.ndarray], timeout: float | None = None):
        self.template = template
        self.images = images
        self.timeout = timeout

    def __call__(self, view: int) -> np.ndarray:
        with tempfile.TemporaryDirectory(prefix="mvcond-depth-") as tmp:
            image = Path(tmp) / f"view_{view:04d}.ppm"
            out = Path(tmp) / f"depth_{view:04d}.pfm"
            io.write_ppm(image, self.images(view))
            cmd = [a.format(image=image, out=out) for a in shlex.split(self.template)]
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=self.timeout)
            if proc.returncode != 0:
                raise DomainError(f"depth command exited with {proc.returncode}: {proc.stderr.strip()}")
            return io.read_pfm(out).astype(np.float64)


class ArrayDepthSource:
    def __init__(self, depths: Sequence[np.ndarray]):
        self.depths = depths

    def __call__(self, view: int) -> np.ndarray:
        return np.asarray(self.depths[view], dtype=np.float64)


class DirectoryMatchSource:
    """Matches from the source view, stored as ``matches_{source:04d}.csv``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, source: int, anchors: Sequence[int], cameras) -> MatchSet:
        path = self.directory / f"matches_{source:04d}.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing matches file {path}")
        m = io.read_matches_csv(path)
        keep = np.isin(m.anchor_view, list(anchors))
        return MatchSet(m.src_px[keep], m.anchor_view[keep], m.dst_px[keep], m.src_depth[keep])


class SynthMatchSource:
    """Exact matches from ground-truth depth (stands in for a feature matcher)."""

    def __init__(self, gt_depth: Callable[[int], np.ndarray], n: int = 1024, seed: int = 0):
        self.gt_depth = gt_depth
        self.n = n
        self.seed = seed

    def __call__(self, source: int, anchors: Sequence[int], cameras) -> MatchSet:
        return synth_matches(self.gt_depth(source), cameras[source],
                             {a: cameras[a] for a in anchors}, self.n, self.seed + source)


# -- generators -------------------------------------------------------------------

class Generator(Protocol):
    def __call__(self, warped: list[np.ndarray], masks: list[np.ndarray], anchors: list[np.ndarray],
                 anchor_cameras: list[Camera], targets: list[int],
                 target_cameras: list[Camera]) -> list[np.ndarray]: ...


def _fill_one(img: np.ndarray, covered: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    out = np.array(img, dtype=np.float64)
    cov = np.array(covered, dtype=bool)
    if not cov.any():
        out[...] = fallback
        return out
    squeeze = out.ndim == 2
    if squeeze:
        out = out[..., None]
    h, w = cov.shape
    while not cov.all():
        pv = np.pad(np.where(cov[..., None], out, 0.0), ((1, 1), (1, 1), (0, 0)))
        pc = np.pad(cov.astype(np.float64), 1)
        total = np.zeros_like(out)
        count = np.zeros((h, w))
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == dx == 0:
                    continue
                total += pv[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
                count += pc[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        grow = ~cov & (count > 0)
        out[grow] = total[grow] / count[grow][:, None]
        cov = cov | grow
    return out[..., 0] if squeeze else out


def hole_fill_generate(warped, masks, anchors) -> list[np.ndarray]:
    """Fill uncovered pixels with the mean of covered 8-neighbours until none remain.

    Covered pixels are never modified; a frame with no covered pixel takes the
    mean colour of the first anchor.
    """
    fallback = np.asarray(anchors[0], dtype=np.float64)
    fallback = fallback.reshape(-1, fallback.shape[-1]).mean(axis=0) if fallback.ndim == 3 else fallback.mean()
    return [_fill_one(w, m, fallback) for w, m in zip(warped, masks)]


class HoleFillGenerator:
    def __call__(self, warped, masks, anchors, anchor_cameras, targets, target_cameras):
        return hole_fill_generate(warped, masks, anchors)


class OracleGenerator:
    """Returns the ground-truth frame for every target."""

    def __init__(self, frames: Sequence[np.ndarray] | Callable[[int], np.ndarray]):
        self.frames = frames

    def _get(self, i):
        return self.frames(i) if callable(self.frames) else self.frames[i]

    def __call__(self, warped, masks, anchors, anchor_cameras, targets, target_cameras):
        return [np.array(self._get(j), dtype=np.float64) for j in targets]


class ExecGenerator:
    """Runs an external command exchanging PPM/PGM/JSON files.

    The command template may use ``{in_dir}`` and ``{out_dir}``. Inputs are
    ``warp_{j:04d}.ppm``, ``mask_{j:04d}.pgm``, ``anchor_{i:04d}.ppm`` and
    ``request.json`` (target and anchor indices with cameras); the command
    must write ``view_{j:04d}.ppm`` for every target.
    """

    def __init__(self, template: str, timeout: float | None = None):
        self.template = template
        self.timeout = timeout

    def __call__(self, warped, masks, anchors, anchor_cameras, targets, target_cameras, anchor_ids=None):
        with tempfile.TemporaryDirectory(prefix="mvcond-gen-") as tmp:
            in_dir = Path(tmp) / "in"
            out_dir = Path(tmp) / "out"
            in_dir.mkdir()
            out_dir.mkdir()
            for j, img, m in zip(targets, warped, masks):
                io.write_ppm(in_dir / f"warp_{j:04d}.ppm", img)
                io.write_mask(in_dir / f"mask_{j:04d}.pgm", m)
            anchor_ids = list(range(len(anchors))) if anchor_ids is None else anchor_ids
            for i, img in zip(anchor_ids, anchors):
                io.write_ppm(in_dir / f"anchor_{i:04d}.ppm", img)
            request = {
                "schema_version": SCHEMA_VERSION,
                "targets": list(targets),
                "anchors": list(anchor_ids),
                "target_cameras": io.cameras_to_json(target_cameras)["views"],
                "anchor_cameras": io.cameras_to_json(anchor_cameras)["views"],
            }
            io.write_json(in_dir / "request.json", request)
            cmd = [a.format(in_dir=in_dir, out_dir=out_dir) for a in shlex.split(self.template)]
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=self.timeout)
            if proc.returncode != 0:
                raise DomainError(f"generator exited with {proc.returncode}: {proc.stderr.strip()}")
            return [io.load_image(out_dir / f"view_{j:04d}.ppm") for j in targets]


# -- one iteration ----------------------------------------------------------------

@dataclass(frozen=True)
class StepConfig:
    bandwidth: float = 0.2
    lam: float = 1e-4
    align: AlignParams = AlignParams()
    splat2x2: bool = False
    artifact_dir: Path | None = None


@dataclass(frozen=True)
class StepRecord:
    source: int
    anchors: list[int]
    targets: list[int]
    guidance_points: int
    coverage: list[float]
    timings: dict


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (DomainError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


def pipeline_step(state: PipelineState, trajectory: Trajectory, depth_source, generator,
                  config: StepConfig = StepConfig(), match_source=None) -> tuple[PipelineState, StepRecord]:
    """One depth / align / warp / generate iteration. ``state`` is never modified."""
    n_have = state.n_generated
    if n_have < 1:
        raise EmptyState("pipeline state has no views")
    remaining = len(trajectory) - n_have
    if remaining <= 0:
        raise ValueError("trajectory already complete")
    targets = list(range(n_have, n_have + min(trajectory.chunk, remaining)))
    source = n_have - 1
    cams = trajectory.cameras
    timings = {}

    t0 = time.perf_counter()
    anchors = select_anchors(n_have, trajectory.anchors, state.seed + state.iteration)
    est = _stage("depth", depth_source, source)
    if est.shape != state.images[source].shape[:2]:
        raise StageError("depth", ValueError(f"depth {est.shape} does not match view {source}"))
    timings["depth"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    align_views = [a for a in anchors if a != source]
    n_guide = 0
    if align_views and match_source is not None:
        matches = _stage("match", match_source, source, align_views, cams)
        guidance = _stage("align", align_sparse, est, matches, cams[source],
                          {a: cams[a] for a in align_views}, config.align)
        depth = _stage("lwlr", lwlr_recover, est, guidance, config.bandwidth, config.lam).depth
        n_guide = len(guidance)
    else:
        depth = est
    timings["align"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    warps = [_stage("warp", forward_warp, state.images[source], depth, cams[source], cams[j],
                    splat2x2=config.splat2x2) for j in targets]
    timings["warp"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    anchor_imgs = [state.images[a] for a in anchors]
    kwargs = {"anchor_ids": anchors} if isinstance(generator, ExecGenerator) else {}
    out = _stage("generate", generator, [w.image for w in warps], [w.mask for w in warps], anchor_imgs,
                 [cams[a] for a in anchors], targets, [cams[j] for j in targets], **kwargs)
    if len(out) != len(targets) or any(o.shape != w.image.shape for o, w in zip(out, warps)):
        raise StageError("generate", ValueError("generator output does not match the targets"))
    timings["generate"] = time.perf_counter() - t0

    if config.artifact_dir is not None:
        d = Path(config.artifact_dir)
        d.mkdir(parents=True, exist_ok=True)
        io.write_pfm(d / f"depth_aligned_{source:04d}.pfm", depth)
        for j, w in zip(targets, warps):
            io.write_ppm(d / f"warp_{j:04d}.ppm", w.image)
            io.write_mask(d / f"mask_{j:04d}.pgm", w.mask)

    depths = dict(state.depths)
    depths[source] = depth
    new_state = replace(state, images=state.images + tuple(out), depths=depths, iteration=state.iteration + 1)
    record = StepRecord(source, anchors, targets, n_guide, [float(w.mask.mean()) for w in warps], timings)
    return new_state, record


# -- full run ----------------------------------------------------------------------

@dataclass
class PipelineConfig:
    trajectory: Path
    input_views: list[Path]
    output_dir: Path
    generator: str = "holefill"
    depth_dir: Path | None = None
    depth_exec: str | None = None
    matches_dir: Path | None = None
    synth_matches: bool = False
    gt_depth_dir: Path | None = None
    gt_dir: Path | None = None
    seed: int = 0
    chunk: int = 15
    anchors: int = 3
    bandwidth: float = 0.2
    lam: float = 1e-4
    n_matches: int = 1024
    persist_intermediates: bool = True

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        base = Path(base) if base is not None else Path(".")
        if not isinstance(d, dict):
            raise ConfigError("/", "config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        for k in d:
            if k not in known:
                raise ConfigError(f"/{k}", "unknown field")
        for k in ("trajectory", "input_views", "output_dir"):
            if k not in d:
                raise ConfigError(f"/{k}", "required")

        def path(key):
            v = d.get(key)
            if v is None:
                return None
            if not isinstance(v, str):
                raise ConfigError(f"/{key}", "expected a path string")
            return base / v

        views = d["input_views"]
        if not isinstance(views, list) or not views or not all(isinstance(v, str) for v in views):
            raise ConfigError("/input_views", "expected a non-empty list of paths")
        gen = d.get("generator", "holefill")
        if not isinstance(gen, str) or not (gen in ("oracle", "holefill") or gen.startswith("exec:")):
            raise ConfigError("/generator", "expected oracle, holefill or exec:<command>")
        cfg = cls(
            trajectory=path("trajectory"),
            input_views=[base / v for v in views],
            output_dir=path("output_dir"),
            generator=gen,
            depth_dir=path("depth_dir"),
            depth_exec=d.get("depth_exec"),
            matches_dir=path("matches_dir"),
            synth_matches=bool(d.get("synth_matches", False)),
            gt_depth_dir=path("gt_depth_dir"),
            gt_dir=path("gt_dir"),
        )
        for key, typ in (("seed", int), ("chunk", int), ("anchors", int), ("n_matches", int),
                         ("bandwidth", (int, float)), ("lam", (int, float)),
                         ("persist_intermediates", bool)):
            if key in d:
                v = d[key]
                if isinstance(v, bool) and typ is not bool or not isinstance(v, typ):
                    raise ConfigError(f"/{key}", f"wrong type {type(v).__name__}")
                setattr(cfg, key, v)
        if (cfg.depth_dir is None) == (cfg.depth_exec is None):
            raise ConfigError("/depth_dir", "give exactly one of depth_dir or depth_exec")
        if cfg.depth_exec is not None and not isinstance(cfg.depth_exec, str):
            raise ConfigError("/depth_exec", "expected a command template string")
        if gen == "oracle" and cfg.gt_dir is None:
            raise ConfigError("/gt_dir", "required by the oracle generator")
        if cfg.synth_matches and cfg.gt_depth_dir is None:
            raise ConfigError("/gt_depth_dir", "required by synth_matches")
        if cfg.synth_matches and cfg.matches_dir is not None:
            raise ConfigError("/matches_dir", "conflicts with synth_matches")
        if cfg.chunk < 1:
            raise ConfigError("/chunk", "must be >= 1")
        if cfg.anchors < 1:
            raise ConfigError("/anchors", "must be >= 1")
        if not cfg.bandwidth > 0 or cfg.lam < 0:
            raise ConfigError("/bandwidth", "need bandwidth > 0 and lam >= 0")
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError("/", f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("/", f"invalid JSON: {exc}") from None
        return cls.from_dict(data, base=path.parent)


def _gt_image(cfg: PipelineConfig, j: int) -> np.ndarray:
    return io.load_image(cfg.gt_dir / f"view_{j:04d}.ppm")


def _make_generator(cfg: PipelineConfig):
    if cfg.generator == "oracle":
        return OracleGenerator(lambda j: _gt_image(cfg, j))
    if cfg.generator == "holefill":
        return HoleFillGenerator()
    return ExecGenerator(cfg.generator[len("exec:"):])


def run(cfg: PipelineConfig) -> dict:
    """Loop :func:`pipeline_step` until the trajectory is exhausted and write outputs.

    Writes ``views/view_{i:04d}.ppm``, per-step intermediates under
    ``intermediate/``, ``summary.json`` (deterministic) and ``timings.json``.
    On a stage failure the views produced so far and a failed summary are kept.
    """
    try:
        cams = io.read_camera_json(cfg.trajectory)
    except DomainError as exc:
        raise ConfigError("/trajectory", str(exc)) from None
    if len(cams) == 0:
        raise ConfigError("/trajectory", "trajectory has no cameras")
    if len(cfg.input_views) >= len(cams):
        raise ConfigError("/input_views", "more input views than trajectory cameras")
    traj = Trajectory(cams, cfg.chunk, cfg.anchors)

    out = Path(cfg.output_dir)
    (out / "views").mkdir(parents=True, exist_ok=True)
    try:
        inputs = tuple(io.load_image(p) for p in cfg.input_views)
    except DomainError as exc:
        raise StageError("ingest", exc) from exc
    for i, img in enumerate(inputs):
        io.write_ppm(out / "views" / f"view_{i:04d}.ppm", img)

    current: dict = {}
    if cfg.depth_dir is not None:
        depth_source = DirectoryDepthSource(cfg.depth_dir)
    else:
        depth_source = ExecDepthSource(cfg.depth_exec, lambda i: current["state"].images[i])
    if cfg.synth_matches:
        match_source = SynthMatchSource(DirectoryDepthSource(cfg.gt_depth_dir), cfg.n_matches, cfg.seed)
    elif cfg.matches_dir is not None:
        match_source = DirectoryMatchSource(cfg.matches_dir)
    else:
        match_source = None
    generator = _make_generator(cfg)
    step_cfg = StepConfig(cfg.bandwidth, cfg.lam,
                          artifact_dir=out / "intermediate" if cfg.persist_intermediates else None)

    state = PipelineState(images=inputs, seed=cfg.seed)
    steps, timings, error = [], [], None
    while state.n_generated < len(traj):
        current["state"] = state
        try:
            new_state, rec = pipeline_step(state, traj, depth_source, generator, step_cfg, match_source)
        except StageError as exc:
            error = exc
            break
        for j in rec.targets:
            io.write_ppm(out / "views" / f"view_{j:04d}.ppm", new_state.images[j])
        state = new_state
        steps.append({"iteration": state.iteration - 1, "source": rec.source, "anchors": rec.anchors,
                      "targets": rec.targets, "guidance_points": rec.guidance_points,
                      "coverage": rec.coverage})
        timings.append(rec.timings)
        logger.info("iteration %d: generated views %s", state.iteration - 1, rec.targets)

    views = []
    for i, img in enumerate(state.images):
        entry = {"index": i, "kind": "input" if i < len(inputs) else "generated"}
        if cfg.gt_dir is not None and (cfg.gt_dir / f"view_{i:04d}.ppm").exists():
            gt = _gt_image(cfg, i)
            # compare what was written, i.e. 8-bit quantised frames
            img8 = io.to_uint8(img).astype(np.float64) / 255.0
            entry["psnr"] = round(psnr(img8, gt), 6)
            entry["ssim"] = round(ssim(img8, gt), 6) if min(gt.shape[:2]) >= 11 else None
        views.append(entry)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "status": "failed" if error else "complete",
        "seed": cfg.seed,
        "trajectory_length": len(traj),
        "views": views,
        "steps": steps,
    }
    if error is not None:
        summary["error"] = error.to_dict()
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "timings.json", {"steps": timings})
    if error is not None:
        raise error
    return summary
