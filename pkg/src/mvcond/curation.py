"""Four-step filter deciding whether a clip is static with enough camera motion.

1. temporal/spatial downsampling
2. semantic filter on ingested instance masks
3. non-rigid motion masks from optical flow + epipolar consistency, scored
   by where the mask sits in the frame
4. circle fits to keypoint tracks to reject near-static cameras
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, DegenerateSample, DomainError, EmptyClip, MissingMasks, NoUsableTracks
from .robustfit import ransac_circle, ransac_fundamental, sampson_distances

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# frame score table thresholds
THETA_I_HIGH = 0.12
THETA_C_HIGH = 0.35
THETA_C_MID = 0.2


@dataclass
class TrackSet:
    """Keypoint trajectories: ``positions`` (N, F, 2) in pixels, ``visible`` (N, F)."""

    ids: list[int]
    positions: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.positions.shape[:2] != self.visible.shape or self.positions.shape[-1] != 2:
            raise ValueError("positions must be (N, F, 2) and visible (N, F)")
        if len(self.ids) != len(self.positions):
            raise ValueError("one id per track")
        if not np.all(np.isfinite(self.positions[self.visible])):
            raise ValueError("visible positions must be finite")

    def __len__(self):
        return len(self.ids)

    def visible_points(self, i: int) -> np.ndarray:
        return self.positions[i][self.visible[i]]

    def scaled(self, sx: float, sy: float) -> "TrackSet":
        return TrackSet(list(self.ids), self.positions * np.array([sx, sy]), self.visible.copy())


@dataclass
class ClipBundle:
    frames: list[np.ndarray]
    semantic_masks: list[np.ndarray] | None = None
    flows: list[np.ndarray] | None = None
    tracks: TrackSet | None = None

    def __post_init__(self):
        if not self.frames:
            raise EmptyClip("clip has no frames")
        hw = self.frames[0].shape[:2]
        if any(f.shape[:2] != hw for f in self.frames):
            raise ValueError("all frames must share H x W")
        if self.semantic_masks is not None and any(m.shape[:2] != hw for m in self.semantic_masks):
            raise ValueError("semantic masks must match frame size")
        if self.flows is not None:
            if len(self.flows) != len(self.frames) - 1:
                raise ValueError("need one flow per consecutive frame pair")
            if any(f.shape != hw + (2,) for f in self.flows):
                raise ValueError("flows must be H x W x 2")


@dataclass
class CurationConfig:
    temporal_rate: int = 2
    target_short_side: int | None = 480
    semantic_threshold: float = 0.5
    sampson_threshold: float = 1.0
    flow_stride: int = 4
    f_iters: int = 1000
    f_inlier_tol: float = 0.5
    radius_threshold: float = 20.0
    count_threshold: int = 40
    mean_motion_threshold: float = 5.0
    circle_iters: int = 200
    circle_inlier_tol: float = 1.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "CurationConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown curation config keys: {sorted(unknown)}")
        return cls(**d)


# -- step 1 ------------------------------------------------------------------

def resized_shape(h: int, w: int, target_short_side: int) -> tuple[int, int]:
    """Output (H, W) with the short side at ``target_short_side``, long side rounded to even."""
    if h <= w:
        long_ = w * target_short_side / h
        return target_short_side, _round_even(long_)
    long_ = h * target_short_side / w
    return _round_even(long_), target_short_side


def _round_even(x: float) -> int:
    return max(2, 2 * int(math.floor(x / 2 + 0.5)))


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centred bilinear resize (edge-clamped)."""
    h, w = img.shape[:2]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return img.copy()
    ys = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    a = img.astype(np.float64)
    top = a[y0][:, x0] * (1 - wx) + a[y0][:, x1] * wx
    bot = a[y1][:, x0] * (1 - wx) + a[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def downsample_clip(frames, temporal_rate: int = 2, target_short_side: int | None = 480) -> list[np.ndarray]:
    if not frames:
        raise EmptyClip("no frames to downsample")
    if temporal_rate < 1:
        raise ValueError("temporal_rate must be >= 1")
    kept = list(frames[::temporal_rate])
    if target_short_side is None:
        return [f.copy() for f in kept]
    if target_short_side < 16:
        raise ValueError("target_short_side must be >= 16")
    h, w = kept[0].shape[:2]
    if min(h, w) == target_short_side:
        return [f.copy() for f in kept]
    out_hw = resized_shape(h, w, target_short_side)
    return [resize_bilinear(f, out_hw) for f in kept]


# -- step 2 ------------------------------------------------------------------

def semantic_dynamic_filter(semantic_masks, threshold: float = 0.5) -> tuple[bool, float]:
    """Returns (passed, fraction of frames containing any masked pixel)."""
    if semantic_masks is None or len(semantic_masks) == 0:
        raise MissingMasks("semantic masks are required for every frame")
    has = [bool(np.any(m)) for m in semantic_masks]
    fraction = sum(has) / len(has)
    return not fraction > threshold, fraction


# -- step 3 ------------------------------------------------------------------

def frame_score(theta_i: float, theta_c: float) -> float:
    """Per-frame dynamic score.

    Cells missing from the published table (large global mask with small
    central share, or small global mask with large central share) score 1.5.
    A frame with no mask at all scores 0 so a static clip can pass.
    """
    if theta_i == 0 and theta_c == 0:
        return 0.0
    if theta_i >= THETA_I_HIGH:
        if theta_c >= THETA_C_HIGH:
            return 2.0
        return 1.5
    if theta_c >= THETA_C_HIGH:
        return 1.5
    if theta_c >= THETA_C_MID:
        return 1.0
    return 0.5


def central_bounds(h: int, w: int) -> tuple[int, int, int, int]:
    h0 = int(0.25 * h)
    w0 = int(0.25 * w)
    return h0, h - h0, w0, w - w0


def dynamic_score_frame(mask) -> tuple[float, float, float]:
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    r0, r1, c0, c1 = central_bounds(h, w)
    theta_i = np.count_nonzero(m) / (h * w)
    theta_c = min(1.0, np.count_nonzero(m[r0:r1, c0:c1]) / ((h / 2) * (w / 2)))
    return theta_i, theta_c, frame_score(theta_i, theta_c)


@dataclass
class DynamicScore:
    theta_i: list[float]
    theta_c: list[float]
    scores: list[float]
    total: float
    dynamic: bool

    @property
    def verdict(self) -> str:
        return "dynamic" if self.dynamic else "static"


def dynamic_score_sequence(nonrigid_masks) -> DynamicScore:
    if nonrigid_masks is None or len(nonrigid_masks) == 0:
        raise EmptyClip("no masks to score")
    rows = [dynamic_score_frame(m) for m in nonrigid_masks]
    ti, tc, s = (list(c) for c in zip(*rows))
    total = float(sum(s))
    return DynamicScore(ti, tc, s, total, total >= 0.25 * len(rows))


def nonrigid_masks_from_flow(flows, stride: int = 4, sampson_threshold: float = 1.0,
                             f_iters: int = 1000, f_inlier_tol: float = 0.5,
                             rng_seed: int = 0) -> list[np.ndarray]:
    """Mark pixels whose flow correspondence breaks the dominant epipolar geometry.

    The fundamental matrix is fitted on a ``stride`` grid; every pixel is then
    tested. A pair with degenerate geometry (e.g. no camera motion) yields an
    all-false mask and a warning.
    """
    if flows is None or len(flows) == 0:
        raise EmptyClip("no flow fields")
    masks = []
    for k, flow in enumerate(flows):
        flow = np.asarray(flow, dtype=np.float64)
        h, w = flow.shape[:2]
        vs, us = np.mgrid[0:h, 0:w]
        x1 = np.stack([us, vs], axis=-1).reshape(-1, 2).astype(np.float64)
        x2 = x1 + flow.reshape(-1, 2)
        grid = np.zeros((h, w), dtype=bool)
        grid[::stride, ::stride] = True
        g = grid.ravel()
        try:
            F, _ = ransac_fundamental(x1[g], x2[g], iters=f_iters, inlier_tol=f_inlier_tol,
                                      rng_seed=rng_seed + k)
        except DegenerateConfiguration:
            logger.warning("flow pair %d: degenerate epipolar geometry, emitting empty mask", k)
            masks.append(np.zeros((h, w), dtype=bool))
            continue
        d = sampson_distances(F, x1, x2)
        masks.append((d > sampson_threshold).reshape(h, w))
    return masks


# -- step 4 ------------------------------------------------------------------

def _fallback_radius(pts: np.ndarray) -> float:
    # all sampled triples collinear: bound by the spread around the centroid
    return float(np.max(np.hypot(*(pts - pts.mean(axis=0)).T)))


def small_viewpoint_filter(tracks: TrackSet, radius_threshold: float = 20.0, count_threshold: int = 40,
                           mean_motion_threshold: float = 5.0, iters: int = 200,
                           inlier_tol: float = 1.0, rng_seed: int = 0) -> tuple[bool, dict]:
    """Returns (passed, stats). Rejects when many tracks circle tightly and the mean radius is small."""
    radii = []
    for i in range(len(tracks)):
        pts = tracks.visible_points(i)
        if len(pts) < 3:
            continue
        try:
            radius = ransac_circle(pts, iters=iters, inlier_tol=inlier_tol, rng_seed=rng_seed + i).radius
        except DegenerateSample:
            radius = _fallback_radius(pts)
        radii.append(radius)
    if not radii:
        raise NoUsableTracks("no track has 3 or more visible points")
    count = sum(r <= radius_threshold for r in radii)
    mean_radius = float(np.mean(radii))
    reject = count > count_threshold and mean_radius < mean_motion_threshold
    stats = {
        "usable_tracks": len(radii),
        "small_circle_count": int(count),
        "mean_radius": mean_radius,
    }
    return not reject, stats


# -- driver ------------------------------------------------------------------

@dataclass
class CurationReport:
    steps: list[dict] = field(default_factory=list)
    verdict: str = "pass"
    reason: str | None = None

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def step(self, name: str) -> dict | None:
        return next((s for s in self.steps if s["name"] == name), None)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "verdict": self.verdict,
            "reason": self.reason,
            "steps": self.steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _resize_flow(flow: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = flow.shape[:2]
    out = resize_bilinear(flow, out_hw)
    out[..., 0] *= out_hw[1] / w
    out[..., 1] *= out_hw[0] / h
    return out


def curate_clip(bundle: ClipBundle, config: CurationConfig | None = None) -> CurationReport:
    """Run the four steps in order, stopping at the first rejection.

    Inputs for a step that are absent mark that step ``skipped``. Semantic
    masks, flows and tracks are subsampled with the kept frames; flows and
    track coordinates are rescaled to the downsampled resolution.
    """
    cfg = config or CurationConfig()
    report = CurationReport()

    def fail(name, exc):
        exc.stage = name
        raise exc

    # step 1
    try:
        frames = downsample_clip(bundle.frames, cfg.temporal_rate, cfg.target_short_side)
    except DomainError as exc:
        fail("downsample", exc)
    h0, w0 = bundle.frames[0].shape[:2]
    h, w = frames[0].shape[:2]
    kept = list(range(0, len(bundle.frames), cfg.temporal_rate))
    report.steps.append({"name": "downsample", "status": "pass",
                         "stats": {"frames_in": len(bundle.frames), "frames_out": len(frames),
                                   "height": h, "width": w}})

    # step 2
    if bundle.semantic_masks is not None:
        try:
            if len(bundle.semantic_masks) != len(bundle.frames):
                raise MissingMasks("need one semantic mask per frame")
            ok, fraction = semantic_dynamic_filter([bundle.semantic_masks[i] for i in kept],
                                                   cfg.semantic_threshold)
        except DomainError as exc:
            fail("semantic", exc)
        report.steps.append({"name": "semantic", "status": "pass" if ok else "reject",
                             "stats": {"mask_frame_fraction": fraction}})
        if not ok:
            report.verdict, report.reason = "reject", "semantic_dynamic"
            return report
    else:
        report.steps.append({"name": "semantic", "status": "skipped", "stats": {}})

    # step 3
    if bundle.flows is not None:
        try:
            flows = [bundle.flows[i] for i in kept if i < len(bundle.flows)]
            if not flows:
                raise EmptyClip("no flow field survives temporal downsampling")
            if (h, w) != (h0, w0):
                flows = [_resize_flow(f, (h, w)) for f in flows]
            masks = nonrigid_masks_from_flow(flows, cfg.flow_stride, cfg.sampson_threshold,
                                             cfg.f_iters, cfg.f_inlier_tol, cfg.seed)
            score = dynamic_score_sequence(masks)
        except DomainError as exc:
            fail("nonrigid", exc)
        status = "reject" if score.dynamic else "pass"
        report.steps.append({"name": "nonrigid", "status": status,
                             "stats": {"frames": len(masks), "dynamic_score": score.total,
                                       "frame_scores": score.scores,
                                       "mean_theta_i": float(np.mean(score.theta_i)),
                                       "mean_theta_c": float(np.mean(score.theta_c))}})
        if score.dynamic:
            report.verdict, report.reason = "reject", "nonrigid_dynamic"
            return report
    else:
        report.steps.append({"name": "nonrigid", "status": "skipped", "stats": {}})

    # step 4
    if bundle.tracks is not None:
        try:
            tracks = bundle.tracks
            if (h, w) != (h0, w0):
                tracks = tracks.scaled(w / w0, h / h0)
            ok, stats = small_viewpoint_filter(
                tracks, cfg.radius_threshold, cfg.count_threshold, cfg.mean_motion_threshold,
                cfg.circle_iters, cfg.circle_inlier_tol, cfg.seed)
        except DomainError as exc:
            fail("small_viewpoint", exc)
        report.steps.append({"name": "small_viewpoint", "status": "pass" if ok else "reject",
                             "stats": stats})
        if not ok:
            report.verdict, report.reason = "reject", "small_viewpoint"
            return report
    else:
        report.steps.append({"name": "small_viewpoint", "status": "skipped", "stats": {}})
    return report
