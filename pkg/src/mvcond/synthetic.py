"""Ray-cast test scenes with exact depth, plus rigid optical flow and keypoint tracks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camgeo import Camera, reproject_points
from .curation import TrackSet


@dataclass(frozen=True)
class Plane:
    normal: tuple[float, float, float]
    offset: float  # normal . X = offset in world coordinates
    # optional axis-aligned bounds on the hit point: ((xmin, xmax), (ymin, ymax), (zmin, zmax))
    bounds: tuple | None = None


def default_scene() -> list[Plane]:
    """Back wall, floor and a floating panel in front, seen from cameras near the origin looking down +z."""
    return [
        Plane((0.0, 0.0, 1.0), 6.0),
        Plane((0.0, 1.0, 0.0), 1.5),
        Plane((0.0, 0.0, 1.0), 3.5, ((-1.2, 0.1), (-0.7, 0.9), (-np.inf, np.inf))),
    ]


def texture(X: np.ndarray) -> np.ndarray:
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    r = 0.5 + 0.35 * np.sin(3.1 * x + 0.7 * z) * np.cos(2.3 * y)
    g = 0.5 + 0.35 * np.sin(1.7 * y - 2.9 * x + 0.5 * z)
    b = 0.5 + 0.35 * np.cos(4.3 * x + 3.7 * y) * np.sin(0.9 * z + 1.0)
    checker = ((np.floor(2 * x) + np.floor(2 * y) + np.floor(2 * z)) % 2) * 0.1 - 0.05
    return np.clip(np.stack([r, g, b], axis=-1) + checker[..., None], 0.0, 1.0)


def render(cam: Camera, h: int, w: int, scene: list[Plane] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Image (H, W, 3) in [0, 1] and camera-frame depth (H, W); depth 0 where nothing is hit."""
    scene = default_scene() if scene is None else scene
    vs, us = np.mgrid[0:h, 0:w].astype(np.float64)
    K = cam.K
    rays = np.stack([(us - K[0, 2]) / K[0, 0], (vs - K[1, 2]) / K[1, 1], np.ones_like(us)], axis=-1)
    best = np.full((h, w), np.inf)
    for pl in scene:
        n_w = np.asarray(pl.normal, dtype=np.float64)
        n_c = cam.R @ n_w
        c_c = pl.offset + n_c @ cam.t
        denom = rays @ n_c
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(np.abs(denom) > 1e-12, c_c / denom, np.inf)
        hit = (s > 1e-6) & np.isfinite(s)
        if pl.bounds is not None:
            Xw = (rays * np.where(hit, s, 0.0)[..., None] - cam.t) @ cam.R
            for axis, (lo, hi) in enumerate(pl.bounds):
                hit &= (Xw[..., axis] >= lo) & (Xw[..., axis] <= hi)
        best = np.where(hit & (s < best), s, best)
    depth = np.where(np.isfinite(best), best, 0.0)
    Xw = (rays * depth[..., None] - cam.t) @ cam.R
    img = np.where((depth > 0)[..., None], texture(Xw), 0.0)
    return img, depth


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def camera_at(center, yaw: float, K: np.ndarray, pitch: float = 0.0) -> Camera:
    """World-to-camera pose for a camera at ``center`` rotated by yaw (about y) then pitch."""
    R_wc = rotation_y(yaw) @ rotation_x(pitch)  # camera-to-world
    R = R_wc.T
    t = -R @ np.asarray(center, dtype=np.float64)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return Camera(K, T)


def intrinsics(h: int, w: int, fov_scale: float = 1.0) -> np.ndarray:
    f = fov_scale * 0.9 * w
    return np.array([[f, 0.0, (w - 1) / 2], [0.0, f, (h - 1) / 2], [0.0, 0.0, 1.0]])


def sweep_trajectory(n_views: int, h: int, w: int, span: float = 0.6, yaw_span: float = 0.12) -> list[Camera]:
    """Cameras sliding sideways and slightly forward while panning, ``n_views`` poses."""
    K = intrinsics(h, w)
    cams = []
    for i in range(n_views):
        a = i / max(1, n_views - 1)
        cams.append(camera_at((span * a, 0.05 * np.sin(np.pi * a), 0.3 * a), -yaw_span * a, K))
    return cams


def rigid_flow(depth: np.ndarray, src: Camera, dst: Camera) -> np.ndarray:
    """Flow (H, W, 2) induced by camera motion over a static scene with the given depth."""
    h, w = depth.shape
    vs, us = np.mgrid[0:h, 0:w]
    px = np.stack([us, vs], axis=-1).reshape(-1, 2).astype(np.float64)
    uv, _ = reproject_points(px, depth.ravel(), src, dst)
    return (uv - px).reshape(h, w, 2)


def circle_tracks(n_tracks: int, n_frames: int, radius, seed: int = 0, frame_hw=(480, 640),
                  arc: float = 2 * np.pi) -> TrackSet:
    """Tracks moving along circular arcs; ``radius`` is a scalar or one value per track."""
    gen = np.random.default_rng(seed)
    radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (n_tracks,))
    h, w = frame_hw
    pos = np.zeros((n_tracks, n_frames, 2))
    for i in range(n_tracks):
        r = radius[i]
        cx = gen.uniform(min(r, w / 2), max(w - r, w / 2))
        cy = gen.uniform(min(r, h / 2), max(h - r, h / 2))
        phase = gen.uniform(0, 2 * np.pi)
        ang = phase + np.arange(n_frames) * (arc / n_frames)
        pos[i, :, 0] = cx + r * np.cos(ang)
        pos[i, :, 1] = cy + r * np.sin(ang)
    return TrackSet(list(range(n_tracks)), pos, np.ones((n_tracks, n_frames), dtype=bool))
