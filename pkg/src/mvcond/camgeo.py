"""Pinhole cameras, pixel reprojection and z-buffered forward warping.

Conventions: pixel ``(u, v)`` is the centre of column ``u``, row ``v``.
``T`` maps world coordinates into the camera frame (world-to-camera).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, InvalidCamera, InvalidRotation, NonPositiveDepth, ShapeMismatch

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class Camera:
    """Intrinsics ``K`` (3x3) and world-to-camera extrinsics ``T`` (4x4)."""

    K: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(4, 4)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(T))):
            raise InvalidCamera("camera matrices must be finite")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise InvalidCamera("focal lengths must be positive")
        if K[0, 1] != 0 or K[1, 0] != 0 or not np.array_equal(K[2], [0.0, 0.0, 1.0]):
            raise InvalidCamera("K must be [[fx,0,cx],[0,fy,cy],[0,0,1]]")
        if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidCamera("last row of T must be (0,0,0,1)")
        R = T[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) >= ROTATION_TOL or np.linalg.det(R) <= 0:
            raise InvalidRotation("rotation block of T is not a proper rotation")
        K.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T", T)

    @classmethod
    def from_params(cls, fx, fy, cx, cy, R=None, t=None) -> "Camera":
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        T = np.eye(4)
        if R is not None:
            T[:3, :3] = R
        if t is not None:
            T[:3, 3] = t
        return cls(K, T)

    @property
    def R(self) -> np.ndarray:
        return self.T[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.T[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def relative_to(self, src: "Camera") -> tuple[np.ndarray, np.ndarray]:
        """Rotation and translation taking ``src`` camera coordinates to this camera's."""
        R = self.R @ src.R.T
        return R, self.t - R @ src.t


def project(point3, K) -> np.ndarray:
    """Project camera-frame point(s) ``(..., 3)`` to pixels ``(..., 2)``."""
    p = np.asarray(point3, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("project needs z > 0")
    K = np.asarray(K, dtype=np.float64)
    u = K[0, 0] * (p[..., 0] / z) + K[0, 2]
    v = K[1, 1] * (p[..., 1] / z) + K[1, 2]
    return np.stack([u, v], axis=-1)


def unproject(px, depth, K) -> np.ndarray:
    """Lift pixel(s) ``(..., 2)`` at ``depth`` to camera-frame points ``(..., 3)``."""
    px = np.asarray(px, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise NonPositiveDepth("unproject needs depth > 0")
    K = np.asarray(K, dtype=np.float64)
    x = (px[..., 0] - K[0, 2]) / K[0, 0] * d
    y = (px[..., 1] - K[1, 2]) / K[1, 1] * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def transform_points(points, src: Camera, dst: Camera) -> np.ndarray:
    """Move camera-frame points of ``src`` into the camera frame of ``dst``."""
    if src is dst or np.array_equal(src.T, dst.T):
        return np.array(points, dtype=np.float64)
    R, t = dst.relative_to(src)
    return np.asarray(points, dtype=np.float64) @ R.T + t


def reproject_points(px, depth, src: Camera, dst: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised reprojection without the behind-camera check.

    Returns target pixels and target-frame depths; pixels whose target depth
    is not positive are returned as NaN.
    """
    X = transform_points(unproject(px, depth, src.K), src, dst)
    z = X[..., 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    u = dst.K[0, 0] * (X[..., 0] / zs) + dst.K[0, 2]
    v = dst.K[1, 1] * (X[..., 1] / zs) + dst.K[1, 2]
    uv = np.stack([u, v], axis=-1)
    uv[~ok] = np.nan
    return uv, z


def reproject_pixel(px, depth: float, src: Camera, dst: Camera) -> tuple[np.ndarray, float]:
    if not depth > 0:
        raise NonPositiveDepth(f"depth {depth} is not positive")
    X = transform_points(unproject(px, depth, src.K), src, dst)
    if not X[2] > 0:
        raise BehindCamera(f"point lands at z={X[2]:.6g} in the target camera")
    return project(X, dst.K), float(X[2])


@dataclass(frozen=True)
class WarpResult:
    image: np.ndarray
    mask: np.ndarray
    depth: np.ndarray  # 0 where mask is False


def valid_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth)
    return np.isfinite(depth) & (depth > 0)


def forward_warp(src_image, src_depth, src: Camera, dst: Camera,
                 out_shape: tuple[int, int] | None = None, splat2x2: bool = False) -> WarpResult:
    """Splat every valid source pixel into ``dst`` with a z-buffer.

    Each source pixel lands on the nearest integer target pixel (or on the
    four neighbours of its sub-pixel position with ``splat2x2``); when several
    land on one target pixel the smallest target depth wins, ties going to the
    lowest source index.
    """
    img = np.asarray(src_image)
    depth = np.asarray(src_depth, dtype=np.float64)
    if img.shape[:2] != depth.shape:
        raise ShapeMismatch(f"image {img.shape[:2]} vs depth {depth.shape}")
    H, W = depth.shape
    Ho, Wo = out_shape if out_shape is not None else (H, W)
    flat_img = img.reshape(H * W, -1)

    ok = valid_depth(depth)
    vs, us = np.nonzero(ok)
    src_idx = vs * W + us
    px = np.stack([us, vs], axis=-1).astype(np.float64)
    uv, z = reproject_points(px, depth[vs, us], src, dst)
    front = z > 0
    uv, z, src_idx = uv[front], z[front], src_idx[front]

    if splat2x2:
        base = np.floor(uv).astype(np.int64)
        offs = [(0, 0), (1, 0), (0, 1), (1, 1)]
        tu = np.concatenate([base[:, 0] + du for du, _ in offs])
        tv = np.concatenate([base[:, 1] + dv for _, dv in offs])
        z = np.tile(z, 4)
        src_idx = np.tile(src_idx, 4)
    else:
        # round half up so the result does not depend on numpy's banker's rounding
        tu = np.floor(uv[:, 0] + 0.5).astype(np.int64)
        tv = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    inside = (tu >= 0) & (tu < Wo) & (tv >= 0) & (tv < Ho)
    tgt = tv[inside] * Wo + tu[inside]
    z, src_idx = z[inside], src_idx[inside]

    order = np.lexsort((src_idx, z, tgt))
    tgt, z, src_idx = tgt[order], z[order], src_idx[order]
    first = np.ones(tgt.shape, dtype=bool)
    first[1:] = tgt[1:] != tgt[:-1]
    tgt, z, src_idx = tgt[first], z[first], src_idx[first]

    out = np.zeros((Ho * Wo, flat_img.shape[1]), dtype=img.dtype)
    out[tgt] = flat_img[src_idx]
    zbuf = np.zeros(Ho * Wo)
    zbuf[tgt] = z
    mask = np.zeros(Ho * Wo, dtype=bool)
    mask[tgt] = True
    return WarpResult(
        image=out.reshape((Ho, Wo) + img.shape[2:]),
        mask=mask.reshape(Ho, Wo),
        depth=zbuf.reshape(Ho, Wo),
    )
