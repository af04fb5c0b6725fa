"""RANSAC circle fitting, normalised 8-point fundamental matrices and Sampson distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import rng as make_rng
from .errors import (
    DegenerateConfiguration,
    DegenerateSample,
    TooFewCorrespondences,
    TooFewPoints,
    ZeroGradient,
)

COLLINEAR_AREA = 1e-12
RANK_TOL = 1e-10


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    radius: float
    inlier_flags: np.ndarray

    @property
    def inlier_count(self) -> int:
        return int(np.count_nonzero(self.inlier_flags))


def circumcircle(p1, p2, p3) -> tuple[np.ndarray, float]:
    """Circle through three points; raises :class:`DegenerateSample` when collinear."""
    a = np.asarray(p1, dtype=np.float64)
    b = np.asarray(p2, dtype=np.float64) - a
    c = np.asarray(p3, dtype=np.float64) - a
    cross = b[0] * c[1] - b[1] * c[0]
    if abs(cross) / 2 <= COLLINEAR_AREA:
        raise DegenerateSample("points are collinear")
    bb = b @ b
    cc = c @ c
    # centre relative to p1 keeps the solve translation-equivariant
    ox = (c[1] * bb - b[1] * cc) / (2 * cross)
    oy = (b[0] * cc - c[0] * bb) / (2 * cross)
    return a + np.array([ox, oy]), float(np.hypot(ox, oy))


def circle_inliers(points: np.ndarray, center, radius: float, tol: float) -> np.ndarray:
    d = np.hypot(points[:, 0] - center[0], points[:, 1] - center[1])
    return np.abs(d - radius) <= tol


def ransac_circle(points, iters: int = 200, inlier_tol: float = 1.0, rng_seed: int = 0) -> CircleFit:
    """Best sampled circle by inlier count, then smaller radius, then earlier draw.

    Sampling indexes ``points`` in the given order, so the result is a pure
    function of (points, iters, inlier_tol, rng_seed).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    if iters < 1 or not inlier_tol > 0:
        raise ValueError("iters must be >= 1 and inlier_tol > 0")

    if n == 3:
        samples = [np.arange(3)]
    else:
        gen = make_rng(rng_seed, 0xC1C1E)
        samples = (gen.choice(n, size=3, replace=False) for _ in range(iters))

    best = None
    best_key = None
    for idx in samples:
        try:
            center, radius = circumcircle(*pts[idx])
        except DegenerateSample:
            continue
        flags = circle_inliers(pts, center, radius, inlier_tol)
        key = (int(flags.sum()), -radius)
        if best_key is None or key > best_key:
            best_key = key
            best = CircleFit(center=center, radius=radius, inlier_flags=flags)
    if best is None:
        raise DegenerateSample("every sampled triple was collinear")
    return best


def sampson_distances(F, x1, x2) -> np.ndarray:
    """Vectorised first-order geometric error of ``x2^T F x1`` (squared pixels)."""
    F = np.asarray(F, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    Fx1 = h1 @ F.T
    Ftx2 = h2 @ F
    num = np.einsum("ij,ij->i", h2, Fx1) ** 2
    den = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))


def sampson_distance(F, x, x2) -> float:
    F = np.asarray(F, dtype=np.float64)
    h1 = np.array([x[0], x[1], 1.0])
    h2 = np.array([x2[0], x2[1], 1.0])
    Fx1 = F @ h1
    Ftx2 = F.T @ h2
    terms = np.array([Fx1[0], Fx1[1], Ftx2[0], Ftx2[1]]) ** 2
    if np.all(terms < 1e-300):
        raise ZeroGradient("Sampson denominator underflows")
    return float((h2 @ Fx1) ** 2 / terms.sum())


def hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid to origin, RMS distance to sqrt(2). Returns (normalised points, 3x3 transform)."""
    c = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))
    s = np.sqrt(2) / rms if rms > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return (pts - c) * s, T


def _design(n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    x1, y1 = n1[..., 0], n1[..., 1]
    x2, y2 = n2[..., 0], n2[..., 1]
    one = np.ones_like(x1)
    return np.stack([x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, one], axis=-1)


def _canonical(F: np.ndarray) -> np.ndarray:
    F = F / np.linalg.norm(F)
    k = np.argmax(np.abs(F))
    return F if F.flat[k] > 0 else -F


def _enforce_rank2(F: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(F)
    s[2] = 0.0
    return U @ np.diag(s) @ Vt


def eight_point(x1, x2) -> np.ndarray:
    """Normalised 8-point estimate from >= 8 correspondences (least squares when more)."""
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
    if len(x1) < 8:
        raise TooFewCorrespondences(f"need 8 correspondences, got {len(x1)}")
    n1, T1 = hartley_normalize(x1)
    n2, T2 = hartley_normalize(x2)
    A = _design(n1, n2)
    _, s, Vt = np.linalg.svd(A)
    if s[7] <= RANK_TOL * s[0]:
        raise DegenerateConfiguration("correspondence system is rank deficient")
    F = _enforce_rank2(Vt[-1].reshape(3, 3))
    return _canonical(T2.T @ F @ T1)


def ransac_fundamental(x1, x2, iters: int = 1000, inlier_tol: float = 0.5,
                       rng_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """RANSAC over normalised 8-point minimal solves, refit on the best inlier set.

    Returns ``(F, inlier_flags)`` where inliers have Sampson distance
    ``<= inlier_tol`` under the refit ``F``.
    """
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
    n = len(x1)
    if len(x2) != n:
        raise ValueError("x1 and x2 must have the same length")
    if n < 8:
        raise TooFewCorrespondences(f"need 8 correspondences, got {n}")

    n1, T1 = hartley_normalize(x1)
    n2, T2 = hartley_normalize(x2)
    gen = make_rng(rng_seed, 0xF00D)
    idx = np.stack([gen.choice(n, size=8, replace=False) for _ in range(iters)])
    A = _design(n1[idx], n2[idx])  # (iters, 8, 9)
    _, s, Vt = np.linalg.svd(A)
    ok = s[:, 7] > RANK_TOL * s[:, 0]
    if not ok.any():
        raise DegenerateConfiguration("all sampled minimal sets are rank deficient")

    best_count, best_F = -1, None
    for i in np.flatnonzero(ok):
        F = T2.T @ _enforce_rank2(Vt[i, -1].reshape(3, 3)) @ T1
        count = int(np.count_nonzero(sampson_distances(F, x1, x2) <= inlier_tol))
        if count > best_count:
            best_count, best_F = count, F

    inliers = sampson_distances(best_F, x1, x2) <= inlier_tol
    F = _canonical(best_F)
    if inliers.sum() >= 8:
        try:
            refit = eight_point(x1[inliers], x2[inliers])
        except DegenerateConfiguration:
            refit = None
        if refit is not None:
            refit_inliers = sampson_distances(refit, x1, x2) <= inlier_tol
            if refit_inliers.sum() >= inliers.sum():
                F, inliers = refit, refit_inliers
    return F, inliers
