"""Sparse per-keypoint depth correction and dense recovery by locally weighted regression.

Each matched keypoint of the source view gets its own corrected depth by
minimising the reprojection error to its matches in the anchor views. The
corrected depths then act as sparse guidance: at every pixel a (scale, shift)
pair is fitted to the guidance by Gaussian-weighted least squares against the
estimated depth, giving a dense rescaled depth map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import rng as make_rng
from .camgeo import Camera, reproject_points, valid_depth
from .errors import EmptyGuidance, NonPositiveDepth, NoValidPixels, ShapeMismatch, SingularSystem

MAX_MATCHES = 1024
KERNEL_NORM = 1.0 / math.sqrt(2.0 * math.pi)
COND_LIMIT = 1e12


@dataclass
class MatchSet:
    """One row per (source keypoint, anchor view) correspondence."""

    src_px: np.ndarray  # (M, 2)
    anchor_view: np.ndarray  # (M,)
    dst_px: np.ndarray  # (M, 2)
    src_depth: np.ndarray  # (M,)

    def __post_init__(self):
        self.src_px = np.asarray(self.src_px, dtype=np.float64).reshape(-1, 2)
        self.dst_px = np.asarray(self.dst_px, dtype=np.float64).reshape(-1, 2)
        self.anchor_view = np.asarray(self.anchor_view, dtype=np.int64).reshape(-1)
        self.src_depth = np.asarray(self.src_depth, dtype=np.float64).reshape(-1)
        n = len(self.src_px)
        if not (len(self.dst_px) == len(self.anchor_view) == len(self.src_depth) == n):
            raise ShapeMismatch("match columns differ in length")

    def __len__(self):
        return len(self.src_px)

    def keypoints(self) -> list[np.ndarray]:
        """Row indices grouped by identical source pixel, in order of first appearance."""
        groups: dict[tuple[float, float], list[int]] = {}
        for i, (u, v) in enumerate(self.src_px):
            groups.setdefault((u, v), []).append(i)
        return [np.array(g) for g in groups.values()]


@dataclass(frozen=True)
class AlignParams:
    iters: int = 200
    step: float = 0.1  # initial step in log-depth
    max_log_step: float = 1.0
    outlier_px: float = 2.0
    max_keypoints: int = MAX_MATCHES


@dataclass(frozen=True)
class KeypointAlignment:
    depth: float
    alpha: float
    beta: float
    residual: float  # max pixel distance over anchors
    descended: bool


class _KeypointProblem:
    """Reprojection loss of one keypoint as a function of its log depth."""

    def __init__(self, px, anchors, src: Camera, image_size):
        h, w = image_size
        self.norm = np.array([w, h], dtype=np.float64)
        ray = np.array([(px[0] - src.K[0, 2]) / src.K[0, 0], (px[1] - src.K[1, 2]) / src.K[1, 1], 1.0])
        self.dirs, self.offs, self.f, self.c, self.targets = [], [], [], [], []
        for cam, m in anchors:
            R, t = cam.relative_to(src)
            self.dirs.append(R @ ray)
            self.offs.append(t)
            self.f.append([cam.K[0, 0], cam.K[1, 1]])
            self.c.append([cam.K[0, 2], cam.K[1, 2]])
            self.targets.append(m)
        self.dirs = np.array(self.dirs)
        self.offs = np.array(self.offs)
        self.f = np.array(self.f)
        self.c = np.array(self.c)
        self.targets = np.asarray(self.targets, dtype=np.float64)

    def pixels(self, d: float):
        X = d * self.dirs + self.offs
        z = X[:, 2]
        if np.any(z <= 0):
            return None, X
        return self.f * X[:, :2] / z[:, None] + self.c, X

    def loss(self, s: float) -> float:
        uv, _ = self.pixels(math.exp(s))
        if uv is None:
            return math.inf
        r = (uv - self.targets) / self.norm
        return float(np.sum(r * r))

    def jacobian(self, s: float):
        """d(normalised pixel)/d(log depth) per anchor, plus normalised residuals."""
        d = math.exp(s)
        uv, X = self.pixels(d)
        if uv is None:
            return None, None
        z = X[:, 2:3]
        # d(f x/z)/dd = f (a_x z - x a_z) / z^2, times d for the log chain
        J = self.f * (self.dirs[:, :2] * z - X[:, :2] * self.dirs[:, 2:3]) / z ** 2 * d / self.norm
        r = (uv - self.targets) / self.norm
        return J, r

    def grad(self, s: float) -> float:
        J, r = self.jacobian(s)
        if J is None:
            return math.nan
        return float(2.0 * np.sum(J * r))

    def residual_px(self, d: float) -> float:
        uv, _ = self.pixels(d)
        if uv is None:
            return math.inf
        return float(np.max(np.hypot(*(uv - self.targets).T)))


def align_keypoint(d: float, px, anchors, src: Camera, image_size, params: AlignParams = AlignParams()) -> KeypointAlignment:
    """Correct one keypoint depth against its matches in anchor views.

    ``anchors`` is a list of ``(Camera, matched pixel)``. The search runs over
    log depth with backtracking gradient descent whose trial step is the
    secant estimate from the previous move; the result reports ``alpha = d*/d`` and ``beta = 0``.
    """
    if not d > 0:
        raise NonPositiveDepth(f"source depth {d} is not positive")
    if not anchors:
        raise ValueError("keypoint needs at least one anchor match")
    prob = _KeypointProblem(px, anchors, src, image_size)
    s0 = math.log(d)
    loss0 = prob.loss(s0)

    def unchanged(descended=False):
        return KeypointAlignment(d, 1.0, 0.0, prob.residual_px(d), descended)

    J, _ = prob.jacobian(s0)
    if J is None:
        return unchanged()
    if not np.any(np.abs(J) > 1e-12):
        # depth has no effect on the reprojection (zero baseline)
        return unchanged()

    s, loss, step = s0, loss0, params.step
    for _ in range(params.iters):
        g = prob.grad(s)
        if not math.isfinite(g) or g == 0.0:
            break
        accepted = False
        while step * abs(g) > 1e-300:
            ds = -step * g
            if abs(ds) > params.max_log_step:
                ds = math.copysign(params.max_log_step, ds)
            trial = prob.loss(s + ds)
            if trial <= loss - 1e-4 * abs(ds * g):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        converged = abs(ds) <= 1e-13 * max(1.0, abs(s))
        s, loss = s + ds, trial
        if converged or loss == 0.0:
            break
        # secant (Barzilai-Borwein) step for the next move, doubling when curvature is not positive
        g_new = prob.grad(s)
        dg = g_new - g
        step = ds / dg if math.isfinite(g_new) and ds * dg > 0 else 2.0 * step

    if not loss < loss0:
        if loss0 <= 1e-24:
            # already at the optimum
            return unchanged(descended=True)
        return unchanged()
    d_star = math.exp(s)
    return KeypointAlignment(d_star, d_star / d, 0.0, prob.residual_px(d_star), True)


@dataclass
class SparseGuidance:
    pixels: np.ndarray  # (K, 2) float source pixels
    depth: np.ndarray  # (K,) corrected depths
    alpha: np.ndarray
    beta: np.ndarray
    residual: np.ndarray

    def __len__(self):
        return len(self.depth)

    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer (row, col) of the pixel each guidance point belongs to."""
        u = np.floor(self.pixels[:, 0] + 0.5).astype(np.int64)
        v = np.floor(self.pixels[:, 1] + 0.5).astype(np.int64)
        return v, u

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "points": [
                {"u": float(p[0]), "v": float(p[1]), "depth": float(d), "alpha": float(a),
                 "beta": float(b), "residual": float(r)}
                for p, d, a, b, r in zip(self.pixels, self.depth, self.alpha, self.beta, self.residual)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SparseGuidance":
        pts = data.get("points", [])
        return cls(
            pixels=np.array([[p["u"], p["v"]] for p in pts], dtype=np.float64).reshape(-1, 2),
            depth=np.array([p["depth"] for p in pts], dtype=np.float64),
            alpha=np.array([p.get("alpha", 1.0) for p in pts], dtype=np.float64),
            beta=np.array([p.get("beta", 0.0) for p in pts], dtype=np.float64),
            residual=np.array([p.get("residual", 0.0) for p in pts], dtype=np.float64),
        )


def sample_depth(depth: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Nearest-pixel lookup; NaN outside the image."""
    h, w = depth.shape
    u = np.floor(px[:, 0] + 0.5).astype(np.int64)
    v = np.floor(px[:, 1] + 0.5).astype(np.int64)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    out = np.full(len(px), np.nan)
    out[inside] = depth[v[inside], u[inside]]
    return out


def align_sparse(depth, matches: MatchSet, src: Camera, anchors: dict[int, Camera],
                 params: AlignParams = AlignParams(), image_size=None) -> SparseGuidance:
    """Run :func:`align_keypoint` independently for every keypoint in ``matches``.

    Source depths come from ``depth`` at the keypoint pixel when a map is
    given, otherwise from ``matches.src_depth``. Keypoints that fail to
    descend or whose residual exceeds ``params.outlier_px`` are dropped.
    """
    if depth is not None:
        depth = np.asarray(depth, dtype=np.float64)
        image_size = depth.shape
        d_src = sample_depth(depth, matches.src_px)
    else:
        if image_size is None:
            raise ValueError("image_size is required without a depth map")
        d_src = matches.src_depth
    rows = []
    for group in matches.keypoints()[: params.max_keypoints]:
        i0 = group[0]
        d = d_src[i0]
        if not (np.isfinite(d) and d > 0):
            continue
        anchor_list = [(anchors[int(matches.anchor_view[i])], matches.dst_px[i]) for i in group]
        res = align_keypoint(float(d), matches.src_px[i0], anchor_list, src, image_size, params)
        if not res.descended or not res.residual <= params.outlier_px:
            continue
        rows.append((matches.src_px[i0], res))
    if not rows:
        raise EmptyGuidance("no keypoint survived alignment")
    return SparseGuidance(
        pixels=np.array([p for p, _ in rows]),
        depth=np.array([r.depth for _, r in rows]),
        alpha=np.array([r.alpha for _, r in rows]),
        beta=np.array([r.beta for _, r in rows]),
        residual=np.array([r.residual for _, r in rows]),
    )


# -- dense recovery -----------------------------------------------------------

def _guidance_design(guidance: SparseGuidance, depth: np.ndarray):
    if len(guidance) == 0:
        raise EmptyGuidance("no guidance points")
    h, w = depth.shape
    rows, cols = guidance.cells()
    if np.any((rows < 0) | (rows >= h) | (cols < 0) | (cols >= w)):
        raise ShapeMismatch("guidance point outside the depth map")
    x = depth[rows, cols]
    if not np.all(valid_depth(x)):
        raise NonPositiveDepth("estimated depth invalid at a guidance point")
    scale = max(h, w)
    return cols / scale, rows / scale, x, guidance.depth, scale


def _solve(Sw, Sx, Sxx, Sy, Sxy, lam, locate):
    """Closed-form 2x2 solve of [[Sxx, Sx], [Sx, Sw + lam]] [scale, shift] = [Sxy, Sy]."""
    a = Sxx
    b = Sx
    c = Sw + lam
    det = a * c - b * b
    tr = a + c
    disc = np.sqrt(np.maximum((a - c) ** 2 / 4 + b * b, 0.0))
    lmax = tr / 2 + disc
    lmin = tr / 2 - disc
    with np.errstate(divide="ignore", invalid="ignore"):
        bad = ~(lmin > 0) | (lmax / lmin > COND_LIMIT) | ~(det > 0)
        if np.any(bad):
            px = locate(int(np.flatnonzero(bad)[0]))
            raise SingularSystem(f"normal matrix singular at pixel (u, v) = {px}", pixel=px)
        scale = (c * Sxy - b * Sy) / det
        shift = (a * Sy - b * Sxy) / det
    return scale, shift


def lwlr_pixel(u: int, v: int, guidance: SparseGuidance, depth, b: float = 0.2,
               lam: float = 1e-4) -> tuple[float, float]:
    """Weighted (scale, shift) fit at pixel column ``u``, row ``v``.

    ``lam`` penalises only the shift, matching the l2 term on the shift map.
    """
    depth = np.asarray(depth, dtype=np.float64)
    gu, gv, x, y, norm = _guidance_design(guidance, depth)
    dist2 = (gu - u / norm) ** 2 + (gv - v / norm) ** 2
    wts = KERNEL_NORM * np.exp(-dist2 / (2 * b * b))
    s, t = _solve(wts.sum(), wts @ x, wts @ (x * x), wts @ y, wts @ (x * y), lam, lambda _: (u, v))
    return float(s), float(t)


@dataclass
class ScaledDepth:
    depth: np.ndarray
    scale: np.ndarray
    shift: np.ndarray


def lwlr_recover(depth, guidance: SparseGuidance, b: float = 0.2, lam: float = 1e-4,
                 chunk: int = 4096) -> ScaledDepth:
    """Fit (scale, shift) at every pixel and rescale ``depth``; guided pixels take their guidance depth.

    Pixels where ``depth`` is invalid stay 0 in the output.
    """
    if not b > 0 or lam < 0:
        raise ValueError("need b > 0 and lam >= 0")
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    gu, gv, x, y, norm = _guidance_design(guidance, depth)
    vs, us = np.mgrid[0:h, 0:w]
    qu = us.ravel() / norm
    qv = vs.ravel() / norm
    scale = np.empty(h * w)
    shift = np.empty(h * w)
    inv2b2 = 1.0 / (2 * b * b)
    for lo in range(0, h * w, chunk):
        hi = min(lo + chunk, h * w)
        d2 = (qu[lo:hi, None] - gu[None, :]) ** 2 + (qv[lo:hi, None] - gv[None, :]) ** 2
        wts = KERNEL_NORM * np.exp(-d2 * inv2b2)
        Sw = wts.sum(axis=1)
        Sx = wts @ x
        Sxx = wts @ (x * x)
        Sy = wts @ y
        Sxy = wts @ (x * y)
        scale[lo:hi], shift[lo:hi] = _solve(Sw, Sx, Sxx, Sy, Sxy, lam,
                                            lambda k, lo=lo: ((lo + k) % w, (lo + k) // w))
    scale = scale.reshape(h, w)
    shift = shift.reshape(h, w)
    out = np.where(valid_depth(depth), scale * depth + shift, 0.0)
    rows, cols = guidance.cells()
    # first guidance point wins when several share a pixel
    _, first = np.unique(rows * w + cols, return_index=True)
    out[rows[first], cols[first]] = guidance.depth[first]
    return ScaledDepth(depth=out, scale=scale, shift=shift)


# -- synthetic matches ----------------------------------------------------------

def synth_matches(gt_depth, src: Camera, anchors: dict[int, Camera], n: int, rng_seed: int = 0,
                  image_size=None) -> MatchSet:
    """Exact correspondences by reprojecting ground-truth depth into each anchor.

    Pixels are drawn without replacement from the valid-depth pixels; a
    keypoint is kept when it lands inside at least one anchor image, until
    ``n`` keypoints are collected.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gt = np.asarray(gt_depth, dtype=np.float64)
    h, w = gt.shape
    ah, aw = image_size if image_size is not None else (h, w)
    vs, us = np.nonzero(valid_depth(gt))
    if len(vs) == 0:
        raise NoValidPixels("ground-truth depth has no valid pixel")
    order = make_rng(rng_seed, 0x5A7C).permutation(len(vs))
    px = np.stack([us[order], vs[order]], axis=-1).astype(np.float64)
    d = gt[vs[order], us[order]]

    inb = {}
    dst = {}
    for view, cam in anchors.items():
        uv, z = reproject_points(px, d, src, cam)
        inb[view] = (z > 0) & (uv[:, 0] >= -0.5) & (uv[:, 0] < aw - 0.5) & (uv[:, 1] >= -0.5) & (uv[:, 1] < ah - 0.5)
        dst[view] = uv
    any_in = np.zeros(len(px), dtype=bool)
    for m in inb.values():
        any_in |= m
    chosen = np.flatnonzero(any_in)[:n]
    if len(chosen) == 0:
        raise NoValidPixels("no sampled pixel reprojects inside an anchor view")
    src_px, views, dst_px, depths = [], [], [], []
    for k in chosen:
        for view in anchors:
            if inb[view][k]:
                src_px.append(px[k])
                views.append(view)
                dst_px.append(dst[view][k])
                depths.append(d[k])
    return MatchSet(np.array(src_px), np.array(views), np.array(dst_px), np.array(depths))
