"""Time-dependent visual conditions for a multi-view diffusion model.

Given a clip ``X0`` split into clean reference frames and masked target
frames, the condition at timestep ``t`` mixes a "corrupted" copy of the clip
(masked, then noised at the reduced timestep ``f(t)``) with the noisy latent
``x_t`` using the weight ``W_t``, overwrites the reference frames with their
clean values and carries the masks along as an extra channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._rng import rng as make_rng
from .errors import BadChannelCount, MaskFractionUnreachable, ShapeMismatch, TimestepOutOfRange


@dataclass(frozen=True)
class ScheduleParams:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    beta_f: float = 0.2
    t_peak: int = 1000
    t_decay_end: int = 300
    v_decay_end: float = 0.8
    b_w: float = 0.075

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        if not 0 < self.beta_f < 1:
            # beta_f == 1 would give f(t) = t and lose the t' < t guarantee
            raise ValueError("beta_f must lie in (0, 1)")
        if not 0 <= self.t_decay_end < self.t_peak:
            raise ValueError("need 0 <= t_decay_end < t_peak")
        if not 0 <= self.v_decay_end <= 1 or self.b_w < 0:
            raise ValueError("v_decay_end must lie in [0, 1] and b_w >= 0")

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        """``alpha_bars[t]`` for t = 0..T, with ``alpha_bars[0] = 1``."""
        betas = np.linspace(self.beta_start, self.beta_end, self.T)
        out = np.empty(self.T + 1)
        out[0] = 1.0
        out[1:] = np.cumprod(1.0 - betas)
        out.setflags(write=False)
        return out


DEFAULT_SCHEDULE = ScheduleParams()


def _check_t(t: int, sched: ScheduleParams, lo: int = 0):
    if not lo <= t <= sched.T:
        raise TimestepOutOfRange(f"t={t} outside [{lo}, {sched.T}]")


def alpha_bar(t: int, sched: ScheduleParams = DEFAULT_SCHEDULE) -> float:
    _check_t(t, sched)
    return float(sched.alpha_bars[t])


def f_of_t(t: int, sched: ScheduleParams = DEFAULT_SCHEDULE) -> int:
    """Reduced timestep used to noise the corrupted frames."""
    return max(0, int(math.floor(sched.beta_f * t + 0.5)))


def w_of_t(t: float, sched: ScheduleParams = DEFAULT_SCHEDULE) -> float:
    """Mixture weight: linear from ``v_decay_end`` at ``t_decay_end`` up to 1 at ``t_peak``, exponential below."""
    if not 0 <= t <= sched.t_peak:
        raise TimestepOutOfRange(f"t={t} outside [0, {sched.t_peak}]")
    if t >= sched.t_decay_end:
        w = 1 - (1 - sched.v_decay_end) * (sched.t_peak - t) / (sched.t_peak - sched.t_decay_end)
    else:
        w = sched.v_decay_end * math.exp(-sched.b_w * (sched.t_decay_end - t))
    return min(1.0, max(0.0, w))


def add_noise(x0, t: int, noise, sched: ScheduleParams = DEFAULT_SCHEDULE) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ShapeMismatch(f"x0 {x0.shape} vs noise {noise.shape}")
    _check_t(t, sched)
    a = sched.alpha_bars[t]
    if a == 1.0:
        return x0.copy()
    return math.sqrt(a) * x0 + math.sqrt(1 - a) * noise


@dataclass
class ViewSet:
    """``frames`` (N, H, W, C); ``masks`` (N, H, W), forced all-false on references."""

    frames: np.ndarray
    reference_indices: tuple[int, ...]
    masks: np.ndarray = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim == 3:
            self.frames = self.frames[..., None]
        n, h, w = self.frames.shape[:3]
        refs = tuple(sorted(set(int(i) for i in self.reference_indices)))
        if any(not 0 <= i < n for i in refs):
            raise ValueError("reference index out of range")
        self.reference_indices = refs
        if self.masks is None:
            self.masks = np.zeros((n, h, w), dtype=bool)
        self.masks = np.array(self.masks, dtype=bool)
        if self.masks.shape != (n, h, w):
            raise ShapeMismatch(f"masks {self.masks.shape} vs frames {(n, h, w)}")
        self.masks[list(refs)] = False

    @property
    def target_indices(self) -> tuple[int, ...]:
        refs = set(self.reference_indices)
        return tuple(i for i in range(len(self.frames)) if i not in refs)


@dataclass
class Condition:
    values: np.ndarray  # (N, H, W, C)
    mask: np.ndarray  # (N, H, W)
    t: int
    t_prime: int
    weight: float

    def as_array(self) -> np.ndarray:
        """Values with the mask appended as a final channel."""
        return np.concatenate([self.values, self.mask[..., None].astype(self.values.dtype)], axis=-1)


def corrupt(views: ViewSet, t: int, noise, sched: ScheduleParams = DEFAULT_SCHEDULE) -> np.ndarray:
    """Masked frames noised at ``f(t)``; reference frames are noised but not masked."""
    _check_t(t, sched, lo=1)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != views.frames.shape:
        raise ShapeMismatch(f"noise {noise.shape} vs frames {views.frames.shape}")
    masked = views.frames * (1.0 - views.masks[..., None])
    return add_noise(masked, f_of_t(t, sched), noise, sched)


def build_condition(views: ViewSet, x_t, t: int, noise, sched: ScheduleParams = DEFAULT_SCHEDULE) -> Condition:
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != views.frames.shape:
        raise ShapeMismatch(f"x_t {x_t.shape} vs frames {views.frames.shape}")
    _check_t(t, sched, lo=1)
    c_t = corrupt(views, t, noise, sched)
    w = w_of_t(t, sched)
    if w == 1.0:
        values = c_t
    elif w == 0.0:
        values = x_t.copy()
    else:
        values = w * c_t + (1 - w) * x_t
    refs = list(views.reference_indices)
    values[refs] = views.frames[refs]
    return Condition(values=values, mask=views.masks.copy(), t=t, t_prime=f_of_t(t, sched), weight=w)


# -- irregular masks ---------------------------------------------------------

@dataclass(frozen=True)
class MaskParams:
    strokes: int = 4
    rects: int = 2
    stroke_width: float = 0.08  # fraction of min(H, W)
    stroke_steps: int = 12
    step_length: float = 0.08  # fraction of min(H, W)
    rect_size: tuple[float, float] = (0.1, 0.4)  # side, fraction of H or W
    fraction_bounds: tuple[float, float] = (0.1, 0.6)
    tries: int = 16


def _draw_mask(gen: np.random.Generator, h: int, w: int, p: MaskParams) -> np.ndarray:
    m = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    s = min(h, w)
    radius = max(1.0, p.stroke_width * s / 2)
    for _ in range(p.strokes):
        y, x = gen.uniform(0, h), gen.uniform(0, w)
        angle = gen.uniform(0, 2 * np.pi)
        for _ in range(p.stroke_steps):
            angle += gen.normal(0, 0.6)
            length = gen.uniform(0.5, 1.5) * p.step_length * s
            ny = np.clip(y + length * np.sin(angle), 0, h - 1)
            nx = np.clip(x + length * np.cos(angle), 0, w - 1)
            # thick segment: distance from each pixel to the segment
            dy, dx = ny - y, nx - x
            seg = dy * dy + dx * dx
            tt = np.clip(((yy - y) * dy + (xx - x) * dx) / seg, 0, 1) if seg > 0 else 0.0
            dist2 = (yy - (y + tt * dy)) ** 2 + (xx - (x + tt * dx)) ** 2
            m |= dist2 <= radius * radius
            y, x = ny, nx
    lo, hi = p.rect_size
    for _ in range(p.rects):
        rh = max(1, int(round(gen.uniform(lo, hi) * h)))
        rw = max(1, int(round(gen.uniform(lo, hi) * w)))
        r0 = int(gen.integers(0, h - rh + 1))
        c0 = int(gen.integers(0, w - rw + 1))
        m[r0:r0 + rh, c0:c0 + rw] = True
    return m


def irregular_mask(rng_seed: int, h: int, w: int, params: MaskParams = MaskParams()) -> np.ndarray:
    """Random strokes and rectangles whose covered fraction lies in ``params.fraction_bounds``."""
    if h < 8 or w < 8:
        raise ValueError("mask needs H, W >= 8")
    lo, hi = params.fraction_bounds
    gen = make_rng(rng_seed, 0x3A5C)
    for _ in range(params.tries):
        m = _draw_mask(gen, h, w, params)
        if lo <= m.mean() <= hi:
            return m
    raise MaskFractionUnreachable(f"no mask with fraction in [{lo}, {hi}] after {params.tries} tries")


# -- colour space and brightness ----------------------------------------------

def rgb_to_hsv(img) -> np.ndarray:
    """RGB in [0,1] to HSV with hue as a fraction of a turn in [0, 1)."""
    a = np.asarray(img, dtype=np.float64)
    if a.shape[-1] != 3:
        raise BadChannelCount(f"expected 3 channels, got {a.shape[-1]}")
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    v = a.max(axis=-1)
    c = v - a.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1), 0.0)
    safe = np.where(c > 0, c, 1)
    h = np.where(v == r, ((g - b) / safe) % 6,
                 np.where(v == g, (b - r) / safe + 2, (r - g) / safe + 4))
    h = np.where(c > 0, h / 6.0, 0.0)
    h = np.where(h >= 1.0, h - 1.0, h)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.shape[-1] != 3:
        raise BadChannelCount(f"expected 3 channels, got {a.shape[-1]}")
    h, s, v = a[..., 0], a[..., 1], a[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


SCALE_CLAMP = (0.25, 4.0)


def brightness_align(corrupted, reference, window: tuple[int, int] = (32, 32), valid=None) -> np.ndarray:
    """Scale the V channel of ``corrupted`` window by window to match ``reference``'s mean brightness.

    ``window`` is (w, h); edge windows are truncated. With ``valid`` only
    those pixels are measured and adjusted. Hue and saturation are untouched.
    """
    cor = np.asarray(corrupted, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if cor.shape != ref.shape:
        raise ShapeMismatch(f"{cor.shape} vs {ref.shape}")
    H, W = cor.shape[:2]
    valid = np.ones((H, W), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    hsv = rgb_to_hsv(cor)
    v_ref = rgb_to_hsv(ref)[..., 2]
    v = hsv[..., 2].copy()
    ww, wh = window
    for r0 in range(0, H, wh):
        for c0 in range(0, W, ww):
            sl = (slice(r0, r0 + wh), slice(c0, c0 + ww))
            sel = valid[sl]
            if not sel.any():
                continue
            mean_cor = v[sl][sel].mean()
            if mean_cor < 1e-6:
                continue
            scale = float(np.clip(v_ref[sl][sel].mean() / mean_cor, *SCALE_CLAMP))
            block = v[sl]
            block[sel] = np.clip(block[sel] * scale, 0.0, 1.0)
    hsv[..., 2] = v
    out = hsv_to_rgb(hsv)
    return np.where(valid[..., None], out, cor)
