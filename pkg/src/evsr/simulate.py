"""Synthetic DVS recordings from parametric intensity scenes.

Each pixel tracks log intensity and emits a signed event whenever the
change since the last event crosses the contrast threshold, which makes
the long-run event rate (1/theta) * d/dt ln I(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .events import EventStream

US_PER_S = 1_000_000


@dataclass(frozen=True)
class IntensityScene:
    """Analytic luminance field I(x, y, t), strictly positive.

    ``fn`` is vectorized over pixel coordinate grids and takes the time in
    microseconds.
    """

    width: int
    height: int
    duration: int
    kind: str
    fn: Callable[[np.ndarray, np.ndarray, float], np.ndarray]

    def intensity(self, x, y, t_us):
        return self.fn(np.asarray(x, dtype=np.float64),
                       np.asarray(y, dtype=np.float64), float(t_us))


@dataclass(frozen=True)
class SimConfig:
    """Pixel model parameters: contrast threshold and tracker resolution."""

    theta: float
    time_step: int = 100

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.time_step < 1:
            raise ValueError(f"time_step must be >= 1 us, got {self.time_step}")


def make_scene(kind: str, width: int, height: int, duration: int,
               **params) -> IntensityScene:
    """Build a scene by name.

    Kinds: ``uniform``; ``exp_ramp(k)`` with k in 1/s; ``moving_bar(speed,
    bar_width, contrast)`` with speed in px/s, wrapping horizontally, the
    bar covering columns [0, bar_width) at t=0; ``moving_disk(speed,
    radius, contrast)`` entering from the left edge and exiting right.
    Background luminance is 1.0 and foreground 1.0 + contrast.
    """
    if width <= 0 or height <= 0 or duration <= 0:
        raise ValueError("scene needs positive geometry and duration")

    if kind == "uniform":
        fn = lambda x, y, t: np.ones_like(x)
    elif kind == "exp_ramp":
        k = float(params.pop("k"))
        fn = lambda x, y, t: np.full_like(x, math.exp(k * t / US_PER_S))
    elif kind == "moving_bar":
        speed = float(params.pop("speed"))
        bar_width = float(params.pop("bar_width"))
        contrast = float(params.pop("contrast"))
        if speed <= 0 or contrast <= 0:
            raise ValueError("speed and contrast must be > 0")
        if not 0 < bar_width <= width:
            raise ValueError(f"bar_width must be in (0, {width}]")

        def fn(x, y, t, speed=speed, bw=bar_width, c=contrast, w=width):
            offset = np.mod(x - speed * t / US_PER_S, w)
            return 1.0 + c * (offset < bw)
    elif kind == "moving_disk":
        speed = float(params.pop("speed"))
        radius = float(params.pop("radius"))
        contrast = float(params.pop("contrast"))
        if speed <= 0 or contrast <= 0:
            raise ValueError("speed and contrast must be > 0")
        if radius <= 0:
            raise ValueError("radius must be > 0")

        def fn(x, y, t, speed=speed, r=radius, c=contrast, h=height):
            cx = speed * t / US_PER_S
            cy = (h - 1) / 2.0
            inside = (x - cx) ** 2 + (y - cy) ** 2 <= r * r
            return 1.0 + c * inside
    else:
        raise ValueError(f"unknown scene kind {kind!r}")
    if params:
        raise ValueError(f"unexpected parameters for {kind}: {sorted(params)}")
    return IntensityScene(width, height, duration, kind, fn)


def simulate(scene: IntensityScene, config: SimConfig, seed: int = 0,
             jitter_us: float = 0.0) -> EventStream:
    """Run the temporal-contrast pixel model over the scene.

    Per pixel, the tracked log intensity L(t) is sampled every
    ``config.time_step`` microseconds; each time |L - L_ref| crosses
    theta an event is emitted at the linearly interpolated crossing time
    and L_ref moves by exactly +/- theta (residual-preserving reset), so
    no contrast change is lost to the reset.  L_ref starts at L(0).

    Deterministic for fixed inputs.  ``seed`` only feeds the optional
    timestamp jitter (``jitter_us`` standard deviation, default off).
    """
    theta = config.theta
    step = config.time_step
    xs, ys = np.meshgrid(np.arange(scene.width), np.arange(scene.height))

    def log_intensity(t):
        inten = scene.intensity(xs, ys, t)
        if np.any(inten <= 0):
            raise ValueError(f"intensity must be positive (t={t})")
        return np.log(inten)

    sample_times = list(range(0, scene.duration + 1, step))
    if sample_times[-1] != scene.duration:
        sample_times.append(scene.duration)

    l_prev = log_intensity(0)
    l_ref = l_prev.copy()
    out_t, out_x, out_y, out_p = [], [], [], []
    t_prev = 0
    for t_now in sample_times[1:]:
        l_now = log_intensity(t_now)
        delta = l_now - l_ref
        n_cross = np.floor(np.abs(delta) / theta).astype(np.int64)
        m = int(n_cross.max()) if n_cross.size else 0
        if m > 0:
            sign = np.sign(delta)
            slope = l_now - l_prev
            for j in range(1, m + 1):
                active = n_cross >= j
                level = l_ref[active] + sign[active] * (j * theta)
                frac = (level - l_prev[active]) / slope[active]
                tc = t_prev + frac * (t_now - t_prev)
                tc = np.clip(np.rint(tc), 1, scene.duration).astype(np.int64)
                out_t.append(tc)
                out_x.append(xs[active].astype(np.int64))
                out_y.append(ys[active].astype(np.int64))
                out_p.append(sign[active].astype(np.int64))
            l_ref = l_ref + sign * n_cross * theta
        l_prev = l_now
        t_prev = t_now

    if out_t:
        t = np.concatenate(out_t)
        x = np.concatenate(out_x)
        y = np.concatenate(out_y)
        p = np.concatenate(out_p)
    else:
        t = x = y = p = np.empty(0, dtype=np.int64)
    if jitter_us > 0 and t.size:
        rng = np.random.default_rng(seed)
        t = t + np.rint(rng.normal(0, jitter_us, t.size)).astype(np.int64)
        t = np.clip(t, 1, scene.duration)
    return EventStream.create(scene.width, scene.height, scene.duration, t, x, y, p)
