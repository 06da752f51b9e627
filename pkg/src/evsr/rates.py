"""Per-pixel rate functions as max-normalized PSTHs over uniform time bins.

A pixel's rate shape is a binned histogram of its event times divided by
the largest bin count, so values lie in [0, 1].  High-resolution pixels
get their rate function from a 3x3 unit-sum kernel applied to the parent
neighborhood of the low-resolution field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream


@dataclass(frozen=True)
class RateFunction:
    """Normalized binned rate shape; bin i covers (i*dt, (i+1)*dt]."""

    bin_width: int
    values: np.ndarray

    def __post_init__(self):
        if self.bin_width < 1:
            raise ValueError(f"bin_width must be >= 1 us, got {self.bin_width}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("rate values must be a 1-D array")
        if values.size and (values.min() < 0 or values.max() > 1.0 + 1e-12):
            raise ValueError("rate values must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return self.bin_width * self.values.size


@dataclass(frozen=True)
class Kernel:
    """3x3 non-negative weights summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (3, 3):
            raise ValueError("kernel must be 3x3")
        if w.min() < 0:
            raise ValueError("kernel entries must be >= 0")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("kernel entries must sum to 1")
        object.__setattr__(self, "weights", w)


def default_kernel() -> Kernel:
    """Center-heavy smoothing kernel with 4-neighbor support."""
    return Kernel(np.array([[0, 1, 0], [1, 12, 1], [0, 1, 0]]) / 16.0)


def nearest_neighbor_kernel() -> Kernel:
    return Kernel(np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]], dtype=float))


@dataclass(frozen=True)
class RateField:
    """Per-pixel rate functions on a shared bin grid; values (h, w, bins)."""

    width: int
    height: int
    bin_width: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape[:2] != (self.height, self.width) or values.ndim != 3:
            raise ValueError("rate field values must be (height, width, bins)")
        object.__setattr__(self, "values", values)

    @property
    def n_bins(self) -> int:
        return self.values.shape[2]

    def rate(self, x: int, y: int) -> RateFunction:
        return RateFunction(self.bin_width, self.values[y, x])


def bin_index(times: np.ndarray, bin_width: int) -> np.ndarray:
    """Bin of each integer time for bins (i*dt, (i+1)*dt]; t=0 maps to bin 0."""
    t = np.asarray(times, dtype=np.int64)
    return np.maximum(t - 1, 0) // bin_width


def build_psth(event_times, horizon: int, bin_width: int) -> RateFunction:
    """Histogram event times into (0, T] bins and normalize by the max bin.

    All-zero input stays all-zero (silent pixel).  The horizon must be a
    multiple of bin_width; callers pad it up.
    """
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1 us")
    if horizon <= 0 or horizon % bin_width:
        raise ValueError(f"horizon {horizon} not a positive multiple of {bin_width}")
    t = np.asarray(event_times, dtype=np.int64)
    if t.size and (t.min() < 0 or t.max() > horizon):
        raise ValueError("event time out of range (0, horizon]")
    n_bins = horizon // bin_width
    counts = np.bincount(bin_index(t, bin_width), minlength=n_bins).astype(np.float64)
    peak = counts.max() if counts.size else 0.0
    if peak > 0:
        counts /= peak
    return RateFunction(bin_width, counts)


def build_rate_field(stream: EventStream, polarity: int, bin_width: int) -> RateField:
    """Per-pixel PSTH of one polarity; horizon padded up to a bin multiple."""
    n_bins = max(1, -(-stream.duration // bin_width))
    counts = np.zeros((stream.height, stream.width, n_bins), dtype=np.float64)
    mask = stream.p == polarity
    np.add.at(counts, (stream.y[mask], stream.x[mask],
                       bin_index(stream.t[mask], bin_width)), 1.0)
    peak = counts.max(axis=2, keepdims=True)
    np.divide(counts, peak, out=counts, where=peak > 0)
    return RateField(stream.width, stream.height, bin_width, counts)


def hr_rate_function(lr_field: RateField, hr_x: int, hr_y: int,
                     factor: int, kernel: Kernel) -> RateFunction:
    """Rate shape of an upscaled pixel: kernel-weighted 3x3 parent neighborhood.

    Coordinates clamp at the sensor edge, so the output stays a convex
    combination of parent values.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if not (0 <= hr_x < factor * lr_field.width
            and 0 <= hr_y < factor * lr_field.height):
        raise ValueError(f"pixel ({hr_x}, {hr_y}) outside upscaled geometry")
    x, y = hr_x // factor, hr_y // factor
    out = np.zeros(lr_field.n_bins, dtype=np.float64)
    for iy in (-1, 0, 1):
        for ix in (-1, 0, 1):
            w = kernel.weights[iy + 1, ix + 1]
            if w == 0.0:
                continue
            cx = min(max(x + ix, 0), lr_field.width - 1)
            cy = min(max(y + iy, 0), lr_field.height - 1)
            out += w * lr_field.values[cy, cx]
    return RateFunction(lr_field.bin_width, np.clip(out, 0.0, 1.0))


def smooth_rate_field(field: RateField, kernel: Kernel) -> RateField:
    """Apply the kernel at every pixel with clamp-to-edge replication.

    Vectorized equivalent of :func:`hr_rate_function` over all parent
    pixels at once (upscaled pixels share their parent's smoothed shape).
    """
    padded = np.pad(field.values, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(field.values)
    for iy in (-1, 0, 1):
        for ix in (-1, 0, 1):
            w = kernel.weights[iy + 1, ix + 1]
            if w == 0.0:
                continue
            out += w * padded[1 + iy:1 + iy + field.height,
                              1 + ix:1 + ix + field.width]
    np.clip(out, 0.0, 1.0, out=out)
    return RateField(field.width, field.height, field.bin_width, out)


def field_to_csv(field: RateField) -> str:
    """Dump as CSV lines: pixel row, pixel col, then bin values."""
    lines = []
    for y in range(field.height):
        for x in range(field.width):
            vals = ",".join(repr(float(v)) for v in field.values[y, x])
            lines.append(f"{y},{x},{vals}")
    return "\n".join(lines) + "\n"
