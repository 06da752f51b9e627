"""Quantitative evaluation of upscaled event streams plus frame rendering.

Two numbers matter here: the per-pixel PSTH RMSE against a groundtruth
stream, and the relative RMS deviation between the total firing-rate
curves of the upscaled and the original stream (DFRF, in percent).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventStream, TimeWindow
from .rates import bin_index


class MetricError(ValueError):
    """The requested metric is undefined for these inputs."""


@dataclass(frozen=True)
class Frame:
    """Grayscale rendering of ON/OFF balance; 128 is a silent pixel."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise ValueError("pixels must be (height, width)")
        object.__setattr__(self, "pixels", px)


@dataclass
class MetricReport:
    """Flat result bundle for one evaluation run."""

    rmse: float | None = None
    dfrf_percent: float | None = None
    event_count_lr: int = 0
    event_count_hr: int = 0
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        if self.rmse is not None:
            lines.append(f"rmse={self.rmse:.6f}")
        if self.dfrf_percent is not None:
            lines.append(f"dfrf={self.dfrf_percent:.4f}")
        lines.append(f"events_lr={self.event_count_lr}")
        lines.append(f"events_hr={self.event_count_hr}")
        for key in sorted(self.config):
            lines.append(f"{key}={self.config[key]}")
        return "\n".join(lines) + "\n"


def _n_bins(duration: int, bin_width: int) -> int:
    return max(1, -(-duration // bin_width))


def _psth_matrix(stream: EventStream, bin_width: int) -> np.ndarray:
    """Max-normalized per-pixel PSTH over both polarities, (h*w, bins)."""
    n_bins = _n_bins(stream.duration, bin_width)
    flat = np.zeros((stream.height * stream.width, n_bins))
    pix = stream.y.astype(np.int64) * stream.width + stream.x
    np.add.at(flat, (pix, bin_index(stream.t, bin_width)), 1.0)
    peak = flat.max(axis=1, keepdims=True)
    np.divide(flat, peak, out=flat, where=peak > 0)
    return flat


def rmse_psth(candidate: EventStream, reference: EventStream,
              bin_width: int = 100) -> float:
    """Root mean squared difference of normalized per-pixel PSTHs.

    Per pixel the squared difference is averaged over bins, then averaged
    over all pixels and rooted; identical streams give exactly 0.
    """
    if (candidate.width, candidate.height) != (reference.width, reference.height):
        raise ValueError("geometry mismatch between candidate and reference")
    if candidate.duration != reference.duration:
        raise ValueError("duration mismatch between candidate and reference")
    diff = _psth_matrix(candidate, bin_width) - _psth_matrix(reference, bin_width)
    return float(np.sqrt(np.mean(diff * diff)))


def total_rate_curve(stream: EventStream, bin_width: int = 100) -> np.ndarray:
    """Total event count per bin across all pixels, divided by bin width."""
    n_bins = _n_bins(stream.duration, bin_width)
    counts = np.bincount(bin_index(stream.t, bin_width), minlength=n_bins)
    return counts.astype(np.float64) / bin_width


def dfrf(hr_stream: EventStream, lr_stream: EventStream,
         bin_width: int = 100) -> float:
    """Relative RMS deviation between total firing-rate curves, in percent.

    The upscaled curve is rescaled to the reference's total mass before
    differencing, so the number compares temporal shape, not event
    volume (which grows with the magnification factor).
    """
    if hr_stream.duration != lr_stream.duration:
        raise ValueError("duration mismatch between streams")
    if len(lr_stream) == 0:
        raise MetricError("reference stream is empty; firing-rate ratio undefined")
    f_l = total_rate_curve(lr_stream, bin_width)
    f_h = total_rate_curve(hr_stream, bin_width)
    if f_h.sum() > 0:
        f_h = f_h * (f_l.sum() / f_h.sum())
    return float(100.0 * np.sqrt(np.mean((f_h - f_l) ** 2)) / f_l.mean())


def reconstruct_frame(stream: EventStream, window: TimeWindow) -> Frame:
    """Integrate ON minus OFF counts per pixel into a symmetric gray map.

    Zero balance renders as 128; the extreme balance of the frame maps to
    128 +/- 127.  An all-silent window is uniform 128.
    """
    if window.t1 > stream.duration:
        raise ValueError("window exceeds stream duration")
    balance = np.zeros((stream.height, stream.width))
    mask = (stream.t >= window.t0) & (stream.t < window.t1)
    np.add.at(balance, (stream.y[mask], stream.x[mask]),
              stream.p[mask].astype(np.float64))
    peak = np.abs(balance).max()
    if peak == 0:
        pixels = np.full(balance.shape, 128, dtype=np.uint8)
    else:
        pixels = np.rint(128.0 + 127.0 * balance / peak)
        pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    return Frame(stream.width, stream.height, pixels)


def frame_to_pgm(frame: Frame) -> bytes:
    """Binary PGM (P5, maxval 255)."""
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.pixels.tobytes()


def rate_curves_csv(lr_stream: EventStream, hr_stream: EventStream,
                    bin_width: int = 100) -> str:
    """CSV of the two total-rate curves: bin_start_us,f_lr,f_hr."""
    f_l = total_rate_curve(lr_stream, bin_width)
    f_h = total_rate_curve(hr_stream, bin_width)
    n = max(f_l.size, f_h.size)
    f_l = np.pad(f_l, (0, n - f_l.size))
    f_h = np.pad(f_h, (0, n - f_h.size))
    lines = ["bin_start_us,f_lr,f_hr"]
    for i in range(n):
        lines.append(f"{i * bin_width},{float(f_l[i])!r},{float(f_h[i])!r}")
    return "\n".join(lines) + "\n"
