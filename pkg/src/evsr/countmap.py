"""Per-pixel event-count maps and patch decomposition for the SR stage."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import ON, EventStream, TimeWindow

POLARITY_TAGS = {1: "ON", -1: "OFF"}


@dataclass(frozen=True)
class CountMap:
    """Non-negative per-pixel event counts for one polarity.

    Counts are integers when built from events and stay real-valued after
    super-resolution; quantization back to integers happens in the
    pipeline.
    """

    width: int
    height: int
    counts: np.ndarray
    polarity: str = "ON"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("count map dimensions must be positive")
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.shape != (self.height, self.width):
            raise ValueError(
                f"counts shape {counts.shape} != (height={self.height}, width={self.width})"
            )
        if counts.size and counts.min() < 0:
            raise ValueError("counts must be non-negative")
        if self.polarity not in ("ON", "OFF"):
            raise ValueError(f"polarity tag must be ON or OFF, got {self.polarity!r}")
        object.__setattr__(self, "counts", counts)

    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class PatchGrid:
    """Raster-ordered square patches cut from a map, with overlap."""

    patch_size: int
    overlap: int
    patches: tuple  # of (row, col, 2-D values)


def _offsets(dim: int, patch_size: int, stride: int) -> list[int]:
    offs = list(range(0, dim - patch_size + 1, stride))
    if offs[-1] != dim - patch_size:
        offs.append(dim - patch_size)  # clamp so the border is covered
    return offs


def build_count_map(stream: EventStream, window: TimeWindow,
                    polarity: int) -> CountMap:
    """Count events of one polarity per pixel with t in [t0, t1)."""
    if polarity not in POLARITY_TAGS:
        raise ValueError(f"polarity must be +1 or -1, got {polarity}")
    if window.t1 > stream.duration:
        raise ValueError("window exceeds stream duration")
    counts = np.zeros((stream.height, stream.width), dtype=np.float64)
    mask = (stream.p == polarity) & (stream.t >= window.t0) & (stream.t < window.t1)
    np.add.at(counts, (stream.y[mask], stream.x[mask]), 1.0)
    return CountMap(stream.width, stream.height, counts, POLARITY_TAGS[polarity])


def extract_patches(cmap: CountMap, patch_size: int, overlap: int) -> PatchGrid:
    """Cut raster-order patches at stride = patch_size - overlap.

    The final row/column offset is clamped so every pixel is covered.
    """
    if overlap < 0 or overlap >= patch_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < patch_size, got {overlap}")
    if patch_size > min(cmap.width, cmap.height):
        raise ValueError("patch_size exceeds map dimensions")
    stride = patch_size - overlap
    patches = []
    for r in _offsets(cmap.height, patch_size, stride):
        for c in _offsets(cmap.width, patch_size, stride):
            patches.append((r, c, cmap.counts[r:r + patch_size, c:c + patch_size].copy()))
    return PatchGrid(patch_size, overlap, tuple(patches))


def assemble_patches(grid: PatchGrid, width: int, height: int,
                     polarity: str = "ON") -> CountMap:
    """Average overlapping patches back into a (height, width) map."""
    acc = np.zeros((height, width), dtype=np.float64)
    cov = np.zeros((height, width), dtype=np.int64)
    n = grid.patch_size
    for r, c, values in grid.patches:
        if r < 0 or c < 0 or r + n > height or c + n > width:
            raise ValueError(f"patch at ({r}, {c}) outside {width}x{height} map")
        acc[r:r + n, c:c + n] += values
        cov[r:r + n, c:c + n] += 1
    if (cov == 0).any():
        raise RuntimeError("patch grid leaves pixels uncovered")
    return CountMap(width, height, acc / cov, polarity)


def to_pgm(cmap: CountMap) -> bytes:
    """Serialize as plain PGM (P2) with maxval = max count rounded up."""
    maxval = max(1, math.ceil(cmap.counts.max())) if cmap.counts.size else 1
    vals = np.rint(cmap.counts).astype(np.int64)
    lines = [f"P2", f"{cmap.width} {cmap.height}", f"{maxval}"]
    for row in vals:
        lines.append(" ".join(str(v) for v in row))
    return ("\n".join(lines) + "\n").encode("ascii")


def to_csv(cmap: CountMap) -> str:
    """Row-major CSV, one map row per line."""
    return "\n".join(",".join(repr(float(v)) for v in row) for row in cmap.counts) + "\n"


def from_csv(text: str, polarity: str = "ON") -> CountMap:
    rows = [
        [float(v) for v in line.split(",")]
        for line in text.strip().split("\n") if line.strip()
    ]
    arr = np.array(rows, dtype=np.float64)
    return CountMap(arr.shape[1], arr.shape[0], arr, polarity)
