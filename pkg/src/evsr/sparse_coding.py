"""Coupled-dictionary sparse coding for count-map super-resolution.

Low/high-resolution patch pairs are sampled raw from training count maps
and jointly normalized.  A low-resolution patch is coded over the LR
atoms (L1-regularized least squares with an overlap-consistency block)
and its high-resolution patch is read off the coupled HR atoms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .countmap import CountMap, _offsets
from .events import FormatError

DICT_MAGIC = b"EVDC"
_DICT_HEADER = struct.Struct("<4sHHI")


class TrainingError(RuntimeError):
    """Not enough usable training patches to build a dictionary."""


@dataclass(frozen=True)
class DictionaryPair:
    """Index-aligned LR/HR patch atoms; stacked columns have unit norm."""

    factor: int
    lr_patch_size: int
    lr_atoms: np.ndarray   # (lr_patch_size**2, n_atoms)
    hr_atoms: np.ndarray   # ((factor * lr_patch_size)**2, n_atoms)

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError(f"factor must be >= 2, got {self.factor}")
        if self.lr_patch_size < 1:
            raise ValueError("lr_patch_size must be >= 1")
        lr = np.asarray(self.lr_atoms, dtype=np.float64)
        hr = np.asarray(self.hr_atoms, dtype=np.float64)
        d2 = self.lr_patch_size ** 2
        h2 = (self.factor * self.lr_patch_size) ** 2
        if lr.ndim != 2 or lr.shape[0] != d2:
            raise ValueError(f"lr_atoms must be ({d2}, K)")
        if hr.ndim != 2 or hr.shape != (h2, lr.shape[1]):
            raise ValueError(f"hr_atoms must be ({h2}, {lr.shape[1]})")
        if lr.shape[1] < d2:
            raise ValueError("dictionary must be overcomplete (K >= lr patch dim)")
        norms = np.sqrt((lr * lr).sum(axis=0) + (hr * hr).sum(axis=0))
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("stacked atom columns must have unit norm")
        object.__setattr__(self, "lr_atoms", lr)
        object.__setattr__(self, "hr_atoms", hr)

    @property
    def n_atoms(self) -> int:
        return self.lr_atoms.shape[1]

    @property
    def hr_patch_size(self) -> int:
        return self.factor * self.lr_patch_size


@dataclass(frozen=True)
class SparseCodeConfig:
    """Lagrangian weights and stopping rule for the coordinate descent."""

    lam: float = 0.1
    beta: float = 1.0
    max_iter: int = 200
    tol: float = 1e-5

    def __post_init__(self):
        if min(self.lam, self.beta, self.tol) <= 0 or self.max_iter <= 0:
            raise ValueError("sparse-code parameters must all be positive")


def block_sum_downsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Sum factor x factor blocks; count mass is preserved exactly."""
    h, w = values.shape
    if h % factor or w % factor:
        raise ValueError(f"{h}x{w} not divisible by factor {factor}")
    return values.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))


def train_dictionaries(hr_count_maps: Sequence[CountMap], factor: int,
                       n_atoms: int, seed: int,
                       lr_patch_size: int = 3) -> DictionaryPair:
    """Draw coupled raw patch pairs from training maps (seeded, reproducible).

    Each draw picks a map and an aligned patch position uniformly; the LR
    patch comes from the block-sum downsampled map.  All-zero pairs are
    discarded and redrawn; more than 100 * n_atoms failed draws aborts.
    """
    if not hr_count_maps:
        raise ValueError("need at least one training count map")
    if n_atoms < lr_patch_size ** 2:
        raise ValueError("n_atoms must be >= lr patch dimension (overcomplete)")
    pairs = []
    for cmap in hr_count_maps:
        hr = cmap.counts
        lr = block_sum_downsample(hr, factor)
        rows = lr.shape[0] - lr_patch_size + 1
        cols = lr.shape[1] - lr_patch_size + 1
        if rows < 1 or cols < 1:
            raise ValueError(
                f"training map {cmap.width}x{cmap.height} too small for "
                f"{lr_patch_size}x{lr_patch_size} LR patches at factor {factor}")
        pairs.append((hr, lr, rows, cols))
    total_positions = sum(r * c for _, _, r, c in pairs)
    if n_atoms > total_positions:
        raise ValueError(
            f"n_atoms={n_atoms} exceeds {total_positions} available patch positions")

    rng = np.random.default_rng(seed)
    d = lr_patch_size
    hd = factor * d
    lr_cols, hr_cols = [], []
    for _ in range(100 * n_atoms):
        if len(lr_cols) == n_atoms:
            break
        hr, lr, rows, cols = pairs[rng.integers(len(pairs))]
        r = int(rng.integers(rows))
        c = int(rng.integers(cols))
        d_l = lr[r:r + d, c:c + d].ravel()
        d_h = hr[factor * r:factor * r + hd, factor * c:factor * c + hd].ravel()
        norm = np.sqrt(d_l @ d_l + d_h @ d_h)
        if norm == 0.0:
            continue
        lr_cols.append(d_l / norm)
        hr_cols.append(d_h / norm)
    if len(lr_cols) < n_atoms:
        raise TrainingError(
            f"only {len(lr_cols)} nonzero patch pairs found for {n_atoms} atoms")
    return DictionaryPair(factor, d, np.column_stack(lr_cols),
                          np.column_stack(hr_cols))


def coordinate_descent_lasso(A: np.ndarray, b: np.ndarray, lam: float,
                             max_iter: int, tol: float
                             ) -> tuple[np.ndarray, list[float]]:
    """Minimize ||A c - b||^2 + lam * ||c||_1 by cyclic coordinate descent.

    Closed-form soft-threshold updates; returns the coefficients and the
    per-sweep objective values (non-increasing).
    """
    n_coef = A.shape[1]
    gram = A.T @ A
    corr = A.T @ b
    b_sq = float(b @ b)
    coef = np.zeros(n_coef)
    # If no coordinate can escape the threshold, zero is already optimal.
    if corr.size == 0 or np.abs(corr).max() <= lam / 2:
        return coef, [b_sq]
    diag = np.diag(gram).copy()
    s = np.zeros(n_coef)  # gram @ coef, maintained incrementally
    objectives = [b_sq]
    for _ in range(max_iter):
        for j in range(n_coef):
            if diag[j] <= 0.0:
                continue
            rho = corr[j] - s[j] + diag[j] * coef[j]
            new = np.sign(rho) * max(abs(rho) - lam / 2, 0.0) / diag[j]
            delta = new - coef[j]
            if delta != 0.0:
                coef[j] = new
                s += gram[:, j] * delta
        s = gram @ coef
        obj = float(coef @ s - 2.0 * (corr @ coef) + b_sq
                    + lam * np.abs(coef).sum())
        objectives.append(obj)
        if abs(objectives[-2] - obj) <= tol * max(abs(objectives[-2]), 1e-12):
            break
    return coef, objectives


def sparse_code(y: np.ndarray, overlap_values, overlap_mask,
                dictionary: DictionaryPair,
                config: SparseCodeConfig) -> np.ndarray:
    """Code one LR patch against the coupled atoms with overlap consistency.

    The LR block is mean-removed (the feature operator), the HR block is
    restricted to already-reconstructed overlap pixels and weighted by
    beta.  ``overlap_mask`` marks those pixels within the HR patch;
    ``overlap_values`` holds their target values on the same layout.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != dictionary.lr_patch_size ** 2:
        raise ValueError(f"LR patch must have {dictionary.lr_patch_size ** 2} values")
    if not np.isfinite(y).all():
        raise ValueError("non-finite LR patch values")
    a_lr = dictionary.lr_atoms - dictionary.lr_atoms.mean(axis=0, keepdims=True)
    b_lr = y - y.mean()
    blocks_a, blocks_b = [a_lr], [b_lr]
    if overlap_mask is not None:
        mask = np.asarray(overlap_mask, dtype=bool).ravel()
        if mask.size != dictionary.hr_patch_size ** 2:
            raise ValueError("overlap mask must cover the HR patch")
        if mask.any():
            w = np.asarray(overlap_values, dtype=np.float64).ravel()[mask]
            if not np.isfinite(w).all():
                raise ValueError("non-finite overlap values")
            blocks_a.append(config.beta * dictionary.hr_atoms[mask])
            blocks_b.append(config.beta * w)
    A = np.vstack(blocks_a)
    b = np.concatenate(blocks_b)
    coef, _ = coordinate_descent_lasso(A, b, config.lam, config.max_iter, config.tol)
    return coef


def upscale_count_map(lr_map: CountMap, dictionary: DictionaryPair,
                      config: SparseCodeConfig) -> CountMap:
    """Super-resolve a count map through the coupled dictionaries.

    LR patches (overlap 1) are coded in raster order with the causal
    overlap of the running HR reconstruction.  The mean not already
    carried by the selected atoms is restored uniformly at HR scale
    (divided by factor^2); since coupled atoms have equal LR/HR sums,
    each patch then preserves count mass exactly.  Overlaps are averaged
    and negatives clamp to zero.
    """
    d = dictionary.lr_patch_size
    if min(lr_map.width, lr_map.height) < d:
        raise ValueError(
            f"map {lr_map.width}x{lr_map.height} smaller than {d}x{d} patches")
    factor = dictionary.factor
    hd = dictionary.hr_patch_size
    stride = d - 1  # LR patches overlap by 1 pixel
    hr_h, hr_w = factor * lr_map.height, factor * lr_map.width
    acc = np.zeros((hr_h, hr_w))
    cov = np.zeros((hr_h, hr_w), dtype=np.int64)
    for r in _offsets(lr_map.height, d, stride):
        for c in _offsets(lr_map.width, d, stride):
            y = lr_map.counts[r:r + d, c:c + d].ravel()
            rows = slice(factor * r, factor * r + hd)
            cols = slice(factor * c, factor * c + hd)
            cov_region = cov[rows, cols]
            mask = (cov_region > 0).ravel()
            running = acc[rows, cols] / np.maximum(cov_region, 1)
            coef = sparse_code(y, running.ravel(), mask, dictionary, config)
            mean_residual = (y.mean()
                             - (dictionary.lr_atoms @ coef).mean()) / factor ** 2
            patch = dictionary.hr_atoms @ coef + mean_residual
            acc[rows, cols] += patch.reshape(hd, hd)
            cov_region += 1
    if (cov == 0).any():
        raise RuntimeError("patch tiling left HR pixels uncovered")
    hr = np.maximum(acc / cov, 0.0)
    return CountMap(hr_w, hr_h, hr, lr_map.polarity)


def save_dictionary(dictionary: DictionaryPair) -> bytes:
    """Serialize to the ``.dict`` binary format (little-endian f64 atoms)."""
    header = _DICT_HEADER.pack(DICT_MAGIC, dictionary.factor,
                               dictionary.lr_patch_size, dictionary.n_atoms)
    stacked = np.concatenate([dictionary.lr_atoms, dictionary.hr_atoms], axis=0)
    return header + stacked.T.astype("<f8").tobytes()


def load_dictionary(data: bytes) -> DictionaryPair:
    if len(data) < _DICT_HEADER.size:
        raise FormatError("truncated dictionary header")
    magic, factor, d, n_atoms = _DICT_HEADER.unpack_from(data)
    if magic != DICT_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    per_atom = d * d + (factor * d) ** 2
    expected = _DICT_HEADER.size + 8 * per_atom * n_atoms
    if len(data) != expected:
        raise FormatError(
            f"dictionary size mismatch: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=_DICT_HEADER.size)
    stacked = flat.reshape(n_atoms, per_atom).T
    try:
        return DictionaryPair(factor, d, stacked[:d * d].copy(),
                              stacked[d * d:].copy())
    except ValueError as e:
        raise FormatError(str(e)) from None


def save_dictionary_file(dictionary: DictionaryPair, path) -> None:
    with open(path, "wb") as f:
        f.write(save_dictionary(dictionary))


def load_dictionary_file(path) -> DictionaryPair:
    return load_dictionary(open(path, "rb").read())
