"""Local Shannon entropy over a disk neighbourhood, and its patch-pooled weights.

Gray levels in [0, 1] are quantized to ``bins`` equal-width bins. For each
pixel, the histogram of the disk ``{q : |q - p| <= radius}`` (reflect padding
at the borders) is reduced to ``-sum f log2 f`` over its nonzero frequencies.

Both filters build integer histograms and reduce them the same way: each
count is looked up in a shared ``-f log2 f`` table and bins are accumulated
in index order, so equal histograms give bitwise-equal entropies.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from medgrad.errors import ContractError


@dataclass
class EntropyMap:
    values: np.ndarray  # H×W, bits
    radius: int
    bins: int

    @property
    def max_entropy(self) -> float:
        return float(np.log2(min(self.bins, disk_size(self.radius))))


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luminance ``0.299 R + 0.587 G + 0.114 B``."""
    image = np.asarray(image, dtype=np.float64)
    return 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]


@lru_cache(maxsize=None)
def disk_offsets(radius: int) -> tuple[tuple[int, int], ...]:
    r = int(radius)
    return tuple((dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r)


def disk_size(radius: int) -> int:
    return len(disk_offsets(radius))


def _half_width(radius: int, dy: int) -> int:
    """Largest |dx| with dx² + dy² <= radius² (integer arithmetic)."""
    w = 0
    while (w + 1) ** 2 + dy * dy <= radius * radius:
        w += 1
    return w


@lru_cache(maxsize=None)
def _term_table(n: int) -> np.ndarray:
    c = np.arange(n + 1, dtype=np.float64)
    f = c / n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(c > 0, -f * np.log2(np.where(c > 0, f, 1.0)), 0.0)
    return t


def entropy_from_counts(counts: np.ndarray, n: int) -> np.ndarray:
    """Entropy (bits) from integer histograms along the last axis, each summing to ``n``."""
    table = _term_table(n)
    h = np.zeros(counts.shape[:-1], dtype=np.float64)
    for b in range(counts.shape[-1]):
        h += table[counts[..., b]]
    return h + 0.0  # folds -0.0 to 0.0


def quantize(gray: np.ndarray, bins: int) -> np.ndarray:
    q = np.floor(np.clip(gray, 0.0, 1.0) * bins).astype(np.int64)
    return np.minimum(q, bins - 1)


def _check(radius: int, bins: int) -> None:
    if radius < 1:
        raise ContractError(f"disk radius must be >= 1, got {radius}")
    if bins < 2:
        raise ContractError(f"bin count must be >= 2, got {bins}")


def local_entropy_ref(gray: np.ndarray, radius: int = 5, bins: int = 32) -> EntropyMap:
    """Direct count: every disk offset adds its shifted pixel to every pixel's histogram."""
    _check(radius, bins)
    q = quantize(np.asarray(gray), bins)
    h, w = q.shape
    padded = np.pad(q, radius, mode="reflect")
    counts = np.zeros((h, w, bins), dtype=np.int32)
    rows, cols = np.indices((h, w))
    for dy, dx in disk_offsets(radius):
        vals = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
        counts[rows, cols, vals] += 1
    return EntropyMap(entropy_from_counts(counts, disk_size(radius)), radius, bins)


@numba.njit(cache=True)
def _sliding_entropy(padded, h, w, r, bins, half_widths, table):  # pragma: no cover - compiled
    out = np.empty((h, w), dtype=np.float64)
    hist = np.zeros(bins, dtype=np.int32)
    for i in range(h):
        hist[:] = 0
        for k in range(2 * r + 1):
            hw = half_widths[k]
            for dx in range(-hw, hw + 1):
                hist[padded[i + k, r + dx]] += 1
        for j in range(w):
            if j > 0:
                for k in range(2 * r + 1):
                    hw = half_widths[k]
                    hist[padded[i + k, r + j - 1 - hw]] -= 1
                    hist[padded[i + k, r + j + hw]] += 1
            acc = 0.0
            for b in range(bins):
                acc += table[hist[b]]
            out[i, j] = acc + 0.0
    return out


def local_entropy_fast(gray: np.ndarray, radius: int = 5, bins: int = 32) -> EntropyMap:
    """Sliding disk: per row, move the window one column at a time, adding the
    disk's leading edge and dropping its trailing edge from one histogram.

    Bins are accumulated in index order exactly as in :func:`entropy_from_counts`.
    """
    _check(radius, bins)
    q = quantize(np.asarray(gray), bins)
    h, w = q.shape
    r = int(radius)
    padded = np.ascontiguousarray(np.pad(q, r, mode="reflect"))
    half_widths = np.array([_half_width(r, dy) for dy in range(-r, r + 1)], dtype=np.int64)
    values = _sliding_entropy(padded, h, w, r, int(bins), half_widths, _term_table(disk_size(r)))
    return EntropyMap(values, r, bins)


def pool_patches(values: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Average ``values`` (H×W) over a rows×cols grid of equal pixel blocks.

    Non-divisible sizes are first reflect-padded at the bottom/right edge up to
    the next multiple.
    """
    rows, cols = grid
    h, w = values.shape
    ph, pw = -(-h // rows), -(-w // cols)
    pad_h, pad_w = ph * rows - h, pw * cols - w
    if pad_h or pad_w:
        values = np.pad(values, ((0, pad_h), (0, pad_w)), mode="reflect")
    return values.reshape(rows, ph, cols, pw).mean(axis=(1, 3))


def entropy_weights(emap: EntropyMap, grid: tuple[int, int], normalization: str = "minmax") -> np.ndarray:
    """Per-patch entropy weights.

    ``minmax`` rescales pooled entropy to [0, 1] (all zeros when the pooled map
    is constant); ``max-entropy`` divides by ``log2(bins)``.
    """
    pooled = pool_patches(emap.values, grid)
    if normalization == "minmax":
        lo, hi = pooled.min(), pooled.max()
        if hi <= lo:
            return np.zeros_like(pooled)
        return (pooled - lo) / (hi - lo)
    if normalization == "max-entropy":
        return pooled / np.log2(emap.bins)
    raise ContractError(f"unknown entropy normalization {normalization!r}; use 'minmax' or 'max-entropy'")
