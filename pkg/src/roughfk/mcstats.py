"""Random streams, sample statistics and log-log slope fits.

Streams are counter based: every (master seed, tag, mesh index, block index)
tuple is hashed into a 128-bit Philox key, so any block of paths can be
regenerated in isolation and in any order.  Paths are grouped in blocks of
``BLOCK_SIZE``; the block decomposition never depends on the number of worker
threads, which is what makes results thread-count independent.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

BLOCK_SIZE = 2048


def substream_key(master_seed: int, tag: str, mesh_index: int = 0, block_index: int = 0) -> int:
    payload = f"{int(master_seed) & 0xFFFFFFFFFFFFFFFF}|{tag}|{int(mesh_index)}|{int(block_index)}"
    digest = hashlib.blake2b(payload.encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def substream(master_seed: int, tag: str, mesh_index: int = 0, block_index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=substream_key(master_seed, tag, mesh_index, block_index)))


@dataclass(frozen=True)
class SeedLedger:
    """Master seed plus the derivation rule for every substream."""

    master_seed: int

    def key(self, tag: str, mesh_index: int = 0, block_index: int = 0) -> int:
        return substream_key(self.master_seed, tag, mesh_index, block_index)

    def generator(self, tag: str, mesh_index: int = 0, block_index: int = 0) -> np.random.Generator:
        return substream(self.master_seed, tag, mesh_index, block_index)

    def blocks(self, num_paths: int) -> list[tuple[int, int, int]]:
        """(block_index, start, stop) triples covering ``num_paths`` paths."""
        return path_blocks(num_paths)

    def normals(self, tag: str, mesh_index: int, block_index: int, shape: Sequence[int]) -> np.ndarray:
        return self.generator(tag, mesh_index, block_index).standard_normal(tuple(shape))


def path_blocks(num_paths: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    if num_paths < 1:
        raise ValueError("need at least one path")
    return [(b, start, min(start + block_size, num_paths))
            for b, start in enumerate(range(0, num_paths, block_size))]


def brownian_increments(ledger: SeedLedger, tag: str, mesh_index: int, block_index: int,
                        num_paths: int, steps: int, dim: int, dt: float) -> np.ndarray:
    """Increments of shape (num_paths, steps, dim) for one block.

    The first ``num_paths`` rows agree with a larger request on the same key,
    so truncating a block never changes the surviving paths.
    """
    if dim == 0 or steps == 0:
        return np.zeros((num_paths, steps, dim))
    z = ledger.normals(tag, mesh_index, block_index, (num_paths, steps, dim))
    return z * np.sqrt(dt)


def map_blocks(fn: Callable[[tuple[int, int, int]], object], blocks: Iterable[tuple[int, int, int]],
               threads: int = 1) -> list:
    """Apply ``fn`` to each block, returning results in block order."""
    blocks = list(blocks)
    if threads <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def mean_stderr(samples, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(samples, dtype=float)
    m = x.shape[axis]
    if m == 0:
        raise ValueError("empty sample")
    mean = x.mean(axis=axis)
    if m < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=axis, ddof=1) / np.sqrt(m)


def mean_ci(samples, level: float = 0.99) -> tuple[float, float]:
    """Normal-approximation confidence interval: (mean, halfwidth)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    if x.size < 2:
        raise ValueError("need at least two samples for a confidence interval")
    mean, se = mean_stderr(x)
    z = stats.norm.ppf(0.5 + level / 2)
    return float(mean), float(z * se)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float


def slope_fit(h, y) -> SlopeFit:
    """Least squares fit of log y against log h."""
    h = np.asarray(h, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if h.shape != y.shape:
        raise ValueError("h and y must have the same length")
    if h.size < 4:
        raise ValueError(f"slope fit needs at least 4 points, got {h.size}")
    if np.any(h <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("slope fit needs strictly positive finite inputs")
    lx, ly = np.log(h), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2)


def positive_slope(h, y, min_points: int = 4) -> float:
    """Slope over the strictly positive entries.

    Returns ``inf`` when every entry is exactly zero (the quantity vanishes
    faster than any power) and ``nan`` when too few positive points remain.
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.all(y == 0):
        return float("inf")
    keep = y > 0
    if keep.sum() < min_points:
        return float("nan")
    return slope_fit(h[keep], y[keep]).slope
