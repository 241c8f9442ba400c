"""Exact i.i.d. sampling from skew-symmetric approximations by sign flipping.

Pipeline for ``m`` draws of dimension ``k`` (documented so outputs are
portable):

1. ``gen = numpy.random.Generator(PCG64(seed))``.
2. ``p = ceil(m*k/2)`` Box-Muller pairs: ``u1 = 1 - gen.random(p)``,
   ``u2 = gen.random(p)``, ``r = sqrt(-2 log u1)``; the normals are
   ``r cos(2 pi u2)`` and ``r sin(2 pi u2)`` interleaved, truncated to
   ``m*k`` values and reshaped row-major to (m, k).
3. ``z0 = normals @ L.T`` with ``L`` the lower Cholesky factor of omega.
4. ``z1 = gen.random(m)``.
5. Draw = location + s * z0 with ``s = +1`` when ``F(alpha(z0)) - z1 >= 0``
   and ``-1`` otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, EmptyReference

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer (a 64-bit integer hash)."""
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replicate_seed(base_seed: int, replicate: int) -> int:
    """Seed for a parallel stream: ``base_seed XOR splitmix64(replicate)``."""
    return (int(base_seed) & MASK64) ^ splitmix64(replicate)


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(check_seed(seed)))


def box_muller(gen: np.random.Generator, count: int) -> np.ndarray:
    pairs = (count + 1) // 2
    u1 = 1.0 - gen.random(pairs)
    u2 = gen.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1).ravel()[:count]


@dataclass(frozen=True)
class SampleBatch:
    """Draws (one row each) plus the seed and the approximation's provenance."""

    points: np.ndarray
    seed: int
    approx_id: str
    flip_fraction: float = float("nan")
    labels: Optional[tuple] = None

    @property
    def m(self) -> int:
        return int(self.points.shape[0])


def sample(approx, m: int, seed: int = 0) -> SampleBatch:
    """Draw ``m`` i.i.d. points from a joint or marginal approximation."""
    if m < 1:
        raise ValueError("m must be at least 1")
    gen = generator(seed)
    k = approx.dim
    z0 = box_muller(gen, m * k).reshape(m, k) @ np.asarray(approx.chol).T
    z1 = gen.random(m)
    if approx.provenance == "gaussian":
        keep = 0.5 - z1 >= 0
    else:
        keep = approx.skewing.cdf(approx.alpha(z0)) - z1 >= 0
    sign = np.where(keep, 1.0, -1.0)
    pts = approx.location + sign[:, None] * z0
    pts.setflags(write=False)
    labels = getattr(approx, "labels", None)
    return SampleBatch(pts, int(seed), approx.provenance, float(np.mean(~keep)), labels)


def write_csv(batch: SampleBatch, path, column_names: Optional[Sequence[str]] = None) -> None:
    """One row per draw, 17 significant digits, header from labels or theta1.."""
    k = batch.points.shape[1]
    names = column_names or batch.labels or [f"theta{i + 1}" for i in range(k)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names))
        for row in batch.points:
            w.writerow([format(float(v), ".17g") for v in row])


def read_csv(path) -> np.ndarray:
    """Reference samples: header row then one numeric column per coordinate."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyReference(f"{path}: no header row")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from None
    if data.size == 0:
        raise EmptyReference(f"{path}: no sample rows")
    return data
