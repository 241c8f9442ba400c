"""Packed storage for fully symmetric rank-3 and rank-4 tensors.

Only entries with non-decreasing indices (s <= t <= l) are stored, in the
order produced by ``itertools.combinations_with_replacement``.  Contractions
weight each stored entry by the number of distinct permutations of its index
tuple, so ``contract3(packed, u)`` equals ``einsum('stl,s,t,l', full, u, u, u)``.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations_with_replacement, permutations
from math import factorial

import numpy as np


def n_unique(d: int, rank: int = 3) -> int:
    """Number of stored entries for a symmetric tensor of given rank."""
    out = 1
    for k in range(rank):
        out = out * (d + k) // (k + 1)
    return out


@lru_cache(maxsize=64)
def unique_indices(d: int, rank: int = 3) -> np.ndarray:
    """Index tuples of the stored entries, shape (n_unique, rank)."""
    idx = np.array(list(combinations_with_replacement(range(d), rank)), dtype=np.intp)
    idx.setflags(write=False)
    return idx.reshape(-1, rank)


def _multiplicity(tup) -> int:
    counts = np.bincount(np.asarray(tup))
    m = factorial(len(tup))
    for c in counts:
        m //= factorial(int(c))
    return m


@lru_cache(maxsize=64)
def multiplicities(d: int, rank: int = 3) -> np.ndarray:
    """Number of distinct permutations of each stored index tuple."""
    idx = unique_indices(d, rank)
    mult = np.array([_multiplicity(t) for t in idx], dtype=float)
    mult.setflags(write=False)
    return mult


def pack(full: np.ndarray) -> np.ndarray:
    """Extract the stored entries from a full (d,)*rank array.

    A non-symmetric input is symmetrized first, by averaging over index
    permutations; an exactly symmetric input is copied without rounding.
    """
    full = np.asarray(full, dtype=float)
    rank = full.ndim
    d = full.shape[0]
    exact = all(np.array_equal(full, np.transpose(full, p)) for p in permutations(range(rank)))
    sym = full if exact else symmetrize(full)
    idx = unique_indices(d, rank)
    return sym[tuple(idx.T)].copy()


def symmetrize(full: np.ndarray) -> np.ndarray:
    full = np.asarray(full, dtype=float)
    perms = list(permutations(range(full.ndim)))
    return sum(np.transpose(full, p) for p in perms) / len(perms)


def unpack(packed: np.ndarray, d: int, rank: int = 3) -> np.ndarray:
    """Expand stored entries to a full symmetric (d,)*rank array."""
    packed = np.asarray(packed, dtype=float)
    if packed.shape != (n_unique(d, rank),):
        raise ValueError(f"expected {n_unique(d, rank)} packed entries, got {packed.shape}")
    full = np.zeros((d,) * rank)
    idx = unique_indices(d, rank)
    for p in set(permutations(range(rank))):
        full[tuple(idx[:, list(p)].T)] = packed
    return full


def contract3(packed: np.ndarray, u: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Evaluate sum_{stl} A_stl u_s u_t u_l for one point (d,) or many (m, d)."""
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u2 = np.atleast_2d(u)
    d = u2.shape[1]
    idx = unique_indices(d, 3)
    w = np.asarray(packed, dtype=float) * multiplicities(d, 3)
    if d <= 12:
        out = (u2[:, idx[:, 0]] * u2[:, idx[:, 1]] * u2[:, idx[:, 2]]) @ w
    else:
        # full-tensor route keeps memory at chunk * d^2
        full = unpack(packed, d, 3).reshape(d, d * d)
        out = np.empty(u2.shape[0])
        for start in range(0, u2.shape[0], max(1, chunk // d)):
            blk = u2[start:start + max(1, chunk // d)]
            outer = np.einsum("mi,mj->mij", blk, blk).reshape(len(blk), d * d)
            out[start:start + len(blk)] = np.sum((outer @ full.T) * blk, axis=1)
    return out[0] if single else out


def contract3_vec(packed: np.ndarray, v: np.ndarray, d: int) -> np.ndarray:
    """Matrix M_st = sum_l A_stl v_l."""
    full = unpack(packed, d, 3)
    return np.einsum("stl,l->st", full, np.asarray(v, dtype=float))
