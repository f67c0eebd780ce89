"""Toeplitz-hash privacy amplification over GF(2).

Indexing convention for an m x n matrix built from an (n + m - 1)-bit seed::

    T[i, j] = seed[i - j]          if i >= j   (first column = seed[0:m])
    T[i, j] = seed[m - 1 + j - i]  if i <  j   (first row continues at seed[m:])
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

_DIRECT_LIMIT = 1 << 12


def _as_bits(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError("bit strings must be one-dimensional")
    return (arr & 1).astype(np.uint8) if arr.dtype.kind in "iub" else (arr != 0).astype(np.uint8)


def diagonal_vector(seed: np.ndarray, n: int, m: int) -> np.ndarray:
    """Vector c with T[i, j] = c[i - j + n - 1]."""
    c = np.empty(n + m - 1, dtype=np.uint8)
    c[n - 1:] = seed[:m]
    # c[n - 1 - d] = seed[m - 1 + d] for d = 1 .. n - 1
    c[: n - 1] = seed[m:][::-1]
    return c


def toeplitz_matrix(seed, n: int, m: int) -> np.ndarray:
    """Dense matrix, for tests and small inputs."""
    seed = _as_bits(seed)
    if len(seed) != n + m - 1:
        raise ValueError(f"seed must have n + m - 1 = {n + m - 1} bits, got {len(seed)}")
    c = diagonal_vector(seed, n, m)
    i = np.arange(m)[:, None]
    j = np.arange(n)[None, :]
    return c[i - j + n - 1]


def privacy_amplify(key, m: int, seed, block: int = 1 << 20) -> np.ndarray:
    """Compress ``key`` (n bits) to ``m`` bits with the seeded Toeplitz hash.

    Output bit i is the parity of sum_j c[i - j + n - 1] key[j], evaluated as a
    blockwise FFT convolution so large keys never need the dense matrix.
    """
    key = _as_bits(key)
    seed = _as_bits(seed)
    n = len(key)
    if m < 0 or m > n:
        raise ValueError("output length must satisfy 0 <= m <= n")
    if len(seed) != n + m - 1:
        raise ValueError(f"seed must have n + m - 1 = {n + m - 1} bits, got {len(seed)}")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    c = diagonal_vector(seed, n, m).astype(np.float64)
    if n * m <= _DIRECT_LIMIT * _DIRECT_LIMIT // 16:
        full = np.convolve(c, key.astype(np.float64))
        return (np.rint(full[n - 1: n - 1 + m]).astype(np.int64) & 1).astype(np.uint8)
    acc = np.zeros(m, dtype=np.int64)
    kf = key.astype(np.float64)
    for j0 in range(0, n, block):
        kb = kf[j0: j0 + block]
        if not kb.any():
            continue
        jb = len(kb)
        for i0 in range(0, m, block):
            i1 = min(i0 + block, m)
            # out[i] += sum_{j in block} c[i - j + n - 1] kb[j - j0]
            lo = i0 - (j0 + jb - 1) + n - 1
            hi = (i1 - 1) - j0 + n - 1
            seg = c[lo: hi + 1]
            conv = fftconvolve(seg, kb)
            part = conv[jb - 1: jb - 1 + (i1 - i0)]
            acc[i0:i1] += np.rint(part).astype(np.int64)
    return (acc & 1).astype(np.uint8)
