"""Sobol low-discrepancy sequences for up to 32 dimensions.

Direction numbers follow the Joe-Kuo construction; the primitive
polynomials and initial numbers for the first 32 dimensions are embedded
as a static table.  Points are produced in Gray-code order with 30-bit
precision, so the sequence is fully deterministic for a fixed dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DIM = 32
_NBITS = 30

# primitive polynomials (binary encoding, leading and trailing 1 included)
_POLY = (
    1, 3, 7, 11, 13, 19, 25, 37, 41, 47, 55, 59, 61, 67, 91, 97,
    103, 109, 115, 131, 137, 143, 145, 157, 167, 171, 185, 191, 193,
    203, 211, 213,
)

# initial direction integers m_1, m_2, ... per dimension
_MINIT = (
    (1,), (1,), (1, 3), (1, 3, 1), (1, 1, 1), (1, 1, 3, 3),
    (1, 3, 5, 13), (1, 1, 5, 5, 17), (1, 1, 5, 5, 5), (1, 1, 7, 11, 19),
    (1, 1, 5, 1, 1), (1, 1, 1, 3, 11), (1, 3, 5, 5, 31), (1, 3, 3, 9, 7, 49),
    (1, 1, 1, 15, 21, 21), (1, 3, 1, 13, 27, 49), (1, 1, 1, 15, 7, 5),
    (1, 3, 1, 15, 13, 25), (1, 1, 5, 5, 19, 61), (1, 3, 7, 11, 23, 15, 103),
    (1, 3, 7, 13, 13, 15, 69), (1, 1, 3, 13, 7, 35, 63),
    (1, 3, 5, 9, 1, 25, 53), (1, 3, 1, 13, 9, 35, 107),
    (1, 3, 1, 5, 27, 61, 31), (1, 1, 5, 11, 19, 41, 61),
    (1, 3, 5, 3, 3, 13, 69), (1, 1, 7, 13, 1, 19, 1),
    (1, 3, 7, 5, 13, 19, 59), (1, 1, 3, 9, 25, 29, 41),
    (1, 3, 5, 13, 23, 1, 55), (1, 3, 7, 3, 13, 59, 17),
)


def _direction_matrix(dim: int) -> np.ndarray:
    """Direction integers, shape (dim, _NBITS), dtype uint64."""
    V = np.zeros((dim, _NBITS), dtype=np.uint64)
    for d in range(dim):
        poly = _POLY[d]
        s = max(poly.bit_length() - 1, 1)
        m = list(_MINIT[d])
        if d == 0:
            for k in range(_NBITS):
                V[0, k] = 1 << (_NBITS - 1 - k)
            continue
        a_bits = [(poly >> (s - i)) & 1 for i in range(1, s)]
        while len(m) < _NBITS:
            k = len(m)
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if a_bits[i - 1]:
                    new ^= m[k - i] << i
            m.append(new)
        for k in range(_NBITS):
            V[d, k] = np.uint64(m[k]) << np.uint64(_NBITS - 1 - k)
    return V


@dataclass
class SobolState:
    """Resumable Sobol stream for a fixed dimension.

    Attributes
    ----------
    dim:
        Number of coordinates per point, at most 32.
    index:
        Index of the next point to be produced.
    """

    dim: int
    index: int = 0

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"sobol dimension must be in [1, {MAX_DIM}], got {self.dim}")
        self._V = _direction_matrix(self.dim)
        self._x = np.zeros(self.dim, dtype=np.uint64)
        start = self.index
        self.index = 0
        if start:
            self.skip(start)

    def skip(self, count: int) -> None:
        self.next(count)

    def next(self, n: int) -> np.ndarray:
        """Next ``n`` points of the sequence, shape (n, dim) in [0, 1)."""
        out = np.empty((n, self.dim))
        x = self._x
        for i in range(n):
            out[i] = x
            # Gray-code flip position: lowest zero bit of the current index
            c = (~np.uint64(self.index) & np.uint64(self.index + 1)).item().bit_length() - 1
            x ^= self._V[:, c]
            self.index += 1
        out /= float(1 << _NBITS)
        return out


def sobol_points(dim: int, n: int, skip: int = 1) -> np.ndarray:
    """First ``n`` Sobol points after skipping ``skip`` indices.

    The default ``skip=1`` drops the all-zeros point at index 0.
    """
    state = SobolState(dim, index=skip)
    return state.next(n)
