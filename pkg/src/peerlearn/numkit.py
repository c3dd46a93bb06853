"""Dense numeric kernels and a fixed, documented random number generator.

Everything computes in 64-bit floats even when fixtures store 32-bit
payloads; covariance inversion at high dim is too ill-conditioned for
32-bit arithmetic.

The random stream is splitmix64 seeding of xoshiro256** so that equal
seeds give identical sequences on every platform, independent of any
runtime's default generator.  Constants:

  splitmix64:   gamma 0x9E3779B97F4A7C15,
                mix   0xBF58476D1CE4E5B9 / 0x94D049BB133111EB
  xoshiro256**: out = rotl(s1 * 5, 7) * 9, shift 17, rot 45
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimMismatch, EmptyInput, NotPositiveDefinite

_MASK64 = 0xFFFFFFFFFFFFFFFF


def as_matrix(a) -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimMismatch(f"expected 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def as_vector(v) -> np.ndarray:
    m = np.asarray(v, dtype=np.float64)
    if m.ndim != 1:
        raise DimMismatch(f"expected 1-D vector, got ndim={m.ndim}")
    return m


def cholesky_factor(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T = a.

    Raises NotPositiveDefinite when a pivot is <= 0 during factorization.
    """
    m = as_matrix(a)
    n, ncols = m.shape
    if n != ncols:
        raise DimMismatch(f"matrix must be square, got {m.shape}")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.T).max() > 1e-9 * scale:
        raise ValueError("matrix must be symmetric within 1e-9 relative")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def cholesky_solve(a, b) -> np.ndarray:
    """Solve a @ x = b for symmetric positive-definite ``a``."""
    l = cholesky_factor(a)
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.shape[0] != l.shape[0]:
        raise DimMismatch(f"rhs length {rhs.shape[0]} != order {l.shape[0]}")
    y = np.linalg.solve(l, rhs)
    return np.linalg.solve(l.T, y)


def logsumexp(v) -> float:
    """log(sum(exp(v))) without overflow; accepts -inf entries."""
    x = as_vector(v)
    if x.size == 0:
        raise EmptyInput("logsumexp of empty vector")
    hi = np.max(x)
    if not np.isfinite(hi):
        if hi == -np.inf:
            return -np.inf
        raise ValueError("logsumexp entries must be finite or -inf")
    return float(hi + np.log(np.sum(np.exp(x - hi))))


def _splitmix64_next(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class RngStream:
    """Seeded xoshiro256** stream; exclusively owned by one caller."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        sm = self.seed
        state = []
        for _ in range(4):
            sm, word = _splitmix64_next(sm)
            state.append(word)
        self._s = state
        self._spare_normal: float | None = None

    def derive(self, *salts: int) -> "RngStream":
        """Child stream keyed by integer salts; independent of self's state."""
        sm = self.seed
        for salt in salts:
            sm, word = _splitmix64_next((sm ^ (salt & _MASK64)) & _MASK64)
            sm ^= word
        return RngStream(sm)

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = _MASK64 + 1 - (_MASK64 + 1) % n
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal(self) -> float:
        """Standard normal via the Box-Muller transform (pairs cached)."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = self.random()
        while u1 <= 0.0:
            u1 = self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.random() for _ in range(n)], dtype=np.float64)

    def unit_vector(self, dim: int) -> np.ndarray:
        while True:
            v = self.normals(dim)
            norm = np.linalg.norm(v)
            if norm > 1e-12:
                return v / norm

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """First k entries of a permutation of range(n), in draw order."""
        if k >= n:
            return list(range(n))
        pool = list(range(n))
        picked = []
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            picked.append(pool[i])
        return picked

    def weighted_index(self, weights: np.ndarray) -> int:
        """Index drawn proportionally to non-negative weights."""
        total = float(np.sum(weights))
        if total <= 0.0:
            return self.below(len(weights))
        u = self.random() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += float(w)
            if u < acc:
                return i
        return len(weights) - 1
