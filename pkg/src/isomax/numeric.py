"""Dense float64 array primitives and the seeded random stream.

Arrays are plain ``numpy.ndarray`` objects of dtype float64. Every public
function here validates its inputs and refuses to emit NaN or infinity.
"""

from __future__ import annotations

import math

import numpy as np

from isomax.errors import ContractError, DimensionError, NumericError

DISTANCE_EPS = 1e-6
PROB_FLOOR = 1e-12

_MASK64 = (1 << 64) - 1


def as_tensor(x, ndim=None, name="array"):
    """Convert ``x`` to a float64 array, checking rank and finiteness."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must have rank {ndim}, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def matmul(a, b):
    """Matrix product of an m x k and a k x n array."""
    a = as_tensor(a, 2, "a")
    b = as_tensor(b, 2, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul result")


def stable_softmax(logits):
    """Row-wise softmax with the row maximum subtracted before exponentiating."""
    z = as_tensor(logits, 2, "logits")
    if z.shape[0] < 1 or z.shape[1] < 2:
        raise DimensionError(f"softmax needs n >= 1 rows and N >= 2 columns, got {z.shape}")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_sum_exp(logits):
    z = as_tensor(logits, 2, "logits")
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def pairwise_euclidean(embeddings, prototypes, eps=DISTANCE_EPS):
    """Nonsquared Euclidean distance between every embedding and every prototype.

    Distances are floored at ``eps`` so that the gradient ``(f - p) / d`` stays
    bounded when an embedding sits exactly on a prototype.
    """
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    f = as_tensor(embeddings, 2, "embeddings")
    p = as_tensor(prototypes, 2, "prototypes")
    if f.shape[1] != p.shape[1]:
        raise DimensionError(
            f"embedding width {f.shape[1]} does not match prototype width {p.shape[1]}"
        )
    diff = f[:, None, :] - p[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return np.maximum(d, eps)


def entropy(probs, atol=1e-6):
    """Shannon entropy in nats of each row of a probability matrix."""
    p = as_tensor(probs, 2, "probs")
    validate_distribution(p, atol)
    return -(p * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=1)


def validate_distribution(p, atol=1e-6):
    if np.any(p < 0):
        raise ContractError("probabilities must be non-negative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > atol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ContractError(f"probability rows must sum to 1 (worst deviation {worst:.3g})")


def argmax_rows(x):
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.asarray(x), axis=1)


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator seeded through splitmix64.

    The stream depends only on the 64-bit seed, so results are identical on
    every platform. Normal variates use the Box-Muller transform.
    """

    def __init__(self, seed=0):
        seed = int(seed)
        if not 0 <= seed <= _MASK64:
            seed &= _MASK64
        self.seed = seed
        sm = seed
        words = []
        for _ in range(4):
            sm, out = _splitmix64(sm)
            words.append(out)
        self._s = words
        self._spare = None

    @classmethod
    def from_state(cls, state):
        if len(state) != 4 or not any(state):
            raise ContractError("xoshiro256 state must be four words, not all zero")
        rng = cls.__new__(cls)
        rng.seed = None
        rng._s = [int(w) & _MASK64 for w in state]
        rng._spare = None
        return rng

    @property
    def state(self):
        return tuple(self._s)

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self):
        """Uniform float in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low=0.0, high=1.0, size=None):
        if size is None:
            return low + (high - low) * self.random()
        n = int(np.prod(size))
        out = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (low + (high - low) * out).reshape(size)

    def _normal_pair(self):
        u1 = 1.0 - self.random()  # (0, 1], keeps log finite
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        return r * math.cos(theta), r * math.sin(theta)

    def standard_normal(self):
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        z0, z1 = self._normal_pair()
        self._spare = z1
        return z0

    def normal(self, loc=0.0, scale=1.0, size=None):
        if size is None:
            return loc + scale * self.standard_normal()
        n = int(np.prod(size))
        out = np.fromiter((self.standard_normal() for _ in range(n)), dtype=np.float64, count=n)
        return (loc + scale * out).reshape(size)

    def integers(self, n):
        """Unbiased integer in [0, n) by rejection sampling."""
        if n < 1:
            raise ContractError(f"upper bound must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)

    def spawn(self, tag):
        """Independent child stream keyed by ``tag``, without advancing this one."""
        base = self.seed if self.seed is not None else self._s[0]
        _, mixed = _splitmix64((base ^ ((int(tag) * 0xD1B54A32D192ED03) & _MASK64)) & _MASK64)
        return Rng(mixed)
