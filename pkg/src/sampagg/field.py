"""Prime-field vectors, two-party additive secret sharing, fixed-point codec.

Every client contribution rides this layer: a contribution is a vector over
F_p, split into two additive shares (one per aggregation server). Each share
is marginally uniform, so a single share carries no information about the
contribution. Real-valued contributions are carried as fixed-point integers
with a centered signed decoding.

Vectors are stored as read-only uint64 numpy arrays. Only addition and
negation mod p are needed, and with p < 2^61 a sum of two elements fits a
uint64 without wraparound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MERSENNE61 = (1 << 61) - 1

# Deterministic Miller-Rabin witnesses, valid for all n < 3.3 * 10^24.
_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin primality test for 64-bit scale integers."""
    if n < 2:
        return False
    for w in _MR_WITNESSES:
        if n == w:
            return True
        if n % w == 0:
            return False
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for w in _MR_WITNESSES:
        x = pow(w, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldParams:
    """Prime modulus and fixed-point scale shared by all vectors of a task.

    ``allow_small_modulus`` lifts the p >= 2^31 deployment floor; only tests
    that need an enumerable field (chi-square uniformity, exhaustive share
    checks) should set it.
    """

    modulus: int = MERSENNE61
    fraction_bits: int = 16
    allow_small_modulus: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if not is_prime(self.modulus):
            raise ValueError(f"modulus {self.modulus} is not prime")
        if self.modulus < (1 << 31) and not self.allow_small_modulus:
            raise ValueError("modulus below 2^31; deployment fields must be >= 2^31")
        if not 0 <= self.fraction_bits < 62:
            raise ValueError("fraction_bits must be in [0, 62)")


class ShareVector:
    """Immutable vector over F_p. Supports exactly the aggregation algebra."""

    __slots__ = ("values", "params")

    def __init__(self, values, params: FieldParams):
        arr = np.asarray(values, dtype=np.uint64).copy()
        if arr.ndim != 1:
            raise ValueError("ShareVector must be one-dimensional")
        if arr.size == 0:
            raise ValueError("ShareVector must have length >= 1")
        if np.any(arr >= np.uint64(params.modulus)):
            raise ValueError("element out of range [0, p)")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "params", params)

    @classmethod
    def _wrap(cls, reduced: np.ndarray, params: FieldParams) -> "ShareVector":
        # internal fast path: caller guarantees a fresh, reduced uint64 array
        self = object.__new__(cls)
        reduced.flags.writeable = False
        object.__setattr__(self, "values", reduced)
        object.__setattr__(self, "params", params)
        return self

    def __setattr__(self, name, value):
        raise AttributeError("ShareVector is immutable")

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ShareVector)
            and self.params == other.params
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"ShareVector({self.values.tolist()}, p={self.params.modulus})"

    def _check_compatible(self, other: "ShareVector"):
        if len(self) != len(other):
            raise ValueError(f"length mismatch: {len(self)} vs {len(other)}")
        if self.params != other.params:
            raise ValueError("field parameter mismatch")

    def __add__(self, other: "ShareVector") -> "ShareVector":
        self._check_compatible(other)
        p = np.uint64(self.params.modulus)
        return ShareVector._wrap((self.values + other.values) % p, self.params)

    def __neg__(self) -> "ShareVector":
        p = np.uint64(self.params.modulus)
        return ShareVector._wrap((p - self.values) % p, self.params)

    def __sub__(self, other: "ShareVector") -> "ShareVector":
        return self + (-other)

    @classmethod
    def zero(cls, dim: int, params: FieldParams) -> "ShareVector":
        return cls(np.zeros(dim, dtype=np.uint64), params)

    @classmethod
    def from_ints(cls, ints, params: FieldParams) -> "ShareVector":
        vals = np.asarray(ints, dtype=np.int64)
        p = params.modulus
        return cls(np.mod(vals, p).astype(np.uint64), params)


def share(v: ShareVector, rng: np.random.Generator) -> tuple[ShareVector, ShareVector]:
    """Split ``v`` into (leader, helper) with leader uniform over F_p^d.

    leader + helper = v coordinate-wise mod p. A uniform leader share makes
    each share marginal independent of the secret.
    """
    p = np.uint64(v.params.modulus)
    leader = rng.integers(0, v.params.modulus, size=len(v), dtype=np.uint64)
    helper = (v.values + (p - leader)) % p
    return ShareVector._wrap(leader, v.params), ShareVector._wrap(helper, v.params)


def reconstruct(leader: ShareVector, helper: ShareVector) -> ShareVector:
    """Coordinate-wise sum mod p; commutative in its two arguments."""
    return leader + helper


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps real vectors to field vectors with 2^-fraction_bits resolution.

    Representable reals lie in (-2^signed_range, 2^signed_range). Residues
    above p/2 decode as negatives (centered representative in (-p/2, p/2]).
    """

    params: FieldParams = FieldParams()
    signed_range: int = 7

    def __post_init__(self):
        if self.signed_range < 0:
            raise ValueError("signed_range must be >= 0")
        if 2 ** (self.params.fraction_bits + self.signed_range) >= self.params.modulus / 2:
            raise ValueError("2^(fraction_bits + signed_range) must be < p/2")

    @property
    def scale(self) -> int:
        return 1 << self.params.fraction_bits

    def max_contribution_magnitude(self) -> int:
        """Largest |encoded integer| a single in-range contribution can carry."""
        return 1 << (self.params.fraction_bits + self.signed_range)

    def check_batch_capacity(self, max_batch: int):
        """Reject configurations where max_batch contributions could wrap mod p.

        Signed decoding of a sum is unambiguous only while the accumulated
        integer magnitude stays below p/2.
        """
        if max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if max_batch * self.max_contribution_magnitude() >= self.params.modulus / 2:
            raise ValueError(
                f"max_batch {max_batch} can overflow the field: "
                f"need max_batch * 2^(f+s) < p/2"
            )

    def encode(self, x) -> ShareVector:
        """Fixed-point encode; rounding is half-away-from-zero, deterministic."""
        x = np.asarray(x, dtype=np.float64)
        bound = float(2**self.signed_range)
        if np.any(np.abs(x) >= bound) or not np.all(np.isfinite(x)):
            raise ValueError(f"coordinates must satisfy |x| < 2^{self.signed_range}")
        scaled = np.trunc(x * self.scale + np.copysign(0.5, x)).astype(np.int64)
        p = self.params.modulus
        return ShareVector(np.mod(scaled, p).astype(np.uint64), self.params)

    def decode(self, v: ShareVector) -> np.ndarray:
        """Centered signed decode. Error per coordinate is <= 2^-(f+1)."""
        if v.params != self.params:
            raise ValueError("field parameter mismatch")
        p = v.params.modulus
        vals = v.values.astype(np.int64)
        centered = np.where(vals > p // 2, vals - p, vals)
        return centered.astype(np.float64) / self.scale
