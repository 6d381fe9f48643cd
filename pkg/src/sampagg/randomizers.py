"""Local randomizers, their field encodings, decoders, and validity predicates.

A randomizer runs on-device before anything leaves it. Categorical
randomizers emit 0/1 vectors that ride the field directly as counts; the
noisy-vector randomizer emits reals that ride the fixed-point codec. The
decoder is linear and per-message, so decoding an aggregated field sum equals
the sum of per-message decodings. Analyst-side debiasing is deliberately not
part of decoding: servers stay ignorant of the local privacy parameter.

Validity predicates are what the servers check (through the simulation's
validity oracle, which stands in for a zero-knowledge proof of the same
statement): one-hot, bounded Hamming weight, or bounded Euclidean norm.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .field import FixedPointCodec, ShareVector


class RandomizerKind(enum.Enum):
    RAPPOR = "rappor"
    RANDOMIZED_RESPONSE = "randomized_response"
    GAUSSIAN_VECTOR = "gaussian_vector"


CATEGORICAL_KINDS = (RandomizerKind.RAPPOR, RandomizerKind.RANDOMIZED_RESPONSE)


@dataclass(frozen=True)
class RandomizerSpec:
    """Which randomizer a task runs, with exactly its kind's parameters set.

    Categorical kinds use ``alphabet_size`` and ``eps0``. The Gaussian kind
    uses ``dim``, ``sigma`` and ``batch``: each client adds noise of standard
    deviation sigma/sqrt(batch) per coordinate, so a batch-sized sum carries
    total noise sigma.
    """

    kind: RandomizerKind
    alphabet_size: int = 0
    dim: int = 0
    eps0: float = 0.0
    sigma: float = 0.0
    batch: int = 0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.kind in CATEGORICAL_KINDS:
            if self.alphabet_size < 2:
                raise ValueError("categorical randomizers need alphabet_size >= 2")
            if self.eps0 <= 0:
                raise ValueError("categorical randomizers need eps0 > 0")
            if self.dim or self.sigma or self.batch:
                raise ValueError("vector fields must be unset for categorical kinds")
        elif self.kind is RandomizerKind.GAUSSIAN_VECTOR:
            if self.dim < 1:
                raise ValueError("gaussian randomizer needs dim >= 1")
            if self.sigma < 0 or self.batch < 1:
                raise ValueError("gaussian randomizer needs sigma >= 0 and batch >= 1")
            if self.alphabet_size or self.eps0:
                raise ValueError("categorical fields must be unset for the vector kind")
            if self.clip_norm <= 0:
                raise ValueError("clip_norm must be > 0")
        else:
            raise ValueError(f"unknown randomizer kind {self.kind}")

    @property
    def output_dim(self) -> int:
        return self.alphabet_size if self.kind in CATEGORICAL_KINDS else self.dim


def flip_probability(eps0: float) -> float:
    """Per-bit flip probability of the one-hot bit-flipping randomizer."""
    return 1.0 / (math.exp(eps0) + 1.0)


def rappor(x: int, alphabet_size: int, eps0: float, rng: np.random.Generator) -> np.ndarray:
    """One-hot encode x, then flip each bit independently with probability
    1/(e^eps0 + 1). Satisfies eps0-DP locally."""
    if not 0 <= x < alphabet_size:
        raise ValueError(f"x must be in [0, {alphabet_size})")
    one_hot = np.zeros(alphabet_size, dtype=np.int64)
    one_hot[x] = 1
    flips = rng.random(alphabet_size) < flip_probability(eps0)
    return np.bitwise_xor(one_hot, flips.astype(np.int64))


def randomized_response(
    x: int, alphabet_size: int, eps0: float, rng: np.random.Generator
) -> np.ndarray:
    """Report the true category with probability e^eps0/(e^eps0 + K - 1),
    otherwise a uniformly random other category. Output is always one-hot."""
    if not 0 <= x < alphabet_size:
        raise ValueError(f"x must be in [0, {alphabet_size})")
    p_truth = math.exp(eps0) / (math.exp(eps0) + alphabet_size - 1)
    if rng.random() < p_truth:
        reported = x
    else:
        shift = int(rng.integers(1, alphabet_size))
        reported = (x + shift) % alphabet_size
    out = np.zeros(alphabet_size, dtype=np.int64)
    out[reported] = 1
    return out


def clip_to_norm(x: np.ndarray, bound: float) -> np.ndarray:
    norm = float(np.linalg.norm(x))
    if norm <= bound or norm == 0.0:
        return x
    return x * (bound / norm)


def gaussian_vector(
    x,
    sigma: float,
    batch: int,
    rng: np.random.Generator,
    clip_norm: float = 1.0,
) -> np.ndarray:
    """Clip to Euclidean norm <= clip_norm, then add per-coordinate Gaussian
    noise of standard deviation sigma/sqrt(batch)."""
    x = np.asarray(x, dtype=np.float64)
    clipped = clip_to_norm(x, clip_norm)
    scale = sigma / math.sqrt(batch)
    return clipped + rng.normal(0.0, scale, size=x.shape) if sigma > 0 else clipped


def randomize(spec: RandomizerSpec, x, rng: np.random.Generator) -> np.ndarray:
    """Run the spec's randomizer on one client datum."""
    if spec.kind is RandomizerKind.RAPPOR:
        return rappor(int(x), spec.alphabet_size, spec.eps0, rng)
    if spec.kind is RandomizerKind.RANDOMIZED_RESPONSE:
        return randomized_response(int(x), spec.alphabet_size, spec.eps0, rng)
    return gaussian_vector(x, spec.sigma, spec.batch, rng, spec.clip_norm)


def encode_output(spec: RandomizerSpec, out: np.ndarray, codec: FixedPointCodec) -> ShareVector:
    """Map a randomizer output onto the field."""
    if spec.kind in CATEGORICAL_KINDS:
        return ShareVector.from_ints(np.asarray(out, dtype=np.int64), codec.params)
    return codec.encode(out)


def decode(message: ShareVector, spec: RandomizerSpec, codec: FixedPointCodec) -> np.ndarray:
    """The aggregator's per-message decoder.

    Identity on categorical count vectors, fixed-point decode for the vector
    kind. Linear, so it applies unchanged to an aggregated field sum.
    Debiasing is analyst-side post-processing, not part of decoding.
    """
    if spec.kind in CATEGORICAL_KINDS:
        decoded = message.values.astype(np.int64)
        p = message.params.modulus
        return np.where(decoded > p // 2, decoded - p, decoded)
    return codec.decode(message)


def debias_rappor(agg: np.ndarray, n: int, eps0: float) -> np.ndarray:
    """Unbiased count estimate from n aggregated bit-flip reports:
    (agg - n f) / (1 - 2 f) with f the flip probability."""
    if n < 1:
        raise ValueError("n must be >= 1")
    f = flip_probability(eps0)
    return (np.asarray(agg, dtype=np.float64) - n * f) / (1.0 - 2.0 * f)


class PredicateKind(enum.Enum):
    ONE_HOT = "one_hot"
    HAMMING_WEIGHT_LE = "hamming_weight_le"
    L2_NORM_LE = "l2_norm_le"


@dataclass(frozen=True)
class ValidityPredicate:
    """A server-checkable constraint on one decoded contribution."""

    kind: PredicateKind
    bound: float = 0.0

    def __post_init__(self):
        if self.kind is not PredicateKind.ONE_HOT and self.bound <= 0:
            raise ValueError("bounded predicates need a positive bound")


def check_validity(decoded, pred: ValidityPredicate) -> bool:
    """Evaluate a predicate on a decoded contribution."""
    x = np.asarray(decoded, dtype=np.float64)
    if pred.kind is PredicateKind.ONE_HOT:
        return bool(np.all((x == 0) | (x == 1)) and x.sum() == 1)
    if pred.kind is PredicateKind.HAMMING_WEIGHT_LE:
        return bool(np.all((x == 0) | (x == 1)) and x.sum() <= pred.bound)
    return bool(np.linalg.norm(x) <= pred.bound)


def rappor_weight_bound(alphabet_size: int, eps0: float) -> int:
    """Default Hamming-weight cap for honest bit-flip reports.

    Honest weight is Bernoulli(1 - f) + Binomial(K - 1, f); cap at the mean
    plus six binomial standard deviations so honest rejection is negligible.
    """
    f = flip_probability(eps0)
    mean = (alphabet_size - 1) * f
    slack = 6.0 * math.sqrt((alphabet_size - 1) * f * (1.0 - f))
    return math.ceil(1.0 + mean + slack)


def default_predicate(spec: RandomizerSpec) -> ValidityPredicate:
    """The validity predicate an honest deployment of this randomizer checks."""
    if spec.kind is RandomizerKind.RANDOMIZED_RESPONSE:
        return ValidityPredicate(PredicateKind.ONE_HOT)
    if spec.kind is RandomizerKind.RAPPOR:
        bound = rappor_weight_bound(spec.alphabet_size, spec.eps0)
        return ValidityPredicate(PredicateKind.HAMMING_WEIGHT_LE, float(bound))
    noise_slack = 6.0 * (spec.sigma / math.sqrt(spec.batch)) * math.sqrt(spec.dim)
    return ValidityPredicate(PredicateKind.L2_NORM_LE, spec.clip_norm + noise_slack)
