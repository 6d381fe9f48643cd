"""Desk-scale lab for private aggregation over a hidden sample: prime-field
secret sharing, a differential-privacy accountant, local randomizers, a
two-server protocol simulation, and histogram experiments."""

from .accounting import (
    ApproxDp,
    GaussianConfig,
    RdpCurve,
    SamplingConfig,
    amplify_by_sampling,
    calibrate_sigma,
    donation_time_amplify,
    gaussian_eps_analytic,
    gaussian_eps_classic,
    gaussian_rdp,
    hockey_stick,
    poisson_batch_feasible,
    pure_to_rdp,
    rdp_compose,
    rdp_to_approx_dp,
    shuffle_eps_analytic,
    subsampled_eps,
    subsampled_gaussian_rdp,
)
from .field import FieldParams, FixedPointCodec, ShareVector, reconstruct, share
from .protocol import (
    AdversaryConfig,
    Recipe,
    RoundTranscript,
    aggregate_with_threshold,
    ideal_sampled_aggregate,
    run_round,
)
from .randomizers import (
    RandomizerKind,
    RandomizerSpec,
    ValidityPredicate,
    check_validity,
    debias_rappor,
    decode,
    gaussian_vector,
    rappor,
    randomized_response,
)

__version__ = "0.1.0"
