"""Two-server split-trust aggregation protocol, simulated end to end.

One round: each device tosses its own coin to decide whether to contribute,
runs the local randomizer, splits the field-encoded output into two additive
shares, and sends them (with a rate-limit token) through an anonymizer that
strips identity and shuffles delivery order. The leader and helper servers
independently deduplicate tokens, consult a validity oracle that stands in
for a zero-knowledge validity proof (they observe only the verdict), and
accumulate their own shares. The sum is revealed only when at least
``batch_threshold`` contributions were accepted inside the collection window
and both servers agree on the accepted token multiset.

Encryption is modeled as routing: each share is delivered only to its
addressee. The transcript records, per party, exactly what that party
observes, plus a test-only oracle section with the ground truth the privacy
assertions are checked against.

Event log: one event per line, ``time party kind detail`` where detail is a
payload digest for message events and ``k=<n>`` for release/bot events.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .field import FieldParams, FixedPointCodec, ShareVector, reconstruct, share
from .randomizers import (
    CATEGORICAL_KINDS,
    RandomizerKind,
    RandomizerSpec,
    ValidityPredicate,
    check_validity,
    decode,
    default_predicate,
    encode_output,
    randomize,
)

LEADER = "leader"
HELPER = "helper"

# spawn_key tags for per-role randomness streams derived from the round seed
_TAG_DEVICE = 0
_TAG_ADVERSARY = 1
_TAG_ANONYMIZER = 2
_TAG_POPULATION = 3
_TAG_COINS = 4


class RateLimitedError(Exception):
    """A device asked for a second token for the same task."""


class InconsistentAggregatorsError(Exception):
    """Leader and helper disagree on the accepted token multiset."""


@dataclass(frozen=True)
class Recipe:
    """The published description of one collection task."""

    task_id: str
    randomizer: RandomizerSpec
    batch_threshold: int
    sampling_rate: float
    window: int = 60
    field: FieldParams = FieldParams()
    signed_range: int = 7
    leader_key: str = "leader-key"
    helper_key: str = "helper-key"
    dummy_rate: float = 0.0
    max_batch: int = 1_000_000
    validity: Optional[ValidityPredicate] = None

    def __post_init__(self):
        if self.batch_threshold < 1:
            raise ValueError("batch_threshold must be >= 1")
        if not 0 <= self.sampling_rate <= 1:
            raise ValueError("sampling_rate must be in [0, 1]")
        if not 0 <= self.dummy_rate <= 1:
            raise ValueError("dummy_rate must be in [0, 1]")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        # No-overflow guard: max_batch contributions must not wrap mod p.
        if self.randomizer.kind is RandomizerKind.GAUSSIAN_VECTOR:
            self.codec.check_batch_capacity(self.max_batch)
        elif self.max_batch >= self.field.modulus / 2:
            raise ValueError("max_batch can overflow the field for count vectors")
        if self.validity is None:
            object.__setattr__(self, "validity", default_predicate(self.randomizer))

    @property
    def codec(self) -> FixedPointCodec:
        # Categorical contributions ride the field as raw counts; the codec
        # is only exercised by the vector kind.
        if self.randomizer.kind is RandomizerKind.GAUSSIAN_VECTOR:
            return FixedPointCodec(self.field, self.signed_range)
        return FixedPointCodec(self.field, 0)

    def decode_aggregate(self, v: ShareVector) -> np.ndarray:
        return decode(v, self.randomizer, self.codec)


def suggested_dummy_rate(eps: float, expected_count: float) -> float:
    """Dummy-report rate that blurs the revealed contribution count,
    about 1/(eps k), capped at 1."""
    if eps <= 0 or expected_count <= 0:
        raise ValueError("eps and expected_count must be > 0")
    return min(1.0, 1.0 / (eps * expected_count))


@dataclass(frozen=True)
class Token:
    nonce: int
    task_id: str


class TokenIssuer:
    """Rate-limited attestation: one token per (device, task), fresh nonces."""

    def __init__(self):
        self._issued: dict[tuple, Token] = {}

    def issue(self, device_id, task_id: str, rng: np.random.Generator) -> Token:
        key = (device_id, task_id)
        if key in self._issued:
            raise RateLimitedError(f"device {device_id} already drew a token")
        hi, lo = rng.integers(0, 2**64, size=2, dtype=np.uint64)
        token = Token((int(hi) << 64) | int(lo), task_id)
        self._issued[key] = token
        return token

    @property
    def issued_count(self) -> int:
        return len(self._issued)


def token_verify(token: Token, task_id: str, seen: set) -> bool:
    """True iff the token targets this task and its nonce is unseen.
    Verification spends the nonce (inserts it into ``seen``)."""
    if token.task_id != task_id:
        return False
    if token.nonce in seen:
        return False
    seen.add(token.nonce)
    return True


@dataclass(frozen=True)
class Report:
    """One anonymized contribution: a share per server plus the token."""

    leader_share: ShareVector
    helper_share: ShareVector
    token: Token
    arrival_time: int

    def __post_init__(self):
        if len(self.leader_share) != len(self.helper_share):
            raise ValueError("share lengths differ")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.leader_share.values.tobytes())
        h.update(self.helper_share.values.tobytes())
        h.update(self.token.nonce.to_bytes(16, "big"))
        return h.hexdigest()[:16]


def client_step(
    recipe: Recipe,
    x,
    issuer: TokenIssuer,
    device_id,
    t0: int,
    rng: np.random.Generator,
    jitter_window: Optional[int] = None,
) -> tuple[Optional[Report], Optional[str]]:
    """One device's move: contribute with probability q, otherwise send a
    dummy (zero-vector shares) with probability q'. Returns (report, kind)
    where kind is "real", "dummy" or None; all coins are device-local.

    Zero dummies are only usable with predicates that accept the zero vector
    (weight/norm bounds); a one-hot predicate rejects them at the servers.
    """
    if rng.random() < recipe.sampling_rate:
        kind = "real"
        out = randomize(recipe.randomizer, x, rng)
        enc = encode_output(recipe.randomizer, out, recipe.codec)
    elif recipe.dummy_rate > 0 and rng.random() < recipe.dummy_rate:
        kind = "dummy"
        enc = ShareVector.zero(recipe.randomizer.output_dim, recipe.field)
    else:
        return None, None
    token = issuer.issue(device_id, recipe.task_id, rng)
    leader_share, helper_share = share(enc, rng)
    jw = recipe.window if jitter_window is None else jitter_window
    arrival = t0 + int(rng.integers(0, jw + 1))
    return Report(leader_share, helper_share, token, arrival), kind


def anonymizer_forward(reports: Sequence[Report], rng: np.random.Generator) -> list[Report]:
    """Strip linkability: uniformly permute one delivery window of reports.
    Payload bits are preserved exactly; reports carry no device identity."""
    order = rng.permutation(len(reports))
    return [reports[i] for i in order]


@dataclass
class AggregatorState:
    """One server's running view of a collection."""

    role: str
    dim: int
    params: FieldParams
    open_time: int = 0
    share_sum: np.ndarray = None
    count: int = 0
    seen_tokens: set = dc_field(default_factory=set)
    accepted_nonces: list = dc_field(default_factory=list)
    last_accepted_time: int = 0
    rejected_duplicate: int = 0
    rejected_invalid: int = 0
    rejected_window: int = 0
    share_values: list = dc_field(default_factory=list)
    arrival_times: list = dc_field(default_factory=list)
    validity_verdicts: list = dc_field(default_factory=list)

    def __post_init__(self):
        if self.role not in (LEADER, HELPER):
            raise ValueError("role must be leader or helper")
        if self.share_sum is None:
            self.share_sum = np.zeros(self.dim, dtype=np.uint64)

    def accepted_digest(self) -> str:
        h = hashlib.sha256()
        for nonce in sorted(self.accepted_nonces):
            h.update(nonce.to_bytes(16, "big"))
        return h.hexdigest()


def server_ingest(
    state: AggregatorState,
    report: Report,
    recipe: Recipe,
    validity_oracle: Callable[[Report], bool],
    events: Optional[list] = None,
) -> AggregatorState:
    """Process one report at one server: dedup token, enforce the collection
    window, ask the validity oracle, and accumulate this server's share."""
    own_share = report.leader_share if state.role == LEADER else report.helper_share
    t = report.arrival_time
    if not token_verify(report.token, recipe.task_id, state.seen_tokens):
        state.rejected_duplicate += 1
        _log(events, t, state.role, "rejected_duplicate", report.digest())
        return state
    if t > state.open_time + recipe.window:
        state.rejected_window += 1
        _log(events, t, state.role, "rejected_window", report.digest())
        return state
    verdict = validity_oracle(report)
    state.validity_verdicts.append(verdict)
    if not verdict:
        state.rejected_invalid += 1
        _log(events, t, state.role, "rejected_invalid", report.digest())
        return state
    p = np.uint64(recipe.field.modulus)
    state.share_sum = (state.share_sum + own_share.values) % p
    state.count += 1
    state.accepted_nonces.append(report.token.nonce)
    state.last_accepted_time = max(state.last_accepted_time, t)
    state.share_values.append(own_share.values)
    state.arrival_times.append(t)
    _log(events, t, state.role, "accepted", report.digest())
    return state


def make_validity_oracle(recipe: Recipe) -> Callable[[Report], bool]:
    """Stand-in for the zero-knowledge validity check: reconstructs the
    contribution privately and hands both servers only the boolean verdict."""

    def oracle(report: Report) -> bool:
        plain = reconstruct(report.leader_share, report.helper_share)
        decoded = decode(plain, recipe.randomizer, recipe.codec)
        return check_validity(decoded, recipe.validity)

    return oracle


def reveal(
    leader: AggregatorState,
    helper: AggregatorState,
    recipe: Recipe,
    events: Optional[list] = None,
) -> Optional[np.ndarray]:
    """Release the decoded sum iff both servers accepted the same token
    multiset, the threshold is met, and collection stayed in the window."""
    if leader.accepted_digest() != helper.accepted_digest():
        raise InconsistentAggregatorsError("accepted-token multisets differ")
    k = leader.count
    window_ok = k == 0 or leader.last_accepted_time <= leader.open_time + recipe.window
    if k < recipe.batch_threshold or not window_ok:
        _log(events, leader.last_accepted_time, "analyst", "bot", f"k={k}")
        return None
    total = ShareVector(
        (leader.share_sum + helper.share_sum) % np.uint64(recipe.field.modulus),
        recipe.field,
    )
    output = recipe.decode_aggregate(total)
    digest = hashlib.sha256(np.ascontiguousarray(output).tobytes()).hexdigest()[:16]
    _log(events, leader.last_accepted_time, "analyst", "release", f"k={k}:{digest}")
    return output


def rate_guard(arrival_times, expected_rate: float, window: int) -> bool:
    """Accept unless some sliding window holds more than twice the expected
    number of arrivals (2 * expected_rate * window)."""
    if expected_rate <= 0:
        raise ValueError("expected_rate must be > 0")
    if window < 1:
        raise ValueError("window must be >= 1")
    times = np.asarray(arrival_times, dtype=np.int64)
    if times.size == 0:
        return True
    t_min = int(times.min())
    per_minute = np.bincount(times - t_min)
    cum = np.concatenate([[0], np.cumsum(per_minute)])
    width = min(window, len(per_minute))
    window_counts = cum[width:] - cum[:-width]
    threshold = 2.0 * expected_rate * window
    return bool(window_counts.max() <= threshold)


# --- full round orchestration -------------------------------------------------


@dataclass(frozen=True)
class AdversaryConfig:
    """What the adversary controls in a round.

    ``corrupt_clients`` devices send worst-case valid contributions in the
    chosen direction (or the explicit ``injected`` raw vectors, which may be
    invalid to exercise rejection). ``replays`` re-delivers copies of honest
    reports to exercise token dedup. The in-model client bound is B/2.
    """

    corrupt_server: str = "none"
    corrupt_clients: int = 0
    direction: Optional[tuple] = None
    injected: tuple = ()
    replays: int = 0

    def __post_init__(self):
        if self.corrupt_server not in ("none", LEADER, HELPER):
            raise ValueError("corrupt_server must be none, leader or helper")
        if self.corrupt_clients < 0 or self.replays < 0:
            raise ValueError("counts must be >= 0")


@dataclass(frozen=True)
class ServerView:
    """Exactly what one server observes in a round; nothing else.

    No device identifiers, no plaintext contributions, no sampling flags:
    shares are marginally uniform field elements, nonces are random, and the
    only aggregate value is the released output (or None).
    """

    role: str
    share_values: tuple
    token_nonces: tuple
    arrival_times: tuple
    accepted_count: int
    rejected_duplicate: int
    rejected_invalid: int
    rejected_window: int
    validity_verdicts: tuple
    released_output: Optional[tuple]


@dataclass(frozen=True)
class RoundOracle:
    """Ground truth recorded by the simulator, outside every party's view."""

    selected_indices: tuple
    dummy_indices: tuple
    honest_messages: tuple
    adversary_messages: tuple
    issued_tokens: int


@dataclass(frozen=True)
class RoundTranscript:
    status: str  # released | bot | reject_rate
    output: Optional[np.ndarray]
    count: int
    rejected_duplicate: int
    rejected_invalid: int
    rejected_window: int
    events: tuple
    leader_view: ServerView
    helper_view: ServerView
    oracle: RoundOracle


def aggregate_with_threshold(messages, dec: Callable, batch_threshold: int):
    """The thresholded aggregator: sum of decodings if at least
    ``batch_threshold`` messages are present, else None."""
    messages = list(messages)
    if len(messages) < batch_threshold:
        return None
    total = dec(messages[0])
    for m in messages[1:]:
        total = total + dec(m)
    return total


def ideal_sampled_aggregate(
    messages,
    dec: Callable,
    batch_threshold: int,
    rate: float,
    rng: np.random.Generator,
):
    """The ideal functionality: select each message independently with the
    sampling rate and aggregate the selection behind the threshold. The
    selected index set is never exposed."""
    messages = list(messages)
    keep = rng.random(len(messages)) < rate
    selected = [m for m, k in zip(messages, keep) if k]
    return aggregate_with_threshold(selected, dec, batch_threshold)


def device_rng(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(tag, index)))
    )


def _worst_case_valid(recipe: Recipe, direction) -> np.ndarray:
    """The strongest contribution that still passes the validity predicate."""
    pred = recipe.validity
    dim = recipe.randomizer.output_dim
    if recipe.randomizer.kind in CATEGORICAL_KINDS:
        weight = 1
        if pred.kind.value == "hamming_weight_le":
            weight = min(dim, int(pred.bound))
        out = np.zeros(dim, dtype=np.int64)
        out[:weight] = 1
        return out
    d = np.zeros(dim)
    d[0] = 1.0
    if direction is not None:
        d = np.asarray(direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
    return d * min(pred.bound, recipe.randomizer.clip_norm)


def run_round(
    recipe: Recipe,
    population: Sequence,
    adversary: Optional[AdversaryConfig] = None,
    seed: int = 0,
    t0: int = 0,
    jitter_window: Optional[int] = None,
    expected_rate: Optional[float] = None,
    rate_window: int = 10,
) -> RoundTranscript:
    """Run one full collection round and record everything each party saw.

    Deterministic given (recipe, population, adversary, seed): every device
    owns a private randomness stream derived from the seed and its index.
    """
    if len(population) == 0:
        raise ValueError("population must be non-empty")
    adversary = adversary or AdversaryConfig()
    if adversary.corrupt_clients > recipe.batch_threshold / 2:
        raise ValueError("in-model adversary controls at most B/2 clients")

    issuer = TokenIssuer()
    events: list = []
    deliveries: list[Report] = []
    selected, dummies, honest_messages = [], [], []

    # Participation coins for the whole population come from one dedicated
    # stream (one coin pair per device index); payload randomness stays on
    # per-device streams. Both are functions of (seed, device index) only.
    n = len(population)
    coin_rng = device_rng(seed, _TAG_COINS, 0)
    coins = coin_rng.random((n, 2))
    real_mask = coins[:, 0] < recipe.sampling_rate
    dummy_mask = ~real_mask & (coins[:, 1] < recipe.dummy_rate)
    jw = recipe.window if jitter_window is None else jitter_window
    for idx in np.flatnonzero(real_mask | dummy_mask):
        idx = int(idx)
        rng = device_rng(seed, _TAG_DEVICE, idx)
        if real_mask[idx]:
            out = randomize(recipe.randomizer, population[idx], rng)
            enc = encode_output(recipe.randomizer, out, recipe.codec)
        else:
            enc = ShareVector.zero(recipe.randomizer.output_dim, recipe.field)
        token = issuer.issue(f"dev-{idx}", recipe.task_id, rng)
        leader_share, helper_share = share(enc, rng)
        arrival = t0 + int(rng.integers(0, jw + 1))
        deliveries.append(Report(leader_share, helper_share, token, arrival))
        if real_mask[idx]:
            selected.append(idx)
            honest_messages.append(enc)
        else:
            dummies.append(idx)

    adv_messages = []
    for j in range(adversary.corrupt_clients):
        rng = device_rng(seed, _TAG_ADVERSARY, j)
        if j < len(adversary.injected):
            raw = np.asarray(adversary.injected[j], dtype=np.float64)
        else:
            raw = _worst_case_valid(recipe, adversary.direction)
        enc = encode_output(recipe.randomizer, raw, recipe.codec)
        token = issuer.issue(f"adv-{j}", recipe.task_id, rng)
        leader_share, helper_share = share(enc, rng)
        arrival = t0 + int(rng.integers(0, jw + 1))
        deliveries.append(Report(leader_share, helper_share, token, arrival))
        adv_messages.append(enc)

    # Replays duplicate already-sent honest reports, token and all.
    for r in range(min(adversary.replays, len(deliveries))):
        deliveries.append(deliveries[r])

    anon_rng = device_rng(seed, _TAG_ANONYMIZER, 0)
    forwarded = anonymizer_forward(deliveries, anon_rng)
    for report in forwarded:
        _log(events, report.arrival_time, "anonymizer", "forward", report.digest())

    dim = recipe.randomizer.output_dim
    leader = AggregatorState(LEADER, dim, recipe.field, open_time=t0)
    helper = AggregatorState(HELPER, dim, recipe.field, open_time=t0)
    oracle = make_validity_oracle(recipe)
    verdicts: dict[int, bool] = {}

    def cached_oracle(report: Report) -> bool:
        key = id(report)
        if key not in verdicts:
            verdicts[key] = oracle(report)
        return verdicts[key]

    for report in sorted(forwarded, key=lambda r: r.arrival_time):
        server_ingest(leader, report, recipe, cached_oracle, events)
        server_ingest(helper, report, recipe, cached_oracle, events)

    status = "released"
    output = None
    if expected_rate is not None and not rate_guard(
        [r.arrival_time for r in forwarded], expected_rate, rate_window
    ):
        status = "reject_rate"
        _log(events, t0, "leader", "reject_rate", f"k={leader.count}")
    else:
        output = reveal(leader, helper, recipe, events)
        if output is None:
            status = "bot"

    transcript = RoundTranscript(
        status=status,
        output=output,
        count=leader.count,
        rejected_duplicate=leader.rejected_duplicate,
        rejected_invalid=leader.rejected_invalid,
        rejected_window=leader.rejected_window,
        events=tuple(events),
        leader_view=_view(leader, output, adversary),
        helper_view=_view(helper, output, adversary),
        oracle=RoundOracle(
            selected_indices=tuple(selected),
            dummy_indices=tuple(dummies),
            honest_messages=tuple(honest_messages),
            adversary_messages=tuple(adv_messages),
            issued_tokens=issuer.issued_count,
        ),
    )
    return transcript


def _view(state: AggregatorState, output, adversary: AdversaryConfig) -> ServerView:
    released = None if output is None else np.asarray(output)
    return ServerView(
        role=state.role,
        share_values=tuple(state.share_values),
        token_nonces=tuple(state.accepted_nonces),
        arrival_times=tuple(state.arrival_times),
        accepted_count=state.count,
        rejected_duplicate=state.rejected_duplicate,
        rejected_invalid=state.rejected_invalid,
        rejected_window=state.rejected_window,
        validity_verdicts=tuple(state.validity_verdicts),
        released_output=released,
    )


def write_transcript(transcript: RoundTranscript, path):
    """Line-delimited event log: ``time party kind detail`` per event."""
    with open(path, "w") as fh:
        for t, party, kind, detail in transcript.events:
            fh.write(f"{t} {party} {kind} {detail}\n")


def _log(events: Optional[list], t: int, party: str, kind: str, detail: str):
    if events is not None:
        events.append((t, party, kind, detail))
