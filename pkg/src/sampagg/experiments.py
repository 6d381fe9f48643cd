"""Histogram experiments: expected squared error of private estimators vs the
number of devices sampled, under a total privacy budget spread over T tasks.

Dense histograms compare NonPriv (sampling error only), Agg (uniform sampling
plus Gaussian noise calibrated over ceil(TM/N) compositions on the exact
Gaussian curve) and SampAgg (Poisson sampling plus noise calibrated with the
subsampled-Gaussian accountant, which amplification makes much smaller).

Sparse "needles" histograms estimate the distribution of rare non-default
values. Importance sampling (defaults at rate M/2N, needles at rate
min(M/(2 gamma N), 1) with Horvitz-Thompson reweighting) is only privatizable
when the sample is hidden, so Agg stays on uniform sampling while SampAgg
rides the importance sampler; its accountant runs at the worst-case per-user
rate q_hi.

Monte Carlo runs draw the sampling-plus-noise model directly; the protocol
layer is distribution-identical (sums of one-hot encodings are multinomial
counts, distributed noise sums to the central noise), which the protocol-mode
path and the equivalence tests verify end to end at reduced scale.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .accounting import ApproxDp, calibrate_sigma
from .protocol import Recipe, run_round
from .randomizers import RandomizerKind, RandomizerSpec

CSV_FIELDS = (
    "method,K,N,M,T,gamma,eps_total,delta_total,sigma,"
    "analytic_mse,mc_mse,mc_stderr,trials,seed"
).split(",")


class Method(enum.Enum):
    NONPRIV = "nonpriv"
    NONPRIV_IMPSAMP = "nonpriv_impsamp"
    AGG = "agg"
    SAMPAGG = "sampagg"


HISTOGRAM_METHODS = (Method.NONPRIV, Method.AGG, Method.SAMPAGG)
NEEDLES_METHODS = (Method.NONPRIV, Method.NONPRIV_IMPSAMP, Method.AGG, Method.SAMPAGG)


@dataclass(frozen=True)
class GroundTruth:
    """Population distribution over [K].

    "needles": symbol 0 is the default value held by a 1 - gamma fraction;
    the remaining mass gamma spreads over symbols 1..K-1 according to
    ``inner`` (uniform, or Zipf with the given exponent).
    """

    kind: str = "uniform"  # uniform | zipf | needles
    zipf_exponent: float = 1.1
    gamma: float = 0.0
    inner: str = "uniform"

    def __post_init__(self):
        if self.kind not in ("uniform", "zipf", "needles"):
            raise ValueError(f"unknown ground truth kind {self.kind}")
        if self.kind == "needles" and not 0 < self.gamma < 1:
            raise ValueError("needles ground truth needs gamma in (0, 1)")

    def probabilities(self, alphabet_size: int) -> np.ndarray:
        k = alphabet_size
        if self.kind == "uniform":
            return np.full(k, 1.0 / k)
        if self.kind == "zipf":
            w = 1.0 / np.arange(1, k + 1) ** self.zipf_exponent
            return w / w.sum()
        if self.inner == "zipf":
            w = 1.0 / np.arange(1, k) ** self.zipf_exponent
        else:
            w = np.ones(k - 1)
        p = np.empty(k)
        p[0] = 1.0 - self.gamma
        p[1:] = self.gamma * w / w.sum()
        return p


@dataclass(frozen=True)
class HistogramTask:
    """One experiment point: estimate a K-ary distribution over N devices by
    collecting about M reports, as one of T tasks sharing the budget."""

    alphabet_size: int
    population: int
    sample_target: int
    tasks: int
    budget: ApproxDp
    ground_truth: GroundTruth = GroundTruth()

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2")
        if self.sample_target > self.population:
            raise ValueError("sample_target must be <= population")
        if self.sample_target < 1 or self.tasks < 1:
            raise ValueError("sample_target and tasks must be >= 1")
        if self.budget.eps <= 0:
            raise ValueError("budget eps must be > 0")


@dataclass(frozen=True)
class MethodResult:
    method: Method
    sigma: float
    analytic_mse: float
    mc_mse: float
    mc_stderr: float
    trials: int

    def __post_init__(self):
        if self.mc_stderr < 0:
            raise ValueError("mc_stderr must be >= 0")
        if self.method in (Method.NONPRIV, Method.NONPRIV_IMPSAMP) and self.sigma != 0:
            raise ValueError("non-private methods carry sigma = 0")


@lru_cache(maxsize=None)
def _cached_sigma(eps: float, delta: float, q: float, steps: int) -> float:
    return calibrate_sigma(ApproxDp(eps, delta), q, steps)


def nonpriv_mse(task: HistogramTask) -> float:
    """Sampling-only error of M multinomial reports: sum_i p_i (1 - p_i) / M."""
    p = task.ground_truth.probabilities(task.alphabet_size)
    return float((p * (1.0 - p)).sum() / task.sample_target)


def agg_sigma(task: HistogramTask) -> float:
    """Per-task noise level for plain aggregation: each user lands in about
    TM/N tasks, so calibrate ceil(TM/N) exact-Gaussian compositions."""
    comps = math.ceil(task.tasks * task.sample_target / task.population)
    return _cached_sigma(task.budget.eps, task.budget.delta, 1.0, comps)


def sampagg_sigma(task: HistogramTask) -> float:
    """Per-task noise level under hidden Poisson sampling at rate M/N."""
    q = task.sample_target / task.population
    return _cached_sigma(task.budget.eps, task.budget.delta, q, task.tasks)


def needles_rates(task: HistogramTask) -> tuple[float, float]:
    """Two-rate importance sampler: (q_lo for defaults, q_hi for needles)."""
    m, n = task.sample_target, task.population
    gamma = task.ground_truth.gamma
    return m / (2.0 * n), min(m / (2.0 * gamma * n), 1.0)


def method_sigma(task: HistogramTask, method: Method) -> float:
    if method in (Method.NONPRIV, Method.NONPRIV_IMPSAMP):
        return 0.0
    if method is Method.AGG:
        return agg_sigma(task)
    if task.ground_truth.kind == "needles":
        _, q_hi = needles_rates(task)
        return _cached_sigma(task.budget.eps, task.budget.delta, q_hi, task.tasks)
    return sampagg_sigma(task)


def private_hist_mse(
    task: HistogramTask,
    method: Method,
    trials: int = 1000,
    seed: int = 0,
    mc: str = "model",
) -> MethodResult:
    """Expected squared error of a dense-histogram estimator.

    analytic: sampling term plus K sigma^2 / M^2 for the noisy count vector
    divided by M. Monte Carlo either draws the count-plus-noise model
    directly ("model") or drives full protocol rounds ("protocol", reduced
    scale only).
    """
    if method not in HISTOGRAM_METHODS:
        raise ValueError(f"{method} is not a dense-histogram method")
    sigma = method_sigma(task, method)
    k, m = task.alphabet_size, task.sample_target
    analytic = nonpriv_mse(task) + k * sigma**2 / m**2
    if trials == 0:
        return MethodResult(method, sigma, analytic, math.nan, 0.0, 0)
    if mc == "model":
        errs = _mc_model_errors(task, sigma, trials, seed)
    elif mc == "protocol":
        errs = _mc_protocol_errors(task, sigma, trials, seed)
    else:
        raise ValueError("mc must be 'model' or 'protocol'")
    return MethodResult(method, sigma, analytic, *_summarize(errs), trials)


def _mc_model_errors(task: HistogramTask, sigma: float, trials: int, seed: int):
    p = task.ground_truth.probabilities(task.alphabet_size)
    m = task.sample_target
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10,)))
    errs = np.empty(trials)
    for lo in range(0, trials, _chunk(task.alphabet_size)):
        hi = min(trials, lo + _chunk(task.alphabet_size))
        counts = rng.multinomial(m, p, size=hi - lo).astype(np.float64)
        if sigma > 0:
            counts += rng.normal(0.0, sigma, size=counts.shape)
        est = counts / m
        errs[lo:hi] = ((est - p) ** 2).sum(axis=1)
    return errs


def _mc_protocol_errors(task: HistogramTask, sigma: float, trials: int, seed: int):
    """Full end-to-end rounds: one-hot vectors with distributed noise through
    sharing, anonymization, dedup and threshold release."""
    p = task.ground_truth.probabilities(task.alphabet_size)
    k, m, n = task.alphabet_size, task.sample_target, task.population
    q = m / n
    spec = RandomizerSpec(
        RandomizerKind.GAUSSIAN_VECTOR, dim=k, sigma=sigma, batch=m, clip_norm=1.0
    )
    recipe = Recipe(
        task_id="hist-mc",
        randomizer=spec,
        batch_threshold=max(1, int(0.7 * m)),
        sampling_rate=q,
        window=60,
    )
    eye = np.eye(k)
    errs = np.empty(trials)
    for t in range(trials):
        ss = np.random.SeedSequence(seed, spawn_key=(11, t))
        pop_rng = np.random.default_rng(ss)
        data = eye[pop_rng.choice(k, size=n, p=p)]
        round_seed = int(ss.generate_state(1)[0])
        transcript = run_round(recipe, data, seed=round_seed)
        if transcript.output is None:
            raise RuntimeError("protocol round returned bot; lower the threshold")
        est = transcript.output / m
        errs[t] = float(((est - p) ** 2).sum())
    return errs


def needles_mse(
    task: HistogramTask, method: Method, trials: int = 1000, seed: int = 0
) -> MethodResult:
    """Expected squared error on the non-default coordinates of a sparse
    histogram, for uniform sampling, importance sampling, and their private
    versions."""
    if task.ground_truth.kind != "needles":
        raise ValueError("needles_mse needs a needles ground truth")
    p = task.ground_truth.probabilities(task.alphabet_size)
    needles = p[1:]
    k, m, n = task.alphabet_size, task.sample_target, task.population
    _, q_hi = needles_rates(task)
    sigma = method_sigma(task, method)

    if method in (Method.NONPRIV, Method.AGG):
        analytic = float((needles * (1.0 - needles)).sum() / m)
        analytic += (k - 1) * sigma**2 / m**2
    else:
        per_coord = needles * ((1.0 - q_hi) / q_hi + (1.0 - needles)) / n
        analytic = float(per_coord.sum())
        analytic += (k - 1) * sigma**2 / (n * q_hi) ** 2

    if trials == 0:
        return MethodResult(method, sigma, analytic, math.nan, 0.0, 0)

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(12,)))
    errs = np.empty(trials)
    for lo in range(0, trials, _chunk(k)):
        hi = min(trials, lo + _chunk(k))
        rows = hi - lo
        if method in (Method.NONPRIV, Method.AGG):
            counts = rng.multinomial(m, p, size=rows)[:, 1:].astype(np.float64)
            if sigma > 0:
                counts += rng.normal(0.0, sigma, size=counts.shape)
            est = counts / m
        else:
            pop = rng.multinomial(n, p, size=rows)[:, 1:]
            counts = rng.binomial(pop, q_hi).astype(np.float64)
            if sigma > 0:
                counts += rng.normal(0.0, sigma, size=counts.shape)
            est = counts / (n * q_hi)
        errs[lo:hi] = ((est - needles) ** 2).sum(axis=1)
    return MethodResult(method, sigma, analytic, *_summarize(errs), trials)


def _summarize(errs: np.ndarray) -> tuple[float, float]:
    errs = np.asarray(errs)
    return float(errs.mean()), float(errs.std(ddof=1) / math.sqrt(errs.size))


def _chunk(alphabet_size: int) -> int:
    # keep trial matrices around 2e7 cells
    return max(1, int(2e7) // max(1, alphabet_size))


# --- sweeps and CSV -------------------------------------------------------------

DEFAULT_K = (10**3, 10**4, 10**5)
DEFAULT_T = (1, 10, 100, 1000)
DEFAULT_M = (10**3, 3 * 10**3, 10**4, 3 * 10**4, 10**5)
DEFAULT_GAMMA = (0.1, 0.01, 0.001)
DEFAULT_N = 10**6
DEFAULT_BUDGET = ApproxDp(1.0, 1e-6)


@dataclass(frozen=True)
class ExperimentRow:
    method: str
    K: int
    N: int
    M: int
    T: int
    gamma: float
    eps_total: float
    delta_total: float
    sigma: float
    analytic_mse: float
    mc_mse: float
    mc_stderr: float
    trials: int
    seed: int


def default_histogram_grid(
    ks=DEFAULT_K, ts=DEFAULT_T, ms=DEFAULT_M, n=DEFAULT_N, budget=DEFAULT_BUDGET
) -> list[HistogramTask]:
    return [
        HistogramTask(k, n, m, t, budget)
        for k in ks
        for t in ts
        for m in ms
    ]


def default_needles_grid(
    ks=DEFAULT_K,
    ts=DEFAULT_T,
    ms=DEFAULT_M,
    gammas=DEFAULT_GAMMA,
    n=DEFAULT_N,
    budget=DEFAULT_BUDGET,
    inner: str = "zipf",
) -> list[HistogramTask]:
    return [
        HistogramTask(k, n, m, t, budget, GroundTruth("needles", gamma=g, inner=inner))
        for g in gammas
        for k in ks
        for t in ts
        for m in ms
    ]


def _point_seed(master_seed: int, task: HistogramTask, method: Method) -> int:
    entropy = (
        master_seed,
        task.alphabet_size,
        task.population,
        task.sample_target,
        task.tasks,
        int(task.ground_truth.gamma * 10**9),
        list(Method).index(method),
    )
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _run_point(args) -> ExperimentRow:
    task, method, trials, master_seed = args
    seed = _point_seed(master_seed, task, method)
    if task.ground_truth.kind == "needles":
        res = needles_mse(task, method, trials, seed)
        gamma = task.ground_truth.gamma
    else:
        res = private_hist_mse(task, method, trials, seed)
        gamma = 1.0  # dense task: the whole alphabet is "non-default"
    return ExperimentRow(
        method=method.value,
        K=task.alphabet_size,
        N=task.population,
        M=task.sample_target,
        T=task.tasks,
        gamma=gamma,
        eps_total=task.budget.eps,
        delta_total=task.budget.delta,
        sigma=res.sigma,
        analytic_mse=res.analytic_mse,
        mc_mse=res.mc_mse,
        mc_stderr=res.mc_stderr,
        trials=res.trials,
        seed=seed,
    )


def sweep(
    tasks, methods=None, trials: int = 0, master_seed: int = 0, jobs: int = 1
) -> list[ExperimentRow]:
    """One row per (task, method). Deterministic given the master seed: each
    point owns a seed derived from its grid coordinates, so parallel and
    serial runs produce identical rows."""
    tasks = list(tasks)
    points = []
    for task in tasks:
        kind = task.ground_truth.kind
        applicable = NEEDLES_METHODS if kind == "needles" else HISTOGRAM_METHODS
        for method in applicable if methods is None else methods:
            if method not in applicable:
                raise ValueError(f"{method} does not apply to {kind} tasks")
            points.append((task, method, trials, master_seed))
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_point, points))
    else:
        rows = [_run_point(pt) for pt in points]
    rows.sort(key=lambda r: (r.K, r.N, r.M, r.T, r.gamma, r.method))
    return rows


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return format(x, ".10g")
    return str(x)


def write_csv(rows, path):
    """Emit the documented schema: header row, comma separators, '.' decimal.
    Monte Carlo columns are empty when trials = 0."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for row in rows:
            cells = [_fmt(getattr(row, f)) for f in CSV_FIELDS]
            if row.trials == 0:
                cells[CSV_FIELDS.index("mc_mse")] = ""
                cells[CSV_FIELDS.index("mc_stderr")] = ""
            writer.writerow(cells)
