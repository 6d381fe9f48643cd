"""Differential privacy accounting: divergences, conversions, composition,
amplification by sampling, and noise calibration.

The universal currency is a Renyi-DP cost curve over a grid of orders.
Composition is pointwise addition on the curve; the curve converts to
(eps, delta)-DP by minimizing over the grid. The subsampled Gaussian cost
uses the exact integer-order binomial expansion evaluated in log-space.

All bounds here are upper bounds on privacy loss; where several valid routes
exist (e.g. single subsampled step: amplified analytic Gaussian vs the RDP
grid), the minimum of valid upper bounds is still a valid upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, ndtr

DEFAULT_ORDERS = tuple(range(2, 257))

SIGMA_SEARCH_CAP = 1e6


class AccountantError(ValueError):
    """Raised when an accounting query is outside the computable regime."""


@dataclass(frozen=True)
class ApproxDp:
    """An (eps, delta) approximate differential privacy guarantee."""

    eps: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise ValueError("eps must be finite and >= 0")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must be in [0, 1]")


@dataclass(frozen=True)
class RdpCurve:
    """Renyi-DP cost rho(alpha) tabulated on a sorted grid of orders > 1."""

    orders: tuple
    rho: tuple

    def __post_init__(self):
        orders = tuple(float(a) for a in self.orders)
        rho = tuple(float(r) for r in self.rho)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "rho", rho)
        if len(orders) != len(rho) or not orders:
            raise ValueError("orders and rho must be non-empty and match in length")
        if any(a <= 1 for a in orders):
            raise ValueError("all orders must be > 1")
        if list(orders) != sorted(orders):
            raise ValueError("orders must be sorted ascending")
        if any(not math.isfinite(r) or r < 0 for r in rho):
            raise ValueError("all rho values must be finite and >= 0")

    def scale(self, steps: int) -> "RdpCurve":
        """Cost of ``steps`` sequential runs of this mechanism."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        return RdpCurve(self.orders, tuple(steps * r for r in self.rho))


@dataclass(frozen=True)
class SamplingConfig:
    """Poisson sampling rate q applied independently at each of T steps."""

    rate: float
    steps: int

    def __post_init__(self):
        if not 0 <= self.rate <= 1:
            raise ValueError("rate must be in [0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass(frozen=True)
class GaussianConfig:
    """Gaussian mechanism noise multiplier, relative to sensitivity 1."""

    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be finite and > 0")


def hockey_stick(p, q, eps: float) -> float:
    """Hockey-stick divergence sum_x max(0, P(x) - e^eps Q(x)).

    P and Q are finite distributions over the same (implicit, index-aligned)
    support. Small-instance oracle for verifying local randomizer claims.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("P and Q must share a support")
    for name, dist in (("P", p), ("Q", q)):
        if abs(dist.sum() - 1.0) > 1e-12 or np.any(dist < 0):
            raise ValueError(f"{name} is not a probability distribution")
    return float(np.maximum(0.0, p - math.exp(eps) * q).sum())


def gaussian_eps_classic(g: GaussianConfig, delta: float) -> float:
    """Closed-form Gaussian mechanism bound: eps = sqrt(2 ln(1.25/delta)) / sigma."""
    _check_delta(delta)
    return math.sqrt(2.0 * math.log(1.25 / delta)) / g.sigma


def gaussian_delta_exact(g: GaussianConfig, eps: float) -> float:
    """Exact delta(eps) of the Gaussian mechanism at sensitivity 1.

    delta = Phi(1/(2 sigma) - eps sigma) - e^eps Phi(-1/(2 sigma) - eps sigma).
    """
    s = g.sigma
    a = 1.0 / (2.0 * s)
    return float(ndtr(a - eps * s) - math.exp(eps) * ndtr(-a - eps * s))


def gaussian_eps_analytic(
    g: GaussianConfig, delta: float, tol: float = 1e-6, max_steps: int = 200
) -> float:
    """Smallest eps with delta(eps) <= delta, by bisection on the exact curve.

    At most gaussian_eps_classic wherever the classic statement is a valid
    bound (eps <= 1); the exact curve is tight everywhere.
    """
    _check_delta(delta)
    lo = 0.0
    hi = gaussian_eps_classic(g, delta)
    # The classic bound is sufficient, so delta(hi) <= delta; widen defensively.
    steps = 0
    while gaussian_delta_exact(g, hi) > delta:
        hi *= 2.0
        steps += 1
        if steps > max_steps:
            raise AccountantError("analytic Gaussian bisection failed to bracket")
    if gaussian_delta_exact(g, lo) <= delta:
        return 0.0
    steps = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gaussian_delta_exact(g, mid) <= delta:
            hi = mid
        else:
            lo = mid
        steps += 1
        if steps > max_steps:
            raise AccountantError("analytic Gaussian bisection did not converge")
    return hi


def gaussian_rdp(g: GaussianConfig, orders=DEFAULT_ORDERS) -> RdpCurve:
    """Gaussian mechanism costs rho(alpha) = alpha / (2 sigma^2), any alpha > 1."""
    return RdpCurve(tuple(orders), tuple(a / (2.0 * g.sigma**2) for a in orders))


def pure_to_rdp(eps: float, orders=DEFAULT_ORDERS) -> RdpCurve:
    """A pure eps-DP mechanism costs rho(alpha) = eps^2 alpha / 2."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return RdpCurve(tuple(orders), tuple(0.5 * eps * eps * a for a in orders))


def _log_binom(n: int, j: np.ndarray) -> np.ndarray:
    return gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)


def subsampled_gaussian_rdp(
    g: GaussianConfig, q: float, orders=DEFAULT_ORDERS
) -> RdpCurve:
    """Poisson-subsampled Gaussian RDP at integer orders, exact expansion.

    rho(alpha) = ln( sum_j C(alpha,j) (1-q)^(alpha-j) q^j e^{j(j-1)/(2 sigma^2)} )
                 / (alpha - 1),
    evaluated with a log-space sum. Reduces to the plain Gaussian curve at
    q = 1 and to zero cost at q = 0.
    """
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    orders = tuple(orders)
    for a in orders:
        if int(a) != a or a < 2:
            raise ValueError("subsampled curve requires integer orders >= 2")
    if q == 0.0:
        return RdpCurve(orders, (0.0,) * len(orders))
    if q == 1.0:
        return gaussian_rdp(g, orders)
    two_sigma2 = 2.0 * g.sigma**2
    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    rho = []
    for a in orders:
        a = int(a)
        j = np.arange(a + 1, dtype=np.float64)
        log_terms = (
            _log_binom(a, j) + j * log_q + (a - j) * log_1mq + j * (j - 1.0) / two_sigma2
        )
        log_moment = float(logsumexp(log_terms))
        value = max(0.0, log_moment / (a - 1.0))
        if not math.isfinite(value):
            raise AccountantError(f"log-moment overflow at order {a}; reduce orders")
        rho.append(value)
    return RdpCurve(orders, tuple(rho))


def rdp_compose(curves) -> RdpCurve:
    """Sequential composition: pointwise sum of curves on an identical grid."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one curve")
    orders = curves[0].orders
    for c in curves[1:]:
        if c.orders != orders:
            raise ValueError("order grids must match for composition")
    total = np.zeros(len(orders))
    for c in curves:
        total += np.asarray(c.rho)
    return RdpCurve(orders, tuple(total))


def rdp_to_approx_dp(curve: RdpCurve, delta: float) -> tuple[ApproxDp, float]:
    """Convert an RDP curve to (eps, delta)-DP; returns the minimizing order too.

    eps(alpha) = rho(alpha) + (ln(1/delta) + (alpha-1) ln(1 - 1/alpha)
                 - ln(alpha)) / (alpha - 1), minimized over the grid.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0, 1]")
    orders = np.asarray(curve.orders)
    rho = np.asarray(curve.rho)
    extra = (
        math.log(1.0 / delta) + (orders - 1.0) * np.log1p(-1.0 / orders) - np.log(orders)
    ) / (orders - 1.0)
    eps = rho + extra
    i = int(np.argmin(eps))
    return ApproxDp(max(0.0, float(eps[i])), delta), float(orders[i])


def advanced_composition(step: ApproxDp, steps: int, delta_prime: float) -> ApproxDp:
    """T-fold advanced composition of one (eps, delta)-DP step.

    eps' = eps sqrt(2 T ln(1/delta')) + T eps (e^eps - 1); delta' adds to T delta.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if delta_prime <= 0:
        raise ValueError("delta_prime must be > 0")
    e = step.eps
    eps_total = e * math.sqrt(2.0 * steps * math.log(1.0 / delta_prime)) + steps * e * (
        math.exp(e) - 1.0
    )
    return ApproxDp(eps_total, min(1.0, steps * step.delta + delta_prime))


def amplify_by_sampling(mech: ApproxDp, gamma: float) -> ApproxDp:
    """Poisson-sampling amplification: (eps, delta) -> (ln(1 + gamma(e^eps - 1)), gamma delta)."""
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must be in [0, 1]")
    eps = math.log1p(gamma * (math.exp(mech.eps) - 1.0))
    return ApproxDp(eps, gamma * mech.delta)


def shuffle_eps_analytic(eps0: float, batch: int, delta: float) -> float:
    """Analytic shuffle-amplification bound for one eps0-DP local report in a
    batch of the given size:

    ln(1 + (e^eps0 - 1) (4 sqrt(2 ln(4/delta)) / sqrt((e^eps0 + 1) B) + 4/B)).
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    _check_delta(delta)
    if eps0 < 0:
        raise ValueError("eps0 must be >= 0")
    em1 = math.expm1(eps0)
    term = 4.0 * math.sqrt(2.0 * math.log(4.0 / delta)) / math.sqrt(
        (math.exp(eps0) + 1.0) * batch
    ) + 4.0 / batch
    return math.log1p(em1 * term)


def donation_time_amplify(step: ApproxDp, m: int) -> ApproxDp:
    """Amplification from uniformly randomizing participation over m rounds.

    eps' = ln(1 + (e^eps - 1)/m) sqrt(2 m ln(1/delta))
           + m ln^2(1 + (e^eps - 1)/m) / 2;  delta' = (m + 1) delta.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    base = math.log1p(math.expm1(step.eps) / m)
    if step.delta > 0:
        eps = base * math.sqrt(2.0 * m * math.log(1.0 / step.delta)) + 0.5 * m * base**2
    else:
        eps = 0.0 if step.eps == 0 else math.inf
    if not math.isfinite(eps):
        raise AccountantError("donation-time bound requires delta > 0")
    return ApproxDp(eps, min(1.0, (m + 1) * step.delta))


def poisson_batch_feasible(q: float, population: int, batch: int, delta: float) -> bool:
    """True iff a Poisson(q) sample of the population reaches the batch size
    except with probability about delta: batch < q k - sqrt(q k ln(1/delta))."""
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    if population < 1:
        raise ValueError("population must be >= 1")
    _check_delta(delta)
    mean = q * population
    return batch < mean - math.sqrt(mean * math.log(1.0 / delta))


def subsampled_eps(
    sigma: float, q: float, steps: int, delta: float, orders=DEFAULT_ORDERS
) -> float:
    """Total eps of ``steps`` Poisson-subsampled Gaussian steps, reported at
    delta level ``delta``.

    A single step takes the exact Gaussian curve at delta and amplifies it by
    the sampling rate (the realized delta is q * delta <= delta, so reporting
    at delta is sound). Compositions go through the RDP grid; at q = 1 the
    exact Gaussian composition identity (T steps at sigma == one step at
    sigma/sqrt(T)) applies instead.
    """
    g = GaussianConfig(sigma)
    _check_delta(delta)
    if q == 0.0:
        return 0.0
    if steps == 1:
        base = ApproxDp(gaussian_eps_analytic(g, delta), delta)
        return amplify_by_sampling(base, q).eps
    if q == 1.0:
        return gaussian_eps_analytic(GaussianConfig(sigma / math.sqrt(steps)), delta)
    step_curve = subsampled_gaussian_rdp(g, q, orders)
    total, _ = rdp_to_approx_dp(step_curve.scale(steps), delta)
    return total.eps


def calibrate_sigma_analytic(target: ApproxDp, tol: float = 1e-4) -> float:
    """Minimal sigma whose exact Gaussian curve meets (eps, delta)."""
    if target.eps <= 0:
        raise ValueError("target eps must be > 0")
    lo, hi = 1e-3, 1.0
    while gaussian_eps_analytic(GaussianConfig(hi), target.delta) > target.eps:
        hi *= 2.0
        if hi > SIGMA_SEARCH_CAP:
            raise AccountantError("sigma search exceeded cap")
    while (hi - lo) / hi > tol:
        mid = 0.5 * (lo + hi)
        if gaussian_eps_analytic(GaussianConfig(mid), target.delta) <= target.eps:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_sigma(
    target: ApproxDp, q: float, steps: int, orders=DEFAULT_ORDERS, rel_tol: float = 1e-3
) -> float:
    """Minimal noise multiplier meeting ``target`` over ``steps`` subsampled steps.

    For q < 1 the feasibility test is the RDP grid route. At q = 1 Poisson
    sampling is full participation, where the exact Gaussian composition
    identity applies: steps compositions at sigma equal one mechanism at
    sigma/sqrt(steps), calibrated on the exact analytic curve.
    """
    if target.eps <= 0:
        raise ValueError("target eps must be > 0")
    if not 0 < q <= 1:
        raise ValueError("q must be in (0, 1]")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if q == 1.0:
        return math.sqrt(steps) * calibrate_sigma_analytic(target)

    def feasible(sigma: float) -> bool:
        curve = subsampled_gaussian_rdp(GaussianConfig(sigma), q, orders)
        got, _ = rdp_to_approx_dp(curve.scale(steps), target.delta)
        return got.eps <= target.eps

    lo, hi = 1e-3, 0.5
    while not feasible(hi):
        lo, hi = hi, hi * 2.0
        if hi > SIGMA_SEARCH_CAP:
            raise AccountantError("sigma search exceeded cap; target unattainable")
    while (hi - lo) / hi > rel_tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
