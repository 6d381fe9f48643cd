"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are the stated ones; nothing is loosened here. Criterion 1
contains one sub-assertion that is unattainable on the exact analytic
Gaussian curve (the (1, 1e-8) threshold sits at sigma = 5.10031, so the
prose-rounded sigma = 5.1 lands at eps = 1.000064 > 1); it is asserted as
stated and expected to fail. See the decisions ledger for the analysis.
"""

import math

import numpy as np
import pytest

from sampagg.accounting import (
    ApproxDp,
    GaussianConfig,
    amplify_by_sampling,
    donation_time_amplify,
    gaussian_eps_analytic,
    gaussian_eps_classic,
    gaussian_rdp,
    rdp_to_approx_dp,
    shuffle_eps_analytic,
    subsampled_eps,
)
from sampagg.experiments import (
    GroundTruth,
    HistogramTask,
    Method,
    default_histogram_grid,
    needles_mse,
    private_hist_mse,
)
from sampagg.protocol import (
    AdversaryConfig,
    Recipe,
    aggregate_with_threshold,
    rate_guard,
    run_round,
)
from sampagg.randomizers import (
    PredicateKind,
    RandomizerKind,
    RandomizerSpec,
    ValidityPredicate,
    decode,
)


def report(criterion: int, description: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[criterion {criterion:2d}] {status}: {description}{suffix}")
    assert ok, f"criterion {criterion}: {description}{suffix}"


def test_criterion_1_gaussian_calibration():
    classic7 = gaussian_eps_classic(GaussianConfig(7.0), 1e-8)
    analytic51 = gaussian_eps_analytic(GaussianConfig(5.1), 1e-8)
    analytic45 = gaussian_eps_analytic(GaussianConfig(4.5), 1e-8)
    ok = classic7 <= 1.0 and analytic51 <= 1.0 and analytic45 > 1.0
    report(
        1,
        "Gaussian calibration inequalities",
        ok,
        f"classic(7)={classic7:.6f}, analytic(5.1)={analytic51:.6f}, "
        f"analytic(4.5)={analytic45:.6f}; exact threshold is sigma=5.10031",
    )


def test_criterion_2_single_subsampled_step():
    eps = subsampled_eps(5.1, 0.02, 1, 1e-8)
    report(2, "single subsampled step in [0.030, 0.040]", 0.030 <= eps <= 0.040, f"eps={eps:.6f}")


def test_criterion_3_composed_accounting():
    composed = subsampled_eps(5.1, 0.02, 2500, 1e-8)
    plain_curve = gaussian_rdp(GaussianConfig(5.1)).scale(2500)
    unamplified, _ = rdp_to_approx_dp(plain_curve, 1e-8)
    participation, _ = rdp_to_approx_dp(gaussian_rdp(GaussianConfig(5.1)).scale(50), 1e-8)
    ok = (
        0.6 <= composed <= 1.3
        and unamplified.eps > 100.0
        and 7.0 <= participation.eps <= 10.0
    )
    report(
        3,
        "composed accounting bands",
        ok,
        f"T=2500 amplified eps={composed:.4f}, unamplified eps={unamplified.eps:.1f}, "
        f"qT-route eps={participation.eps:.4f}",
    )


def test_criterion_4_shuffle_and_amplification_chain():
    shuffle = shuffle_eps_analytic(4.0, 10**4, 1e-10)
    amplified = amplify_by_sampling(ApproxDp(0.61, 1e-10), 0.02)
    ok = abs(shuffle - 1.109) <= 0.005 and amplified.eps < 0.02
    report(
        4,
        "shuffle bound and sampling amplification chain",
        ok,
        f"shuffle eps={shuffle:.4f}, amplified eps={amplified.eps:.6f}, "
        f"delta={amplified.delta:.3g}",
    )


def test_criterion_5_donation_time():
    out = donation_time_amplify(ApproxDp(1.0, 1e-6), 100)
    ok = abs(out.eps - 0.910) <= 0.001 and out.delta == 101 * 1e-6
    ok = ok and out.delta == pytest.approx(1.01e-4, rel=1e-12)
    report(5, "donation-time amplification", ok, f"eps={out.eps:.6f}, delta={out.delta:.6g}")


def test_criterion_6_protocol_equivalence():
    spec = RandomizerSpec(RandomizerKind.RAPPOR, alphabet_size=100, eps0=4.0)
    recipe = Recipe("acc-6", spec, batch_threshold=500, sampling_rate=0.1, window=60)
    population = np.random.default_rng(2024).integers(0, 100, size=10**4)
    dec = lambda m: decode(m, spec, recipe.codec)
    exact = True
    threshold_safe = True
    for seed in range(100):
        tr = run_round(recipe, population, seed=seed)
        ideal = aggregate_with_threshold(
            tr.oracle.honest_messages, dec, recipe.batch_threshold
        )
        if tr.status == "released":
            exact = exact and np.array_equal(tr.output, ideal)
            threshold_safe = threshold_safe and tr.count >= recipe.batch_threshold
        else:
            exact = exact and ideal is None
        for event in tr.events:
            if event[2] == "release":
                k = int(event[3].split(":")[0].removeprefix("k="))
                threshold_safe = threshold_safe and k >= recipe.batch_threshold
    report(
        6,
        "protocol output equals the ideal functionality on the realized selection",
        exact and threshold_safe,
        "100 seeds, bit-exact, no release below threshold",
    )


def test_criterion_7_robustness():
    dim = 16
    spec = RandomizerSpec(RandomizerKind.GAUSSIAN_VECTOR, dim=dim, sigma=0.0, batch=1000)
    recipe = Recipe(
        "acc-7",
        spec,
        batch_threshold=1000,
        sampling_rate=1.0,
        window=60,
        validity=ValidityPredicate(PredicateKind.L2_NORM_LE, 1.0),
    )
    rng = np.random.default_rng(77)
    honest = rng.normal(size=(1000, dim))
    honest = 0.9 * honest / np.linalg.norm(honest, axis=1, keepdims=True)
    adversary = AdversaryConfig(corrupt_clients=10)
    dec = lambda m: decode(m, spec, recipe.codec)
    worst = 0.0
    ok = True
    for seed in range(100):
        tr = run_round(recipe, honest, adversary=adversary, seed=seed)
        honest_ideal = aggregate_with_threshold(tr.oracle.honest_messages, dec, 1)
        deviation = float(np.linalg.norm(tr.output - honest_ideal))
        worst = max(worst, deviation)
        ok = ok and tr.status == "released" and deviation <= 10.0 + 1e-9
    report(7, "adversarial deviation bounded by the client count", ok, f"max deviation={worst:.6f}")


def test_criterion_8_dedup_and_rate_guard():
    spec = RandomizerSpec(RandomizerKind.RAPPOR, alphabet_size=50, eps0=4.0)
    recipe = Recipe("acc-8", spec, batch_threshold=100, sampling_rate=1.0, window=60)
    population = np.random.default_rng(8).integers(0, 50, size=300)
    replays = 7
    tr = run_round(recipe, population, adversary=AdversaryConfig(replays=replays), seed=1)
    dedup_ok = (
        tr.rejected_duplicate == replays
        and tr.helper_view.rejected_duplicate == replays
        and tr.leader_view.rejected_duplicate == replays
    )

    # 5x burst inside one window trips the guard
    base = np.repeat(np.arange(60), 20)
    burst = np.concatenate([base, np.repeat(30, 5 * 20 * 10)])
    burst_ok = rate_guard(base, 20.0, 10) and not rate_guard(burst, 20.0, 10)

    # Poisson arrivals at the expected rate: false rejections < 5% of 1e4 trials
    trials, horizon, rate, window = 10**4, 60, 50.0, 10
    counts = np.random.default_rng(9).poisson(rate, size=(trials, horizon))
    cum = np.concatenate([np.zeros((trials, 1), int), counts.cumsum(axis=1)], axis=1)
    sliding = cum[:, window:] - cum[:, :-window]
    false_rate = float((sliding.max(axis=1) > 2 * rate * window).mean())
    poisson_ok = false_rate < 0.05

    report(
        8,
        "token dedup, burst rejection, Poisson false-rejection rate",
        dedup_ok and burst_ok and poisson_ok,
        f"duplicates={tr.rejected_duplicate}/{replays}, false rejection={false_rate:.4f}",
    )


def test_criterion_9_experiment_orderings():
    budget = ApproxDp(1.0, 1e-6)
    n = 10**6
    grid = default_histogram_grid(n=n, budget=budget)

    dominance = True
    results = {}
    for task in grid:
        base = private_hist_mse(task, Method.NONPRIV, trials=0).analytic_mse
        samp = private_hist_mse(task, Method.SAMPAGG, trials=0).analytic_mse
        agg = private_hist_mse(task, Method.AGG, trials=0).analytic_mse
        key = (task.alphabet_size, task.tasks, task.sample_target)
        results[key] = (base, samp, agg)
        dominance = dominance and base <= samp <= agg

    gap = max(
        results[(10**5, 1000, m)][2] / results[(10**5, 1000, m)][1]
        for m in (10**3, 3 * 10**3, 10**4, 3 * 10**4, 10**5)
    )
    gap_ok = gap >= 10.0

    base, samp, _ = results[(10**3, 1, 10**5)]
    overhead = samp / base
    overhead_ok = overhead <= 1.1

    needles_task = HistogramTask(
        10**3, n, 10**4, 1, budget, GroundTruth("needles", gamma=0.01, inner="zipf")
    )
    unif = needles_mse(needles_task, Method.NONPRIV, trials=500, seed=90)
    imps = needles_mse(needles_task, Method.NONPRIV_IMPSAMP, trials=500, seed=91)
    separation = (unif.mc_mse - imps.mc_mse) / math.hypot(unif.mc_stderr, imps.mc_stderr)
    needles_ok = separation >= 3.0

    report(
        9,
        "experiment orderings on the default grid",
        dominance and gap_ok and overhead_ok and needles_ok,
        f"dominance={dominance}, max AGG/SAMPAGG gap={gap:.1f}, "
        f"SAMPAGG/NONPRIV overhead={overhead:.4f}, needles separation={separation:.1f} stderr",
    )


def test_criterion_10_monte_carlo_agreement():
    budget = ApproxDp(1.0, 1e-6)
    checks = []

    # model-path desk-scale configurations, >= 1e3 trials each
    configs = [
        (100, 10**5, 10**3, 1),
        (1000, 10**6, 10**4, 10),
        (300, 10**5, 3 * 10**3, 100),
    ]
    for k, n, m, t in configs:
        task = HistogramTask(k, n, m, t, budget)
        for method in (Method.NONPRIV, Method.AGG, Method.SAMPAGG):
            res = private_hist_mse(task, method, trials=1000, seed=100 + t)
            checks.append(abs(res.mc_mse - res.analytic_mse) <= 3 * res.mc_stderr)

    # end-to-end protocol path at reduced scale, >= 1e3 trials
    task = HistogramTask(50, 2000, 300, 10, budget)
    res = private_hist_mse(task, Method.SAMPAGG, trials=1000, seed=200, mc="protocol")
    protocol_ok = abs(res.mc_mse - res.analytic_mse) <= 3 * res.mc_stderr
    checks.append(protocol_ok)

    report(
        10,
        "Monte Carlo within 3 stderr of analytic on all desk-scale configs",
        all(checks),
        f"{sum(checks)}/{len(checks)} configurations agree",
    )
