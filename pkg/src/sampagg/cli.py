"""Command-line surface: accountant queries, protocol simulation runs, and
experiment sweeps.

Exit codes: 0 success, 2 usage or configuration error, 3 aggregation returned
bot (below threshold / rate-rejected), 4 internal invariant violation.
Every run is reproducible from its flags, config file and seed. Flags and
config keys are documented in docs/cli.md.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys

import numpy as np

from . import accounting as acct
from . import experiments as exp
from .accounting import ApproxDp, GaussianConfig
from .field import FieldParams
from .protocol import (
    AdversaryConfig,
    InconsistentAggregatorsError,
    Recipe,
    device_rng,
    run_round,
    write_transcript,
    _TAG_POPULATION,
)
from .randomizers import (
    PredicateKind,
    RandomizerKind,
    RandomizerSpec,
    ValidityPredicate,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BOT = 3
EXIT_INVARIANT = 4


class ConfigError(Exception):
    pass


def _fmt(value: float, precision: int) -> str:
    return format(value, f".{precision}g")


# --- acct ----------------------------------------------------------------------


def _cmd_acct(args) -> int:
    p = args.precision
    if args.acct_cmd == "gaussian":
        print(_fmt(acct.gaussian_eps_classic(GaussianConfig(args.sigma), args.delta), p))
    elif args.acct_cmd == "analytic":
        print(_fmt(acct.gaussian_eps_analytic(GaussianConfig(args.sigma), args.delta), p))
    elif args.acct_cmd == "subsampled":
        print(_fmt(acct.subsampled_eps(args.sigma, args.q, args.steps, args.delta), p))
    elif args.acct_cmd == "compose":
        curve = acct.gaussian_rdp(GaussianConfig(args.sigma)).scale(args.steps)
        total, _ = acct.rdp_to_approx_dp(curve, args.delta)
        print(_fmt(total.eps, p))
    elif args.acct_cmd == "amplify":
        out = acct.amplify_by_sampling(ApproxDp(args.eps, args.delta), args.gamma)
        print(_fmt(out.eps, p), _fmt(out.delta, p))
    elif args.acct_cmd == "shuffle":
        print(_fmt(acct.shuffle_eps_analytic(args.eps0, args.batch, args.delta), p))
    elif args.acct_cmd == "donation":
        out = acct.donation_time_amplify(ApproxDp(args.eps, args.delta), args.m)
        print(_fmt(out.eps, p), _fmt(out.delta, p))
    return EXIT_OK


# --- sim -----------------------------------------------------------------------

_RECIPE_KEYS = {
    "task_id",
    "randomizer",
    "alphabet_size",
    "eps0",
    "dim",
    "sigma",
    "batch",
    "clip_norm",
    "batch_threshold",
    "sampling_rate",
    "window",
    "dummy_rate",
    "modulus",
    "fraction_bits",
    "signed_range",
    "max_batch",
    "validity",
    "validity_bound",
}
_POPULATION_KEYS = {"size", "distribution", "zipf_exponent", "gamma", "norm"}
_ADVERSARY_KEYS = {"corrupt_server", "corrupt_clients", "replays"}
_RUN_KEYS = {"seed", "expected_rate", "rate_window", "jitter_window", "transcript"}
_SECTIONS = {
    "recipe": _RECIPE_KEYS,
    "population": _POPULATION_KEYS,
    "adversary": _ADVERSARY_KEYS,
    "run": _RUN_KEYS,
}


def load_run_config(path: str) -> dict:
    """Parse and validate an INI run config; unknown sections or keys fail."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    if "recipe" not in parser or "population" not in parser:
        raise ConfigError("config needs [recipe] and [population] sections")
    return {s: dict(parser[s]) for s in parser.sections()}


def build_recipe(cfg: dict) -> Recipe:
    r = cfg["recipe"]
    kind_name = r.get("randomizer", "rappor")
    try:
        kind = RandomizerKind(kind_name)
    except ValueError:
        raise ConfigError(f"unknown randomizer '{kind_name}'") from None
    if kind is RandomizerKind.GAUSSIAN_VECTOR:
        spec = RandomizerSpec(
            kind,
            dim=int(r.get("dim", 8)),
            sigma=float(r.get("sigma", 0.0)),
            batch=int(r.get("batch", r.get("batch_threshold", 1))),
            clip_norm=float(r.get("clip_norm", 1.0)),
        )
    else:
        spec = RandomizerSpec(
            kind,
            alphabet_size=int(r.get("alphabet_size", 16)),
            eps0=float(r.get("eps0", 4.0)),
        )
    validity = None
    if "validity" in r:
        validity = ValidityPredicate(
            PredicateKind(r["validity"]), float(r.get("validity_bound", 0.0))
        )
    field = FieldParams(
        modulus=int(r.get("modulus", FieldParams().modulus)),
        fraction_bits=int(r.get("fraction_bits", 16)),
    )
    return Recipe(
        task_id=r.get("task_id", "task"),
        randomizer=spec,
        batch_threshold=int(r.get("batch_threshold", 1)),
        sampling_rate=float(r.get("sampling_rate", 1.0)),
        window=int(r.get("window", 60)),
        field=field,
        signed_range=int(r.get("signed_range", 7)),
        dummy_rate=float(r.get("dummy_rate", 0.0)),
        max_batch=int(r.get("max_batch", 1_000_000)),
        validity=validity,
    )


def build_population(cfg: dict, recipe: Recipe, seed: int):
    pop = cfg["population"]
    size = int(pop.get("size", 100))
    if size < 1:
        raise ConfigError("population size must be >= 1")
    rng = device_rng(seed, _TAG_POPULATION, 0)
    kind = recipe.randomizer.kind
    if kind is RandomizerKind.GAUSSIAN_VECTOR:
        dim = recipe.randomizer.dim
        norm = float(pop.get("norm", 0.9))
        x = rng.normal(size=(size, dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x * norm
    k = recipe.randomizer.alphabet_size
    dist = pop.get("distribution", "uniform")
    if dist == "uniform":
        return rng.integers(0, k, size=size)
    if dist == "zipf":
        truth = exp.GroundTruth("zipf", zipf_exponent=float(pop.get("zipf_exponent", 1.1)))
    elif dist == "needles":
        truth = exp.GroundTruth("needles", gamma=float(pop.get("gamma", 0.01)))
    else:
        raise ConfigError(f"unknown population distribution '{dist}'")
    return rng.choice(k, size=size, p=truth.probabilities(k))


def _cmd_sim(args) -> int:
    cfg = load_run_config(args.config)
    recipe = build_recipe(cfg)
    run = cfg.get("run", {})
    seed = args.seed if args.seed is not None else int(run.get("seed", 0))
    adv_cfg = cfg.get("adversary", {})
    adversary = AdversaryConfig(
        corrupt_server=args.corrupt or adv_cfg.get("corrupt_server", "none"),
        corrupt_clients=(
            args.adversary_clients
            if args.adversary_clients is not None
            else int(adv_cfg.get("corrupt_clients", 0))
        ),
        replays=args.replays if args.replays is not None else int(adv_cfg.get("replays", 0)),
    )
    population = build_population(cfg, recipe, seed)
    expected_rate = run.get("expected_rate")
    transcript = run_round(
        recipe,
        population,
        adversary=adversary,
        seed=seed,
        jitter_window=(
            int(run["jitter_window"]) if "jitter_window" in run else None
        ),
        expected_rate=float(expected_rate) if expected_rate is not None else None,
        rate_window=int(run.get("rate_window", 10)),
    )
    path = args.transcript or run.get("transcript")
    if path:
        write_transcript(transcript, path)
    if transcript.output is None:
        out_hash = transcript.status
    else:
        out_hash = hashlib.sha256(
            np.ascontiguousarray(transcript.output).tobytes()
        ).hexdigest()[:16]
    print(
        f"{out_hash} {transcript.count} {transcript.rejected_invalid} "
        f"{transcript.rejected_duplicate} {transcript.rejected_window}"
    )
    return EXIT_OK if transcript.output is not None else EXIT_BOT


# --- exp -----------------------------------------------------------------------


def _parse_methods(names):
    if names is None:
        return None
    methods = []
    for name in names:
        try:
            methods.append(exp.Method(name))
        except ValueError:
            raise ConfigError(f"unknown method '{name}'") from None
    return methods


def _cmd_exp(args) -> int:
    budget = ApproxDp(args.eps, args.delta)
    if args.exp_cmd == "histogram":
        tasks = exp.default_histogram_grid(
            ks=args.k, ts=args.t, ms=args.m, n=args.n, budget=budget
        )
    else:
        tasks = exp.default_needles_grid(
            ks=args.k, ts=args.t, ms=args.m, gammas=args.gamma, n=args.n, budget=budget
        )
    methods = _parse_methods(args.methods)
    rows = exp.sweep(
        tasks, methods=methods, trials=args.trials, master_seed=args.seed, jobs=args.jobs
    )
    exp.write_csv(rows, args.out)
    print(f"{len(rows)} rows -> {args.out}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sampagg",
        description="sampled two-server aggregation lab: accounting, simulation, experiments",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    acct_p = sub.add_parser("acct", help="privacy accountant queries")
    acct_sub = acct_p.add_subparsers(dest="acct_cmd", required=True)

    def acct_cmd(name, **flags):
        sp = acct_sub.add_parser(name)
        for flag, (ftype, required, default) in flags.items():
            sp.add_argument(f"--{flag}", type=ftype, required=required, default=default)
        sp.add_argument("--precision", type=int, default=6)
        return sp

    acct_cmd("gaussian", sigma=(float, True, None), delta=(float, True, None))
    acct_cmd("analytic", sigma=(float, True, None), delta=(float, True, None))
    acct_cmd(
        "subsampled",
        sigma=(float, True, None),
        q=(float, True, None),
        delta=(float, True, None),
        steps=(int, False, 1),
    )
    acct_cmd(
        "compose",
        sigma=(float, True, None),
        steps=(int, True, None),
        delta=(float, True, None),
    )
    acct_cmd(
        "amplify",
        eps=(float, True, None),
        delta=(float, True, None),
        gamma=(float, True, None),
    )
    acct_cmd(
        "shuffle",
        eps0=(float, True, None),
        batch=(int, True, None),
        delta=(float, True, None),
    )
    acct_cmd(
        "donation",
        eps=(float, True, None),
        delta=(float, True, None),
        m=(int, True, None),
    )

    sim_p = sub.add_parser("sim", help="protocol simulation")
    sim_sub = sim_p.add_subparsers(dest="sim_cmd", required=True)
    run_p = sim_sub.add_parser("run")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--adversary-clients", type=int, default=None)
    run_p.add_argument("--corrupt", choices=["leader", "helper"], default=None)
    run_p.add_argument("--replays", type=int, default=None)
    run_p.add_argument("--transcript", default=None)

    exp_p = sub.add_parser("exp", help="experiment sweeps to CSV")
    exp_sub = exp_p.add_subparsers(dest="exp_cmd", required=True)
    for name in ("histogram", "needles"):
        sp = exp_sub.add_parser(name)
        sp.add_argument("--out", required=True)
        sp.add_argument("--k", type=int, nargs="+", default=list(exp.DEFAULT_K))
        sp.add_argument("--t", type=int, nargs="+", default=list(exp.DEFAULT_T))
        sp.add_argument("--m", type=int, nargs="+", default=list(exp.DEFAULT_M))
        sp.add_argument("--n", type=int, default=exp.DEFAULT_N)
        sp.add_argument("--eps", type=float, default=exp.DEFAULT_BUDGET.eps)
        sp.add_argument("--delta", type=float, default=exp.DEFAULT_BUDGET.delta)
        sp.add_argument("--methods", nargs="*", default=None)
        sp.add_argument("--trials", type=int, default=0)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        if name == "needles":
            sp.add_argument(
                "--gamma", type=float, nargs="+", default=list(exp.DEFAULT_GAMMA)
            )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.cmd == "acct":
            return _cmd_acct(args)
        if args.cmd == "sim":
            return _cmd_sim(args)
        return _cmd_exp(args)
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except InconsistentAggregatorsError as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
