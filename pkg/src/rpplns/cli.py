"""Command-line front end.

Every run writes its artifacts plus ``manifest.json`` into ``--out-dir``.
The manifest echoes the full argument vector, so re-running it with the same
package version reproduces the outputs exactly.

Exit codes: 0 success, 2 usage error, 3 invalid parameters, 4 non-convergence
under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import __version__
from . import analytics as an
from . import simulator as sim
from . import solver as sol
from .mining import HoppingSchedule, PoolSpec, Population, ScheduleParseError
from .protocol import Protocol

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3, 4


class ValidationError(Exception):
    pass


def count(text: str) -> int:
    """Non-negative integer, also written as ``1e7`` or ``2.5e6``."""
    try:
        d = Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not d.is_finite() or d != d.to_integral_value() or d < 0:
        raise argparse.ArgumentTypeError(f"not a non-negative integer: {text!r}")
    return int(d)


def _population(args) -> Population:
    alpha, beta = args.alpha, args.beta
    gamma = args.gamma if args.gamma is not None else 1.0 - alpha - beta
    total = alpha + beta + gamma
    if abs(total - 1.0) > an.SUM_TOL:
        raise ValidationError(f"alpha + beta + gamma must equal 1, got {total!r}")
    if min(alpha, beta) < 0 or gamma < -an.SUM_TOL:
        raise ValidationError(f"hash powers must be non-negative (alpha={alpha}, beta={beta}, gamma={gamma})")
    try:
        return Population(alpha, beta, max(gamma, 0.0), args.D)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else repr(x)
    if hasattr(x, "numerator") and not isinstance(x, int):
        return str(x)
    return x


def _emit(args, name: str, payload: dict) -> str:
    path = os.path.join(args.out_dir, f"{name}.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, default=str)
    print(json.dumps(payload, indent=1, default=str))
    return path


# --- subcommands ------------------------------------------------------------


def cmd_analyze(args) -> tuple:
    pop = _population(args)
    N, D = args.N, args.D
    a, b = pop.alpha, pop.beta
    out = {
        "params": {"alpha": a, "beta": b, "gamma": pop.gamma, "N": N, "D": D},
        "mean_reward": an.honest_mean_reward(a, D),
        "rpplns_variance": an.rpplns_variance(a, N, D),
        "rpplns_variance_corrected": an.rpplns_variance(a, N, D, literal=False),
        "pplns_variance": an.pplns_variance(a, N, D),
        "pplns_variance_corrected": an.pplns_variance(a, N, D, literal=False),
    }
    if a > 0 and b > 0:
        ss = an.steady_state(a, b, N)
        out["steady_state"] = {
            "expected_shares": ss.expected_shares,
            "mode": int(ss.pi.argmax()),
            "detailed_balance_residual": an.detailed_balance_residual(ss.pi, a, b),
        }
    else:
        out["steady_state"] = None
    counts = an.state_counts(args.m, N)
    out["state_counts"] = {"m": args.m, "pplns": str(counts.pplns_count),
                           "rpplns_bound": str(counts.rpplns_bound), "rpplns_exact": str(counts.rpplns_exact)}
    if D >= 2 and N >= 2:
        out["pplns_hoard_threshold"] = an.pplns_hoard_threshold(N, D)
        out["rpplns_hoard_threshold_k0"] = an.rpplns_hoard_threshold_k0(N, D, b)
        out["rpplns_hoard_threshold_k0_corrected"] = an.rpplns_hoard_threshold_k0(N, D, b, literal=False)
    return [_emit(args, "analyze", out)], EXIT_OK


def _trial_config(args) -> sim.TrialConfig:
    pop = _population(args)
    return sim.TrialConfig(Protocol(args.protocol), pop, args.N, args.turns, args.trials,
                           args.seed, args.burn_in, args.queue_length)


def cmd_simulate(args) -> tuple:
    cfg = _trial_config(args)
    pop = cfg.population
    out_base = os.path.join(args.out_dir, "stats")
    files = []
    nan = math.nan
    if args.experiment == "honest":
        res = sim.simulate(cfg, args.workers)
        x = res.share_revenue
        # per-turn reward with each share's lifetime revenue booked at its birth turn
        ex2 = x.variance + x.mean ** 2
        share_var = pop.alpha * ex2 - (pop.alpha * x.mean) ** 2
        var_fn = an.pplns_variance if cfg.protocol is Protocol.PPLNS else an.rpplns_variance
        ref_var = var_fn(pop.alpha, cfg.N, pop.D) if cfg.protocol is not Protocol.QUEUEBAG else nan
        rows = [
            ("reward_per_turn", res.reward, an.honest_mean_reward(pop.alpha, pop.D)),
            ("share_revenue", x, 1.0 / pop.D),
            ("share_attributed_variance", sim.RewardStats(share_var, 0.0, nan, x.n, x.trials), ref_var),
            ("budget_deviation", sim.RewardStats(res.budget_deviation, 0.0, nan, res.reward.n, x.trials), 0.0),
        ]
        files.append(sim.write_records(out_base, sim.stats_records(cfg, rows), args.format))
        print(f"mean per-turn reward {res.reward.mean!r} (stderr {res.reward.stderr!r}); "
              f"expected {an.honest_mean_reward(pop.alpha, pop.D)!r}")
    elif args.experiment == "steady":
        occ = sim.empirical_steady_state(cfg, args.workers)
        files.append(sim.write_records(os.path.join(args.out_dir, "occupancy"),
                                       sim.occupancy_records(occ), args.format))
        st = sim.RewardStats(occ.mean, 0.0, occ.mean_stderr, occ.histogram.total, cfg.trials)
        tv = sim.RewardStats(occ.tv_distance, 0.0, nan, occ.histogram.total, cfg.trials)
        rows = [("occupancy_mean", st, occ.expected_mean), ("tv_distance", tv, 0.0)]
        files.append(sim.write_records(out_base, sim.stats_records(cfg, rows), args.format))
        print(f"TV distance {occ.tv_distance!r}; mean occupancy {occ.mean!r} (expected {occ.expected_mean!r})")
    else:
        lt = sim.share_lifetime(cfg, args.workers)
        n = lt.count
        rows = [
            ("lifetime", sim.RewardStats(lt.mean, lt.mean_stderr ** 2 * n, lt.mean_stderr, n, cfg.trials),
             lt.expected_mean),
            ("lifetime_second_moment", sim.RewardStats(lt.second_moment, lt.second_moment_stderr ** 2 * n,
                                                       lt.second_moment_stderr, n, cfg.trials),
             lt.expected_second_moment),
            ("survival_rate", sim.RewardStats(lt.survival_rate, 0.0, nan, n, cfg.trials), (cfg.N - 1) / cfg.N),
            ("ks_distance", sim.RewardStats(lt.ks_distance, 0.0, nan, n, cfg.trials), 0.0),
        ]
        files.append(sim.write_records(out_base, sim.stats_records(cfg, rows), args.format))
        print(f"mean lifetime {lt.mean!r} (stderr {lt.mean_stderr!r}); expected {lt.expected_mean!r}")
    return files, EXIT_OK


def _solver_config(args) -> sol.SolverConfig:
    pop = _population(args)
    try:
        return sol.SolverConfig(args.N, args.D, pop.alpha, pop.beta, pop.gamma, args.k,
                                args.terminal_rule, args.tol, args.literal_paper_formulas)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_solve(args) -> tuple:
    cfg = _solver_config(args)
    pot = sol.potential(cfg)
    table = sol.value_iteration(cfg)
    N = cfg.N
    out = {
        "config": cfg.echo(),
        "phi_000": float(pot.phi[0, 0, 0]),
        "converged": pot.converged,
        "max_change": pot.max_change,
        "share_ic": [sol.check_share_ic(table, l) for l in range(N)],
        "block_ic": [sol.check_block_ic(table, l) for l in range(N)],
    }
    files = [_emit(args, "solve", out)]
    if args.dump_table:
        path = os.path.join(args.out_dir, "value_table.json")
        sol.dump_table_json(table, path)
        files.append(path)
    code = EXIT_OK
    if not pot.converged:
        print(f"warning: potential not converged (max change {pot.max_change!r})", file=sys.stderr)
        if args.strict:
            code = EXIT_NONCONVERGED
    return files, code


def cmd_sweep(args) -> tuple:
    results = sol.sweep_many(args.N, args.D, args.k, args.F, args.grid_step, args.terminal_rule,
                             args.literal_paper_formulas, args.workers)
    records = [{"alpha": p.alpha, "beta": p.beta, "gamma": p.gamma, "F": p.F,
                "classification": p.classification.value} for r in results for p in r.points]
    files = [sim.write_records(os.path.join(args.out_dir, "sweep"), records, args.format)]
    for r in results:
        counts = {c.value: r.count(c) for c in sol.Classification}
        print(f"F={r.F!r}: {counts}")
    return files, EXIT_OK


def cmd_threshold(args) -> tuple:
    try:
        if args.protocol == "pplns":
            value = an.pplns_hoard_threshold(args.N, args.D)
        else:
            value = an.rpplns_hoard_threshold_k0(args.N, args.D, args.beta, literal=not args.corrected)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out = {"protocol": args.protocol, "N": args.N, "D": args.D, "threshold": value}
    if args.protocol == "rpplns":
        out.update(beta=args.beta, corrected=args.corrected)
    return [_emit(args, "threshold", out)], EXIT_OK


def cmd_hop(args) -> tuple:
    try:
        pools = (PoolSpec(args.N1, args.D1, args.beta1), PoolSpec(args.N2, args.D2, args.beta2))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    schedules = []
    for path in args.schedule:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read schedule {path}: {exc.strerror}") from None
        try:
            schedules.append((Path(path).stem, HoppingSchedule.parse(text, args.T)))
        except ScheduleParseError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    if not schedules:
        schedules.append(("pool1_only", HoppingSchedule(args.T)))
    rows = []
    for sid, sched in schedules:
        res = sim.hopping_experiment(pools, args.alpha, sched, (args.A1, args.A2), args.trials, args.seed)
        rows.append((sid, res))
        print(f"{sid}: {res.estimate!r} [{res.ci_low!r}, {res.ci_high!r}] analytic {res.analytic!r}")
    return [sim.write_records(os.path.join(args.out_dir, "hopping"), sim.hopping_records(rows), args.format)], EXIT_OK


# --- parser -----------------------------------------------------------------


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=count, default=d(0), help="master seed (default 0)")
    parser.add_argument("--workers", type=count, default=d(1), help="worker processes (default 1)")
    parser.add_argument("--out-dir", default=d("."), help="output directory (default .)")
    parser.add_argument("--format", choices=("csv", "json"), default=d("csv"))
    parser.add_argument("--strict", action="store_true", default=d(False),
                        help="exit 4 when the potential does not converge")


def _hash_args(p, alpha=None, beta=None, D=None, N=None):
    p.add_argument("--alpha", type=float, required=alpha is None, default=alpha)
    p.add_argument("--beta", type=float, required=beta is None, default=beta)
    p.add_argument("--gamma", type=float, default=None, help="defaults to 1 - alpha - beta")
    p.add_argument("--N", type=count, required=N is None, default=N)
    p.add_argument("--D", type=float, required=D is None, default=D)


def _dp_args(p):
    p.add_argument("--k", type=count, default=120, help="recursion depth k_max")
    p.add_argument("--terminal-rule", choices=[r.value for r in sol.TerminalRule], default="reward_jump")
    p.add_argument("--literal-paper-formulas", action="store_true",
                   help="use the literal share-publish and m2-block terms")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpplns", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _globals(p, suppress=True)
        return p

    p = add("analyze", "closed forms for one parameter point")
    _hash_args(p)
    p.add_argument("--m", type=count, default=2, help="pool miners for the state counts")
    p.set_defaults(func=cmd_analyze)

    p = add("simulate", "Monte Carlo experiments")
    p.add_argument("experiment", choices=("honest", "steady", "lifetime"))
    p.add_argument("--protocol", choices=[x.value for x in Protocol], default="rpplns")
    p.add_argument("--queue-length", type=count, default=None)
    _hash_args(p, alpha=0.2, beta=0.5, D=25.0, N=50)
    p.add_argument("--turns", type=count, default=10 ** 6)
    p.add_argument("--trials", type=count, default=1)
    p.add_argument("--burn-in", type=count, default=None, help="default 20 N")
    p.set_defaults(func=cmd_simulate)

    p = add("solve", "value iteration and incentive checks")
    _hash_args(p)
    _dp_args(p)
    p.add_argument("--tol", type=float, default=1e-3, help="convergence tolerance for the potential")
    p.add_argument("--dump-table", action="store_true", help="also write value_table.json")
    p.set_defaults(func=cmd_solve)

    p = add("sweep", "best-action classification over the simplex")
    p.add_argument("--N", type=count, required=True)
    p.add_argument("--D", type=float, required=True)
    _dp_args(p)
    p.add_argument("--F", type=float, nargs="+", default=[0.5])
    p.add_argument("--grid-step", type=float, default=0.05)
    p.set_defaults(func=cmd_sweep)

    p = add("threshold", "hoarding threshold in alpha")
    p.add_argument("--protocol", choices=("pplns", "rpplns"), required=True)
    p.add_argument("--N", type=count, required=True)
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--corrected", action="store_true", help="rpplns: beta-free consistent form")
    p.set_defaults(func=cmd_threshold)

    p = add("hop", "pool-hopping lifetime reward")
    for i, (N, D, beta, A) in enumerate(((40, 20.0, 0.3, 10), (60, 30.0, 0.2, 6)), start=1):
        p.add_argument(f"--N{i}", type=count, default=N)
        p.add_argument(f"--D{i}", type=float, default=D)
        p.add_argument(f"--beta{i}", type=float, default=beta)
        p.add_argument(f"--A{i}", type=count, default=A, help=f"residual shares in pool {i}")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--T", type=float, default=200.0)
    p.add_argument("--trials", type=count, default=2000)
    p.add_argument("--schedule", action="append", default=[],
                   help="file of 'start end' lines (time in pool 2); repeatable")
    p.set_defaults(func=cmd_hop)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        files, code = args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    params = {k: _jsonable(v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "params": params,
        "seed": args.seed,
        "version": __version__,
        "argv": argv,
        "outputs": [os.path.basename(f) for f in files],
    }
    with open(os.path.join(args.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return code
