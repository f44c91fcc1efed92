"""Monte Carlo and exact-enumeration engines.

The turn-process simulations run a compiled kernel (see ``_kernels``) over
blocks of uniforms drawn from a per-trial ``numpy`` generator. Trial ``i``
of a run with master seed ``s`` always uses ``SeedSequence(s, spawn_key=(i,))``,
and per-trial moments are merged in trial order, so results do not depend on
the number of worker processes.

:func:`reference_trace` replays the same uniforms through the immutable
state machines of :mod:`rpplns.protocol`; tests use it to pin the kernel.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels as K
from .analytics import steady_state
from .mining import HoppingSchedule, PoolSpec, Population, pool_arrivals, turn_from_uniforms
from .protocol import (
    BagState,
    Message,
    Protocol,
    QueueBagState,
    QueueState,
    payout,
    protocol_of,
    transition_distribution,
    transition_from_uniform,
)

CHUNK_ROWS = 1 << 18
DRAIN_ROWS = 1 << 12


# --- configuration and results ----------------------------------------------


@dataclass(frozen=True)
class TrialConfig:
    """One honest-mining experiment.

    ``queue_length`` is only used by the queue-bag protocol. ``burn_in``
    defaults to ``20 * N`` turns.
    """

    protocol: Protocol
    population: Population
    N: int
    turns: int
    trials: int = 1
    seed: int = 0
    burn_in: Optional[int] = None
    queue_length: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", 20 * self.N)
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.turns <= self.burn_in:
            raise ValueError(f"turns ({self.turns}) must exceed burn_in ({self.burn_in})")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.protocol is Protocol.QUEUEBAG:
            if self.queue_length is None or not 1 <= self.queue_length <= self.N:
                raise ValueError(f"queue-bag needs 1 <= queue_length <= N, got {self.queue_length}")

    @property
    def window(self) -> int:
        """Recorded turns per trial."""
        return self.turns - self.burn_in

    @property
    def queue_capacity(self) -> int:
        if self.protocol is Protocol.PPLNS:
            return self.N
        if self.protocol is Protocol.RPPLNS:
            return 0
        return self.queue_length

    def echo(self) -> dict:
        pop = self.population
        return {
            "protocol": self.protocol.value, "alpha": pop.alpha, "beta": pop.beta,
            "gamma": pop.gamma, "D": pop.D, "N": self.N, "turns": self.turns,
            "trials": self.trials, "seed": self.seed, "burn_in": self.burn_in,
            "queue_length": self.queue_length,
        }


@dataclass(frozen=True)
class RewardStats:
    """Sample moments of a per-observation quantity.

    ``stderr`` is the i.i.d. formula ``sqrt(variance / n)``. ``batch_stderr``
    uses the spread of per-trial means and is the honest figure for
    autocorrelated series; it is ``nan`` with a single trial.
    """

    mean: float
    variance: float
    stderr: float
    n: int
    trials: int
    batch_stderr: float = math.nan

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if int(self.counts.sum()) != self.total:
            raise ValueError("histogram counts must sum to total")

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total if self.total else np.zeros(len(self.counts))


@dataclass
class TrialResult:
    acc: np.ndarray
    hist: np.ndarray
    lifetimes: Optional[np.ndarray] = None
    trace_reward: Optional[np.ndarray] = None
    trace_held: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SimulationResult:
    config: TrialConfig
    reward: RewardStats
    share_revenue: RewardStats
    lifetime: RewardStats
    occupancy: RewardStats
    histogram: Histogram
    budget_deviation: float
    lifetimes: Optional[np.ndarray] = None


def trial_seed(master: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(index,))


def combine_moments(parts: Sequence[Tuple[float, float, float]]) -> Tuple[float, float, float]:
    """Merge ``(n, sum, sumsq)`` triples into ``(n, mean, M2)`` pairwise, in order."""
    n_tot, mean_tot, m2_tot = 0.0, 0.0, 0.0
    for n, s, ss in parts:
        if n == 0:
            continue
        mean = s / n
        m2 = max(ss - s * mean, 0.0)
        delta = mean - mean_tot
        n_new = n_tot + n
        mean_tot += delta * n / n_new
        m2_tot += m2 + delta * delta * n_tot * n / n_new
        n_tot = n_new
    return n_tot, mean_tot, m2_tot


def _stats(parts: Sequence[Tuple[float, float, float]]) -> RewardStats:
    n, mean, m2 = combine_moments(parts)
    if n == 0:
        return RewardStats(math.nan, 0.0, math.nan, 0, len(parts))
    var = m2 / (n - 1) if n > 1 else 0.0
    means = [s / k for k, s, _ in parts if k > 0]
    batch = float(np.std(means, ddof=1) / math.sqrt(len(means))) if len(means) > 1 else math.nan
    return RewardStats(float(mean), float(var), math.sqrt(var / n), int(n), len(parts), batch)


# --- per-trial driver -------------------------------------------------------


def _run_trial(config: TrialConfig, index: int, keep_lifetimes: bool = False,
               trace_turns: int = 0) -> TrialResult:
    rng = np.random.default_rng(trial_seed(config.seed, index))
    pop = config.population
    Q = config.queue_capacity
    cap = config.N - Q
    qsize, bsize = max(Q, 1), max(cap, 1)
    q = (np.zeros(qsize, np.int8), np.zeros(qsize, np.int64), np.zeros(qsize), np.zeros(qsize, np.bool_))
    b = (np.zeros(bsize, np.int8), np.zeros(bsize, np.int64), np.zeros(bsize), np.zeros(bsize, np.bool_))
    istate = np.zeros(K.ISTATE_SIZE, np.int64)
    fstate = np.zeros(1)
    acc = np.zeros(K.ACC_SIZE)
    hist = np.zeros(config.N + 1, np.int64)
    lifetimes = np.zeros(config.window if keep_lifetimes else 0, np.int64)
    trace_turns = min(trace_turns, config.turns)
    trace_reward = np.zeros(trace_turns)
    trace_held = np.zeros(trace_turns, np.int64)

    t = 0
    while True:
        u = rng.random((CHUNK_ROWS, 3))
        used = K.turn_chain(u, t, config.turns, config.burn_in, pop.alpha, pop.beta, 1.0 / pop.D,
                            Q, cap, *q, *b, istate, fstate, acc, hist, lifetimes,
                            trace_reward, trace_held)
        t += used
        if used < CHUNK_ROWS:
            break
    n_life = min(int(istate[K.N_LIFE]), len(lifetimes))
    return TrialResult(acc, hist, lifetimes[:n_life] if keep_lifetimes else None,
                       trace_reward if trace_turns else None, trace_held if trace_turns else None)


def _map_trials(config: TrialConfig, workers: int, keep_lifetimes: bool) -> List[TrialResult]:
    K.warm_up()
    indices = range(config.trials)
    if workers <= 1 or config.trials == 1:
        return [_run_trial(config, i, keep_lifetimes) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial, [config] * config.trials, indices,
                             [keep_lifetimes] * config.trials))


def simulate(config: TrialConfig, workers: int = 1, keep_lifetimes: bool = False) -> SimulationResult:
    """Run every trial of ``config`` and aggregate all recorded quantities.

    Shares m1 finds during the recorded window are tagged and followed until
    eviction (the run continues past ``turns`` until the last one leaves),
    which yields lifetimes ``Z`` in pool pushes and per-share revenue ``X``.
    """
    results = _map_trials(config, workers, keep_lifetimes)
    accs = [r.acc for r in results]
    pick = lambda n, s, ss: [(a[n], a[s], a[ss]) for a in accs]  # noqa: E731
    hist = np.sum([r.hist for r in results], axis=0)
    lifetimes = np.concatenate([r.lifetimes for r in results]) if keep_lifetimes else None
    return SimulationResult(
        config=config,
        reward=_stats(pick(K.R_N, K.R_SUM, K.R_SUMSQ)),
        share_revenue=_stats(pick(K.X_N, K.X_SUM, K.X_SUMSQ)),
        lifetime=_stats(pick(K.X_N, K.Z_SUM, K.Z_SUMSQ)),
        occupancy=_stats(pick(K.R_N, K.OCC_SUM, K.OCC_SUMSQ)),
        histogram=Histogram(hist, int(hist.sum())),
        budget_deviation=max(float(a[K.BUDGET_DEV]) for a in accs),
        lifetimes=lifetimes,
    )


def run_honest(config: TrialConfig, workers: int = 1) -> RewardStats:
    """Per-turn reward of m1 with every miner honest.

    The reward in a turn is m1's payout if a pool block is found that turn,
    otherwise 0. Moments are taken over all recorded turns of all trials.
    """
    return simulate(config, workers).reward


# --- steady state -----------------------------------------------------------


@dataclass(frozen=True)
class OccupancyResult:
    histogram: Histogram
    empirical_pi: np.ndarray
    analytic_pi: np.ndarray
    tv_distance: float
    mean: float
    mean_stderr: float
    expected_mean: float


def empirical_steady_state(config: TrialConfig, workers: int = 1) -> OccupancyResult:
    """Histogram of m1's bag share count, sampled once per recorded turn.

    Consecutive samples are strongly correlated, so ``mean_stderr`` is the
    between-trial standard error and needs ``trials >= 2``.
    """
    if config.protocol is not Protocol.RPPLNS:
        raise ValueError("occupancy is defined for the RPPLNS bag")
    pop = config.population
    sim = simulate(config, workers)
    emp = sim.histogram.probabilities
    pi = steady_state(pop.alpha, pop.beta, config.N).pi
    tv = 0.5 * float(np.abs(emp - pi).sum())
    occ = sim.occupancy
    return OccupancyResult(sim.histogram, emp, pi, tv, occ.mean, occ.batch_stderr,
                           config.N * pop.alpha / (pop.alpha + pop.beta))


# --- share lifetimes --------------------------------------------------------


@dataclass(frozen=True)
class LifetimeSummary:
    """Lifetimes, in pool pushes, of m1's shares from insertion to eviction."""

    count: int
    mean: float
    mean_stderr: float
    second_moment: float
    second_moment_stderr: float
    survival_rate: float
    ks_distance: float
    expected_mean: float
    expected_second_moment: float


def share_lifetime(config: TrialConfig, workers: int = 1) -> LifetimeSummary:
    """Lifetime distribution of tagged shares in a full RPPLNS bag.

    ``survival_rate`` is the fraction of pushes a tagged share survived;
    ``ks_distance`` is the sup distance between the empirical CDF and that
    of ``1 + Geometric`` with per-push eviction probability ``1 / N``.
    """
    if config.protocol is not Protocol.RPPLNS:
        raise ValueError("share lifetimes are defined for the RPPLNS bag")
    if config.burn_in < config.N:
        raise ValueError("burn_in must be at least N so the bag is full")
    N = config.N
    z = simulate(config, workers, keep_lifetimes=True).lifetimes.astype(np.float64)
    if len(z) < 2:
        raise ValueError("too few tagged shares; increase turns or alpha")
    z2 = z * z
    counts = np.bincount(z.astype(np.int64))
    ecdf = np.cumsum(counts) / len(z)
    grid = np.arange(len(counts))
    cdf = np.where(grid >= 1, 1.0 - ((N - 1) / N) ** grid, 0.0)
    return LifetimeSummary(
        count=len(z),
        mean=float(z.mean()),
        mean_stderr=float(z.std(ddof=1) / math.sqrt(len(z))),
        second_moment=float(z2.mean()),
        second_moment_stderr=float(z2.std(ddof=1) / math.sqrt(len(z))),
        survival_rate=float((z.sum() - len(z)) / z.sum()),
        ks_distance=float(np.abs(ecdf - cdf).max()),
        expected_mean=float(N),
        expected_second_moment=float(2 * N * N - N),
    )


# --- pure-Python reference engine ------------------------------------------


def initial_state(config: TrialConfig):
    if config.protocol is Protocol.PPLNS:
        return QueueState.empty(config.N)
    if config.protocol is Protocol.RPPLNS:
        return BagState.empty(2, config.N)
    return QueueBagState.empty(2, config.queue_length, config.N)


@dataclass
class ReferenceTrace:
    rewards: List[Fraction] = field(default_factory=list)
    held: List[int] = field(default_factory=list)
    payout_totals: List[Fraction] = field(default_factory=list)
    final_state: object = None


def reference_trace(config: TrialConfig, index: int = 0, turns: Optional[int] = None) -> ReferenceTrace:
    """Replay trial ``index`` turn by turn through the protocol state machines.

    Uses the same uniform stream as the kernel, so ``rewards`` and ``held``
    reproduce the kernel's per-turn values. Every payout's total is recorded
    for budget-balance checks.
    """
    turns = config.turns if turns is None else turns
    rng = np.random.default_rng(trial_seed(config.seed, index))
    out = ReferenceTrace()
    state = initial_state(config)
    done = 0
    while done < turns:
        u = rng.random((CHUNK_ROWS, 3))
        for row in u[: turns - done]:
            ev = turn_from_uniforms(config.population, row[0], row[1])
            reward = Fraction(0)
            if ev.owner != 0:
                msg = Message.block(ev.owner) if ev.is_block else Message.share(ev.owner)
                state = transition_from_uniform(state, msg, row[2])
                if ev.is_block:
                    pay = payout(state)
                    out.payout_totals.append(pay.total)
                    reward = pay[1] if len(pay) > 1 else Fraction(0)
            out.rewards.append(reward)
            out.held.append(state.count(1))
        done += len(u)
    out.final_state = state
    return out


# --- hopping ----------------------------------------------------------------


@dataclass(frozen=True)
class HoppingResult:
    estimate: float
    stderr: float
    ci_low: float
    ci_high: float
    analytic: float
    trials: int


def _pool_lifetime_reward(pool: PoolSpec, index: int, residual: int, hopper_alpha: float,
                          schedule: HoppingSchedule, rng: np.random.Generator) -> float:
    times, hopper, block = pool_arrivals(pool, index, hopper_alpha, schedule, rng)
    u = rng.random(len(times))
    reward, ell = K.bag_events(pool.N, residual, hopper, block, u)
    inv_D = 1.0 / pool.D
    while ell > 0:
        r, ell, _ = K.bag_drain(pool.N, inv_D, ell, rng.random((DRAIN_ROWS, 2)))
        reward += r
    return reward


def hopping_experiment(pools: Sequence[PoolSpec], hopper_alpha: float, schedule: HoppingSchedule,
                       residuals: Tuple[int, int], trials: int, seed: int, z: float = 3.0) -> HoppingResult:
    """Lifetime reward of a hopper switching between two RPPLNS pools.

    Each pool's bag starts full with ``residuals[i]`` hopper shares. Shares
    arrive as Poisson streams over ``[0, T]``; afterwards the honest miners
    keep mining until every hopper share has been evicted. The confidence
    interval is ``estimate +/- z * stderr``; ``analytic`` is
    ``A1/D1 + A2/D2 + alpha T``.
    """
    if len(pools) != 2 or len(residuals) != 2:
        raise ValueError("hopping needs exactly two pools and two residuals")
    if hopper_alpha < 0:
        raise ValueError("hopper_alpha must be non-negative")
    if trials < 2:
        raise ValueError("trials must be >= 2 for a confidence interval")
    for pool, A in zip(pools, residuals):
        if not 0 <= A <= pool.N:
            raise ValueError(f"residual {A} must lie in [0, {pool.N}]")
        if A > 0 and pool.beta == 0:
            raise ValueError("residual shares in a pool without honest miners are never evicted")
    K.warm_up()
    totals = np.empty(trials)
    for i in range(trials):
        rng = np.random.default_rng(trial_seed(seed, i))
        totals[i] = sum(_pool_lifetime_reward(p, j, A, hopper_alpha, schedule, rng)
                        for j, (p, A) in enumerate(zip(pools, residuals)))
    est = float(totals.mean())
    se = float(totals.std(ddof=1) / math.sqrt(trials))
    analytic = (residuals[0] / pools[0].D + residuals[1] / pools[1].D + hopper_alpha * schedule.T)
    return HoppingResult(est, se, est - z * se, est + z * se, analytic, trials)


# --- two-turn oracle --------------------------------------------------------

H, S = "H", "S"

# Pushes following the private block, per event: m1 block, m1 share,
# m2 block, m2 share, m0 block, m0 share.
_EVENT_MSGS = (
    (Message.block(1),), (Message.share(1),), (Message.block(2),),
    (Message.share(2),), (), (),
)
# Under S the held block is released after an m1 or m2 share, lost to any
# block by someone else, and replaced by m1's own new block.
_S_PLAN = (
    (Message.block(1),),
    (Message.share(1), Message.block(1)),
    (Message.block(2),),
    (Message.share(2), Message.block(1)),
    (),
    (Message.block(1),),
)


def _residual(state, N, D):
    """Expected future pay of m1's shares in ``state``.

    A PPLNS share at 1-based position ``j`` stays for ``N - j`` further pushes,
    each a block with probability ``1/D`` paying ``1/N``. A bag share survives
    each push with probability ``(N-1)/N``, so its value is ``(N-1)/(N D)``.
    This is a truncation after two turns, not an infinite-horizon value.
    """
    unit = Fraction(1, N) / D  # stays rational when D is an int or Fraction
    if isinstance(state, QueueState):
        return sum((N - 1 - i) * unit for i, s in enumerate(state.slots) if s == 1)
    return state.count(1) * (N - 1) * unit


def _expected(state, msgs, N, D):
    if not msgs:
        return _residual(state, N, D)
    msg, rest = msgs[0], msgs[1:]
    total = 0
    for nxt, p in transition_distribution(state, msg):
        gain = payout(nxt)[1] if msg.kind.value == "block" and len(payout(nxt)) > 1 else 0
        total += p * (gain + _expected(nxt, rest, N, D))
    return total


def _check_start(protocol: Protocol, start):
    if protocol_of(start) is not protocol:
        raise ValueError(f"start state is not a {protocol.value} state")
    if protocol is Protocol.QUEUEBAG:
        raise ValueError("the two-turn oracle covers PPLNS and RPPLNS")
    if protocol is Protocol.PPLNS:
        if start.filled != start.capacity or any(s not in (1, 2) for s in start.slots):
            raise ValueError("PPLNS start must be a full queue of m1/m2 shares")
        return start.capacity
    if not start.full or any(c for j, c in enumerate(start.counts) if j not in (1, 2)):
        raise ValueError("RPPLNS start must be a full bag of m1/m2 shares")
    return start.capacity


def two_turn_oracle(protocol, start, strategy: str, population: Population):
    """Exact expected revenue of m1 over the block turn and the turn after.

    m1 holds a freshly found block. Under ``H`` it publishes at once; under
    ``S`` it holds the block for one turn. Every event of the next turn and,
    for RPPLNS, every eviction outcome is enumerated; shares left at the end
    are valued by :func:`_residual`. Pass ``Fraction`` hash powers for an
    exact rational result.
    """
    protocol = Protocol(protocol)
    if strategy not in (H, S):
        raise ValueError(f"strategy must be 'H' or 'S', got {strategy!r}")
    N = _check_start(protocol, start)
    pop = population
    D = pop.D
    probs = (pop.alpha / D, pop.alpha * (D - 1) / D, pop.beta / D, pop.beta * (D - 1) / D,
             pop.gamma / D, pop.gamma * (D - 1) / D)
    if strategy == H:
        plans = [(Message.block(1),) + m for m in _EVENT_MSGS]
    else:
        plans = list(_S_PLAN)
    return sum(p * _expected(start, plan, N, D) for p, plan in zip(probs, plans))


def two_turn_components(protocol, start, population: Population) -> Tuple[tuple, tuple]:
    """Per-event oracle revenues ``(H_1..H_6, S_1..S_6)``."""
    protocol = Protocol(protocol)
    N = _check_start(protocol, start)
    D = population.D
    h = tuple(_expected(start, (Message.block(1),) + m, N, D) for m in _EVENT_MSGS)
    s = tuple(_expected(start, plan, N, D) for plan in _S_PLAN)
    return h, s


# --- output records ---------------------------------------------------------

STATS_COLUMNS = ("quantity", "mean", "variance", "stderr", "batch_stderr", "n", "trials", "reference")


def stats_records(config: TrialConfig, rows) -> List[dict]:
    """``stats.csv`` rows: the config echo followed by ``STATS_COLUMNS``.

    ``rows`` holds ``(name, RewardStats, reference)`` triples; ``reference``
    is the closed-form value to compare against, or ``nan``.
    """
    echo = config.echo()
    out = []
    for name, st, ref in rows:
        out.append({**echo, "quantity": name, "mean": st.mean, "variance": st.variance,
                    "stderr": st.stderr, "batch_stderr": st.batch_stderr, "n": st.n,
                    "trials": st.trials, "reference": ref})
    return out


def occupancy_records(result: OccupancyResult) -> List[dict]:
    return [{"k": k, "empirical_pi": float(e), "analytic_pi": float(a)}
            for k, (e, a) in enumerate(zip(result.empirical_pi, result.analytic_pi))]


def hopping_records(rows: Sequence[Tuple[str, HoppingResult]]) -> List[dict]:
    return [{"schedule_id": sid, "estimate": r.estimate, "stderr": r.stderr, "ci_low": r.ci_low,
             "ci_high": r.ci_high, "analytic": r.analytic, "trials": r.trials} for sid, r in rows]


def write_records(path, records: Sequence[dict], fmt: str = "csv") -> str:
    """Write ``records`` to ``path`` + ``.csv`` or ``.json``; returns the file name.

    Floats are written with ``repr`` so they round-trip exactly.
    """
    path = f"{path}.{fmt}"
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(list(records), fh, indent=1)
        return path
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if records:
            w.writerow(list(records[0]))
        for rec in records:
            w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in rec.values()])
    return path
