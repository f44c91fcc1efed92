"""Truncated dynamic program for a strategic RPPLNS pool miner.

m1's situation is a triple ``(l, s, b)``: shares in the bag, private hoarded
shares and a private-block flag. ``g_k(l, s, b)`` is the best expected revenue
over the next ``k`` ecosystem mining events. Waiting consumes an event and
reads layer ``k - 1``; publishing a share or a block is free and reads layer
``k`` at a state with smaller ``s + b``, so each layer is filled in
increasing ``s + b``.

Everything here is deterministic.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from numba import njit

from .mining import Population


TIE_TOL = 1e-12
"""Relative gap below which two branch values count as equal."""


def _tol(x: float) -> float:
    return TIE_TOL * max(1.0, abs(x))


class Action(enum.IntEnum):
    WAIT = 0
    PUBLISH_SHARE = 1
    PUBLISH_BLOCK = 2


class TerminalRule(enum.Enum):
    PUBLISH_AT_CAP = "publish_at_cap"
    REWARD_JUMP = "reward_jump"


class Classification(enum.Enum):
    HONEST = "Honest"
    HOARD_SHARE = "HoardShare"
    HOARD_BLOCK = "HoardBlock"


@dataclass(frozen=True)
class StrategicState:
    l: int
    s: int
    b: int

    def validate(self, N: int) -> "StrategicState":
        if not (0 <= self.l <= N and 0 <= self.s <= N and self.b in (0, 1)):
            raise ValueError(f"state {self} outside [0,{N}]^2 x {{0,1}}")
        return self

    def key(self) -> str:
        return f"{self.l},{self.s},{self.b}"


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the dynamic program.

    ``literal_paper_formulas`` switches two transitions to their literal
    forms: the share-publish branch keeps ``s`` in its second term, and the
    wait branch pays ``l/N`` on an m2 block instead of ``l (N-1) / N^2``.
    ``convergence_tol`` bounds ``|g_k/k - g_{k-10}/(k-10)|`` for :func:`potential`.
    """

    N: int
    D: float
    alpha: float
    beta: float
    gamma: float
    k_max: int
    terminal_rule: TerminalRule = TerminalRule.REWARD_JUMP
    convergence_tol: float = 1e-3
    literal_paper_formulas: bool = False

    def __post_init__(self):
        Population(self.alpha, self.beta, self.gamma, self.D)
        object.__setattr__(self, "terminal_rule", TerminalRule(self.terminal_rule))
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")

    def echo(self) -> dict:
        return {"N": self.N, "D": self.D, "alpha": self.alpha, "beta": self.beta,
                "gamma": self.gamma, "k_max": self.k_max,
                "terminal_rule": self.terminal_rule.value,
                "convergence_tol": self.convergence_tol,
                "literal_paper_formulas": self.literal_paper_formulas}


@njit(cache=True)
def _layer(g_prev, first, N, D, alpha, beta, gamma, jump, literal, g, wait, act):
    """Fill one layer ``g`` from ``g_prev`` (ignored when ``first``)."""
    pa, pb = alpha / D, alpha * (D - 1.0) / D
    pc, pd = beta / D, beta * (D - 1.0) / D
    pe, pf = gamma / D, gamma * (D - 1.0) / D
    for t in range(N + 2):
        for b in range(2):
            s = t - b
            if s < 0 or s > N:
                continue
            for l in range(N, -1, -1):
                kick = l / N
                keep = (N - l) / N
                lm = l - 1 if l > 0 else 0
                lp = l + 1 if l < N else N
                if jump and s == N:
                    v = 1.0 + g[N, 0, 0]
                    g[l, s, b] = v
                    wait[l, s, b] = v
                    act[l, s, b] = 0
                    continue
                if first:
                    w = 0.0
                else:
                    s_next = s + 1 if s < N else N
                    c_pay = l / N if literal else l * (N - 1.0) / (N * N)
                    w = (pa * g_prev[l, s, 1]
                         + pb * g_prev[l, s_next, b]
                         + pc * (kick * g_prev[lm, 0, 0] + keep * g_prev[l, 0, 0] + c_pay)
                         + pd * (kick * g_prev[lm, s, b] + keep * g_prev[l, s, b])
                         + pe * g_prev[l, 0, 0]
                         + pf * g_prev[l, s, b])
                best = w
                a = 0
                if s > 0:
                    if literal:
                        c = kick * g[l, s - 1, b] + keep * g[lp, s, b]
                    else:
                        c = kick * g[l, s - 1, b] + keep * g[lp, s - 1, b]
                    if c > best:
                        best = c
                        a = 1
                if b == 1:
                    d = kick * (kick + g[l, 0, 0]) + keep * (lp / N + g[lp, 0, 0])
                    if d > best:
                        best = d
                        a = 2
                g[l, s, b] = best
                wait[l, s, b] = w
                act[l, s, b] = a


@dataclass
class ValueTable:
    """Layer ``k`` of the program.

    ``values[l, s, b]`` is ``g_k``, ``wait_values`` the value of the wait
    branch alone and ``best_action`` the argmax (ties go to Wait, then
    PublishShare, then PublishBlock).
    """

    config: SolverConfig
    k: int
    values: np.ndarray
    wait_values: np.ndarray
    best_action: np.ndarray
    history: Optional[List[np.ndarray]] = None

    @property
    def N(self) -> int:
        return self.config.N

    def value(self, l: int, s: int, b: int) -> float:
        StrategicState(l, s, b).validate(self.N)
        return float(self.values[l, s, b])

    def action(self, l: int, s: int, b: int) -> Action:
        StrategicState(l, s, b).validate(self.N)
        return Action(int(self.best_action[l, s, b]))

    def to_json(self) -> dict:
        N = self.N
        out = {}
        for l in range(N + 1):
            for s in range(N + 1):
                for b in range(2):
                    out[f"{l},{s},{b}"] = {"value": float(self.values[l, s, b]),
                                           "action": Action(int(self.best_action[l, s, b])).name}
        return {"config": self.config.echo(), "k": self.k, "values": out}


def value_bound(k: int, s, b, N: int, rule: TerminalRule):
    """Upper bound on ``g_k(., s, b)``.

    Each mining event yields at most one block, a held block adds one more
    and, under ``reward_jump``, every completed run of ``N`` private shares
    pays 1. The strict ``g_k <= k`` fails whenever ``b = 1`` (e.g. ``g_0``
    of a held block is positive).
    """
    jumps = (k + np.asarray(s)) // N if TerminalRule(rule) is TerminalRule.REWARD_JUMP else 0
    return k + np.asarray(b) + jumps


def value_iteration(config: SolverConfig, keep_history: bool = False) -> ValueTable:
    """Compute ``g_0 .. g_{k_max}`` and return the last layer.

    ``g_0`` lets m1 publish what it holds but not wait for anything; the
    result of publishing everything is still positive when a block is held.
    With ``keep_history`` every layer's values are retained.
    """
    N = config.N
    shape = (N + 1, N + 1, 2)
    prev = np.zeros(shape)
    cur = np.zeros(shape)
    wait = np.zeros(shape)
    act = np.zeros(shape, np.int8)
    jump = config.terminal_rule is TerminalRule.REWARD_JUMP
    args = (N, float(config.D), float(config.alpha), float(config.beta), float(config.gamma),
            jump, config.literal_paper_formulas)
    history = [] if keep_history else None
    _layer(prev, True, *args, cur, wait, act)
    if keep_history:
        history.append(cur.copy())
    for _ in range(config.k_max):
        prev, cur = cur, prev
        _layer(prev, False, *args, cur, wait, act)
        if keep_history:
            history.append(cur.copy())
    return ValueTable(config, config.k_max, cur, wait, act, history)


@dataclass(frozen=True)
class Potential:
    phi: np.ndarray
    converged: bool
    max_change: float
    k: int

    def __getitem__(self, state) -> float:
        return float(self.phi[tuple(state)])


def potential(config: SolverConfig, lag: int = 10) -> Potential:
    """``g_k / k`` at ``k = k_max`` with a convergence flag.

    Converged when the largest change of ``g_k/k`` against layer ``k - lag``
    is below ``config.convergence_tol``. Needs ``k_max > lag`` to be checked
    at all; otherwise ``converged`` is False.
    """
    K = config.k_max
    table = value_iteration(config, keep_history=True)
    phi = table.values / K
    if K <= lag:
        return Potential(phi, False, math.inf, K)
    earlier = table.history[K - lag] / (K - lag)
    change = float(np.abs(phi - earlier).max())
    return Potential(phi, change < config.convergence_tol, change, K)


def _check_l(table: ValueTable, l: int):
    if not 0 <= l <= table.N - 1:
        raise ValueError(f"l must lie in [0, {table.N - 1}], got {l}")


def publish_share_value(table: ValueTable, l: int) -> float:
    N = table.N
    g = table.values
    return float((N - l) / N * g[l + 1, 0, 0] + l / N * g[l, 0, 0])


def check_share_ic(table: ValueTable, l: int, adjusted: bool = True) -> bool:
    """True if publishing a held share is at least as good as keeping it.

    The adjusted form compares ``((N-l)/N) g(l+1,0,0) + (l/N) g(l,0,0)``
    with ``g_k(l, 1, 0)``. The published share evicts one of m1's own with
    probability ``l/N``, the same correction the block check carries. With
    ``adjusted=False`` the publish side is ``g_k(l+1, 0, 0)``, which assumes
    the share always lands. That never flags share hoarding near a full
    bag, although the optimal action there is to keep the share.
    """
    _check_l(table, l)
    held = float(table.values[l, 1, 0])
    publish = publish_share_value(table, l) if adjusted else float(table.values[l + 1, 0, 0])
    return publish >= held - _tol(held)


def publish_block_value(table: ValueTable, l: int) -> float:
    N = table.N
    g = table.values
    return float((N - l) / N * ((l + 1) / N + g[l + 1, 0, 0]) + l / N * (l / N + g[l, 0, 0]))


def check_block_ic(table: ValueTable, l: int) -> bool:
    """True if publishing a held block now strictly beats holding it.

    The publish side is ``((N-l)/N)((l+1)/N + g(l+1,0,0)) + (l/N)(l/N + g(l,0,0))``.
    It is compared with the wait branch at ``(l, 0, 1)``. Comparing with
    ``g_k(l, 0, 1)`` itself would never succeed, because that maximum
    already includes the publish option. Both checks treat values within
    :data:`TIE_TOL` (relative) as equal.
    """
    _check_l(table, l)
    wait = float(table.wait_values[l, 0, 1])
    return publish_block_value(table, l) > wait + _tol(wait)


def classify(table: ValueTable, F: float) -> Classification:
    """Classification of the state with ``round(F N)`` of m1's shares in the bag.

    The index is clipped to ``N - 1`` so both checks are defined at ``F = 1``.
    """
    l = min(int(round(F * table.N)), table.N - 1)
    if not check_block_ic(table, l):
        return Classification.HOARD_BLOCK
    if not check_share_ic(table, l):
        return Classification.HOARD_SHARE
    return Classification.HONEST


# --- sweeps -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    alpha: float
    beta: float
    gamma: float
    F: float
    classification: Classification


@dataclass
class SweepResult:
    N: int
    D: float
    k_max: int
    F: float
    grid_step: float
    points: List[SweepPoint] = field(default_factory=list)
    assumption: str = ("classified state: l = round(F N) clipped to N-1; "
                       "block check at (l,0,1), share check at (l,1,0)")

    def count(self, cls: Classification) -> int:
        return sum(p.classification is cls for p in self.points)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "gamma", "F", "classification"])
            for p in self.points:
                w.writerow([repr(p.alpha), repr(p.beta), repr(p.gamma), repr(p.F), p.classification.value])


def simplex_grid(grid_step: float):
    """``(alpha, beta, gamma)`` with alpha > 0 on an even grid of the simplex."""
    n = round(1.0 / grid_step)
    if n < 1 or abs(n * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step {grid_step} does not divide 1 evenly")
    pts = []
    for i in range(1, n + 1):
        for j in range(0, n - i + 1):
            pts.append((i / n, j / n, (n - i - j) / n))
    return pts


def _classify_point(args):
    N, D, k_max, Fs, (alpha, beta, gamma), rule, literal = args
    try:
        cfg = SolverConfig(N, D, alpha, beta, gamma, k_max, rule, literal_paper_formulas=literal)
    except ValueError:
        return None
    table = value_iteration(cfg)
    return [classify(table, F) for F in Fs]


def sweep_many(N: int, D: float, k_max: int, Fs: Sequence[float], grid_step: float,
               terminal_rule=TerminalRule.REWARD_JUMP, literal_paper_formulas: bool = False,
               workers: int = 1) -> List[SweepResult]:
    """One sweep per ``F``, solving the program once per grid point."""
    for F in Fs:
        if not 0 <= F <= 1:
            raise ValueError(f"F must lie in [0, 1], got {F}")
    grid = simplex_grid(grid_step)
    jobs = [(N, D, k_max, tuple(Fs), p, TerminalRule(terminal_rule), literal_paper_formulas) for p in grid]
    if workers > 1:
        _warm_up()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            labels = list(pool.map(_classify_point, jobs, chunksize=8))
    else:
        labels = [_classify_point(j) for j in jobs]
    results = [SweepResult(N, D, k_max, F, grid_step) for F in Fs]
    for (alpha, beta, gamma), lab in zip(grid, labels):
        if lab is None:
            continue
        for res, F, c in zip(results, Fs, lab):
            res.points.append(SweepPoint(alpha, beta, gamma, F, c))
    return results


def simplex_sweep(N: int, D: float, k_max: int, F: float, grid_step: float, **kwargs) -> SweepResult:
    """Best-action classification over the ``(alpha, beta)`` simplex at share fraction ``F``."""
    return sweep_many(N, D, k_max, [F], grid_step, **kwargs)[0]


def block_hoarding_boundary(N: int, D: float, k_max: int, beta: float, l: int = 0,
                            tol: float = 1e-4, alpha_max: float = 0.5, scan_step: float = 0.005,
                            **kwargs) -> float:
    """Smallest alpha at which holding a block beats publishing it at ``l``.

    Alpha is scanned upward on ``(0, min(alpha_max, 1 - beta)]`` to the first
    value where the block check fails, then refined by bisection within that
    cell. The cap keeps the scan away from alpha near 1, where ``reward_jump``
    makes riskless share hoarding pay. Returns ``nan`` if the check never fails.
    """

    def hoards(alpha):
        gamma = max(1.0 - alpha - beta, 0.0)
        table = value_iteration(SolverConfig(N, D, alpha, beta, gamma, k_max, **kwargs))
        return not check_block_ic(table, l)

    top = min(alpha_max, 1.0 - beta)
    lo, hi = 0.0, None
    a = scan_step
    while a <= top + 1e-12:
        if hoards(a):
            hi = a
            break
        lo = a
        a += scan_step
    if hi is None:
        return math.nan
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if hoards(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _warm_up():
    value_iteration(SolverConfig(2, 2.0, 0.5, 0.5, 0.0, 1))


def dump_table_json(table: ValueTable, path) -> None:
    with open(path, "w") as fh:
        json.dump(table.to_json(), fh)


def table_summary(table: ValueTable) -> Dict[str, object]:
    return {
        "k": table.k,
        "g_000": float(table.values[0, 0, 0]),
        "phi_000": float(table.values[0, 0, 0] / table.k) if table.k else math.nan,
        "share_ic_all": all(check_share_ic(table, l) for l in range(table.N)),
        "block_ic_all": all(check_block_ic(table, l) for l in range(table.N)),
    }
