"""Share and block event streams.

Two processes are provided. The discrete turn process emits one share per
turn, owned by m1/m2/m0 with probability alpha/beta/gamma, each a block with
probability 1/D. The continuous process drives one or more pools with Poisson
share arrivals, time normalised to one ecosystem block per unit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np

SUM_TOL = 1e-12

STRATEGIC = 1
HONEST_POOL = 2
OUTSIDE = 0


@dataclass(frozen=True)
class Population:
    """Hash fractions of m1 (alpha), m2 (beta), m0 (gamma) and difficulty D."""

    alpha: float
    beta: float
    gamma: float
    D: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"alpha + beta + gamma must equal 1, got {total!r}")
        if self.D < 1:
            raise ValueError(f"difficulty D must be >= 1, got {self.D}")

    @classmethod
    def from_alpha_beta(cls, alpha: float, beta: float, D: float) -> "Population":
        gamma = 1.0 - alpha - beta
        if -SUM_TOL < gamma < 0:
            gamma = 0.0
        return cls(alpha, beta, gamma, D)


class TurnEvent(NamedTuple):
    owner: int
    is_block: bool


def turn_from_uniforms(pop: Population, u_owner: float, u_block: float) -> TurnEvent:
    if u_owner < pop.alpha:
        owner = STRATEGIC
    elif u_owner < pop.alpha + pop.beta:
        owner = HONEST_POOL
    else:
        owner = OUTSIDE
    return TurnEvent(owner, u_block < 1.0 / pop.D)


def sample_turn(pop: Population, rng: np.random.Generator) -> TurnEvent:
    u_owner, u_block = rng.random(2)
    return turn_from_uniforms(pop, u_owner, u_block)


def sample_turns(pop: Population, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised ``sample_turn``: returns ``(owners, is_block)`` arrays."""
    u = rng.random((n, 2))
    owners = np.where(u[:, 0] < pop.alpha, STRATEGIC,
                      np.where(u[:, 0] < pop.alpha + pop.beta, HONEST_POOL, OUTSIDE))
    return owners.astype(np.int8), u[:, 1] < 1.0 / pop.D


# --- continuous time --------------------------------------------------------


@dataclass(frozen=True)
class PoolSpec:
    N: int
    D: float
    beta: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"pool capacity N must be >= 1, got {self.N}")
        if self.D < 1:
            raise ValueError(f"difficulty D must be >= 1, got {self.D}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True)
class HoppingSchedule:
    """Closed intervals of [0, T] during which the hopper mines in pool 2.

    Outside the intervals it mines in pool 1.
    """

    T: float
    intervals: Tuple[Tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        ivs = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in ivs:
            if not 0 <= a <= b <= self.T:
                raise ValueError(f"interval [{a}, {b}] is not inside [0, {self.T}]")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 <= b0:
                raise ValueError(f"intervals overlap at {a1}")
        object.__setattr__(self, "intervals", ivs)

    def pieces(self) -> List[Tuple[float, float, int]]:
        """Split [0, T] into ``(start, end, pool_index)`` with pool index 0 or 1."""
        out = []
        t = 0.0
        for a, b in self.intervals:
            if a > t:
                out.append((t, a, 0))
            if b > a:
                out.append((a, b, 1))
            t = b
        if t < self.T:
            out.append((t, self.T, 0))
        return out

    def time_in_pool(self, index: int) -> float:
        return sum(b - a for a, b, i in self.pieces() if i == index)

    @classmethod
    def parse(cls, text: str, T: float) -> "HoppingSchedule":
        """Parse ``start end`` lines; ``#`` starts a comment."""
        intervals = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ScheduleParseError(lineno, f"expected 'start end', got {raw.strip()!r}")
            try:
                a, b = float(parts[0]), float(parts[1])
            except ValueError:
                raise ScheduleParseError(lineno, f"non-numeric bound in {raw.strip()!r}") from None
            if b < a:
                raise ScheduleParseError(lineno, f"end {b} precedes start {a}")
            intervals.append((a, b))
        try:
            return cls(T, tuple(intervals))
        except ValueError as exc:
            raise ScheduleParseError(0, str(exc)) from None


class ScheduleParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class Arrival(NamedTuple):
    time: float
    pool: int
    owner: str  # "hopper" or "honest"
    is_block: bool


def _exp_times(rate: float, start: float, end: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times of a homogeneous Poisson process on [start, end)."""
    if rate <= 0 or end <= start:
        return np.empty(0)
    expected = rate * (end - start)
    batch = int(expected + 6 * math.sqrt(expected) + 16)
    chunks = []
    t = start
    while True:
        gaps = rng.exponential(1.0 / rate, batch)
        times = t + np.cumsum(gaps)
        inside = times[times < end]
        chunks.append(inside)
        if len(inside) < batch:
            break
        t = times[-1]
    return np.concatenate(chunks)


def pool_arrivals(pool: PoolSpec, index: int, hopper_alpha: float, schedule: HoppingSchedule,
                  rng: np.random.Generator):
    """Arrays ``(times, hopper_owned, is_block)`` for one pool over [0, T]."""
    times, hopper, block = [], [], []
    for start, end, where in schedule.pieces():
        hopper_here = hopper_alpha if where == index else 0.0
        rate = (pool.beta + hopper_here) * pool.D
        t = _exp_times(rate, start, end, rng)
        times.append(t)
        p_hopper = hopper_here / (pool.beta + hopper_here) if rate > 0 else 0.0
        hopper.append(rng.random(len(t)) < p_hopper)
        block.append(rng.random(len(t)) < 1.0 / pool.D)
    return np.concatenate(times), np.concatenate(hopper), np.concatenate(block)


def sample_arrival_stream(pools: Sequence[PoolSpec], hopper_alpha: float, schedule: HoppingSchedule,
                          rng: np.random.Generator) -> List[Arrival]:
    """Chronological share arrivals across pools during [0, T].

    Pool ``i`` sees shares at rate ``(hash mining there) * D_i``; each share is
    a block with probability ``1 / D_i``. The hopper mines pool 0 outside the
    schedule's intervals and pool 1 inside them.
    """
    if len(pools) != 2:
        raise ValueError("hopping streams are defined for exactly two pools")
    if hopper_alpha < 0:
        raise ValueError("hopper_alpha must be non-negative")
    parts = [pool_arrivals(p, i, hopper_alpha, schedule, rng) for i, p in enumerate(pools)]
    times = np.concatenate([p[0] for p in parts])
    pool_idx = np.concatenate([np.full(len(p[0]), i) for i, p in enumerate(parts)])
    hopper = np.concatenate([p[1] for p in parts])
    block = np.concatenate([p[2] for p in parts])
    order = np.argsort(times, kind="stable")
    return [
        Arrival(float(times[j]), int(pool_idx[j]), "hopper" if hopper[j] else "honest", bool(block[j]))
        for j in order
    ]


def write_stream_csv(stream: Iterable[Arrival], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "pool", "owner", "is_block"])
        for a in stream:
            w.writerow([repr(a.time), a.pool, a.owner, int(a.is_block)])
