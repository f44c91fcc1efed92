"""Pool state machines for PPLNS, RPPLNS and the queue-bag hybrid.

States are immutable. Deterministic transitions return a new state; randomised
ones return a :class:`TransitionDistribution` with exact rational
probabilities, and ``*_sample`` helpers draw a single outcome from it.

Miner ids are small integers: ``0`` is the aggregate non-pool miner, ``1..k``
are pool miners. Blocks are handled push-then-pay: the block's share is
inserted first and the payout is computed on the post-insertion state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional, Sequence, Union

import numpy as np

EMPTY = None
"""Marker for an unused queue slot."""


class Kind(enum.Enum):
    SHARE = "share"
    BLOCK = "block"


class Protocol(enum.Enum):
    PPLNS = "pplns"
    RPPLNS = "rpplns"
    QUEUEBAG = "queuebag"


@dataclass(frozen=True)
class Message:
    """A share or block report attributed to a miner."""

    kind: Kind
    owner: int

    def __post_init__(self):
        if self.owner < 0:
            raise ValueError(f"miner id must be non-negative, got {self.owner}")
        if self.kind is Kind.SHARE and self.owner == 0:
            raise ValueError("the non-pool miner (id 0) only reports blocks")

    @classmethod
    def share(cls, owner: int) -> "Message":
        return cls(Kind.SHARE, owner)

    @classmethod
    def block(cls, owner: int) -> "Message":
        return cls(Kind.BLOCK, owner)

    @property
    def from_pool(self) -> bool:
        return self.owner != 0


@dataclass(frozen=True)
class QueueState:
    """PPLNS queue; ``slots[0]`` is the most recent share, empties trail."""

    slots: tuple

    def __post_init__(self):
        seen_empty = False
        for s in self.slots:
            if s is EMPTY:
                seen_empty = True
            elif seen_empty:
                raise ValueError("empty slots must form a contiguous suffix")
            elif s < 1:
                raise ValueError(f"queue slots hold pool miner ids, got {s}")

    @classmethod
    def empty(cls, n: int) -> "QueueState":
        if n < 1:
            raise ValueError("queue capacity must be at least 1")
        return cls((EMPTY,) * n)

    @classmethod
    def of(cls, owners: Sequence[Optional[int]], n: Optional[int] = None) -> "QueueState":
        owners = tuple(owners)
        n = len(owners) if n is None else n
        if len(owners) > n:
            raise ValueError("more owners than queue capacity")
        return cls(owners + (EMPTY,) * (n - len(owners)))

    @property
    def capacity(self) -> int:
        return len(self.slots)

    @property
    def filled(self) -> int:
        return sum(s is not EMPTY for s in self.slots)

    def count(self, miner: int) -> int:
        return sum(s == miner for s in self.slots)

    def __str__(self) -> str:
        return format_state(self)


@dataclass(frozen=True)
class BagState:
    """RPPLNS bag as per-miner share counts; ``counts[0]`` is always 0."""

    counts: tuple
    capacity: int

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("bag capacity must be non-negative")
        if not self.counts or self.counts[0] != 0:
            raise ValueError("counts[0] is reserved for the non-pool miner and must be 0")
        if any(c < 0 for c in self.counts):
            raise ValueError("share counts must be non-negative")
        if sum(self.counts) > self.capacity:
            raise ValueError(f"bag holds {sum(self.counts)} shares, capacity {self.capacity}")

    @classmethod
    def empty(cls, k: int, n: int) -> "BagState":
        return cls((0,) * (k + 1), n)

    @classmethod
    def of(cls, owned: dict, n: int, k: Optional[int] = None) -> "BagState":
        """Build from ``{miner: count}``; ``k`` defaults to the largest id."""
        k = max(owned, default=0) if k is None else k
        counts = [0] * (k + 1)
        for miner, c in owned.items():
            if miner < 1 or miner > k:
                raise ValueError(f"miner id {miner} outside 1..{k}")
            counts[miner] = c
        return cls(tuple(counts), n)

    @property
    def k(self) -> int:
        return len(self.counts) - 1

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def full(self) -> bool:
        return self.total >= self.capacity

    def count(self, miner: int) -> int:
        return self.counts[miner] if miner < len(self.counts) else 0

    def add(self, miner: int) -> "BagState":
        return self._shift(None, miner)

    def replace(self, out: int, into: int) -> "BagState":
        return self._shift(out, into)

    def _shift(self, out, into) -> "BagState":
        counts = list(self.counts)
        if into >= len(counts):
            counts.extend([0] * (into + 1 - len(counts)))
        if out is not None:
            counts[out] -= 1
        counts[into] += 1
        return BagState(tuple(counts), self.capacity)

    def __str__(self) -> str:
        return format_state(self)


@dataclass(frozen=True)
class QueueBagState:
    """Queue of length Q feeding a bag of capacity N - Q."""

    queue: QueueState
    bag: BagState

    def __post_init__(self):
        if self.bag.total > 0 and self.queue.filled < self.queue.capacity:
            raise ValueError("the bag only fills once the queue has been full")

    @classmethod
    def empty(cls, k: int, q: int, n: int) -> "QueueBagState":
        if not 1 <= q <= n:
            raise ValueError(f"queue length must lie in [1, N], got Q={q}, N={n}")
        return cls(QueueState.empty(q), BagState.empty(k, n - q))

    @property
    def capacity(self) -> int:
        return self.queue.capacity + self.bag.capacity

    def count(self, miner: int) -> int:
        return self.queue.count(miner) + self.bag.count(miner)

    def __str__(self) -> str:
        return format_state(self)


PoolState = Union[QueueState, BagState, QueueBagState]


@dataclass(frozen=True)
class PayoutVector:
    """Fractions of one block reward paid to each miner id (index 0 unused)."""

    amounts: tuple

    def __post_init__(self):
        if any(a < 0 for a in self.amounts):
            raise ValueError("payouts must be non-negative")

    def __getitem__(self, miner: int) -> Fraction:
        return self.amounts[miner] if miner < len(self.amounts) else Fraction(0)

    def __len__(self) -> int:
        return len(self.amounts)

    @property
    def total(self) -> Fraction:
        return sum(self.amounts, Fraction(0))

    def as_array(self) -> np.ndarray:
        return np.array([float(a) for a in self.amounts])


@dataclass(frozen=True)
class TransitionDistribution:
    """Finite distribution over successor states with exact probabilities."""

    outcomes: tuple

    def __post_init__(self):
        states = [s for s, _ in self.outcomes]
        if len(set(states)) != len(states):
            raise ValueError("outcome states must be pairwise distinct")
        if any(p <= 0 for _, p in self.outcomes):
            raise ValueError("outcome probabilities must be positive")
        if abs(float(sum(p for _, p in self.outcomes)) - 1.0) > 1e-12:
            raise ValueError("outcome probabilities must sum to 1")

    @classmethod
    def point(cls, state) -> "TransitionDistribution":
        return cls(((state, Fraction(1)),))

    @classmethod
    def merged(cls, pairs) -> "TransitionDistribution":
        acc: dict = {}
        for state, p in pairs:
            acc[state] = acc.get(state, Fraction(0)) + p
        return cls(tuple((s, p) for s, p in acc.items() if p > 0))

    def __iter__(self) -> Iterator:
        return iter(self.outcomes)

    def __len__(self) -> int:
        return len(self.outcomes)

    def probability(self, state) -> Fraction:
        for s, p in self.outcomes:
            if s == state:
                return p
        return Fraction(0)

    def expect(self, fn) -> Fraction:
        return sum((p * fn(s) for s, p in self.outcomes), Fraction(0))


# --- PPLNS ------------------------------------------------------------------


def pplns_transition(state: QueueState, msg: Message) -> QueueState:
    if not msg.from_pool:
        return state
    return QueueState((msg.owner,) + state.slots[:-1])


def pplns_payout(state: QueueState) -> PayoutVector:
    """Pay each slot owner ``count / filled``; an empty queue pays nothing."""
    owners = [s for s in state.slots if s is not EMPTY]
    size = max(owners, default=0) + 1
    if not owners:
        return PayoutVector((Fraction(0),) * size)
    amounts = [Fraction(0)] * size
    for s in owners:
        amounts[s] += Fraction(1, len(owners))
    return PayoutVector(tuple(amounts))


# --- RPPLNS -----------------------------------------------------------------


def rpplns_transition_distribution(state: BagState, msg: Message) -> TransitionDistribution:
    if not msg.from_pool:
        return TransitionDistribution.point(state)
    if not state.full:
        return TransitionDistribution.point(state.add(msg.owner))
    if state.capacity == 0:
        return TransitionDistribution.point(state)
    return TransitionDistribution.merged(
        (state.replace(j, msg.owner), Fraction(c, state.capacity))
        for j, c in enumerate(state.counts)
        if c > 0
    )


def kick_owner(counts: Sequence[int], u: float) -> int:
    """Owner of the evicted share for a uniform draw ``u`` in [0, 1).

    Shares are laid out by ascending owner id and slot ``floor(u * total)`` is
    evicted, so owner ``j`` is hit with probability ``counts[j] / total``.
    """
    total = sum(counts)
    idx = min(int(u * total), total - 1)
    for j, c in enumerate(counts):
        if idx < c:
            return j
        idx -= c
    raise AssertionError("unreachable: index past the last share")


def rpplns_transition_from_uniform(state: BagState, msg: Message, u: float) -> BagState:
    if not msg.from_pool:
        return state
    if not state.full:
        return state.add(msg.owner)
    if state.capacity == 0:
        return state
    return state.replace(kick_owner(state.counts, u), msg.owner)


def rpplns_transition_sample(state: BagState, msg: Message, rng: np.random.Generator) -> BagState:
    if msg.from_pool and state.full and state.capacity > 0:
        return rpplns_transition_from_uniform(state, msg, rng.random())
    return rpplns_transition_from_uniform(state, msg, 0.0)


def rpplns_payout(state: BagState) -> PayoutVector:
    total = state.total
    if total == 0:
        return PayoutVector((Fraction(0),) * len(state.counts))
    return PayoutVector(tuple(Fraction(c, total) for c in state.counts))


# --- queue-bag --------------------------------------------------------------


def _queuebag_push(state: QueueBagState, owner: int, u: Optional[float]):
    """Returns the list of (state, probability) for one pool share push."""
    queue = state.queue
    if queue.filled < queue.capacity:
        return [(QueueBagState(pplns_transition(queue, Message.share(owner)), state.bag), Fraction(1))]
    evicted = queue.slots[-1]
    new_queue = pplns_transition(queue, Message.share(owner))
    bag = state.bag
    if bag.capacity == 0:
        return [(QueueBagState(new_queue, bag), Fraction(1))]
    if not bag.full:
        return [(QueueBagState(new_queue, bag.add(evicted)), Fraction(1))]
    if u is not None:
        out = kick_owner(bag.counts, u)
        return [(QueueBagState(new_queue, bag.replace(out, evicted)), Fraction(1))]
    return [
        (QueueBagState(new_queue, bag.replace(j, evicted)), Fraction(c, bag.capacity))
        for j, c in enumerate(bag.counts)
        if c > 0
    ]


def queuebag_transition_distribution(state: QueueBagState, msg: Message) -> TransitionDistribution:
    if not msg.from_pool:
        return TransitionDistribution.point(state)
    return TransitionDistribution.merged(_queuebag_push(state, msg.owner, None))


def queuebag_transition_from_uniform(state: QueueBagState, msg: Message, u: float) -> QueueBagState:
    if not msg.from_pool:
        return state
    return _queuebag_push(state, msg.owner, u)[0][0]


def queuebag_payout(state: QueueBagState) -> PayoutVector:
    """Proportional over every held share, queue and bag combined."""
    owners = [s for s in state.queue.slots if s is not EMPTY]
    size = max(max(owners, default=0) + 1, len(state.bag.counts))
    total = len(owners) + state.bag.total
    if total == 0:
        return PayoutVector((Fraction(0),) * size)
    counts = [0] * size
    for s in owners:
        counts[s] += 1
    for j, c in enumerate(state.bag.counts):
        counts[j] += c
    return PayoutVector(tuple(Fraction(c, total) for c in counts))


# --- protocol-generic helpers -----------------------------------------------


def protocol_of(state: PoolState) -> Protocol:
    if isinstance(state, QueueState):
        return Protocol.PPLNS
    if isinstance(state, BagState):
        return Protocol.RPPLNS
    if isinstance(state, QueueBagState):
        return Protocol.QUEUEBAG
    raise TypeError(f"not a pool state: {type(state).__name__}")


def transition_distribution(state: PoolState, msg: Message) -> TransitionDistribution:
    protocol = protocol_of(state)
    if protocol is Protocol.PPLNS:
        return TransitionDistribution.point(pplns_transition(state, msg))
    if protocol is Protocol.RPPLNS:
        return rpplns_transition_distribution(state, msg)
    return queuebag_transition_distribution(state, msg)


def transition_from_uniform(state: PoolState, msg: Message, u: float) -> PoolState:
    protocol = protocol_of(state)
    if protocol is Protocol.PPLNS:
        return pplns_transition(state, msg)
    if protocol is Protocol.RPPLNS:
        return rpplns_transition_from_uniform(state, msg, u)
    return queuebag_transition_from_uniform(state, msg, u)


def payout(state: PoolState) -> PayoutVector:
    protocol = protocol_of(state)
    if protocol is Protocol.PPLNS:
        return pplns_payout(state)
    if protocol is Protocol.RPPLNS:
        return rpplns_payout(state)
    return queuebag_payout(state)


def apply_block_event(protocol: Protocol, state: PoolState, msg: Message, rng: np.random.Generator):
    """Push a pool miner's block, then pay on the resulting state.

    Returns ``(new_state, payout)``.
    """
    if msg.kind is not Kind.BLOCK or not msg.from_pool:
        raise ValueError("apply_block_event expects a block from a pool miner")
    if protocol_of(state) is not Protocol(protocol):
        raise ValueError(f"state is not a {Protocol(protocol).value} state")
    new_state = transition_from_uniform(state, msg, rng.random())
    return new_state, payout(new_state)


# --- canonical text form ----------------------------------------------------


def format_state(state: PoolState) -> str:
    """Queue: ``3,5,_``. Bag: ``1:2,3:1``. Queue-bag: ``queue|bag``."""
    if isinstance(state, QueueState):
        return ",".join("_" if s is EMPTY else str(s) for s in state.slots)
    if isinstance(state, BagState):
        return ",".join(f"{j}:{c}" for j, c in enumerate(state.counts) if c > 0)
    if isinstance(state, QueueBagState):
        return f"{format_state(state.queue)}|{format_state(state.bag)}"
    raise TypeError(f"not a pool state: {type(state).__name__}")


def parse_queue(text: str) -> QueueState:
    return QueueState(tuple(EMPTY if t == "_" else int(t) for t in text.split(",")))


def parse_bag(text: str, capacity: int, k: Optional[int] = None) -> BagState:
    owned = {}
    for item in filter(None, text.split(",")):
        miner, count = item.split(":")
        owned[int(miner)] = int(count)
    return BagState.of(owned, capacity, k)
