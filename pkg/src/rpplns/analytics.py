"""Closed-form rewards, variances, steady state, state counts and hoarding
thresholds for PPLNS and RPPLNS.

Every function is pure arithmetic on its arguments, so passing
:class:`fractions.Fraction` values yields exact rational results. Some of the
literal closed forms disagree with exact enumeration or simulation; those
functions take ``literal`` (default ``True``) and ``literal=False`` selects the
form that agrees with the independent check.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple

import numpy as np

SUM_TOL = 1e-12


class Provenance(enum.Enum):
    CLOSED_FORM = "closed_form"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class StatSummary:
    mean: float
    variance: float
    provenance: Provenance = Provenance.CLOSED_FORM

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


def _check_alpha(alpha):
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def _check_D(D, minimum=1):
    if D < minimum:
        raise ValueError(f"D must be >= {minimum}, got {D}")


def _check_N(N, minimum=1):
    if N < minimum or int(N) != N:
        raise ValueError(f"N must be an integer >= {minimum}, got {N}")


def _check_population(alpha, beta, gamma):
    for name, v in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if v < -SUM_TOL:
            raise ValueError(f"{name} must be non-negative, got {v}")
    total = alpha + beta + gamma
    if abs(total - 1) > SUM_TOL:
        raise ValueError(f"alpha + beta + gamma must equal 1, got {total}")


# --- fairness and variance --------------------------------------------------


def honest_mean_reward(alpha, D):
    """Expected per-turn block reward of an honest miner: ``alpha / D``."""
    _check_alpha(alpha)
    _check_D(D)
    return alpha / D


def rpplns_variance(alpha, N, D, literal: bool = True):
    """Variance of the lifetime reward attributed to one turn, RPPLNS.

    The literal form is ``(alpha - alpha^2)/D^2 + alpha/(N D)``. It drops a
    factor of two on the cross term of ``E[(sum Y_i)^2]`` and adds ``E[Z]``
    where it should subtract it; the exact value (``literal=False``) is
    ``alpha (1/(N D) + 2 (N-1)/(N D^2)) - alpha^2/D^2``.
    """
    _check_alpha(alpha)
    _check_N(N)
    _check_D(D)
    if literal:
        return (alpha - alpha * alpha) / (D * D) + alpha / (N * D)
    return alpha * (1 / (N * D) + 2 * (N - 1) / (N * D * D)) - alpha * alpha / (D * D)


def pplns_variance(alpha, N, D, literal: bool = True):
    """PPLNS counterpart of :func:`rpplns_variance` (share lifetime exactly N).

    ``literal=False`` gives ``alpha (1/(N D) + (N-1)/(N D^2)) - alpha^2/D^2``.
    """
    _check_alpha(alpha)
    _check_N(N)
    _check_D(D)
    if literal:
        return (alpha / (2 * D * D) + alpha / (N * D) - alpha * alpha / (D * D)
                - alpha / (2 * N * D * D))
    return alpha * (1 / (N * D) + (N - 1) / (N * D * D)) - alpha * alpha / (D * D)


def block_turn_variance(alpha, beta, N, D):
    """Variance of m1's per-turn reward when each payout is booked at its block turn.

    In steady state m1's count of the N held shares is Binomial(N, p) with
    ``p = alpha / (alpha + beta)`` for both PPLNS and RPPLNS, and a pool block
    arrives with probability ``(alpha + beta) / D``, so
    ``E[R^2] = (alpha + beta)/D * (p^2 + p (1-p)/N)``.
    """
    _check_alpha(alpha)
    _check_N(N)
    _check_D(D)
    pool = alpha + beta
    if pool == 0:
        return 0 * pool
    p = alpha / pool
    return pool / D * (p * p + p * (1 - p) / N) - alpha * alpha / (D * D)


def share_lifetime_moments(N) -> Tuple[int, int]:
    """``(E[Z], E[Z^2])`` for the number of payment opportunities of a share.

    ``Z - 1`` is geometric with eviction probability ``1/N`` per push.
    """
    _check_N(N)
    return N, 2 * N * N - N


# --- steady state -----------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    pi: np.ndarray
    expected_shares: float

    def __post_init__(self):
        if abs(self.pi.sum() - 1.0) > 1e-12:
            raise ValueError("steady state must sum to 1")


def steady_state(alpha: float, beta: float, N: int) -> SteadyState:
    """Stationary distribution of the honest miner's bag share count.

    ``pi_k = C(N, k) r^k / (1 + r)^N`` with ``r = alpha / beta``, evaluated in
    log space so large N does not underflow.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("steady state needs alpha > 0 and beta > 0 "
                         f"(got alpha={alpha}, beta={beta}); the chain is absorbing otherwise")
    _check_N(N)
    r = alpha / beta
    k = np.arange(N + 1)
    log_comb = np.array([math.lgamma(N + 1) - math.lgamma(i + 1) - math.lgamma(N - i + 1) for i in k])
    log_pi = log_comb + k * math.log(r) - N * math.log1p(r)
    pi = np.exp(log_pi)
    pi /= pi.sum()
    return SteadyState(pi, N * alpha / (alpha + beta))


def detailed_balance_residual(pi: np.ndarray, alpha: float, beta: float) -> float:
    """Max over cut-sets of ``|pi_i a (N-i)/N - pi_{i+1} b (i+1)/N|``."""
    N = len(pi) - 1
    i = np.arange(N)
    up = pi[:-1] * alpha * (N - i) / N
    down = pi[1:] * beta * (i + 1) / N
    return float(np.max(np.abs(up - down))) if N > 0 else 0.0


# --- state counts -----------------------------------------------------------


@dataclass(frozen=True)
class StateCounts:
    pplns_count: int
    rpplns_bound: Fraction
    rpplns_exact: int


def state_counts(m: int, N: int) -> StateCounts:
    """PPLNS window count ``m^N``, the polynomial RPPLNS bound, and the exact
    number of length-``m`` count vectors with sum at most ``N``.

    Integers are exact at any size.
    """
    if m < 1 or N < 1:
        raise ValueError(f"need m >= 1 and N >= 1, got m={m}, N={N}")
    bound = Fraction(N * (N + m - 2) ** (m - 1), math.factorial(m - 1))
    return StateCounts(m ** N, bound, math.comb(N + m, m))


# --- pool hopping -----------------------------------------------------------


def residual_value(A, D):
    """Lifetime reward of ``A`` shares already in a bag: ``A / D``."""
    if A < 0:
        raise ValueError(f"A must be non-negative, got {A}")
    _check_D(D)
    return A / D


def residual_value_push_pay(A, N, D):
    """Residual value when every new push may evict before it pays.

    A share already in the bag must survive the next push to be paid, so each
    one is worth ``(N - 1) / (N D)`` rather than ``1 / D``.
    """
    if A < 0:
        raise ValueError(f"A must be non-negative, got {A}")
    _check_N(N)
    _check_D(D)
    return A * (N - 1) / (N * D)


def hopping_lifetime_reward(A1, D1, A2, D2, alpha, T):
    """Expected lifetime reward of a hopper: independent of the schedule."""
    return residual_value(A1, D1) + residual_value(A2, D2) + alpha * T


# --- two-turn hoarding: PPLNS -----------------------------------------------


@dataclass(frozen=True)
class TwoTurnRevenues:
    r_h: object
    r_s: object
    h: tuple
    s: tuple
    p: tuple

    def __post_init__(self):
        if any(x < 0 for x in self.h + self.s):
            raise ValueError("revenue components must be non-negative")

    @property
    def surplus(self) -> tuple:
        """Per-event ``S_i - H_i``."""
        return tuple(s - h for s, h in zip(self.s, self.h))

    @property
    def gain(self):
        return self.r_s - self.r_h


def event_probabilities(alpha, beta, gamma, D) -> tuple:
    """m1 block, m1 share, m2 block, m2 share, m0 block, m0 share."""
    return (alpha / D, alpha * (D - 1) / D, beta / D, beta * (D - 1) / D,
            gamma / D, gamma * (D - 1) / D)


def _weigh(h, s, p) -> TwoTurnRevenues:
    r_h = sum(hi * pi for hi, pi in zip(h, p))
    r_s = sum(si * pi for si, pi in zip(s, p))
    return TwoTurnRevenues(r_h, r_s, tuple(h), tuple(s), tuple(p))


def pplns_two_turn(alpha, beta, gamma, N, D) -> TwoTurnRevenues:
    """Honest vs. one-turn block hoarding when m1 has no queue shares."""
    _check_population(alpha, beta, gamma)
    _check_N(N, 3)
    _check_D(D)
    life1 = (N - 1) / (N * D)
    life2 = (N - 2) / (N * D)
    h = (3 / N + life2 + life1,
         1 / N + life2 + life1,
         2 / N + life2,
         1 / N + life2,
         1 / N + life1,
         1 / N + life1)
    s = (1 / N + life1,
         2 / N + life2 + life1,
         0 * life1,
         1 / N + life1,
         0 * life1,
         1 / N + life1)
    return _weigh(h, s, event_probabilities(alpha, beta, gamma, D))


def pplns_hoard_threshold(N, D):
    """Hoarding a block beats publishing it when alpha exceeds this."""
    _check_N(N)
    _check_D(D, 2)
    return (N + D - 1) / ((D - 1) * (D - 1))


# --- two-turn hoarding: RPPLNS ----------------------------------------------


def _survive(N, D):
    return (N - 1) / (N * D)


def _f(role, kind, k, N, D):
    c = _survive(N, D)
    if role == 1:
        keep, grow = k, k + 1
    else:
        keep, grow = k - 1, k
    # m1's share kicked with prob k/N; otherwise an m2 share leaves.
    if kind == "B":
        return k / N * (keep / N + keep * c) + (N - k) / N * (grow / N + grow * c)
    return k / N * (keep * c) + (N - k) / N * (grow * c)


def f_terms(role: int, kind: str, k, N, D):
    """Expected utility to m1 when miner ``role`` pushes a block (``"B"``) or
    share (``"S"``) into a full bag where m1 owns ``k`` shares.

    Surviving shares are valued at ``(N - 1) / (N D)`` each.
    """
    if role not in (1, 2):
        raise ValueError(f"role must be 1 or 2, got {role}")
    if kind not in ("B", "S"):
        raise ValueError(f"kind must be 'B' or 'S', got {kind!r}")
    _check_N(N)
    _check_D(D)
    if not 0 <= k <= N:
        raise ValueError(f"k must lie in [0, N], got {k}")
    return _f(role, kind, k, N, D)


def rpplns_two_turn(k, alpha, beta, gamma, N, D, literal: bool = True) -> TwoTurnRevenues:
    """Honest vs. one-turn block hoarding with ``k`` of m1's shares in the bag.

    With ``literal=True`` the component formulas are used unmodified.
    ``literal=False`` repairs three that disagree with enumeration when
    ``k > 0``: H3's first branch uses ``f2B(k)`` (m2 pushed the block), S3 is
    ``f2B(k)`` (m2's block still pays m1's bag shares) and S5 is ``k`` surviving
    shares rather than 0. At ``k = 0`` both variants coincide.
    """
    _check_population(alpha, beta, gamma)
    _check_N(N)
    _check_D(D)
    if not 0 <= k <= N:
        raise ValueError(f"k must lie in [0, N], got {k}")
    f = lambda role, kind, j: _f(role, kind, j, N, D)  # noqa: E731
    stay, move = k / N, (N - k) / N
    pay_k, pay_k1 = k / N, (k + 1) / N

    h3_first = f(1, "B", k) if literal else f(2, "B", k)
    h = (stay * (pay_k + f(1, "B", k)) + move * (pay_k1 + f(1, "B", k + 1)),
         stay * (pay_k + f(1, "S", k)) + move * (pay_k1 + f(1, "S", k + 1)),
         stay * (pay_k + h3_first) + move * (pay_k1 + f(2, "B", k + 1)),
         stay * (pay_k + f(2, "S", k)) + move * (pay_k1 + f(2, "S", k + 1)),
         f(1, "B", k),
         f(1, "B", k))
    zero = 0 * stay
    s = (f(1, "B", k),
         stay * f(1, "B", k) + move * f(1, "B", k + 1),
         zero if literal else f(2, "B", k),
         stay * f(1, "B", k - 1) + move * f(1, "B", k),
         zero if literal else k * _survive(N, D),
         f(1, "B", k))
    return _weigh(h, s, event_probabilities(alpha, beta, gamma, D))


def closed_form_k0_surplus(N, D) -> tuple:
    """Literal closed forms of the per-event surplus ``S_i - H_i`` at ``k = 0``."""
    return (-(1 / N + (N - 1) / (N * N) + (N - 1) ** 2 / (N * N * D)),
            (N - 1) / (N * N),
            -(1 / N + (N - 1) / (N * N) + (N - 1) / (N * N * D)),
            (N - 1) / (N * N * D),
            -(1 / N + (N - 1) / (N * D)),
            0 * N)


def rpplns_hoard_threshold_k0(N, D, beta, literal: bool = True):
    """alpha above which hoarding a block against an empty bag dominates.

    The literal bound ``(N D/(N-1) + N - beta (N-2)) / (D-1)^2`` follows
    from a surplus vector whose third entry carries ``(N-1)`` where the
    component formulas give ``(N-1)^2``. Solving with the consistent entry
    (``literal=False``) yields ``N (N+D-1) / ((N-1)(D-1)^2)``, independent of
    beta; the two agree at ``beta = 0``.
    """
    _check_N(N, 2)
    _check_D(D, 2)
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    if literal:
        return (N * D / (N - 1) + N - beta * (N - 2)) / ((D - 1) * (D - 1))
    return N * (N + D - 1) / ((N - 1) * (D - 1) * (D - 1))
