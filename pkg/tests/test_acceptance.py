"""Acceptance suite: ten criteria, each printed as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
A criterion fails when any of its sub-checks fails; the detail string
lists every sub-check so a failure shows exactly which part broke.
"""

import math
import sys
from fractions import Fraction

import numpy as np
import pytest

from rpplns import analytics as an
from rpplns import simulator as sim
from rpplns import solver as sol
from rpplns.mining import HoppingSchedule, PoolSpec, Population
from rpplns.protocol import BagState, Message, QueueState, rpplns_transition_distribution

F = Fraction
SEED = 2026
POP = Population.from_alpha_beta(0.2, 0.5, 25)
N50 = 50
TURNS = 10 ** 7


def _checks(items):
    """``items`` is a list of (name, ok, text); returns (all ok, joined detail)."""
    ok = all(c for _, c, _ in items)
    return ok, "; ".join(f"[{'ok' if c else 'FAIL'}] {n}: {t}" for n, c, t in items)


def _config(protocol, pop=POP, N=N50, recorded=TURNS, **kw):
    burn = kw.pop("burn_in", 20 * N)
    return sim.TrialConfig(protocol, pop, N, recorded + burn, burn_in=burn, seed=SEED, **kw)


# --- 1. fairness ------------------------------------------------------------


def criterion_1():
    st = sim.run_honest(_config("rpplns"))
    z = (st.mean - 0.008) / st.stderr
    return _checks([("mean within 3 stderr of 0.008", abs(z) < 3,
                     f"mean={st.mean:.6g} stderr={st.stderr:.3g} z={z:+.2f} n={st.n}")])


# --- 2. variance ------------------------------------------------------------


def criterion_2():
    a, D = POP.alpha, POP.D
    items = []
    for proto, fn in (("rpplns", an.rpplns_variance), ("pplns", an.pplns_variance)):
        res = sim.simulate(_config(proto))
        v = res.reward.variance
        ref = fn(a, N50, D)
        rel = v / ref - 1
        items.append((f"{proto} per-turn variance vs closed form", abs(rel) < 0.05,
                      f"empirical={v:.6g} formula={ref:.6g} rel={rel:+.1%}"))
        btv = an.block_turn_variance(a, POP.beta, N50, D)
        x = res.share_revenue
        share_var = a * (x.variance + x.mean ** 2) - (a * x.mean) ** 2
        info = (f"diagnostic: block-turn variance {btv:.6g} ({v / btv - 1:+.1%}); "
                f"share-attributed {share_var:.6g} vs exact {fn(a, N50, D, literal=False):.6g}")
        items.append((f"{proto} diagnostics", True, info))
    worst = max(abs(an.pplns_variance(al, 2 * d, d) - ((al - al * al) / d ** 2 - al / (4 * d ** 3)))
                for al in np.linspace(0, 1, 21) for d in (2, 5, 25, 100, 1000))
    items.append(("pplns N=2D identity", worst < 1e-12, f"max abs diff {worst:.2g}"))
    return _checks(items)


# --- 3. steady state ----------------------------------------------------------


def criterion_3():
    pop = Population.from_alpha_beta(0.2, 0.3, 25)
    occ = sim.empirical_steady_state(_config("rpplns", pop=pop, N=20, recorded=TURNS // 4, trials=4))
    resid = max(an.detailed_balance_residual(an.steady_state(a, b, N).pi, a, b)
                for a, b in ((0.2, 0.3), (0.5, 0.5), (0.05, 0.9), (0.7, 0.1)) for N in (1, 20, 200))
    return _checks([
        ("TV distance < 0.01", occ.tv_distance < 0.01,
         f"tv={occ.tv_distance:.4g} over {occ.histogram.total} samples"),
        ("detailed balance < 1e-12", resid < 1e-12, f"max residual {resid:.2g}"),
    ])


# --- 4. share lifetime ------------------------------------------------------


def criterion_4():
    life = sim.share_lifetime(_config("rpplns"))
    z = (life.mean - N50) / life.mean_stderr
    rel = life.second_moment / (2 * N50 ** 2 - N50) - 1
    return _checks([
        ("mean within 3 sigma of N", abs(z) < 3, f"mean={life.mean:.4f} z={z:+.2f} shares={life.count}"),
        ("E[Z^2] within 5% of 2N^2-N", abs(rel) < 0.05, f"E[Z^2]={life.second_moment:.1f} rel={rel:+.2%}"),
    ])


# --- 5. pool hopping ----------------------------------------------------------


def criterion_5():
    T = 200
    pools = (PoolSpec(40, 20, 0.3), PoolSpec(60, 30, 0.2))
    schedules = {
        "pool1_only": HoppingSchedule(T),
        "pool2_only": HoppingSchedule(T, ((0, T),)),
        "alternate10": HoppingSchedule(T, tuple((t, t + 10) for t in range(0, T, 20))),
    }
    res = {k: sim.hopping_experiment(pools, 0.1, s, (10, 6), 2000, SEED) for k, s in schedules.items()}
    target = 10 / 20 + 6 / 30 + 0.1 * T
    items = [(f"{k} CI contains {target:g}", r.ci_low <= target <= r.ci_high,
              f"{r.estimate:.3f} [{r.ci_low:.3f}, {r.ci_high:.3f}]") for k, r in res.items()]
    lo = max(r.ci_low for r in res.values())
    hi = min(r.ci_high for r in res.values())
    items.append(("CIs mutually overlap", lo <= hi, f"common interval [{lo:.3f}, {hi:.3f}]"))
    return _checks(items)


# --- 6. two-turn oracles ----------------------------------------------------


def _random_point(rng):
    i = int(rng.integers(1, 1000))
    j = int(rng.integers(0, 1000 - i + 1))
    a, b = F(i, 1000), F(j, 1000)
    return a, b, 1 - a - b, int(rng.integers(3, 61)), int(rng.integers(2, 101))


def _max_diff(oracle, closed):
    return max(abs(float(o) - float(c)) for o, c in zip(oracle, closed))


def criterion_6():
    rng = np.random.default_rng(SEED)
    worst = {"pplns": 0.0, "rpplns_literal": 0.0, "rpplns_corrected": 0.0}
    mism = 0
    for _ in range(100):
        a, b, g, N, D = _random_point(rng)
        pop = Population(a, b, g, D)
        args = (float(a), float(b), float(g), N, D)
        r = an.pplns_two_turn(*args)
        worst["pplns"] = max(worst["pplns"], _max_diff(
            (sim.two_turn_oracle("pplns", QueueState((2,) * N), h, pop) for h in "HS"), (r.r_h, r.r_s)))
        k = int(rng.integers(0, N + 1))
        start = BagState.of({1: k, 2: N - k}, N)
        oracle = [sim.two_turn_oracle("rpplns", start, h, pop) for h in "HS"]
        for key, lit in (("rpplns_literal", True), ("rpplns_corrected", False)):
            r = an.rpplns_two_turn(k, *args, literal=lit)
            d = _max_diff(oracle, (r.r_h, r.r_s))
            worst[key] = max(worst[key], d)
            mism += lit and d > 1e-12
    bad_entries = set()
    for _ in range(20):
        N, D = int(rng.integers(3, 500)), int(rng.integers(2, 500))
        h, s = sim.two_turn_components("rpplns", BagState.of({2: N}, N), Population(F(1, 5), F(1, 2), F(3, 10), D))
        closed = an.closed_form_k0_surplus(F(N), F(D))
        bad_entries |= {i + 1 for i in range(6) if s[i] - h[i] != closed[i]}
    return _checks([
        ("pplns_two_turn vs oracle, 100 points", worst["pplns"] < 1e-12, f"max diff {worst['pplns']:.2g}"),
        ("rpplns_two_turn (literal) vs oracle, 100 points", worst["rpplns_literal"] < 1e-12,
         f"max diff {worst['rpplns_literal']:.3g}, {mism} points off"),
        ("rpplns_two_turn corrected vs oracle", worst["rpplns_corrected"] < 1e-12,
         f"max diff {worst['rpplns_corrected']:.2g}"),
        ("k=0 surplus matches closed forms exactly, 20 (N,D)", not bad_entries,
         f"mismatched entries {sorted(bad_entries) or 'none'}"),
    ])


# --- 7. thresholds ----------------------------------------------------------


def _flip_cell(gain, grid):
    """Indices (i, i+1) where the sign of ``gain`` changes from <= 0 to > 0."""
    signs = [gain(a) > 0 for a in grid]
    flips = [i for i in range(len(grid) - 1) if signs[i] != signs[i + 1]]
    return flips, signs


def _threshold_check(name, gain, t):
    grid = np.linspace(0.5 * t, 1.5 * t, 101)
    cell = grid[1] - grid[0]
    flips, signs = _flip_cell(gain, grid)
    if len(flips) != 1:
        return (name, False, f"threshold {t:.5g}: {len(flips)} sign changes on grid")
    at = 0.5 * (grid[flips[0]] + grid[flips[0] + 1])
    ok = abs(at - t) <= cell and not signs[0] and signs[-1]
    return (name, ok, f"threshold {t:.5g}, oracle flips at {at:.5g} (cell {cell:.2g})")


def criterion_7():
    items = []
    for N in (100, 1000):
        D = N // 2
        q = QueueState((2,) * N)
        bag = BagState.of({2: N}, N)
        for beta in (0.0, 0.3):
            def oracle_gain(proto, start):
                def gain(a):
                    pop = Population(a, beta, 1 - a - beta, D)
                    return (sim.two_turn_oracle(proto, start, "S", pop)
                            - sim.two_turn_oracle(proto, start, "H", pop))
                return gain
            items.append(_threshold_check(f"PPLNS N={N} beta={beta}", oracle_gain("pplns", q),
                                          an.pplns_hoard_threshold(N, D)))
            items.append(_threshold_check(f"RPPLNS k=0 N={N} beta={beta}", oracle_gain("rpplns", bag),
                                          an.rpplns_hoard_threshold_k0(N, D, beta)))
    return _checks(items)


# --- 8. DP regimes ----------------------------------------------------------

DP_N, DP_D, DP_K = 200, 100.0, 120


def criterion_8():
    sweeps = {r.F: r for r in sol.sweep_many(DP_N, DP_D, DP_K, [0.05, 0.5, 0.95], 0.05)}
    C = sol.Classification
    hb = sweeps[0.05].count(C.HOARD_BLOCK)
    honest = sweeps[0.5].count(C.HONEST)
    hs = sweeps[0.95].count(C.HOARD_SHARE)
    items = [
        ("(a) HoardBlock at F=0.05", hb > 0, f"{hb}/{len(sweeps[0.05].points)} points"),
        ("(b) all Honest at F=0.5", honest == len(sweeps[0.5].points),
         f"{honest}/{len(sweeps[0.5].points)} points"),
        ("(c) HoardShare at F=0.95", hs > 0, f"{hs}/{len(sweeps[0.95].points)} points"),
    ]
    for beta in (0.0, 0.1, 0.3, 0.5):
        edge = sol.block_hoarding_boundary(DP_N, DP_D, DP_K, beta, tol=1e-4)
        t = an.rpplns_hoard_threshold_k0(DP_N, DP_D, beta)
        ratio = max(edge / t, t / edge) if edge > 0 else math.inf
        items.append((f"l=0 boundary within 2x of k=0 threshold, beta={beta}", ratio <= 2,
                      f"DP {edge:.4f} vs {t:.4f} (x{ratio:.2f})"))
    return _checks(items)


# --- 9. state counts --------------------------------------------------------


def criterion_9():
    import itertools
    bad = [(m, N) for m in range(1, 5) for N in range(1, 13)
           if an.state_counts(m, N).rpplns_exact
           != sum(1 for v in itertools.product(range(N + 1), repeat=m) if sum(v) <= N)]
    big = an.state_counts(7, 300).pplns_count
    return _checks([
        ("rpplns_exact = enumeration, m<=4, N<=12", not bad, f"mismatches {bad or 'none'}"),
        ("pplns_count exact", big == 7 ** 300 and isinstance(big, int), f"7^300 has {len(str(big))} digits"),
    ])


# --- 10. property suite -----------------------------------------------------


def criterion_10():
    items = []
    dev = max(sim.simulate(_config(p, recorded=200_000, queue_length=q)).budget_deviation
              for p, q in (("rpplns", None), ("pplns", None), ("queuebag", 10)))
    ref = sim.reference_trace(sim.TrialConfig("rpplns", Population(F(3, 10), F(4, 10), F(3, 10), 4),
                                              8, 5000, seed=SEED, burn_in=0))
    exact = all(t == 1 for t in ref.payout_totals)
    items.append(("budget balance", dev < 1e-12 and exact,
                  f"kernel max |total-1|={dev:.2g}; {len(ref.payout_totals)} exact payouts sum to 1"))

    rng = np.random.default_rng(SEED)
    norm_bad = 0
    for _ in range(500):
        N = int(rng.integers(1, 12))
        cuts = np.sort(rng.integers(0, N + 1, size=3))
        counts = (0, int(cuts[0]), int(cuts[1] - cuts[0]), int(cuts[2] - cuts[1]))
        msg = Message.share(int(rng.integers(1, 4))) if rng.random() < 0.7 else Message.block(int(rng.integers(0, 4)))
        dist = rpplns_transition_distribution(BagState(counts, N), msg)
        states = [s for s, _ in dist]
        norm_bad += sum(p for _, p in dist) != 1 or len(set(states)) != len(states)
    items.append(("transition distributions normalised", norm_bad == 0, f"{norm_bad}/500 bad"))

    cfg = _config("rpplns", recorded=100_000, trials=4)
    same = sim.run_honest(cfg, workers=1) == sim.run_honest(cfg, workers=2)
    items.append(("seed reproducible across worker counts", same, "workers 1 vs 2 identical" if same else "differ"))

    N, K = 40, 60
    table = sol.value_iteration(sol.SolverConfig(N, 20.0, 0.15, 0.4, 0.45, K), keep_history=True)
    H = np.array(table.history)
    pick = np.random.default_rng(SEED)
    spots = [(int(pick.integers(0, N + 1)), int(pick.integers(0, N)), int(pick.integers(0, 2))) for _ in range(50)]
    lit_bad, tight_bad, mono_bad = [], 0, 0
    for l, s, b in spots:
        seq = H[:, l, s, b]
        lit_bad += [k for k in range(K + 1) if not 0 <= seq[k] <= k]
        tight_bad += sum(not 0 <= seq[k] <= sol.value_bound(k, s, b, N, sol.TerminalRule.REWARD_JUMP)
                         for k in range(K + 1))
        mono_bad += int(np.any(np.diff(seq) < -1e-12))
        mono_bad += int(H[K, l, s, 1] < H[K, l, s, 0] - 1e-12)
        mono_bad += int(H[K, l, s + 1, b] < H[K, l, s, b] - 1e-12)
    items.append(("0 <= g_k <= k on 50 states, all layers", not lit_bad,
                  f"violated at layers {sorted(set(lit_bad)) or 'none'} (held-item states)"))
    items.append(("0 <= g_k <= k + b + (k+s)//N on 50 states, all layers", tight_bad == 0, f"{tight_bad} violations"))
    items.append(("monotone in k, b and s", mono_bad == 0, f"{mono_bad} violations"))
    return _checks(items)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(number, report):
    passed, detail = CRITERIA[number - 1]()
    report(number, passed, detail)
    assert passed, detail


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, start=1):
        passed, detail = fn()
        failed += not passed
        print(f"CRITERION {i}: {'PASS' if passed else 'FAIL'}  {detail}", flush=True)
    sys.exit(1 if failed else 0)
