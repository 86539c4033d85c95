"""Acceptance checks at the stated sizes and tolerances.

Run with ``pytest tests/test_acceptance.py -v``; a summary line per criterion
is printed at the end of the session.
"""

from __future__ import annotations

import math
import random
import time
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from triadic._hashing import derive_seed
from triadic.exceptions import Stalled
from triadic.harness import (
    ScanConfig,
    cmd_oracle,
    cmd_threshold,
    default_workers,
    phase1_budget,
    run_trials,
    trial_seed,
)
from triadic.observables import (
    choose_monitored_pairs,
    codegree,
    open_four_walks,
    open_three_walks,
    take_checkpoint,
)
from triadic.process import (
    apply_edge,
    brute_force_open_set,
    init_process,
    run_phase1,
    run_phase2,
    run_round,
    step,
)
from triadic.topology import (
    collapse_replay_euler,
    extract_certificate,
    greedy_collapse,
    verify_certificate,
)
from triadic.trajectory import (
    closed_form,
    compute_K,
    envelopes,
    f_root_T0,
    ode_params,
    rk4_integrate,
    sprinkling_round_bound,
    subcritical_round_cap,
    verify_ode,
)


def uncensored(n: int) -> int:
    # a standard round that adds nothing empties the registry
    return n * (n - 1) // 2 + 1


def registry_matches(state) -> bool:
    bf = brute_force_open_set(state.graph, state.sampled_triples())
    if state.registry.as_set() != bf or len(state.registry) != len(bf):
        return False
    counts = np.zeros(state.n, np.int64)
    for o in bf:
        counts[o.missing[0]] += 1
        counts[o.missing[1]] += 1
    f = state.registry.f_count
    return bool(np.array_equal(f, counts) and f.sum() == 2 * len(state.registry))


@pytest.mark.criterion(1)
def test_registry_exactness(criterion):
    rng = random.Random(20240601)
    t0 = time.perf_counter()
    checks = bad = 0
    for _ in range(1000):
        n = rng.randint(4, 8)
        seed = rng.getrandbits(63)
        length = rng.randint(0, 3 * n)
        s = init_process(n, rng.choice([0.2, 0.5, 0.8]), seed)
        ok = registry_matches(s)
        checks += 1
        for _ in range(length):
            if rng.random() < 0.15:
                missing = [(u, v) for u, v in combinations(range(n), 2) if not s.graph.has_edge(u, v)]
                if not missing:
                    break
                apply_edge(s, *rng.choice(missing))
            else:
                try:
                    step(s)
                except Stalled:
                    break
            ok &= registry_matches(s)
            checks += 1
        for _ in range(rng.randint(0, 3)):
            run_round(s)
            ok &= registry_matches(s)
            checks += 1
        bad += not ok
    elapsed = time.perf_counter() - t0
    criterion(1, bad == 0 and elapsed < 60, f"{checks} states checked, {bad} bad replays, {elapsed:.1f}s")


@pytest.mark.criterion(2)
@pytest.mark.parametrize("n,v0", [(4, 0), (6, 2), (17, 16), (64, 5), (300, 0)])
def test_initial_conditions(criterion, n, v0):
    s = init_process(n, 0.5, 1, v0=v0)
    rows = []
    others = [v for v in range(n) if v != v0]
    for v in others:
        rows.append((int(s.graph.deg[v]), int(s.registry.f_count[v])))
    ok = all(r == (1, n - 2) for r in rows)
    pairs = list(combinations(others, 2))
    if len(pairs) > 300:
        pairs = random.Random(n).sample(pairs, 300)
    for u, v in pairs:
        got = (codegree(s.graph, u, v), open_three_walks(s, u, v), open_three_walks(s, v, u), open_four_walks(s, u, v))
        ok &= got == (1, 0, 0, n - 3)
    criterion(2, ok, f"n={n} v0={v0}")


@pytest.mark.criterion(3)
@pytest.mark.parametrize("n", [5, 6])
def test_order_independence(criterion, n):
    rng = random.Random(n)
    finals = set()
    for seed in range(10):
        per_seed = set()
        for _ in range(100):
            s = init_process(n, 0.5, seed, order_seed=rng.getrandbits(63))
            run_phase1(s, rng.randint(0, n * n))
            run_phase2(s, max_rounds=uncensored(n))
            per_seed.add(frozenset(s.graph.edges()))
        finals.add(len(per_seed))
    criterion(3, finals == {1}, f"n={n}, 10 oracle seeds x 100 orders")


@pytest.mark.criterion(4)
def test_exact_oracle_agreement(criterion):
    t0 = time.perf_counter()
    trials = 100_000
    worst = 0.0
    ok = True
    for n in (4, 5):
        full = n * (n - 1) // 2
        for p in (0.2, 0.5, 0.8):
            exact = float(cmd_oracle(n, Fraction(p).limit_denominator(10)).probability)
            seeds = [trial_seed(4, n, p, k) for k in range(trials)]
            rows = run_trials(n, p, seeds, max_rounds=uncensored(n))
            freq = float(np.mean(rows[:, 0] == full))
            sigma = math.sqrt(exact * (1 - exact) / trials)
            z = abs(freq - exact) / sigma if sigma else (0.0 if freq == exact else math.inf)
            worst = max(worst, z)
            ok &= z <= 3
    elapsed = time.perf_counter() - t0
    criterion(4, ok and elapsed < 120, f"worst deviation {worst:.2f} sigma, {elapsed:.1f}s")


@pytest.mark.criterion(5)
def test_ode_correctness(criterion):
    worst_res = worst_rk = worst_id = 0.0
    for c in (0.3, 0.5, 0.8, 1.0):
        grid = np.linspace(0, 2.0, 4001)
        f = closed_form(c, grid)[1]
        stop = np.flatnonzero(f <= 0.05)
        if stop.size:
            grid = grid[: stop[0]]
        worst_res = max(worst_res, verify_ode(c, grid))
        t_end = float(grid[-1])
        ts, Y = rk4_integrate(c, t_end, 1e-4)
        exact = np.column_stack(closed_form(c, ts))
        worst_rk = max(worst_rk, float(np.max(np.abs(Y - exact))))
        d, f, y, z = closed_form(c, grid)
        worst_id = max(worst_id, float(np.max(np.abs(y - d * f))), float(np.max(np.abs(z - f * f))))
    ok = worst_res < 1e-8 and worst_rk < 1e-6 and worst_id < 1e-12
    criterion(5, ok, f"residual {worst_res:.1e}, rk4 {worst_rk:.1e}, identities {worst_id:.1e}")


@pytest.mark.criterion(6)
def test_named_constants(criterion):
    T0 = f_root_T0(Fraction(2, 5))
    K = compute_K(1.0, 0.25)
    n = 4096
    g1 = envelopes(ode_params(0.8, n), 0.0)[0]
    ok = T0 == Fraction(5, 8) and f_root_T0(0.4) == 0.625 and abs(K - 300) <= 0.5 and g1 == n ** (-1 / 6)
    criterion(6, ok, f"T0(2/5)={T0}, K(1,0.25)={K:.4f}, g1(0)={g1}")


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_trajectory_concentration(criterion):
    n, c, seed = 4000, 0.8, 1
    s = init_process(n, c / math.sqrt(n), seed)
    params = ode_params(c, n, T=1.0)
    monitored = choose_monitored_pairs(n, 0, 20, derive_seed(seed, "monitor"))
    cps = []
    t0 = time.perf_counter()
    run_phase1(s, n * n, every=n * n // 5, callback=lambda st: cps.append(take_checkpoint(st, monitored, params)))
    elapsed = time.perf_counter() - t0
    cps = [cp for cp in cps if cp.t > 0]
    assert [round(cp.t, 6) for cp in cps] == [0.2, 0.4, 0.6, 0.8, 1.0]
    worst = {"d": 0.0, "f": 0.0, "y": 0.0, "z": 0.0}
    xmax = 0
    for cp in cps:
        d, f, y, z = closed_form(c, cp.t)
        worst["d"] = max(worst["d"], abs(cp.d_mean / d - 1))
        worst["f"] = max(worst["f"], abs(cp.f_mean / f - 1))
        worst["y"] = max(worst["y"], abs(cp.y_mean_scaled / y - 1))
        worst["z"] = max(worst["z"], abs(cp.z_mean_scaled / z - 1))
        xmax = max(xmax, cp.x_max)
    bound = 50 * math.log(n)
    ok = worst["d"] < 0.05 and worst["f"] < 0.05 and worst["y"] < 0.15 and worst["z"] < 0.15 and xmax <= bound
    detail = ", ".join(f"{k} {100 * v:.2f}%" for k, v in worst.items())
    criterion(7, ok and elapsed < 300, f"{detail}, x_max {xmax} <= {bound:.0f}, {elapsed:.0f}s")


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_subcritical(criterion):
    n, c, trials = 2000, 0.35, 30
    t0 = time.perf_counter()
    seeds = [trial_seed(8, n, c, k) for k in range(trials)]
    rows = run_trials(n, c / math.sqrt(n), seeds, max_rounds=uncensored(n), workers=default_workers())
    elapsed = time.perf_counter() - t0
    full = n * (n - 1) // 2
    stuck = rows[:, 0] < full
    edge_cap = n**1.5 / 2
    round_cap = subcritical_round_cap(c, n)
    ok = (
        stuck.sum() >= 27
        and np.all(rows[stuck, 0] <= edge_cap)
        and np.all(rows[:, 2] <= round_cap)
        and elapsed < 600
    )
    detail = (
        f"{int(stuck.sum())}/30 stuck, max edges {int(rows[:, 0].max())} <= {edge_cap:.0f}, "
        f"max rounds {int(rows[:, 2].max())} <= {round_cap:.1f}, {elapsed:.0f}s"
    )
    criterion(8, ok, detail)


@pytest.mark.slow
@pytest.mark.criterion(9)
def test_supercritical(criterion):
    n, c, trials = 2000, 0.8, 30
    p = c / math.sqrt(n)
    budget = phase1_budget(ode_params(c, n))
    bound = sprinkling_round_bound(n)
    full = n * (n - 1) // 2
    standard_hits = sprinkle_hits = 0
    rounds = []
    t0 = time.perf_counter()
    for k in range(trials):
        s = init_process(n, p, trial_seed(9, n, c, k))
        run_phase1(s, budget)
        # both phase-2 variants continue from the same phase-1 state
        twin = s.copy()
        standard_hits += run_phase2(s, "standard", uncensored(n)).final_edges == full
        rep = run_phase2(twin, "sprinkling", uncensored(n))
        rounds.append(rep.phase2_rounds)
        sprinkle_hits += rep.propagated and rep.phase2_rounds <= bound
        del s, twin
    elapsed = time.perf_counter() - t0
    ok = standard_hits >= 27 and sprinkle_hits >= 27 and elapsed < 600
    detail = (
        f"standard {standard_hits}/30 propagated, sprinkling {sprinkle_hits}/30 within {bound} rounds "
        f"(max {max(rounds)}), {elapsed:.0f}s"
    )
    criterion(9, ok, detail)


@pytest.mark.slow
@pytest.mark.criterion(10)
def test_threshold_bracket(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = ScanConfig(
        n_values=[500, 2000],
        trials=50,
        tol=0.05,
        c_lo=0.2,
        c_hi=1.0,
        mode="phase2-only",
        workers=default_workers(),
        master_seed=10,
        out_dir=str(tmp_path),
    )
    estimates = cmd_threshold(cfg)
    elapsed = time.perf_counter() - t0
    ok = all(e.c_hat is not None and 0.3 < e.c_hat < 0.7 for e in estimates) and elapsed < 1800
    detail = ", ".join(f"c_hat({e.n})={e.c_hat}" for e in estimates)
    criterion(10, ok, f"{detail}, limit is exactly 1/2, {elapsed:.0f}s")


@pytest.mark.slow
@pytest.mark.criterion(11)
def test_certificates(criterion):
    n, c = 500, 0.8
    p = c / math.sqrt(n)
    budget = phase1_budget(ode_params(c, n))
    t0 = time.perf_counter()
    done = verified = collapsed = euler_ok = 0
    k = 0
    while done < 100 and k < 200:
        s = init_process(n, p, trial_seed(11, n, c, k), history="success")
        k += 1
        run_phase1(s, budget)
        if not run_phase2(s, max_rounds=uncensored(n)).propagated:
            continue
        done += 1
        cert = extract_certificate(s.history(), n, 0)
        verified += bool(verify_certificate(cert))
        cx = cert.complex()
        res = greedy_collapse(cx)
        collapsed += res.is_hypertree and res.spanning
        chis = collapse_replay_euler(cx, res.sequence)
        euler_ok += len(set(chis)) == 1
    elapsed = time.perf_counter() - t0
    ok = done == 100 and verified == collapsed == euler_ok == 100 and elapsed < 300
    detail = (
        f"{done} propagating runs of {k}: verified {verified}, spanning tree {collapsed}, "
        f"euler invariant {euler_ok}, {elapsed:.0f}s"
    )
    criterion(11, ok, detail)
