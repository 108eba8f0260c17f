"""Acceptance criteria 1-10, one test each.

Each test prints a single PASS/FAIL line (collected again in the terminal
summary) and then asserts, so a failing criterion shows up as a failed test.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from fedjcpba import arch, cli, fedsim, jcpba
from fedjcpba.errors import Infeasible
from instances import instance, scenario

N_SEEDS = 20
N_ROUNDS = 50


# --- 1. oracle equivalence -------------------------------------------------------

def test_criterion_01_oracle_equivalence(report):
    start = time.perf_counter()
    gaps, below_bound, ref_gaps = [], 0, []
    for i in range(50):
        clients, cs = instance(2 + i % 2, seed=1000 + i)
        bcd = jcpba.bcd_solve(clients, cs).final.objective
        oracle = jcpba.brute_force_oracle(clients, cs, grid_beta=201).objective
        gaps.append(bcd / oracle - 1.0)
        below_bound += bcd < jcpba.latency_lower_bound(clients, cs)
        ref_gaps.append(jcpba.joint_optimum(clients, cs).objective / oracle - 1.0)
    elapsed = time.perf_counter() - start
    gaps = np.array(gaps)
    outside = int(np.sum(np.abs(gaps) > 0.01))
    ok = outside == 0 and below_bound == 0 and elapsed < 60
    report(1, ok, f"{outside}/50 outside 1% (worst gap {gaps.max():+.2%}), "
                  f"{below_bound} below bound, {elapsed:.1f}s; exact joint optimum "
                  f"vs oracle within {np.abs(ref_gaps).max():.2%}")
    assert ok


# --- 2-4. descent, bandwidth KKT, constraint satisfaction ------------------------------

@pytest.fixture(scope="module")
def descent_runs():
    """200 random instances, every emitted allocation kept for inspection."""
    rng = np.random.default_rng(20240)
    runs = []
    for i in range(200):
        k = int(rng.integers(2, 65))
        clients, cs = instance(k, seed=5000 + i, round_index=int(rng.integers(0, 50)))
        emitted = []
        rep = jcpba.bcd_solve(clients, cs,
                              callback=lambda stage, a: emitted.append((stage, a)))
        runs.append((clients, cs, rep, emitted))
    return runs


def test_criterion_02_bcd_descent(report, descent_runs):
    bad_trace, over_cap, iters = 0, 0, []
    for _, _, rep, _ in descent_runs:
        tr = rep.objective_trace
        bad_trace += any(b > a * (1 + 1e-9) for a, b in zip(tr, tr[1:]))
        over_cap += rep.iterations > 50 or not rep.converged
        iters.append(rep.iterations)
    median = float(np.median(iters))
    ok = bad_trace == 0 and over_cap == 0 and median <= 10
    report(2, ok, f"{bad_trace} non-monotone traces, {over_cap} hit the cap, "
                  f"median {median:g} / max {max(iters)} iterations")
    assert ok


def test_criterion_03_bandwidth_kkt(report, descent_runs):
    calls, worst_sum, worst_spread = 0, 0.0, 0.0
    for _, cs, _, emitted in descent_runs:
        for stage, a in emitted:
            if stage != "bandwidth":
                continue
            calls += 1
            worst_sum = max(worst_sum, abs(a.bandwidth.sum() - cs.total_bandwidth)
                            / cs.total_bandwidth)
            active = a.bandwidth > 0
            lat = a.per_client_latency[active]
            worst_spread = max(worst_spread, (lat.max() - lat.min()) / lat.max())
    ok = worst_sum <= 1e-9 and worst_spread <= 1e-6
    report(3, ok, f"{calls} bandwidth steps, max |sum B - B|/B {worst_sum:.1e}, "
                  f"max latency spread {worst_spread:.1e}")
    assert ok


def _independent_violations(alloc, clients, cs, tol=1e-6):
    """C1-C5 written out directly, without the package validator."""
    out = []
    beta, bw = np.asarray(alloc.beta), np.asarray(alloc.bandwidth)
    if bw.sum() > cs.total_bandwidth * (1 + tol):
        out.append("C1")
    if np.any(bw < -tol):
        out.append("C2")
    for c, b in zip(clients, beta):
        need = cs.memory_overhead * (c.adapter_bits + (1 - b) * c.emulator_bits) / 8
        if need > c.memory_budget * (1 + tol):
            out.append("C3")
            break
    if np.any(beta < cs.beta_min - tol) or np.any(beta > cs.beta_max + tol):
        out.append("C4")
    k = len(clients)
    if cs.xi + cs.phi / (k * cs.batch) + cs.psi / k * beta.sum() > cs.gamma_min + tol:
        out.append("C5")
    return out


def test_criterion_04_constraint_satisfaction(report, descent_runs):
    checked, failures, missed = 0, 0, 0
    for clients, cs, _, emitted in descent_runs:
        for _, a in emitted:
            checked += 1
            failures += bool(jcpba.validate_allocation(a, clients, cs, tol=1e-6)
                             or _independent_violations(a, clients, cs))
        final = emitted[-1][1]
        for k in range(len(clients)):
            beta = final.beta.copy()
            beta[k] = cs.beta_max + 1e-3
            mutated = jcpba.evaluate(clients, beta, final.bandwidth)
            missed += "C4" not in jcpba.validate_allocation(mutated, clients, cs)
    ok = failures == 0 and missed == 0
    report(4, ok, f"{checked} allocations re-validated, {failures} violations, "
                  f"{missed} missed beta_max mutations")
    assert ok


# --- 5-6. heterogeneity sweep and policy dominance ----------------------------------

@pytest.fixture(scope="module")
def sweeps():
    start = time.perf_counter()
    results = {}
    for seed in range(N_SEEDS):
        try:
            results[seed] = fedsim.heterogeneity_sweep(
                scenario(8, seed=seed), fedsim.DEFAULT_SPEED_RANGES, fedsim.POLICIES,
                n_rounds=N_ROUNDS, seed=seed)
        except Infeasible:
            results[seed] = None
    return results, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_05_heterogeneity_trend(report, sweeps):
    results, elapsed = sweeps
    wins = sum(r is not None and r.growth_pct["jcpba"] < r.growth_pct["ubfp"]
               for r in results.values())
    done = [r for r in results.values() if r is not None]
    jg = np.mean([r.growth_pct["jcpba"] for r in done])
    ug = np.mean([r.growth_pct["ubfp"] for r in done])
    ok = wins >= 19 and elapsed < 120
    report(5, ok, f"JCPBA growth < UBFP growth on {wins}/{N_SEEDS} seeds "
                  f"(mean {jg:.1f}% vs {ug:.1f}%), {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_06_policy_dominance(report, sweeps):
    results, _ = sweeps
    pairs, losses = 0, 0
    for r in results.values():
        if r is None:
            continue
        for j, u in zip(r.cells[0::2], r.cells[1::2]):
            assert (j.policy, u.policy) == ("jcpba", "ubfp")
            pairs += 1
            losses += j.total_time_s > u.total_time_s * (1 + 1e-9)
    ok = losses == 0 and pairs > 0
    report(6, ok, f"JCPBA total time <= UBFP on {pairs - losses}/{pairs} "
                  f"paired (seed, speed range) runs")
    assert ok


# --- 7. complexity scaling -------------------------------------------------------

def _median_solve_time(k, reps=10):
    clients, cs = instance(k, seed=77)
    jcpba.bcd_solve(clients, cs)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        jcpba.bcd_solve(clients, cs)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_criterion_07_complexity_scaling(report):
    small, large = _median_solve_time(10), _median_solve_time(1000)
    ratio = large / small
    ok = ratio < 150
    report(7, ok, f"median solve {small * 1e3:.2f} ms at K=10, {large * 1e3:.2f} ms "
                  f"at K=1000, ratio {ratio:.1f}x")
    assert ok


# --- 8. aggregation ----------------------------------------------------------------

def test_criterion_08_protocol_math(report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        n, dim = int(rng.integers(1, 20)), int(rng.integers(1, 64))
        g = rng.normal(size=dim)
        deltas = rng.normal(size=(n, dim))
        sizes = rng.integers(1, 10_000, size=n)
        ref = g.copy()
        for s, d in zip(sizes, deltas):
            ref = ref + (s / sizes.sum()) * d
        worst = max(worst, np.abs(fedsim.aggregate_adapter(g, deltas, sizes) - ref).max())
    exact = all(
        np.array_equal(fedsim.aggregate_adapter(g, d, [7] * len(d)), g + np.mean(d, axis=0))
        for g, d in ((rng.normal(size=16), rng.normal(size=(m, 16))) for m in range(1, 12)))
    ok = worst <= 1e-12 and exact
    report(8, ok, f"max abs error {worst:.1e} vs weighted-sum reference; "
                  f"equal sizes bit-identical to mean: {exact}")
    assert ok


# --- 9. model accounting ------------------------------------------------------------

def _block_params(d, d_ff):
    # ln_1, c_attn, c_proj, ln_2, c_fc, c_proj
    return 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * d_ff + d_ff) + (d_ff * d + d)


def test_criterion_09_model_accounting(report):
    desc = arch.preset("gpt2-medium")
    spec = arch.PartitionSpec((0, 21), (22, 23))
    sizes = arch.partition_model(desc, spec)
    block = _block_params(1024, 4096)
    embed = 50257 * 1024 + 1024 * 1024 + 2 * 1024
    exact = sizes.adapter_params == 2 * block and sizes.total_params == 24 * block + embed
    layer_share = sizes.adapter_params / (24 * block)
    identity = arch.prune_emulator(desc, spec, 0.0).params == sizes.emulator_params
    full = arch.emulator_prunable_params(desc, spec)
    gap = max(abs(arch.prune_emulator(desc, spec, b).prunable_params - (1 - b) * full) / full
              for b in np.round(np.arange(0.05, 0.8001, 0.05), 10))
    ok = exact and layer_share == 2 / 24 and identity and gap <= 0.05
    report(9, ok, f"adapter {sizes.adapter_params:,} of {sizes.total_params:,} params "
                  f"({sizes.adapter_params / sizes.total_params:.4f} overall, "
                  f"{layer_share:.4f} of layer params), beta=0 identity {identity}, "
                  f"max linear gap {gap:.2%}")
    assert ok


# --- 10. determinism ------------------------------------------------------------

def test_criterion_10_determinism(report, tmp_path, capsys):
    streams = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli.main(["simulate", "--seed", "42", "--out", str(out)]) == 0
        streams.append((out / "simulate.jsonl").read_bytes())
    capsys.readouterr()
    ok = streams[0] == streams[1] and len(streams[0]) > 0
    n_records = len(streams[0].splitlines())
    report(10, ok, f"two simulate runs, {n_records} records, "
                   f"byte-identical: {streams[0] == streams[1]}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
