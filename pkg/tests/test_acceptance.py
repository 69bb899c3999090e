"""Acceptance suite: every criterion at its stated tolerance, one line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
PASS/FAIL lines as they are produced.
"""

import io
import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.signal import lfilter, lfiltic

from windcommit import (
    ARModel,
    ARState,
    CostParams,
    FVConfig,
    PlantState,
    TreeConfig,
    TreeMode,
    build_partition,
    build_tree,
    closest_path,
    estimate_exit_mass,
    evaluate_batch,
    export_lp,
    fv_run,
    node_count,
    reproduce_table,
    serialize,
    deserialize,
    simulate_changes,
    solve_tree_dp,
    successor_states,
    tail_probabilities,
)
from windcommit.scenario_tree import serialize_to_string
from windcommit.stochastic_models import Realization

from _oracles import enumerate_optimal

REFERENCE_PARAMS = CostParams(3.0, 5.0, 2.0, 20.0, 400.0, (6.0,) * 5)
TABLE_SEEDS = (101, 102, 103, 104, 105, 106, 107, 108, 109, 110)


def report(criterion: str, ok: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" - {detail}"
    print(line)


def test_criterion_1_structure(default_model):
    t0 = time.time()
    assert node_count(20, 5) == 168421
    cfg = TreeConfig(horizon=5, branching=20, w0=10.0, mode=TreeMode.BENCHMARK, seed=42)
    tree = build_tree(cfg, default_model)
    assert tree.n_scenarios == 160000
    text = export_lp(tree, REFERENCE_PARAMS)
    lines = text.splitlines()
    n_bin = lines.index("End") - lines.index("Binaries") - 1
    ok = n_bin == 4 * 168421 == 673684
    report(
        "1 structure",
        ok,
        f"nodes=168421 scenarios=160000 lp_binaries={n_bin} ({time.time() - t0:.1f}s)",
    )
    assert ok


def test_criterion_2_solver_exactness():
    t0 = time.time()
    rng = np.random.default_rng(8675309)
    mismatches = 0
    for _ in range(100):
        cfg = TreeConfig(
            horizon=3,
            branching=2,
            w0=float(rng.uniform(0.0, 12.0)),
            mode=TreeMode.BENCHMARK,
            seed=int(rng.integers(1 << 30)),
        )
        model = ARModel(0.6, 0.1, float(rng.uniform(0.5, 4.0)))
        tree = build_tree(cfg, model)
        params = CostParams(
            c_start=float(rng.uniform(0, 10)),
            c_operate=float(rng.uniform(0, 10)),
            c_stop=float(rng.uniform(0, 10)),
            c_per_gw=float(rng.uniform(0, 30)),
            p_max=float(rng.uniform(1, 10)),
            demand=tuple(rng.uniform(0, 8, size=3)),
        )
        sol = solve_tree_dp(tree, params)
        oracle_obj, _ = enumerate_optimal(tree, params)
        if oracle_obj is None:
            if sol.feasible:
                mismatches += 1
        elif (not sol.feasible) or sol.objective != oracle_obj:
            mismatches += 1
    elapsed = time.time() - t0
    ok = mismatches == 0 and elapsed < 10.0
    report("2 solver exactness", ok, f"100 instances, {mismatches} mismatches ({elapsed:.1f}s)")
    assert mismatches == 0
    assert elapsed < 10.0


def test_criterion_3_ar_model(default_model):
    t0 = time.time()
    z = simulate_changes(default_model, ARState(0.0, 0.0), 10**7, np.random.default_rng(1))
    var = float(np.var(z))
    r1 = float(np.corrcoef(z[:-1], z[1:])[0, 1])
    analytic_var = 0.95 / (1.05 * (0.95**2 - 0.81))
    analytic_r1 = 0.90 / 0.95
    elapsed = time.time() - t0
    var_ok = abs(var - analytic_var) / analytic_var < 0.02
    r1_ok = abs(r1 - analytic_r1) < 0.01
    ok = var_ok and r1_ok and elapsed < 30.0
    report(
        "3 ar model",
        ok,
        f"var={var:.4f} (ref {analytic_var:.4f}), lag1={r1:.5f} (ref {analytic_r1:.5f}) "
        f"({elapsed:.1f}s)",
    )
    assert var_ok and r1_ok
    assert elapsed < 30.0


def test_criterion_4_fv_estimator(default_model, default_partition, mc_oracle):
    t0 = time.time()
    cfg = FVConfig(n_particles=1000, n_steps=10_000, burn_in=100, seed=90)
    nu = fv_run(default_model, default_partition, cfg)
    exit_mass = estimate_exit_mass(
        default_model, default_partition.a, 10**6, np.random.default_rng(91)
    )
    tp = tail_probabilities(nu, exit_mass, default_partition)
    elapsed = time.time() - t0
    ref = mc_oracle["p_abs"]
    details = []
    ok = True
    for k in range(6):
        rel = abs(tp.p_hat[k] - ref[k]) / ref[k]
        bound = 0.50 if k == 5 else 0.20
        if ref[k] >= 1e-3 or k == 5:
            ok &= rel <= bound
        details.append(f"C{k + 1}={100 * rel:.1f}%")
    ok = ok and elapsed < 60.0
    report("4 fv estimator", ok, " ".join(details) + f" ({elapsed:.1f}s)")
    for k in range(6):
        rel = abs(tp.p_hat[k] - ref[k]) / ref[k]
        if k == 5:
            assert rel <= 0.50, f"C6 off by {rel:.2%}"
        elif ref[k] >= 1e-3:
            assert rel <= 0.20, f"C{k + 1} off by {rel:.2%}"
    assert elapsed < 60.0


def test_criterion_5_partition():
    part = build_partition(2.0, 3.0, 9.0, 5)
    delta_ok = round(part.delta, 3) == 0.095
    expected = [-3.000, -3.737, -4.655, -5.800, -7.225, -9.000]
    edge_errs = [abs(g - e) for g, e in zip(part.boundaries, expected)]
    edges_ok = all(err < 1e-3 for err in edge_errs)
    ok = delta_ok and edges_ok
    report(
        "5 partition",
        ok,
        f"delta={part.delta:.4f} max_edge_err={max(edge_errs):.5f}",
    )
    assert ok


@pytest.fixture(scope="module")
def table_runs(default_model, default_tail):
    """Full desk scale: (20,5) trees, 100 realizations, 10 master seeds."""
    t0 = time.time()
    runs = []
    for seed in TABLE_SEEDS:
        result = reproduce_table(
            default_model,
            default_tail["tp"],
            REFERENCE_PARAMS,
            horizon=5,
            branching=20,
            w0=10.0,
            rare_fraction=0.5,
            q_values=(0.0, 0.05, 0.10),
            n_realizations=100,
            master_seed=seed,
        )
        runs.append(result.table)
    return {"tables": runs, "elapsed": time.time() - t0}


def _zero_rows(rep) -> bool:
    return (
        rep.pct_realizations_unsatisfied == 0.0
        and rep.pct_unmet_power_all == 0.0
        and (rep.pct_rare_realizations_unsatisfied in (None, 0.0))
        and (rep.pct_unmet_power_rare in (None, 0.0))
    )


def test_criterion_6a_biased_rows_all_zero(table_runs):
    # Known red: at B = 20 the closest-scenario lookup occasionally maps a
    # realization that ends just below demand onto a node just above it whose
    # optimal state is not OPERATING, leaving a sub-GW shortfall.  Measured
    # over 30 independent replications the all-zero event holds about 1/3 of
    # the time, so the >= 9/10 target is not attainable at this resolution.
    clean = 0
    for table in table_runs["tables"]:
        by_q = {e.q: e for e in table.entries}
        if _zero_rows(by_q[0.05].biased) and _zero_rows(by_q[0.10].biased):
            clean += 1
    ok = clean >= 9
    report(
        "6a biased zero unsatisfied-demand rows",
        ok,
        f"{clean}/10 replications fully clean at q=5% and q=10% (need >= 9)",
    )
    assert ok, (
        f"only {clean}/10 replications had all-zero biased unsatisfied-demand rows; "
        "the closest-scenario lookup leaves occasional sub-GW shortfalls at this "
        "tree resolution"
    )


def test_criterion_6b_benchmark_positive_at_q10(table_runs):
    positive = 0
    for table in table_runs["tables"]:
        e = {en.q: en for en in table.entries}[0.10]
        if (
            e.benchmark.pct_realizations_unsatisfied > 0.0
            and e.benchmark.pct_unmet_power_all > 0.0
        ):
            positive += 1
    ok = positive >= 9
    report("6b benchmark positive at q=10%", ok, f"{positive}/10 replications (need >= 9)")
    assert ok


def test_criterion_6c_costs_increase_with_q(table_runs):
    monotone = 0
    for table in table_runs["tables"]:
        entries = sorted(table.entries, key=lambda e: e.q)
        bm = [e.benchmark.avg_cost for e in entries]
        bi = [e.biased.avg_cost for e in entries]
        if all(a < b for a, b in zip(bm, bm[1:])) and all(
            a < b for a, b in zip(bi, bi[1:])
        ):
            monotone += 1
    ok = monotone == 10
    report("6c costs increase with q", ok, f"{monotone}/10 replications (need 10)")
    assert ok


def test_criterion_6d_cost_ratio_bounded(table_runs):
    in_range = 0
    ratios = []
    for table in table_runs["tables"]:
        ok_run = True
        for e in table.entries:
            r = e.biased.avg_cost / e.benchmark.avg_cost
            ratios.append(r)
            ok_run &= 1.0 < r < 2.5
        in_range += ok_run
    elapsed = table_runs["elapsed"]
    ok = in_range == 10 and elapsed < 600.0
    report(
        "6d biased/benchmark cost ratio in (1, 2.5)",
        ok,
        f"{in_range}/10 replications, ratios {min(ratios):.2f}..{max(ratios):.2f} "
        f"(pipeline {elapsed:.0f}s)",
    )
    assert in_range == 10
    assert elapsed < 600.0


def test_criterion_7_roundtrip_and_determinism(default_model, tmp_path):
    t0 = time.time()
    cfg = TreeConfig(horizon=5, branching=20, w0=10.0, mode=TreeMode.BENCHMARK, seed=7)
    tree = build_tree(cfg, default_model)
    text = serialize_to_string(tree)
    again = deserialize(io.StringIO(text))
    tree_ok = again == tree and serialize_to_string(again) == text

    config = tmp_path / "small.toml"
    config.write_text(
        "master_seed = 2718\n[fv]\nn_particles = 150\nn_steps = 1000\nburn_in = 30\n"
        "exit_mass_steps = 100000\n[tree]\nhorizon = 3\nbranching = 4\n"
        "[evaluation]\nq_values = [0.0, 0.1]\nn_realizations = 10\n"
    )

    def run(*args):
        res = subprocess.run(
            [sys.executable, "-m", "windcommit", *args],
            capture_output=True,
            text=True,
        )
        assert res.returncode == 0, res.stderr
        return res

    outputs = {}
    cli_ok = True
    for variant, extra in (("a", []), ("b", []), ("c", ["--threads", "4"])):
        base = tmp_path / variant
        run("estimate-tail", "--config", str(config), "--out", str(base / "tail"), *extra)
        run("build-tree", "--config", str(config), "--out", str(base / "bm"), *extra)
        run(
            "build-tree", "--config", str(config), "--mode", "biased",
            "--tail", str(base / "tail" / "tail.json"), "--out", str(base / "bi"), *extra,
        )
        run(
            "solve", "--config", str(config), "--tree",
            str(base / "bm" / "tree-benchmark.csv"), "--out", str(base / "sol"),
            "--export-lp", *extra,
        )
        run(
            "evaluate", "--config", str(config),
            "--tree", str(base / "bm" / "tree-benchmark.csv"),
            "--solution", str(base / "sol" / "solution.csv"),
            "--tail", str(base / "tail" / "tail.json"),
            "--out", str(base / "ev"), *extra,
        )
        run("reproduce-table", "--config", str(config), "--out", str(base / "tab"), *extra)
        files = sorted(p.relative_to(base) for p in base.rglob("*") if p.is_file())
        outputs[variant] = {str(p): (base / p).read_bytes() for p in files}
    cli_ok = outputs["a"] == outputs["b"] == outputs["c"]
    ok = tree_ok and cli_ok
    report(
        "7 round-trip and determinism",
        ok,
        f"(20,5) round-trip={'ok' if tree_ok else 'BROKEN'}, "
        f"cli bytes identical across reruns and threads={'ok' if cli_ok else 'BROKEN'} "
        f"({time.time() - t0:.1f}s)",
    )
    assert tree_ok
    assert cli_ok


def test_criterion_8_constraint_suite(default_model, default_tail):
    rng = np.random.default_rng(1212)
    checks = []

    # transition totality: every state has exactly two successors
    checks.append(all(len(successor_states(s)) == 2 for s in PlantState))

    # forcing and clamps on solved random trees, both modes
    for mode in (TreeMode.BENCHMARK, TreeMode.BIASED):
        for trial in range(5):
            cfg = TreeConfig(
                horizon=4,
                branching=4,
                w0=float(rng.uniform(4.0, 12.0)),
                mode=mode,
                seed=int(rng.integers(1 << 30)),
            )
            tree = build_tree(
                cfg, default_model, default_tail["tp"] if mode is TreeMode.BIASED else None
            )
            checks.append(bool(np.all(tree.w >= 0.0)))
            params = CostParams(3.0, 5.0, 2.0, 20.0, 400.0, (6.0,) * 4)
            sol = solve_tree_dp(tree, params)
            if sol.feasible:
                shortfall = np.minimum(400.0, np.maximum(6.0 - tree.w, 0.0))
                forced = shortfall > 0.0
                checks.append(bool(np.all(sol.states[forced] == PlantState.OPERATING)))

    # closest-path validity on random mixture paths
    cfg = TreeConfig(horizon=5, branching=6, w0=10.0, mode=TreeMode.BIASED, seed=5)
    tree = build_tree(cfg, default_model, default_tail["tp"])
    for _ in range(25):
        y = [10.0]
        for _ in range(4):
            y.append(max(0.0, y[-1] + float(rng.normal(-1.0, 3.0))))
        path = closest_path(
            tree, Realization(y=tuple(y), jumps=(False,) * 5, is_rare=False)
        )
        checks.append(path[0] == 0)
        checks.append(all(b in tree.children(a) for a, b in zip(path, path[1:])))

    # report permutation invariance
    params = CostParams(3.0, 5.0, 2.0, 20.0, 400.0, (6.0,) * 5)
    sol = solve_tree_dp(tree, params)
    batch = []
    for _ in range(15):
        y = [10.0]
        for _ in range(4):
            y.append(max(0.0, y[-1] + float(rng.normal(-1.0, 3.0))))
        batch.append(Realization(y=tuple(y), jumps=(False,) * 5, is_rare=False))
    perm = [batch[i] for i in rng.permutation(len(batch))]
    checks.append(evaluate_batch(sol, tree, batch, params) == evaluate_batch(sol, tree, perm, params))

    ok = all(checks)
    report("8 constraint suite", ok, f"{len(checks)} property checks")
    assert ok
