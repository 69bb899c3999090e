"""Out-of-sample evaluation of a solved tree against mixture-model wind paths.

Each realized path is matched to a root-to-leaf tree path by recursive
closest-child lookup, the plant runs open-loop with the states the solution
assigned to those nodes, and cost plus demand-satisfaction metrics are
aggregated into a benchmark-versus-biased comparison table.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .dispatch_solver import (
    CostParams,
    PlantState,
    Solution,
    solve_tree_dp,
    stage_cost,
)
from .formats import dumps, fmt_float
from .fv_tail import TailProbabilities, rare_change_sampler
from .scenario_tree import ScenarioTree, TreeConfig, TreeMode, build_tree
from .seeding import derive_seed
from .stochastic_models import (
    ARModel,
    ARState,
    Realization,
    RealizationConfig,
    generate_realization,
)


@dataclass(frozen=True)
class DispatchTrace:
    """One realization's matched path, plant output, cost, and unmet demand."""

    path: tuple[int, ...]
    coal_power: tuple[float, ...]
    cost: float
    unmet: tuple[float, ...]
    satisfied: bool


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregate cost and demand-satisfaction metrics over a batch.

    Rare-subset metrics are None when the batch contains no rare realization.
    """

    n_realizations: int
    n_rare: int
    avg_cost: float
    pct_realizations_unsatisfied: float
    pct_unmet_power_all: float
    pct_rare_realizations_unsatisfied: float | None
    pct_unmet_power_rare: float | None


def closest_path(tree: ScenarioTree, realization: Realization) -> tuple[int, ...]:
    """Root-to-leaf ids tracking the realization, one closest child per stage.

    Stage h picks the child of the previous pick minimizing |y_h - w|;
    ties resolve to the lowest node id.
    """
    h_tree = tree.config.horizon
    if len(realization.y) != h_tree:
        raise ValueError(
            f"realization horizon {len(realization.y)} != tree horizon {h_tree}"
        )
    path = [0]
    for h in range(1, h_tree):
        kids = tree.children(path[-1])
        w = tree.w[kids.start : kids.stop]
        path.append(kids.start + int(np.argmin(np.abs(realization.y[h] - w))))
    return tuple(path)


def realized_dispatch(
    solution: Solution,
    tree: ScenarioTree,
    realization: Realization,
    params: CostParams,
) -> DispatchTrace:
    """Open-loop dispatch along the closest path.

    The plant supplies min(p_max, [D_h - y_h]+) only at stages whose matched
    node is OPERATING; cost uses the realized power, and unmet demand is
    whatever the wind plus plant leave uncovered.
    """
    path = closest_path(tree, realization)
    coal: list[float] = []
    unmet: list[float] = []
    total = 0.0
    for h, node in enumerate(path):
        state = solution.state_of(node)
        need = max(params.demand[h] - realization.y[h], 0.0)
        p = min(params.p_max, need) if state is PlantState.OPERATING else 0.0
        coal.append(p)
        unmet.append(max(params.demand[h] - realization.y[h] - p, 0.0))
        total += stage_cost(state, p, params)
    return DispatchTrace(
        path=path,
        coal_power=tuple(coal),
        cost=total,
        unmet=tuple(unmet),
        satisfied=all(u == 0.0 for u in unmet),
    )


def evaluate_batch(
    solution: Solution,
    tree: ScenarioTree,
    realizations: Sequence[Realization],
    params: CostParams,
    threads: int = 1,
) -> EvaluationReport:
    """Aggregate metrics over a realization batch.

    Sums use math.fsum, so the report is invariant under any permutation of
    the batch; the rare-subset metrics cover realizations with at least one
    jump and are None when there are none.
    """
    if not realizations:
        raise ValueError("realization batch must be non-empty")
    traces = _map_traces(solution, tree, realizations, params, threads)

    horizon = tree.config.horizon
    demand_per_real = math.fsum(params.demand[:horizon])
    avg_cost = math.fsum(t.cost for t in traces) / len(traces)
    n_unsat = sum(1 for t in traces if not t.satisfied)
    unmet_all = math.fsum(u for t in traces for u in t.unmet)
    rare = [t for t, r in zip(traces, realizations) if r.is_rare]
    n_rare = len(rare)
    report = EvaluationReport(
        n_realizations=len(traces),
        n_rare=n_rare,
        avg_cost=avg_cost,
        pct_realizations_unsatisfied=100.0 * n_unsat / len(traces),
        pct_unmet_power_all=100.0 * unmet_all / (demand_per_real * len(traces)),
        pct_rare_realizations_unsatisfied=(
            100.0 * sum(1 for t in rare if not t.satisfied) / n_rare if n_rare else None
        ),
        pct_unmet_power_rare=(
            100.0 * math.fsum(u for t in rare for u in t.unmet) / (demand_per_real * n_rare)
            if n_rare
            else None
        ),
    )
    return report


def _map_traces(solution, tree, realizations, params, threads) -> list[DispatchTrace]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(
                pool.map(lambda r: realized_dispatch(solution, tree, r, params), realizations)
            )
    return [realized_dispatch(solution, tree, r, params) for r in realizations]


@dataclass(frozen=True)
class TableEntry:
    q: float
    n_rare: int
    benchmark: EvaluationReport
    biased: EvaluationReport


@dataclass(frozen=True)
class TableReport:
    entries: tuple[TableEntry, ...]


@dataclass(frozen=True)
class ReproduceResult:
    table: TableReport
    # rows: (method, q, realization_id, stage, y, closest_w)
    trajectories: tuple[tuple[str, float, int, int, float, float], ...]


def reproduce_table(
    model: ARModel,
    tail: TailProbabilities,
    params: CostParams,
    *,
    horizon: int,
    branching: int,
    w0: float,
    rare_fraction: float = 0.5,
    q_values: Sequence[float] = (0.0, 0.05, 0.10),
    n_realizations: int = 100,
    master_seed: int = 0,
    threads: int = 1,
) -> ReproduceResult:
    """Benchmark-versus-biased comparison over the given jump probabilities.

    Builds and solves one tree per mode, then evaluates both on one shared
    batch per q.  Realization i draws from a seed derived from
    (master_seed, "realization", i) regardless of q, so the two methods see
    identical batches (paired comparison) and larger q values replay the
    same underlying draws with more jumps (common random numbers).
    """
    sampler = rare_change_sampler(tail)
    trees: dict[TreeMode, ScenarioTree] = {}
    solutions: dict[TreeMode, Solution] = {}
    for mode in (TreeMode.BENCHMARK, TreeMode.BIASED):
        cfg = TreeConfig(
            horizon=horizon,
            branching=branching,
            w0=w0,
            mode=mode,
            rare_fraction=rare_fraction,
            seed=derive_seed(master_seed, f"tree-{mode.value}"),
        )
        trees[mode] = build_tree(cfg, model, tail if mode is TreeMode.BIASED else None)
        solutions[mode] = solve_tree_dp(trees[mode], params)
        if not solutions[mode].feasible:
            raise RuntimeError(
                f"{mode.value} tree is infeasible at node {solutions[mode].witness}"
            )

    entries: list[TableEntry] = []
    trajectories: list[tuple[str, float, int, int, float, float]] = []
    for q in q_values:
        batch = [
            generate_realization(
                RealizationConfig(
                    q=q, horizon=horizon, y0=w0, seed=derive_seed(master_seed, "realization", i)
                ),
                model,
                ARState(0.0, 0.0),
                sampler,
            )
            for i in range(n_realizations)
        ]
        reports: dict[TreeMode, EvaluationReport] = {}
        for mode in (TreeMode.BENCHMARK, TreeMode.BIASED):
            reports[mode] = evaluate_batch(
                solutions[mode], trees[mode], batch, params, threads=threads
            )
            for rid, r in enumerate(batch):
                for h, node in enumerate(closest_path(trees[mode], r)):
                    trajectories.append(
                        (mode.value, q, rid, h, r.y[h], float(trees[mode].w[node]))
                    )
        entries.append(
            TableEntry(
                q=q,
                n_rare=reports[TreeMode.BENCHMARK].n_rare,
                benchmark=reports[TreeMode.BENCHMARK],
                biased=reports[TreeMode.BIASED],
            )
        )
    return ReproduceResult(table=TableReport(tuple(entries)), trajectories=tuple(trajectories))


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "n_realizations": report.n_realizations,
        "n_rare": report.n_rare,
        "avg_cost": report.avg_cost,
        "pct_realizations_unsatisfied": report.pct_realizations_unsatisfied,
        "pct_unmet_power_all": report.pct_unmet_power_all,
        "pct_rare_realizations_unsatisfied": report.pct_rare_realizations_unsatisfied,
        "pct_unmet_power_rare": report.pct_unmet_power_rare,
    }


def table_to_dict(table: TableReport) -> dict:
    return {
        "entries": [
            {
                "q": e.q,
                "n_rare": e.n_rare,
                "benchmark": report_to_dict(e.benchmark),
                "biased": report_to_dict(e.biased),
            }
            for e in table.entries
        ]
    }


_ROW_LABELS = (
    ("avg_cost", "Average observed cost"),
    ("pct_realizations_unsatisfied", "% realizations with some unsatisfied demand"),
    ("pct_unmet_power_all", "% unsatisfied power demand in all realizations"),
    ("pct_rare_realizations_unsatisfied", "% rare realizations with some unsatisfied demand"),
    ("pct_unmet_power_rare", "% unsatisfied power demand in rare realizations"),
)


def render_table(table: TableReport) -> str:
    """Fixed-width text rendering, one row per metric and BM/Biased per q."""
    width = 14
    label_w = max(len(label) for _, label in _ROW_LABELS) + 2
    lines = []
    head1 = " " * label_w
    head2 = " " * label_w
    for e in table.entries:
        head1 += f"| q={100.0 * e.q:g}% (n_rare={e.n_rare})".ljust(2 * width + 2)
        head2 += "| " + "BM".rjust(width - 2) + " " + "Biased".rjust(width)
    lines.append(head1.rstrip())
    lines.append(head2.rstrip())
    lines.append("-" * max(len(head1), len(head2)))
    for key, label in _ROW_LABELS:
        row = label.ljust(label_w)
        for e in table.entries:
            bm = getattr(e.benchmark, key)
            bi = getattr(e.biased, key)
            row += "| " + _cell(bm, width - 2) + " " + _cell(bi, width)
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


def _cell(value: float | None, width: int) -> str:
    if value is None:
        return "---".rjust(width)
    return f"{value:.4f}".rjust(width)


def write_traces_csv(
    traces: Sequence[DispatchTrace],
    realizations: Sequence[Realization],
    solution: Solution,
    params: CostParams,
    out: TextIO,
) -> None:
    """Per-stage trace CSV: realization_id,stage,y,node_id,state,coal_power,unmet,cost."""
    out.write("realization_id,stage,y,node_id,state,coal_power,unmet,cost\n")
    for rid, (trace, real) in enumerate(zip(traces, realizations)):
        for h, node in enumerate(trace.path):
            s = solution.state_of(node)
            c = stage_cost(s, trace.coal_power[h], params)
            out.write(
                f"{rid},{h},{fmt_float(real.y[h])},{node},{int(s)},"
                f"{fmt_float(trace.coal_power[h])},{fmt_float(trace.unmet[h])},{fmt_float(c)}\n"
            )


def write_trajectories_csv(
    rows: Sequence[tuple[str, float, int, int, float, float]], out: TextIO
) -> None:
    """Trajectory CSV for plotting: method,q,realization_id,stage,y,closest_w."""
    out.write("method,q,realization_id,stage,y,closest_w\n")
    for method, q, rid, h, y, w in rows:
        out.write(f"{method},{fmt_float(q)},{rid},{h},{fmt_float(y)},{fmt_float(w)}\n")


def write_table_json(table: TableReport, out: TextIO) -> None:
    out.write(dumps(table_to_dict(table)))
    out.write("\n")
