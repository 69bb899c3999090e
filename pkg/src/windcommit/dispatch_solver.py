"""Exact coal-plant commitment over a scenario tree.

One four-valued plant state per tree node, transition rules coupling only
parent and child, a node-separable expected cost, and a hard constraint
forcing operation wherever the node's wind leaves a positive shortfall.
Because the constraint graph is the tree itself, a bottom-up dynamic program
solves the integer program exactly; an LP-format export of the identical
binary program is provided for external cross-checking.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import FrozenSet, Iterable, TextIO

import numpy as np

from .formats import dumps, fmt_float
from .scenario_tree import ScenarioTree, node_weight


class PlantState(enum.IntEnum):
    IDLE = 1
    STARTING = 2
    OPERATING = 3
    STOPPING = 4


_SUCCESSORS = {
    PlantState.IDLE: (PlantState.IDLE, PlantState.STARTING),
    PlantState.STARTING: (PlantState.OPERATING, PlantState.STOPPING),
    PlantState.OPERATING: (PlantState.OPERATING, PlantState.STOPPING),
    PlantState.STOPPING: (PlantState.IDLE, PlantState.STARTING),
}

# 0-based successor index table (state-1 -> two allowed next states), ascending
_SUCC_IDX = np.array([[0, 1], [2, 3], [2, 3], [0, 1]])

DEFAULT_ROOT_STATES: FrozenSet[PlantState] = frozenset(
    {PlantState.IDLE, PlantState.STARTING}
)


def successor_states(state: PlantState) -> frozenset[PlantState]:
    """States reachable at the next stage (one-stage start-up and shut-down)."""
    return frozenset(_SUCCESSORS[PlantState(state)])


@dataclass(frozen=True)
class CostParams:
    """Plant cost structure and the per-stage demand sequence (GW)."""

    c_start: float
    c_operate: float
    c_stop: float
    c_per_gw: float
    p_max: float
    demand: tuple[float, ...]

    def __post_init__(self) -> None:
        for name in ("c_start", "c_operate", "c_stop", "c_per_gw"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.p_max <= 0.0:
            raise ValueError(f"p_max must be positive, got {self.p_max}")
        if len(self.demand) < 1 or any(d < 0.0 for d in self.demand):
            raise ValueError("demand must be a non-empty sequence of values >= 0")


def shortfall_power(demand: float, wind: float, p_max: float) -> float:
    """Power the plant supplies if operating: min(p_max, max(demand - wind, 0))."""
    return min(p_max, max(demand - wind, 0.0))


def stage_cost(state: PlantState, p: float, params: CostParams) -> float:
    """Per-stage plant cost: 0 idle, start/stop fees, or operate plus fuel."""
    state = PlantState(state)
    if state is PlantState.IDLE:
        return 0.0
    if state is PlantState.STARTING:
        return params.c_start
    if state is PlantState.OPERATING:
        return params.c_operate + params.c_per_gw * p
    return params.c_stop


@dataclass(frozen=True)
class Solution:
    """Plant states per node (values 1..4), expected cost, feasibility."""

    states: np.ndarray | None
    objective: float
    feasible: bool
    witness: int | None = None

    def state_of(self, node_id: int) -> PlantState:
        if self.states is None:
            raise ValueError("infeasible solution has no states")
        return PlantState(int(self.states[node_id]))


def _shortfalls(tree: ScenarioTree, params: CostParams) -> np.ndarray:
    if len(params.demand) < tree.config.horizon:
        raise ValueError(
            f"demand sequence has {len(params.demand)} stages, tree needs {tree.config.horizon}"
        )
    demand = np.asarray(params.demand, dtype=float)[tree.stage]
    return np.minimum(params.p_max, np.maximum(demand - tree.w, 0.0))


def _weights(tree: ScenarioTree) -> np.ndarray:
    # per-stage python pow, so node_weight and vectorized paths agree bitwise
    per_stage = np.array(
        [float(tree.config.branching) ** (-h) for h in range(tree.config.horizon)]
    )
    return per_stage[tree.stage]


def solve_tree_dp(
    tree: ScenarioTree,
    params: CostParams,
    allowed_root: Iterable[PlantState] = DEFAULT_ROOT_STATES,
    force_tol: float = 0.0,
) -> Solution:
    """Exact bottom-up dynamic program for the node-decision problem.

    V(n, s) = weight(n) * stage_cost(s, p(n)) + sum over children m of
    min over s' in successors(s) of V(m, s'), with V = +inf wherever a
    positive shortfall forces the operating state and s is not it.  Nodes
    with shortfall above force_tol are forced (default: strictly positive).
    Ties prefer the lower state number.  The reported objective re-evaluates
    the extracted policy node by node in id order, which is also exactly how
    verify_solution recomputes it.
    """
    allowed = frozenset(PlantState(s) for s in allowed_root)
    if not allowed:
        raise ValueError("allowed_root must be non-empty")
    cfg = tree.config
    n_nodes = len(tree)
    p = _shortfalls(tree, params)
    weights = _weights(tree)

    ok = np.ones((n_nodes, 4), dtype=bool)
    forced = p > force_tol
    ok[forced] = False
    ok[forced, PlantState.OPERATING - 1] = True
    root_mask = np.zeros(4, dtype=bool)
    for s in allowed:
        root_mask[s - 1] = True
    ok[0] &= root_mask

    # forward reachability, for a precise infeasibility witness
    reach_matrix = np.zeros((4, 4), dtype=bool)
    for s, succ in _SUCCESSORS.items():
        for t in succ:
            reach_matrix[s - 1, t - 1] = True
    reach = np.zeros((n_nodes, 4), dtype=bool)
    reach[0] = ok[0]
    if not reach[0].any():
        return Solution(states=None, objective=np.inf, feasible=False, witness=0)
    for h in range(cfg.horizon - 1):
        pids = tree.stage_ids(h)
        cids = tree.stage_ids(h + 1)
        from_parent = reach[pids.start : pids.stop] @ reach_matrix
        reach[cids.start : cids.stop] = (
            np.repeat(from_parent, cfg.branching, axis=0) & ok[cids.start : cids.stop]
        )
        dead = ~reach[cids.start : cids.stop].any(axis=1)
        if dead.any():
            witness = int(cids.start + np.flatnonzero(dead)[0])
            return Solution(states=None, objective=np.inf, feasible=False, witness=witness)

    base = np.empty((n_nodes, 4))
    base[:, PlantState.IDLE - 1] = 0.0
    base[:, PlantState.STARTING - 1] = params.c_start
    base[:, PlantState.OPERATING - 1] = params.c_operate + params.c_per_gw * p
    base[:, PlantState.STOPPING - 1] = params.c_stop
    cost = weights[:, None] * base
    cost[~ok] = np.inf

    # bottom-up value sweep, one stage at a time
    values: list[np.ndarray] = [np.empty(0)] * cfg.horizon
    last = tree.stage_ids(cfg.horizon - 1)
    values[cfg.horizon - 1] = cost[last.start : last.stop]
    for h in range(cfg.horizon - 2, -1, -1):
        child = values[h + 1]
        best = np.minimum(child[:, _SUCC_IDX[:, 0]], child[:, _SUCC_IDX[:, 1]])
        agg = best.reshape(-1, cfg.branching, 4).sum(axis=1)
        ids = tree.stage_ids(h)
        values[h] = cost[ids.start : ids.stop] + agg

    root_vals = values[0][0]
    if not np.isfinite(root_vals.min()):
        # reachability above should have caught this; keep as a safety net
        return Solution(states=None, objective=np.inf, feasible=False, witness=0)

    states = np.zeros(n_nodes, dtype=np.int8)
    states[0] = int(np.argmin(root_vals)) + 1
    for h in range(cfg.horizon - 1):
        pids = tree.stage_ids(h)
        child_vals = values[h + 1]
        succ = _SUCC_IDX[states[pids.start : pids.stop] - 1]
        opt0 = np.repeat(succ[:, 0], cfg.branching)
        opt1 = np.repeat(succ[:, 1], cfg.branching)
        rows = np.arange(child_vals.shape[0])
        v0 = child_vals[rows, opt0]
        v1 = child_vals[rows, opt1]
        cids = tree.stage_ids(h + 1)
        states[cids.start : cids.stop] = np.where(v0 <= v1, opt0, opt1) + 1

    objective = 0.0
    for n in range(n_nodes):
        objective += weights[n] * stage_cost(PlantState(int(states[n])), p[n], params)
    return Solution(states=states, objective=objective, feasible=True)


@dataclass(frozen=True)
class VerificationResult:
    feasible: bool
    objective: float
    violation: str | None = None


def verify_solution(
    tree: ScenarioTree, params: CostParams, solution: Solution
) -> VerificationResult:
    """Independent re-check of transitions, forcing, and the objective.

    Walks nodes in id order, checking the forcing rule at each node and the
    transition rule on the edge from its parent; the objective is recomputed
    as the id-ordered sum of weight * stage_cost and matches the solver's
    reported objective exactly (same order, same arithmetic).
    """
    if solution.states is None:
        return VerificationResult(False, np.inf, "solution carries no states")
    states = solution.states
    if len(states) != len(tree):
        return VerificationResult(False, np.inf, "state vector length mismatch")
    p = _shortfalls(tree, params)
    weights = _weights(tree)
    violation = None
    for n in range(len(tree)):
        s = int(states[n])
        if s not in (1, 2, 3, 4):
            violation = f"node {n}: invalid state {s}"
            break
        if p[n] > 0.0 and s != PlantState.OPERATING:
            violation = (
                f"node {n}: shortfall {fmt_float(p[n])} GW requires OPERATING, got {PlantState(s).name}"
            )
            break
        pid = int(tree.parent[n])
        if pid >= 0:
            ps = PlantState(int(states[pid]))
            if PlantState(s) not in _SUCCESSORS[ps]:
                violation = f"edge {pid}->{n}: {ps.name} -> {PlantState(s).name} forbidden"
                break
    objective = 0.0
    for n in range(len(tree)):
        objective += weights[n] * stage_cost(PlantState(int(states[n])), p[n], params)
    if violation is not None:
        return VerificationResult(False, objective, violation)
    return VerificationResult(True, objective)


def export_lp(
    tree: ScenarioTree,
    params: CostParams,
    allowed_root: Iterable[PlantState] = DEFAULT_ROOT_STATES,
    force_tol: float = 0.0,
) -> str:
    """LP-format text of the identical binary program.

    Variables x_n_j (node n, state j in 1..4), all binary.  Rows: one
    single-state equality per node, one transition equality per edge
    (x_p_2 + x_p_3 = x_c_3 + x_c_4, which under the single-state rows is
    equivalent to the four one-sided successor inequalities), one forcing
    equality x_n_3 = 1 per shortfall node, and one root-state restriction.
    """
    allowed = sorted(PlantState(s) for s in allowed_root)
    if not allowed:
        raise ValueError("allowed_root must be non-empty")
    p = _shortfalls(tree, params)
    weights = _weights(tree)

    lines: list[str] = ["Minimize"]
    terms: list[str] = []
    coeffs = {
        2: params.c_start,
        3: None,  # per-node: c_operate + c_per_gw * p
        4: params.c_stop,
    }
    for n in range(len(tree)):
        for j in (2, 3, 4):
            c = coeffs[j]
            if c is None:
                c = params.c_operate + params.c_per_gw * p[n]
            c *= weights[n]
            if c != 0.0:
                terms.append(f"{fmt_float(c)} x_{n}_{j}")
    if not terms:
        terms.append("0 x_0_1")
    for i in range(0, len(terms), 8):
        chunk = " + ".join(terms[i : i + 8])
        prefix = " obj: " if i == 0 else "      + "
        lines.append(prefix + chunk)

    lines.append("Subject To")
    for n in range(len(tree)):
        lines.append(f" s_{n}: x_{n}_1 + x_{n}_2 + x_{n}_3 + x_{n}_4 = 1")
    for n in range(1, len(tree)):
        par = int(tree.parent[n])
        lines.append(f" t_{n}: x_{par}_2 + x_{par}_3 - x_{n}_3 - x_{n}_4 = 0")
    for n in np.flatnonzero(p > force_tol):
        lines.append(f" f_{n}: x_{n}_3 = 1")
    lines.append(" root: " + " + ".join(f"x_0_{int(s)}" for s in allowed) + " = 1")

    lines.append("Binaries")
    for n in range(len(tree)):
        for j in (1, 2, 3, 4):
            lines.append(f" x_{n}_{j}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_solution_csv(solution: Solution, out: TextIO) -> None:
    """CSV: node_id,state with states encoded 1..4."""
    if solution.states is None:
        raise ValueError("cannot export an infeasible solution")
    out.write("node_id,state\n")
    for n, s in enumerate(solution.states):
        out.write(f"{n},{int(s)}\n")


def write_solution_summary(solution: Solution, out: TextIO) -> None:
    """JSON sidecar: {objective, feasible, root_state}."""
    root_state = None if solution.states is None else int(solution.states[0])
    out.write(
        dumps(
            {
                "objective": solution.objective,
                "feasible": solution.feasible,
                "root_state": root_state,
            }
        )
    )
    out.write("\n")


def read_solution_csv(src: TextIO) -> np.ndarray:
    """Inverse of write_solution_csv; returns the int8 state vector."""
    header = src.readline().strip()
    if header != "node_id,state":
        raise ValueError(f"unexpected solution header {header!r}")
    states: list[int] = []
    for lineno, line in enumerate(src, start=2):
        line = line.strip()
        if not line:
            continue
        try:
            nid_s, state_s = line.split(",")
            nid, state = int(nid_s), int(state_s)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        if nid != len(states):
            raise ValueError(f"line {lineno}: node id {nid} out of order")
        if state not in (1, 2, 3, 4):
            raise ValueError(f"line {lineno}: invalid state {state}")
        states.append(state)
    return np.array(states, dtype=np.int8)
