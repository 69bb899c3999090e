"""Command-line front end: estimate-tail, build-tree, solve, evaluate, reproduce-table.

All commands are pure functions of (config file, flags); reruns write
byte-identical files.  Exit codes: 0 success, 2 config error, 3 infeasible
instance, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from . import fv_tail as fv
from . import scenario_tree as st
from .config import ConfigError, RunConfig, load_config
from .formats import dumps
from .dispatch_solver import (
    Solution,
    export_lp,
    read_solution_csv,
    solve_tree_dp,
    verify_solution,
    write_solution_csv,
    write_solution_summary,
)
from .seeding import derive_rng
from .stochastic_models import (
    ARState,
    RealizationConfig,
    generate_batch,
    write_realizations_csv,
)

log = logging.getLogger("windcommit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_ESTIMATION = 4


class InfeasibleError(RuntimeError):
    pass


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        args.func(cfg, args, out_dir)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        log.error("infeasible instance: %s", exc)
        return EXIT_INFEASIBLE
    except fv.EstimationError as exc:
        log.error("estimation failure: %s", exc)
        return EXIT_ESTIMATION
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="windcommit",
        description="Rare-event-aware scenario trees and exact coal-plant commitment.",
    )
    sub = parser.add_subparsers(required=True, metavar="command")

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker-thread cap")

    p = sub.add_parser("estimate-tail", help="estimate tail-interval probabilities")
    common(p)
    p.set_defaults(func=cmd_estimate_tail)

    p = sub.add_parser("build-tree", help="build and serialize a scenario tree")
    common(p)
    p.add_argument("--mode", choices=["benchmark", "biased"], default="benchmark")
    p.add_argument("--tail", type=Path, default=None, help="tail probabilities JSON")
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("solve", help="solve the commitment problem on a tree file")
    common(p)
    p.add_argument("--tree", type=Path, required=True)
    p.add_argument("--export-lp", action="store_true", help="also write model.lp")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="evaluate a solution on mixture realizations")
    common(p)
    p.add_argument("--tree", type=Path, required=True)
    p.add_argument("--solution", type=Path, required=True)
    p.add_argument("--tail", type=Path, default=None, help="tail probabilities JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce-table", help="full benchmark-vs-biased comparison")
    common(p)
    p.set_defaults(func=cmd_reproduce_table)
    return parser


def _estimate(cfg: RunConfig) -> tuple[fv.TailProbabilities, fv.FVConfig]:
    model = cfg.ar_model()
    partition = cfg.partition()
    fv_cfg = cfg.fv_config()
    log.info("estimating exit mass over %d plain steps", cfg.exit_mass_steps)
    exit_mass = fv.estimate_exit_mass(
        model, partition.a, cfg.exit_mass_steps, derive_rng(cfg.master_seed, "exit-mass")
    )
    log.info("running Fleming-Viot: N=%d, budget=%d steps", fv_cfg.n_particles, fv_cfg.n_steps)
    nu = fv.fv_run(model, partition, fv_cfg)
    tp = fv.tail_probabilities(nu, exit_mass, partition)
    return tp, fv_cfg


def cmd_estimate_tail(cfg: RunConfig, args, out_dir: Path) -> None:
    tp, fv_cfg = _estimate(cfg)
    path = out_dir / "tail.json"
    with open(path, "w") as fh:
        fv.save_tail_probabilities(tp, fv_cfg, fh)
    log.info("wrote %s", path)


def _load_tail(path: Path | None) -> fv.TailProbabilities:
    if path is None:
        raise ConfigError("--tail is required here (run estimate-tail first)")
    try:
        with open(path) as fh:
            return fv.load_tail_probabilities(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"tail file not found: {path}") from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad tail file {path}: {exc}") from exc


def cmd_build_tree(cfg: RunConfig, args, out_dir: Path) -> None:
    mode = st.TreeMode(args.mode)
    tail = _load_tail(args.tail) if mode is st.TreeMode.BIASED else None
    tree_cfg = cfg.tree_config(mode)
    tree = st.build_tree(tree_cfg, cfg.ar_model(), tail)
    path = out_dir / f"tree-{mode.value}.csv"
    st.serialize(tree, path)
    log.info("wrote %s (%d nodes, %d scenarios)", path, len(tree), tree.n_scenarios)


def _load_tree(path: Path) -> st.ScenarioTree:
    try:
        return st.deserialize(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"tree file not found: {path}") from exc
    except st.TreeFormatError as exc:
        raise ConfigError(f"bad tree file {path}: {exc}") from exc


def cmd_solve(cfg: RunConfig, args, out_dir: Path) -> None:
    tree = _load_tree(args.tree)
    params = _params_for(cfg, tree)
    solution = solve_tree_dp(tree, params)
    if not solution.feasible:
        raise InfeasibleError(f"no feasible plant schedule; witness node {solution.witness}")
    check = verify_solution(tree, params, solution)
    if not check.feasible or check.objective != solution.objective:
        raise RuntimeError(f"solver self-check failed: {check.violation}")
    with open(out_dir / "solution.csv", "w") as fh:
        write_solution_csv(solution, fh)
    with open(out_dir / "solution.json", "w") as fh:
        write_solution_summary(solution, fh)
    log.info("objective %.6f, root state %d", solution.objective, int(solution.states[0]))
    if args.export_lp:
        lp_path = out_dir / "model.lp"
        with open(lp_path, "w") as fh:
            fh.write(export_lp(tree, params))
        log.info("wrote %s", lp_path)


def _params_for(cfg: RunConfig, tree: st.ScenarioTree):
    params = cfg.cost_params()
    if len(params.demand) < tree.config.horizon:
        params = type(params)(
            c_start=params.c_start,
            c_operate=params.c_operate,
            c_stop=params.c_stop,
            c_per_gw=params.c_per_gw,
            p_max=params.p_max,
            demand=(params.demand[0],) * tree.config.horizon,
        )
    return params


def cmd_evaluate(cfg: RunConfig, args, out_dir: Path) -> None:
    tree = _load_tree(args.tree)
    params = _params_for(cfg, tree)
    try:
        with open(args.solution) as fh:
            states = read_solution_csv(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"solution file not found: {args.solution}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad solution file {args.solution}: {exc}") from exc
    if len(states) != len(tree):
        raise ConfigError("solution does not cover the tree")
    solution = Solution(states=states, objective=float("nan"), feasible=True)
    check = verify_solution(tree, params, solution)
    if not check.feasible:
        raise InfeasibleError(check.violation or "solution violates constraints")
    solution = Solution(states=states, objective=check.objective, feasible=True)

    needs_sampler = any(q > 0.0 for q in cfg.q_values)
    sampler = fv.rare_change_sampler(_load_tail(args.tail)) if needs_sampler else None

    model = cfg.ar_model()
    reports = []
    trajectories: list[tuple[str, float, int, int, float, float]] = []
    for q in cfg.q_values:
        base = RealizationConfig(
            q=q,
            horizon=tree.config.horizon,
            y0=tree.config.w0,
            seed=cfg.master_seed,
        )
        batch = generate_batch(
            base, model, ARState(0.0, 0.0), sampler, cfg.n_realizations, threads=args.threads
        )
        traces = [ev.realized_dispatch(solution, tree, r, params) for r in batch]
        report = ev.evaluate_batch(solution, tree, batch, params, threads=args.threads)
        reports.append({"q": q, **ev.report_to_dict(report)})
        with open(out_dir / f"realizations-q{q:g}.csv", "w") as fh:
            write_realizations_csv(batch, fh)
        with open(out_dir / f"traces-q{q:g}.csv", "w") as fh:
            ev.write_traces_csv(traces, batch, solution, params, fh)
        for rid, r in enumerate(batch):
            for h, node in enumerate(ev.closest_path(tree, r)):
                trajectories.append(
                    (tree.config.mode.value, q, rid, h, r.y[h], float(tree.w[node]))
                )
    with open(out_dir / "report.json", "w") as fh:
        fh.write(dumps({"reports": reports}))
        fh.write("\n")
    with open(out_dir / "trajectories.csv", "w") as fh:
        ev.write_trajectories_csv(trajectories, fh)
    log.info("wrote %s", out_dir / "report.json")


def cmd_reproduce_table(cfg: RunConfig, args, out_dir: Path) -> None:
    tp, fv_cfg = _estimate(cfg)
    with open(out_dir / "tail.json", "w") as fh:
        fv.save_tail_probabilities(tp, fv_cfg, fh)
    result = ev.reproduce_table(
        cfg.ar_model(),
        tp,
        cfg.cost_params(),
        horizon=cfg.tree["horizon"],
        branching=cfg.tree["branching"],
        w0=cfg.tree["w0"],
        rare_fraction=cfg.tree["rare_fraction"],
        q_values=cfg.q_values,
        n_realizations=cfg.n_realizations,
        master_seed=cfg.master_seed,
        threads=args.threads,
    )
    with open(out_dir / "table.json", "w") as fh:
        ev.write_table_json(result.table, fh)
    text = ev.render_table(result.table)
    with open(out_dir / "table.txt", "w") as fh:
        fh.write(text)
    with open(out_dir / "trajectories.csv", "w") as fh:
        ev.write_trajectories_csv(result.trajectories, fh)
    sys.stdout.write(text)
    log.info("wrote %s", out_dir / "table.json")


if __name__ == "__main__":
    raise SystemExit(main())
