"""Command-line front end.

Exit codes: 0 success, 1 declared conditions violated (check-conditions),
2 configuration error, 3 solver non-convergence (diagnostics JSON written).
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import herglotz as hz
from . import repformulas as rf
from .caratheodory import DivergenceError
from .config import ConfigError, RunConfig, load_config
from .experiments import (
    convergence_study,
    exp_number,
    fd_config,
    initial_data,
    parse_points,
    random_points,
    stationary_sample_nodes,
)
from .fd_oracle import FDInstabilityError, FDNonConvergenceError, fd_evolve, fd_stationary
from .io import RunWriter, format_number, to_jsonable
from .lagrangian import check_conditions, legendre_to_hamiltonian
from .lax_oleinik import FixedPointError, evolve, stationary_fixed_point

EXIT_OK, EXIT_CONDITIONS, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 1, 2, 3
NONCONVERGENCE = (hz.HerglotzError, FixedPointError, FDNonConvergenceError, FDInstabilityError,
                  rf.HorizonError, DivergenceError)


def _load(args) -> RunConfig:
    run = load_config(args.config, require_seed=args.seed is None)
    if args.seed is not None:
        run.solver = run.solver.replace(seed=args.seed)
    out = getattr(args, "out", None) or run.output
    if out and "out" in vars(args):
        args.resolved_out = Path(out)  # known before solving so failures can leave diagnostics there
    return run


def _out_dir(args, run: RunConfig) -> Path:
    out = getattr(args, "out", None) or run.output
    if not out:
        raise ConfigError("output", "no output directory (pass --out or set output in the config)")
    args.resolved_out = Path(out)
    return args.resolved_out


def _common_meta(run: RunConfig, command: str) -> dict:
    return {"command": command, "model": run.model.name, "model_block": run.model_block,
            "seed": run.solver.seed, "solver": {k: v for k, v in vars(run.solver).items()},
            "experiment": run.experiment}


# ---------------------------------------------------------------------------
# commands


def cmd_solve_evolution(args) -> int:
    run = _load(args)
    exp = run.experiment
    T = exp_number(exp, "T", default=1.0, positive=True)
    steps = exp_number(exp, "steps", default=1, positive=True, integer=True)
    res = run.solver.grid_resolution(run.model.domain.dimension)
    phi = initial_data(run.model, exp, res)
    out = RunWriter(_out_dir(args, run))
    result = evolve(run.model, phi, T, steps, run.solver)
    updates = [0.0]
    for k, frame in enumerate(result.frames):
        out.write_grid(f"frames/frame_{k:03d}.csv", frame)
        if k:
            updates.append(float(np.max(np.abs(frame.values - result.frames[k - 1].values))))
    rows = []
    for k, entry in enumerate(result.argmin_map):
        if entry is not None:
            rows += [(k, i, int(j)) for i, j in enumerate(entry[0])]
    out.write_csv("tables/argmin.csv", ["frame", "node", "argmin_node"], rows)
    out.finalize(**_common_meta(run, "solve-evolution"), times=result.times, resolution=list(phi.resolution),
                 residuals={"frame_update": updates})
    print(f"wrote {len(result.frames)} frames to {out.root}")
    return EXIT_OK


def cmd_solve_stationary(args) -> int:
    run = _load(args)
    stat = stationary_fixed_point(run.model, run.solver)
    out = RunWriter(_out_dir(args, run))
    out.write_grid("frames/stationary.csv", stat.solution)
    ratios = np.concatenate([[np.nan], stat.contraction_ratios()])
    out.write_csv("tables/history.csv", ["iteration", "update", "ratio"],
                  [(k + 1, h, r) for k, (h, r) in enumerate(zip(stat.history, ratios))])
    out.finalize(**_common_meta(run, "solve-stationary"), resolution=list(stat.solution.resolution),
                 step=stat.step, iterations=stat.iterations, residuals={"fixed_point": stat.residual})
    print(f"fixed point after {stat.iterations} iterations (update {format_number(stat.residual)}) -> {out.root}")
    return EXIT_OK


def trajectory_rows(model, result: hz.HerglotzResult):
    """``(s, x..., v..., u)`` on the substep grid; ``v`` is the velocity of the segment being entered."""
    traj, curve = result.trajectory, result.minimizer
    m, N = traj.substeps, curve.n_segments
    vel = curve.velocities
    rows = []
    for k, (s, u) in enumerate(zip(traj.times, traj.u_values)):
        seg = min(k // m, N - 1)
        rows.append([s, *curve.position(s).tolist(), *vel[seg].tolist(), u])
    d = model.domain.dimension
    return ["s"] + [f"x{a}" for a in range(d)] + [f"v{a}" for a in range(d)] + ["u"], rows


def _floats(text, name, d):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r}") from None
    if len(vals) != d:
        raise ConfigError(name, f"needs {d} comma-separated coordinate(s)")
    return np.asarray(vals)


def cmd_fundamental_solution(args) -> int:
    run = _load(args)
    d = run.model.domain.dimension
    x, y = _floats(args.x, "--x", d), _floats(args.y, "--y", d)
    try:
        res = hz.fundamental_solution(run.model, args.t1, args.t2, x, y, args.u0, run.solver)
    except hz.HorizonError as exc:
        raise ConfigError("--t2", str(exc)) from None
    nodes = res.minimizer.lifted()
    times = res.minimizer.times
    if args.dump_trajectory:
        header, rows = trajectory_rows(run.model, res)
        Path(args.dump_trajectory).parent.mkdir(parents=True, exist_ok=True)
        lines = [",".join(header)] + [",".join(format_number(v) for v in r) for r in rows]
        Path(args.dump_trajectory).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.json:
        payload = {"value": res.value, "u_end": res.u_end, "stationarity_residual": res.stationarity_residual,
                   "starts_tried": res.starts_tried, "converged": res.converged,
                   "nodes": [[t, *z] for t, z in zip(times, nodes.tolist())],
                   "starts": [s.as_dict() for s in res.diagnostics]}
        print(json.dumps(to_jsonable(payload), indent=2, sort_keys=True))
        return EXIT_OK
    print(f"value: {format_number(res.value)}")
    print(f"stationarity_residual: {format_number(res.stationarity_residual)}")
    print(",".join(["s"] + [f"x{a}" for a in range(d)]))
    for t, z in zip(times, nodes):
        print(",".join(format_number(v) for v in [t, *z]))
    print(json.dumps(to_jsonable([s.as_dict() for s in res.diagnostics])))
    return EXIT_OK


def _formula_key(r: rf.FormulaReport) -> str:
    return r.formula_id if r.formula_id != "VII" else f"VII[{r.extras['gauge']}]"


def pair_summary(groups: dict[str, dict[str, float]]) -> dict:
    """Max ``|value_A - value_B|`` over points, per formula pair."""
    keys = sorted({k for g in groups.values() for k in g})
    out = {}
    for a, b in itertools.combinations(keys, 2):
        diffs = [abs(g[a] - g[b]) for g in groups.values() if a in g and b in g]
        if diffs:
            out[f"{a}|{b}"] = max(diffs)
    return out


def cmd_compare_formulas(args) -> int:
    run = _load(args)
    model, cfg, exp = run.model, run.solver, run.experiment
    d = model.domain.dimension
    spec = args.points if args.points is not None else str(exp.get("points", 20))
    if spec.strip().isdigit():
        t, x = random_points(model, int(spec), cfg.seed)
    else:
        t, x = parse_points(spec, d)
    res = cfg.grid_resolution(d)
    phi = initial_data(model, exp, res)
    reports, summary = rf.compare_formulas(model, phi, t, x, cfg)
    per_point = len(reports) // len(t)
    rows, groups = [], {}
    for k, r in enumerate(reports):
        p = k // per_point
        key = _formula_key(r)
        groups.setdefault(f"e{p}", {})[key] = r.value
        rows.append([f"e{p}", r.formula_id, r.extras.get("gauge", ""), r.value, r.discrepancy_vs_reference,
                     r.inputs_digest["t"], *[r.inputs_digest[f"x{a}"] for a in range(d)]])
    n_stat = exp.get("stationary_nodes", 0)
    if n_stat and "L6" in model.declared and model.autonomous:
        stat = stationary_fixed_point(model, cfg)
        xs = stationary_sample_nodes(res, int(n_stat), cfg.seed, model.domain)
        cc = rf.backward_calibrated(model, stat, xs, cfg)
        stat_groups = [rf.rep_IV(model, stat, xs, cfg, cc)]
        if model.lu_constant is not None:
            stat_groups.append(rf.disc_S(model, stat, xs, cfg, cc))
        if "L5" in model.declared:
            stat_groups.append(rf.rep_V(model, stat, xs, cfg, cc))
        for g in stat_groups:
            for b, r in enumerate(g):
                groups.setdefault(f"s{b}", {})[r.formula_id] = r.value
                rows.append([f"s{b}", r.formula_id, "", r.value, r.discrepancy_vs_reference, float("nan"),
                             *[r.inputs_digest[f"x{a}"] for a in range(d)]])
                cur = summary.setdefault(r.formula_id, {"max_abs": 0.0, "max_rel": 0.0})
                cur["max_abs"] = max(cur["max_abs"], r.discrepancy_vs_reference)
                cur["max_rel"] = max(cur["max_rel"], r.discrepancy_vs_reference / (1 + abs(r.value)))
    out = RunWriter(_out_dir(args, run))
    out.write_csv("tables/formulas.csv", ["point", "formula_id", "gauge", "value", "discrepancy", "t",
                                          *[f"x{a}" for a in range(d)]], rows)
    full = {"vs_reference": summary, "pairwise_max_abs": pair_summary(groups)}
    out.write_json("tables/summary.json", full)
    out.finalize(**_common_meta(run, "compare-formulas"), resolution=[res] * d, summary=full)
    worst = max(v["max_abs"] for v in summary.values())
    print(f"{len(rows)} formula values; max discrepancy vs reference {format_number(worst)} -> {out.root}")
    return EXIT_OK


def cmd_fd_solve(args) -> int:
    run = _load(args)
    exp = run.experiment
    d = run.model.domain.dimension
    res = int(exp_number(exp, "fd_resolution", default=run.solver.grid_resolution(d), positive=True, integer=True))
    stationary = bool(exp.get("fd_stationary", False))
    T = exp_number(exp, "T", default=1.0, positive=True)
    fcfg = fd_config(exp, res, T)
    hmodel = legendre_to_hamiltonian(run.model)
    info: dict = {}
    out = RunWriter(_out_dir(args, run))
    if stationary:
        u = fd_stationary(hmodel, fcfg, info=info)
        out.write_grid("frames/stationary.csv", u)
        times = None
    else:
        phi = initial_data(run.model, exp, res)
        u = fd_evolve(hmodel, phi, fcfg, info=info)
        out.write_grid("frames/frame_000.csv", phi)
        out.write_grid("frames/frame_001.csv", u)
        times = [0.0, T]
    out.finalize(**_common_meta(run, "fd-solve"), times=times, resolution=[res] * d,
                 residuals={"final_rate": info["final_rate"]}, steps=info["steps"])
    print(f"FD solve finished in {info['steps']} steps -> {out.root}")
    return EXIT_OK


def cmd_convergence_study(args) -> int:
    run = _load(args)
    study = convergence_study(run)
    out = RunWriter(_out_dir(args, run))
    out.write_csv("tables/convergence.csv", [study.parameter, "spacing", "error"], study.rows())
    out.finalize(**_common_meta(run, "convergence-study"), study=study.study, slope=study.slope,
                 at_rounding_floor=study.at_floor)
    print(f"{study.study}: fitted slope {format_number(study.slope)}"
          + (" (errors at rounding floor)" if study.at_floor else "") + f" -> {out.root}")
    return EXIT_OK


def cmd_check_conditions(args) -> int:
    run = _load(args)
    report = check_conditions(run.model, samples=args.samples, seed=run.solver.seed)
    payload = report.as_dict()
    payload["declared_pass"] = report.declared_pass
    print(json.dumps(to_jsonable(payload), indent=2, sort_keys=True))
    if args.out:
        out = RunWriter(args.out)
        out.write_csv("tables/conditions.csv", ["condition", "declared", "passed", "worst_margin"],
                      [(k, int(r.declared), int(r.passed), r.worst_margin) for k, r in report.results.items()])
        out.finalize(**_common_meta(run, "check-conditions"), declared_pass=report.declared_pass)
    return EXIT_OK if report.declared_pass else EXIT_CONDITIONS


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contacthj", description="Contact Hamilton-Jacobi solver via least action.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, out=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override solver.seed")
        if out:
            p.add_argument("--out", default=None, help="output directory (default: config 'output')")
        p.set_defaults(func=fn)
        return p

    add("solve-evolution", cmd_solve_evolution, "evolve initial data with the Lax-Oleinik operator")
    add("solve-stationary", cmd_solve_stationary, "fixed point of the Lax-Oleinik operator")
    p = add("fundamental-solution", cmd_fundamental_solution, "least action between two points", out=False)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--t2", type=float, required=True)
    p.add_argument("--x", required=True, help="start point, comma separated")
    p.add_argument("--y", required=True, help="end point, comma separated")
    p.add_argument("--u0", type=float, default=0.0)
    p.add_argument("--json", action="store_true", help="print a JSON document")
    p.add_argument("--dump-trajectory", default=None, metavar="CSV", help="write (s, x, v, u) samples")
    p = add("compare-formulas", cmd_compare_formulas, "evaluate every representation formula")
    p.add_argument("--points", default=None, help="count of random points or 't:x0[,x1];...'")
    add("fd-solve", cmd_fd_solve, "finite-difference reference solution")
    add("convergence-study", cmd_convergence_study, "error against a resolution ladder")
    p = add("check-conditions", cmd_check_conditions, "sample the structural conditions", out=False)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--out", default=None)
    return parser


def _diagnostics(exc) -> dict:
    diag = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("residual", "rate", "pair"):
        val = getattr(exc, attr, None)
        if val is not None:
            diag[attr] = val
    hist = getattr(exc, "history", None)
    if hist is not None:
        diag["history"] = hist
    best = getattr(exc, "best", None)
    if best is not None:
        diag["starts"] = [s.as_dict() for s in best.diagnostics]
    return to_jsonable(diag)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NONCONVERGENCE as exc:
        diag = _diagnostics(exc)
        text = json.dumps(diag, indent=2, sort_keys=True)
        print(text, file=sys.stderr)
        out = getattr(args, "resolved_out", None) or getattr(args, "out", None)
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "diagnostics.json").write_text(text + "\n", encoding="utf-8")
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
