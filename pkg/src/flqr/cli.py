"""``flqr`` command line: value reports, feedback runs, verification and table dumps."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .dynamics import prepare_grid
from .errors import FLQRError, InvariantViolation, NumericOverflow, ScenarioError, SolverFailure
from .feedback import FeedbackConfig, run_feedback
from .fracspace import build_grid
from .kernels import Tables
from .oracle import direct_optimum
from .scenario import Scenario, parse_scenario
from .value import evaluate

EXIT_OK, EXIT_GATE, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class _CsvOut:
    """CSV writer that prepends the run metadata as a comment line."""

    def __init__(self, path: Path, meta: dict, header: list[str]):
        self.fh = open(path, "w", newline="")
        self.fh.write("# " + " ".join(f"{k}={_fmt(v) if not isinstance(v, str) else v}" for k, v in meta.items()) + "\n")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(header)

    def row(self, values):
        self.writer.writerow([v if isinstance(v, str) else _fmt(v) for v in values])

    def close(self):
        self.fh.close()


def _setup(sc: Scenario):
    prob, pos = sc.problem, sc.position
    vartheta = pos.t + sc.vartheta_frac * (prob.T - pos.t)
    grid = build_grid(prob.T, sc.nodes, sc.grading)
    return prob, pos, grid, vartheta


def _meta(sc: Scenario, grid, vartheta) -> dict:
    return {
        "alpha": sc.problem.alpha,
        "T": sc.problem.T,
        "N": grid.N,
        "g": sc.grading,
        "vartheta": vartheta,
        "l": sc.steps,
    }


def cmd_phi(sc: Scenario, out: Path) -> bool:
    prob, pos, grid, vartheta = _setup(sc)
    grid = prepare_grid(grid, [pos.t])
    tables = Tables(prob, grid)
    rep = evaluate(prob, pos, tables)
    n, m = prob.n, prob.m
    header = ["t", "phi"] + [f"grad_{i}" for i in range(n)] + [f"grad_Bt_{i}" for i in range(m)]
    header += ["dt", "hjb_residual", "grad_consistency"]
    w = _CsvOut(out / "value_report.csv", _meta(sc, grid, vartheta), header)
    if rep.grad_full is None:
        w.row([pos.t, rep.phi] + [None] * (n + m + 3))
        ok = True
    else:
        w.row([pos.t, rep.phi, *rep.grad_full, *rep.grad_Bt, rep.dt, rep.hjb_residual, rep.grad_consistency])
        ok = abs(rep.hjb_residual) <= sc.tolerances["hjb"] * (1 + abs(rep.phi))
    w.close()
    return ok and rep.phi >= -sc.tolerances["nonnegative"] * (1 + abs(rep.phi))


def _feedback(sc: Scenario, steps=None, frac=None):
    prob, pos, grid, _ = _setup(sc)
    frac = sc.vartheta_frac if frac is None else frac
    vartheta = pos.t + frac * (prob.T - pos.t)
    cfg = FeedbackConfig.uniform(pos.t, vartheta, sc.steps if steps is None else steps)
    return run_feedback(prob, pos, cfg, grid)


def cmd_simulate(sc: Scenario, out: Path) -> bool:
    prob, pos, grid, vartheta = _setup(sc)
    rep = _feedback(sc)
    traj = rep.trajectory
    kappa = dict(zip(np.round(rep.kappa_times, 15), rep.kappa))
    header = ["time"] + [f"u_{i}" for i in range(prob.m)] + [f"x_{i}" for i in range(prob.n)] + ["kappa"]
    w = _CsvOut(out / "feedback_run.csv", _meta(sc, grid, vartheta), header)
    u_nodes = rep.control(traj.nodes)
    for k, s in enumerate(traj.nodes):
        w.row([s, *u_nodes[k], *traj.states[k], kappa.get(np.round(s, 15))])
    w.close()
    scale = 1 + abs(rep.phi)
    tol = sc.tolerances
    kinc = float(np.diff(rep.kappa).min()) if rep.kappa.size > 1 else 0.0
    gate_gap = -tol["feedback_floor"] * scale <= rep.gap <= tol["feedback_gap"] * scale
    gate_kappa = kinc >= -tol["kappa"] * scale
    s = _CsvOut(out / "summary.csv", _meta(sc, grid, vartheta), ["quantity", "value"])
    for name, value in [("J", rep.cost), ("phi", rep.phi), ("gap", rep.gap), ("min_kappa_increment", kinc),
                        ("gate_gap", int(gate_gap)), ("gate_kappa", int(gate_kappa))]:
        s.row([name, value])
    s.close()
    return gate_gap and gate_kappa


def cmd_verify(sc: Scenario, out: Path) -> bool:
    prob, pos, grid0, vartheta = _setup(sc)
    tol = sc.tolerances
    rows = []
    sizes = sorted({max(4, sc.nodes // 4), max(4, sc.nodes // 2), sc.nodes})
    final = None
    for N in sizes:
        grid = prepare_grid(build_grid(prob.T, N, sc.grading), [pos.t])
        tables = Tables(prob, grid)
        phi = float(evaluate(prob, pos, tables, derivatives=False).phi)
        orc = direct_optimum(prob, pos, grid, phi)
        fm = tables.fredholm(pos.t)
        rel = abs(orc.rho_hat - phi) / max(abs(phi), 1e-12) if phi != 0 or orc.rho_hat != 0 else 0.0
        rows.append(["sweep", N, phi, orc.rho_hat, None, rel, None, tables.K.defect, fm.symmetry_defect(), orc.condition])
        final = (phi, orc, tables, fm, rel)
    phi, orc, tables, fm, rel = final
    fb = _feedback(sc)
    scale = 1 + abs(phi)
    rows.append(["summary", sc.nodes, phi, orc.rho_hat, fb.cost, rel, fb.cost - phi, tables.K.defect, fm.symmetry_defect(), orc.condition])
    header = ["row", "N", "phi", "rho_hat", "J_feedback", "oracle_rel_gap", "feedback_gap", "K_defect", "M_defect", "condition"]
    w = _CsvOut(out / "verify.csv", _meta(sc, grid0, vartheta), header)
    for r in rows:
        w.row(r)
    w.close()
    # the discrete optimum can never beat an admissible feedback run
    dominance = orc.rho_hat <= fb.cost + tol["feedback_floor"] * scale
    return (
        rel <= tol["oracle_rel"]
        and dominance
        and tables.K.defect <= tol["symmetry_K"]
        and fm.symmetry_defect() <= tol["symmetry_M"]
        and -tol["feedback_floor"] * scale <= fb.cost - phi <= tol["feedback_gap"] * scale
    )


def cmd_kernels(sc: Scenario, out: Path) -> bool:
    prob, pos, grid, vartheta = _setup(sc)
    grid = prepare_grid(grid, [pos.t])
    tables = Tables(prob, grid)
    tables.dump(out / "K.bin", "K")
    if pos.t < prob.T:
        tables.dump(out / "M.bin", "M", pos.t)
    w = _CsvOut(out / "nodes.csv", _meta(sc, grid, vartheta), ["index", "node"])
    for k, s in enumerate(grid.nodes):
        w.row([k, s])
    w.close()
    return tables.K.defect <= sc.tolerances["symmetry_K"]


COMMANDS = {"phi": cmd_phi, "simulate": cmd_simulate, "verify": cmd_verify, "kernels": cmd_kernels}


def _error(kind: str, exc: Exception, code: int) -> int:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "line", "step"):
        if getattr(exc, attr, None) is not None:
            record[attr] = getattr(exc, attr)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flqr", description="Fractional linear-quadratic optimal control solver.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--nodes", type=int)
    p.add_argument("--grading", type=float)
    p.add_argument("--vartheta-frac", type=float, dest="vartheta_frac")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", type=Path)
    return p


def _limits():
    threads = os.environ.get("FLQR_THREADS")
    if not threads:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(threads)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(args.scenario)
        overrides = {k: getattr(args, k) for k in ("nodes", "grading", "vartheta_frac", "steps") if getattr(args, k) is not None}
        if args.out is not None:
            overrides["output"] = args.out
        sc = dataclasses.replace(sc, **overrides)
        if sc.nodes < 2 or sc.grading < 1 or not 0 < sc.vartheta_frac < 1 or sc.steps < 1:
            raise ScenarioError("nodes >= 2, grading >= 1, 0 < vartheta-frac < 1 and steps >= 1 are required")
        sc.output.mkdir(parents=True, exist_ok=True)
    except (ScenarioError, FLQRError, ValueError, OSError) as exc:
        return _error("input", exc, EXIT_INPUT)
    try:
        with _limits():
            ok = COMMANDS[args.command](sc, sc.output)
    except (SolverFailure, InvariantViolation, NumericOverflow, np.linalg.LinAlgError) as exc:
        return _error("solver", exc, EXIT_SOLVER)
    except FLQRError as exc:
        return _error("input", exc, EXIT_INPUT)
    return EXIT_OK if ok else EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
